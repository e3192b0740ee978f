"""Representation learner: model, losses, samplers, and the training loop."""
