import numpy as np
import pytest

from xcon.engine.losses import unsup_contrastive_loss
from xcon.engine.model import TrainableModel, forward_head
from xcon.engine.sampling import RawBatch
from xcon.engine.train import TrainConfig, coarse_objective, fine_loss, total_loss


def unit_rows(rng, shape):
    v = rng.standard_normal(shape)
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def raw_batch(rng, b, d, n_classes=2, labeled_frac=0.6):
    labels = np.where(rng.random(b) < labeled_frac, rng.integers(0, n_classes, b), -1)
    return RawBatch(anchors=unit_rows(rng, (b, d)), partners=unit_rows(rng, (b, d)),
                    labels=labels, labeled_mask=labels >= 0, indices=np.arange(b))


def small_model(rng_seed=0, d=5, hidden=7, proj=4, n_experts=2, randomize_adapter=True):
    model = TrainableModel.init(d, hidden, proj, n_experts, seed=rng_seed)
    if randomize_adapter:
        rng = np.random.default_rng(rng_seed + 1000)
        model.params["adapter.w"] = np.eye(d) + 0.1 * rng.standard_normal((d, d))
        model.params["adapter.b"] = 0.05 * rng.standard_normal(d)
    return model


def param_fd(model, loss_fn, eps=1e-4):
    """Central finite differences of loss_fn() against every model parameter."""
    grads = {}
    for key, arr in model.params.items():
        g = np.zeros_like(arr)
        flat = arr.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            hi = loss_fn()
            flat[i] = orig - eps
            lo = loss_fn()
            flat[i] = orig
            g.reshape(-1)[i] = (hi - lo) / (2 * eps)
        grads[key] = g
    return grads


def max_rel_err(analytic, numeric):
    worst = 0.0
    for key in analytic:
        denom = np.maximum(np.maximum(np.abs(analytic[key]), np.abs(numeric[key])), 1e-6)
        worst = max(worst, float((np.abs(analytic[key] - numeric[key]) / denom).max()))
    return worst


# ------------------------------------------------------------ forward head

def test_forward_head_outputs_unit_norm():
    rng = np.random.default_rng(0)
    model = small_model(n_experts=3)
    for head in range(4):
        z, _ = model.forward_head(head, rng.standard_normal((6, 5)))
        np.testing.assert_allclose(np.linalg.norm(z, axis=1), 1.0, atol=1e-5)


def test_forward_head_shape_mismatch():
    model = small_model()
    with pytest.raises(ValueError, match="expected"):
        model.forward_head(0, np.ones((3, 9)))


def test_forward_head_index_out_of_range():
    model = small_model(n_experts=2)
    with pytest.raises(ValueError, match="head index"):
        model.forward_head(3, np.ones((2, 5)))


def test_forward_head_collapsed_embedding():
    model = small_model()
    model.params["head0.3.w"][:] = 0.0
    model.params["head0.3.b"][:] = 0.0
    with pytest.raises(ValueError, match="collapsed embedding"):
        model.forward_head(0, np.ones((2, 5)))


def test_forward_head_gradient_matches_fd():
    # identity adapter, random heads: probe sum(R * Z) through the full path
    rng = np.random.default_rng(1)
    model = small_model(randomize_adapter=False)
    v = unit_rows(rng, (4, 5))
    probe = rng.standard_normal((4, 4))

    def loss_fn():
        z, _ = model.forward_head(1, v)
        return float((probe * z).sum())

    z, cache = model.forward_head(1, v)
    grads = model.zero_grads()
    model.backward_head(1, cache, probe, grads)
    fd = param_fd(model, loss_fn)
    touched = {k: v for k, v in grads.items() if k.startswith(("head1.", "adapter."))}
    assert max_rel_err(touched, {k: fd[k] for k in touched}) < 1e-4


# --------------------------------------------------------------- objectives

def test_coarse_objective_gradient_matches_fd():
    rng = np.random.default_rng(2)
    model = small_model()
    raw = raw_batch(rng, b=6, d=5)
    grads = model.zero_grads()
    coarse_objective(model, raw, tau=0.3, lam=0.35, grads=grads)
    fd = param_fd(model, lambda: coarse_objective(model, raw, tau=0.3, lam=0.35))
    assert max_rel_err(grads, fd) < 1e-4


def test_fine_loss_gradient_matches_fd():
    rng = np.random.default_rng(3)
    model = small_model(n_experts=2)
    subs = [raw_batch(rng, b=5, d=5), raw_batch(rng, b=4, d=5)]
    grads = model.zero_grads()
    fine_loss(model, subs, tau=0.3, lam=0.35, grads=grads)
    fd = param_fd(model, lambda: fine_loss(model, subs, tau=0.3, lam=0.35))
    assert max_rel_err(grads, fd) < 1e-4


def test_total_loss_gradient_matches_fd():
    rng = np.random.default_rng(4)
    model = small_model(n_experts=2)
    cfg = TrainConfig(tau=0.25, lam=0.35, alpha=0.1, k_partitions=2,
                      coarse_batch=8, fine_batch=4, epochs=1, hidden_dim=7, proj_dim=4)
    coarse = raw_batch(rng, b=6, d=5)
    subs = [raw_batch(rng, b=4, d=5), raw_batch(rng, b=4, d=5)]
    _, _, _, grads = total_loss(model, coarse, subs, cfg)
    fd = param_fd(model, lambda: total_loss(model, coarse, subs, cfg, with_grads=False)[0])
    assert max_rel_err(grads, fd) < 1e-4


def test_fine_degenerates_to_coarse_for_single_expert():
    rng = np.random.default_rng(5)
    model = small_model(n_experts=1)
    raw = raw_batch(rng, b=8, d=5)
    # same parameters in both heads so the paths are numerically identical
    for layer in (1, 2, 3):
        model.params[f"head1.{layer}.w"] = model.params[f"head0.{layer}.w"].copy()
        model.params[f"head1.{layer}.b"] = model.params[f"head0.{layer}.b"].copy()
    lc = coarse_objective(model, raw, tau=0.3, lam=0.35)
    lf = fine_loss(model, [raw], tau=0.3, lam=0.35)
    assert lf == pytest.approx(lc, rel=1e-12)


def test_fine_doubles_with_identical_experts():
    rng = np.random.default_rng(6)
    model = small_model(n_experts=2)
    for layer in (1, 2, 3):
        model.params[f"head2.{layer}.w"] = model.params[f"head1.{layer}.w"].copy()
        model.params[f"head2.{layer}.b"] = model.params[f"head1.{layer}.b"].copy()
    raw = raw_batch(rng, b=6, d=5)
    single_model = small_model(n_experts=1)
    for layer in (1, 2, 3):
        single_model.params[f"head1.{layer}.w"] = model.params[f"head1.{layer}.w"].copy()
        single_model.params[f"head1.{layer}.b"] = model.params[f"head1.{layer}.b"].copy()
    single_model.params["adapter.w"] = model.params["adapter.w"].copy()
    single_model.params["adapter.b"] = model.params["adapter.b"].copy()
    one = fine_loss(single_model, [raw], tau=0.3, lam=0.35)
    two = fine_loss(model, [raw, raw], tau=0.3, lam=0.35)
    assert two == pytest.approx(2 * one, rel=1e-12)


def test_total_alpha_zero_equals_coarse():
    rng = np.random.default_rng(7)
    model = small_model(n_experts=2)
    cfg = TrainConfig(tau=0.3, lam=0.35, alpha=0.0, k_partitions=2,
                      coarse_batch=8, fine_batch=4, epochs=1, hidden_dim=7, proj_dim=4)
    coarse = raw_batch(rng, b=6, d=5)
    lt, lc, lf, grads = total_loss(model, coarse, [], cfg)
    assert lt == lc and lf == 0.0
    for key in grads:
        if key.startswith(("head1.", "head2.")):
            assert np.all(grads[key] == 0.0)


def test_adapter_gradient_is_sum_of_paths():
    rng = np.random.default_rng(8)
    model = small_model(n_experts=2)
    alpha = 0.1
    cfg = TrainConfig(tau=0.3, lam=0.35, alpha=alpha, k_partitions=2,
                      coarse_batch=8, fine_batch=4, epochs=1, hidden_dim=7, proj_dim=4)
    coarse = raw_batch(rng, b=6, d=5)
    subs = [raw_batch(rng, b=4, d=5), raw_batch(rng, b=4, d=5)]
    _, _, _, grads = total_loss(model, coarse, subs, cfg)
    gc = model.zero_grads()
    coarse_objective(model, coarse, cfg.tau, cfg.lam, grads=gc)
    gf = model.zero_grads()
    fine_loss(model, subs, cfg.tau, cfg.lam, grads=gf)
    np.testing.assert_allclose(grads["adapter.w"],
                               gc["adapter.w"] + alpha * gf["adapter.w"], atol=1e-12)
    np.testing.assert_allclose(grads["adapter.b"],
                               gc["adapter.b"] + alpha * gf["adapter.b"], atol=1e-12)


def test_head_init_independent_of_expert_count():
    a = TrainableModel.init(5, 7, 4, n_experts=2, seed=3)
    b = TrainableModel.init(5, 7, 4, n_experts=5, seed=3)
    for layer in (1, 2, 3):
        np.testing.assert_array_equal(a.params[f"head0.{layer}.w"],
                                      b.params[f"head0.{layer}.w"])
        np.testing.assert_array_equal(a.params[f"head2.{layer}.b"],
                                      b.params[f"head2.{layer}.b"])


def test_forward_head_functional_alias():
    rng = np.random.default_rng(9)
    model = small_model()
    v = unit_rows(rng, (3, 5))
    z1, _ = forward_head(model, 0, v)
    z2, _ = model.forward_head(0, v)
    np.testing.assert_array_equal(z1, z2)
