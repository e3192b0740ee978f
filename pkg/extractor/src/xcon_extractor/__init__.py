"""Image-folder to xcon-feature-file exporter."""

from .backbones import load_backbone
from .extract import ExtractorConfig, ExtractResult, extract
from .writer import write_feature_pair

__version__ = "0.1.0"

__all__ = ["ExtractorConfig", "ExtractResult", "extract", "load_backbone",
           "write_feature_pair"]
