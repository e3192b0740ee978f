"""Category discovery on precomputed embeddings: k-means dataset
partitioning, joint coarse/fine contrastive representation learning,
semi-supervised k-means assignment, and Hungarian-matched evaluation."""

from .clustering import ClusterModel, kmeans, kmeans_pp_init, semi_supervised_kmeans
from .engine.losses import (Batch, coarse_loss, cosine_lr, sup_contrastive_loss,
                            unsup_contrastive_loss)
from .engine.model import TrainableModel, forward_head
from .engine.sampling import RawBatch, feature_jitter, sample_batches
from .engine.train import (TrainConfig, fine_loss, load_checkpoint, save_checkpoint,
                           total_loss, train)
from .estimation import KSearchResult, estimate_num_classes
from .evaluation import EvalReport, clustering_accuracy, hungarian
from .partition import PartitionResult, partition_dataset, partition_report
from .store import (DatasetView, FeatureMatrix, SubsetMasks, build_subset_masks,
                    l2_normalize, load_features, save_features)
from .synth import GeneratorSpec, generate

__version__ = "0.1.0"

__all__ = [
    "Batch", "ClusterModel", "DatasetView", "EvalReport", "FeatureMatrix",
    "GeneratorSpec", "KSearchResult", "PartitionResult", "RawBatch", "SubsetMasks",
    "TrainConfig", "TrainableModel", "build_subset_masks", "clustering_accuracy",
    "coarse_loss", "cosine_lr", "estimate_num_classes", "feature_jitter", "fine_loss",
    "forward_head", "generate", "hungarian", "kmeans", "kmeans_pp_init",
    "l2_normalize", "load_checkpoint", "load_features", "partition_dataset",
    "partition_report", "sample_batches", "save_checkpoint", "save_features",
    "semi_supervised_kmeans", "sup_contrastive_loss", "total_loss", "train",
    "unsup_contrastive_loss",
]
