"""Learning k-DPP probabilities for diverse top-N recommendation."""

from ._backend import backend_name
from .data import InteractionDataset, ingest, make_synthetic, split
from .diversity import DiversityKernel, build_diverse_training_pairs, train_diversity_kernel
from .dpp import GroundSetInstance, build_personalized_kernel, kdpp_log_probability, log_normalizer
from .evaluation import EvalReport, TrendReport, compute_metrics, evaluate, probability_trend, recommend_top_n
from .model import EmbeddingTable, TrainConfig, init_embeddings, train

__version__ = "0.1.0"

__all__ = [
    "DiversityKernel",
    "EmbeddingTable",
    "EvalReport",
    "GroundSetInstance",
    "InteractionDataset",
    "TrainConfig",
    "TrendReport",
    "backend_name",
    "build_diverse_training_pairs",
    "build_personalized_kernel",
    "compute_metrics",
    "evaluate",
    "ingest",
    "init_embeddings",
    "kdpp_log_probability",
    "log_normalizer",
    "make_synthetic",
    "probability_trend",
    "recommend_top_n",
    "split",
    "train",
    "train_diversity_kernel",
]
