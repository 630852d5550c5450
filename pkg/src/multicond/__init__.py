"""Contrastive-reconstruction fine-tuning for multi-condition product retrieval.

Pipeline: synthetic catalog -> composed queries -> toy interleaved encoder
trained with InfoNCE plus masked reconstruction -> brute-force R@k / MRR.
"""

from .catalog import Catalog, CatalogConfig, Product, generate_catalog, refine_attributes
from .config import ExperimentConfig, load_config
from .encoder import Encoder, EncoderConfig, build_input, embed_for_retrieval, encode
from .estimator import CoralRetriever
from .evaluation import (MetricsReport, RankedList, chance_metrics, embed_pool, evaluate, mrr,
                         rank, recall_at_k)
from .lora import apply_lora
from .objective import CoralHyper, LossBreakdown, coral_objective, preset_hyper
from .sampler import (Query, QuerySet, SamplerConfig, attribute_uniform_sample, auto_filter,
                      compose_query_set, conventional_uniform_sample, high_similarity_sample,
                      make_ood_splits, recall_candidates, split_train_test)
from .trainer import TrainConfig, Trainer, gradient_audit, load_model, train
from .validation import ConfigError

__version__ = "0.1.0"

__all__ = [
    "Catalog", "CatalogConfig", "ConfigError", "CoralHyper", "CoralRetriever", "Encoder",
    "EncoderConfig", "ExperimentConfig", "LossBreakdown", "MetricsReport", "Product", "Query",
    "QuerySet", "RankedList", "SamplerConfig", "TrainConfig", "Trainer", "apply_lora",
    "attribute_uniform_sample", "auto_filter", "build_input", "chance_metrics",
    "compose_query_set", "conventional_uniform_sample", "coral_objective", "embed_for_retrieval",
    "embed_pool", "encode", "evaluate", "generate_catalog", "gradient_audit",
    "high_similarity_sample", "load_config", "load_model", "make_ood_splits", "mrr",
    "preset_hyper", "rank", "recall_at_k", "recall_candidates", "refine_attributes",
    "split_train_test", "train",
]
