"""Road-node next-step prediction: graph ingestion, sector POI features,
structural embeddings, GPS-to-graph projection, a CfC-recurrent transformer
ranker with bearing-biased attention, and evaluation harnesses."""

from .config import RunConfig, load_config
from .estimator import DescriptorNormalizer, NextNodePredictor, Node2VecEmbedder
from .features import Normalizer, build_descriptors, descriptor_dim
from .graph import Poi, RoadGraph, load_graph, load_pois, save_graph, save_pois
from .model import FeatureStore, ModelConfig, forward, init_params, param_count
from .projection import Example, project_pipeline
from .training import split_dataset, train

__version__ = "0.1.0"

__all__ = [
    "DescriptorNormalizer", "Example", "FeatureStore", "ModelConfig",
    "NextNodePredictor", "Node2VecEmbedder", "Normalizer", "Poi", "RoadGraph",
    "RunConfig", "build_descriptors", "descriptor_dim", "forward",
    "init_params", "load_config", "load_graph", "load_pois", "param_count",
    "project_pipeline", "save_graph", "save_pois", "split_dataset", "train",
]
