"""Pairwise cross-graph community detection."""

__version__ = "0.1.0"

from .evaluation import run_experiment
from .graph import BipartiteGraph, CrossGraphDataset, build_cross_dataset, load_edge_list, multi_hot, sparsify
from .mapequation import CommunityPartition, codelength, detect_communities, raw_one_hot, stationary_visit_rates
from .model import ModelConfig, PccdModel, classify_score
from .synthetic import PlantConfig, plant_synthetic_dataset
from .training import TrainConfig, UserTriplet, label_triplet, sample_triplets, train

__all__ = [
    "BipartiteGraph", "CrossGraphDataset", "build_cross_dataset", "load_edge_list", "multi_hot", "sparsify",
    "CommunityPartition", "codelength", "detect_communities", "raw_one_hot", "stationary_visit_rates",
    "ModelConfig", "PccdModel", "classify_score", "PlantConfig", "plant_synthetic_dataset",
    "TrainConfig", "UserTriplet", "label_triplet", "sample_triplets", "train", "run_experiment",
]
