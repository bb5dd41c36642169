"""Graph-matching based GNN pre-training (GMPT).

A numpy reverse-mode autodiff engine, an edge-aware GIN encoder, a
cross-graph matching head producing adaptive graph representations,
contrastive and supervised pre-training objectives, and fine-tuning with
multi-task ROC-AUC evaluation.
"""
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import ModelConfig, RunConfig, TrainConfig
from .data import load_dataset, save_dataset, synth_motif_benchmark
from .encoder import EncoderConfig
from .graph import Graph, GraphBatch, GraphDataset, symmetrize, undirected_graph
from .matcher import GraphMatchingModel, MatcherConfig, WorkCounters, match_pair
from .trainer import finetune, finetune_grid, pretrain_cl, pretrain_sup

__version__ = "0.1.0"

__all__ = [
    "Checkpoint",
    "EncoderConfig",
    "Graph",
    "GraphBatch",
    "GraphDataset",
    "GraphMatchingModel",
    "MatcherConfig",
    "ModelConfig",
    "RunConfig",
    "TrainConfig",
    "WorkCounters",
    "finetune",
    "finetune_grid",
    "load_checkpoint",
    "load_dataset",
    "match_pair",
    "pretrain_cl",
    "pretrain_sup",
    "save_checkpoint",
    "save_dataset",
    "symmetrize",
    "synth_motif_benchmark",
    "undirected_graph",
]
