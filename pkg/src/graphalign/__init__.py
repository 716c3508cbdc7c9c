"""Graph retrieval by subgraph containment, scored with iteratively refined
soft alignments, plus the exact combinatorial machinery to verify it."""

from .graphs import Graph, GraphPair, make_graph, pad_pair
from .datagen import Dataset, SamplingConfig, bfs_sample, generate_dataset
from .model import ModelConfig, forward_pair, build_params
from .training import TrainConfig, train_loop

__all__ = [
    "Graph", "GraphPair", "make_graph", "pad_pair",
    "Dataset", "SamplingConfig", "bfs_sample", "generate_dataset",
    "ModelConfig", "forward_pair", "build_params",
    "TrainConfig", "train_loop",
]
