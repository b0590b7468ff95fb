"""Block-distributed gradient boosted trees on a simulated parameter-server cluster."""
from .datamatrix import (
    BlockGrid, QuantizedDataset, SparseMatrix, compute_cuts, load_libsvm, partition, quantize,
    quantize_matrix,
)
from .trainer import TrainConfig, predict, train
from .treemodel import Ensemble, Tree

__all__ = [
    "BlockGrid", "Ensemble", "QuantizedDataset", "SparseMatrix", "TrainConfig", "Tree",
    "compute_cuts", "load_libsvm", "partition", "predict", "quantize", "quantize_matrix", "train",
]
__version__ = "0.1.0"
