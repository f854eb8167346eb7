"""handcnn: a self-contained CNN micro-engine and experiment harness for
binary hand/no-hand image classification.

Two architectures (a fast 2-conv network and a deeper 5-conv baseline)
with from-scratch forward/backward passes, Adam training with per-epoch
learning-rate decay, stratified k-fold cross-validation, an all-positive
generalization test, finite-difference gradient checking, and
FLOPs-normalized latency comparison across machines.
"""

from . import bench, data, evaluate, figures, gradcheck, layers, network, tensor, train
from .errors import (
    ConfigError,
    DataError,
    DimensionError,
    DivergenceError,
    FormatError,
    HandcnnError,
    UsageError,
)

__version__ = "0.1.0"

__all__ = [
    "bench",
    "data",
    "evaluate",
    "figures",
    "gradcheck",
    "layers",
    "network",
    "tensor",
    "train",
    "ConfigError",
    "DataError",
    "DimensionError",
    "DivergenceError",
    "FormatError",
    "HandcnnError",
    "UsageError",
    "__version__",
]
