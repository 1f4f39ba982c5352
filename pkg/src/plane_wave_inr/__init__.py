__version__ = "0.1.0"

from .data_io import PlaneWaveStack, load_stack, save_stack
from .model import ModelArch, ModelParams, load_weights, save_weights
from .trainer import TrainConfig, train

__all__ = [
    "ModelArch",
    "ModelParams",
    "PlaneWaveStack",
    "TrainConfig",
    "__version__",
    "load_stack",
    "load_weights",
    "save_stack",
    "save_weights",
    "train",
]
