from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .engine import Tensor, concat, conv2d, maxpool2, parameter, relu, upsample2
from .model import MicroUNet, NetConfig, backward, forward, forward_backward
from .optim import AdamState, NonFiniteGradient, adam_step

__all__ = [
    "AdamState",
    "CheckpointError",
    "MicroUNet",
    "NetConfig",
    "NonFiniteGradient",
    "Tensor",
    "adam_step",
    "backward",
    "concat",
    "conv2d",
    "forward",
    "forward_backward",
    "load_checkpoint",
    "maxpool2",
    "parameter",
    "relu",
    "save_checkpoint",
    "upsample2",
]
