from .optim import ParamStore, adam_step, clip_grad_norm
from .tensor import Tape, Tensor, backward, grad_of, no_tape

__all__ = [
    "ParamStore",
    "Tape",
    "Tensor",
    "adam_step",
    "backward",
    "clip_grad_norm",
    "grad_of",
    "no_tape",
]
