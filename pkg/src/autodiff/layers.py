"""
Dense layers and MLPs whose weights live in a ParamStore.
"""

from typing import Callable, Optional, Sequence

import numpy as np

from .optim import ParamStore
from .tensor import Tensor, elu, matmul


def init_dense(
    store: ParamStore,
    prefix: str,
    fan_in: int,
    fan_out: int,
    rng: np.random.Generator,
    zero: bool = False,
    bias: Optional[Sequence[float]] = None,
):
    """Register `<prefix>.W` (fan_in x fan_out, Glorot-uniform) and `<prefix>.b`."""
    if zero:
        W = np.zeros((fan_in, fan_out))
    else:
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        W = rng.uniform(-limit, limit, size=(fan_in, fan_out))
    b = np.zeros(fan_out) if bias is None else np.broadcast_to(np.asarray(bias, dtype=np.float64), (fan_out,))
    store.add(f"{prefix}.W", W)
    store.add(f"{prefix}.b", b)


def dense(store: ParamStore, prefix: str, x) -> Tensor:
    return matmul(x, store[f"{prefix}.W"]) + store[f"{prefix}.b"]


def init_mlp(
    store: ParamStore,
    prefix: str,
    sizes: Sequence[int],
    rng: np.random.Generator,
    zero_last: bool = False,
    last_bias: Optional[Sequence[float]] = None,
):
    """sizes = [in, hidden..., out]; one dense layer per consecutive pair."""
    n_layers = len(sizes) - 1
    for i in range(n_layers):
        last = i == n_layers - 1
        init_dense(
            store,
            f"{prefix}.{i}",
            sizes[i],
            sizes[i + 1],
            rng,
            zero=zero_last and last,
            bias=last_bias if last else None,
        )


def mlp(
    store: ParamStore,
    prefix: str,
    x,
    n_layers: int,
    activation: Callable[[Tensor], Tensor] = elu,
) -> Tensor:
    """Activation after every layer except the last."""
    h = x
    for i in range(n_layers):
        h = dense(store, f"{prefix}.{i}", h)
        if i < n_layers - 1:
            h = activation(h)
    return h
