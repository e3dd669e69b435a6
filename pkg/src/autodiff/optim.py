"""
Named parameter storage and the Adam optimizer.
"""

from typing import Dict, Iterable, Iterator, List, Optional, Tuple

import numpy as np

from ..core.exceptions import ContractViolation
from .tensor import Tensor, grad_of


class ParamStore:
    """
    Named trainable tensors with per-parameter Adam moments.

    One store is one optimizer group: every parameter in it shares the
    step count used for bias correction.
    """

    def __init__(self, name: str = "params"):
        self.name = name
        self.params: Dict[str, Tensor] = {}
        self.m: Dict[str, np.ndarray] = {}
        self.v: Dict[str, np.ndarray] = {}
        self.step = 0
        self.frozen = False

    def add(self, key: str, value) -> Tensor:
        if key in self.params:
            raise ContractViolation(f"{self.name}: parameter '{key}' already exists")
        tensor = Tensor(np.array(value, dtype=np.float64), requires_grad=True, name=key)
        self.params[key] = tensor
        self.m[key] = np.zeros_like(tensor.data)
        self.v[key] = np.zeros_like(tensor.data)
        return tensor

    def set(self, key: str, value):
        """Overwrite a parameter value (checkpoint restore); moments are kept."""
        if key not in self.params:
            raise ContractViolation(f"{self.name}: unknown parameter '{key}'")
        value = np.asarray(value, dtype=np.float64)
        if value.shape != self.params[key].shape:
            raise ContractViolation(
                f"{self.name}: shape mismatch for '{key}': "
                f"{value.shape} != {self.params[key].shape}"
            )
        self.params[key] = Tensor(value.copy(), requires_grad=not self.frozen, name=key)

    def freeze(self):
        """Stop the store's tensors from recording on the tape."""
        self.frozen = True
        for key in self.params:
            self.params[key].requires_grad = False

    def __getitem__(self, key: str) -> Tensor:
        return self.params[key]

    def __contains__(self, key: str) -> bool:
        return key in self.params

    def __iter__(self) -> Iterator[str]:
        return iter(self.params)

    def __len__(self) -> int:
        return len(self.params)

    def keys(self) -> List[str]:
        return list(self.params)

    def values(self) -> Dict[str, np.ndarray]:
        return {key: t.data.copy() for key, t in self.params.items()}

    def collect_grads(self, grads: Dict[int, np.ndarray]) -> Dict[str, np.ndarray]:
        """Pick this store's gradients out of a backward() result."""
        return {key: grad_of(grads, t) for key, t in self.params.items()}


def global_grad_norm(groups: Iterable[Dict[str, np.ndarray]]) -> float:
    total = 0.0
    for group in groups:
        for g in group.values():
            total += float(np.sum(g * g))
    return float(np.sqrt(total))


def clip_grad_norm(
    groups: List[Dict[str, np.ndarray]], max_norm: Optional[float]
) -> Tuple[List[Dict[str, np.ndarray]], float]:
    """Rescale all gradient groups together so their joint L2 norm is at most max_norm."""
    norm = global_grad_norm(groups)
    if max_norm is None or max_norm <= 0 or norm <= max_norm:
        return groups, norm
    scale = max_norm / norm
    return [{key: g * scale for key, g in group.items()} for group in groups], norm


def adam_step(
    store: ParamStore,
    grads: Dict[str, np.ndarray],
    lr: float = 1e-3,
    betas: Tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
) -> ParamStore:
    """
    One bias-corrected Adam update of every parameter in the store.

    Parameters without an entry in grads are treated as having zero
    gradient, so their moments still decay.
    """
    if store.frozen:
        return store

    beta1, beta2 = betas
    store.step += 1
    bias_correction_1 = 1.0 - beta1**store.step
    bias_correction_2 = 1.0 - beta2**store.step

    for key, param in store.params.items():
        g = grads.get(key)
        if g is None:
            g = np.zeros_like(param.data)
        elif np.shape(g) != param.shape:
            raise ContractViolation(
                f"adam_step: gradient shape {np.shape(g)} does not match "
                f"parameter '{key}' of shape {param.shape}"
            )

        store.m[key] = beta1 * store.m[key] + (1.0 - beta1) * g
        store.v[key] = beta2 * store.v[key] + (1.0 - beta2) * g * g

        m_hat = store.m[key] / bias_correction_1
        v_hat = store.v[key] / bias_correction_2
        updated = param.data - lr * m_hat / (np.sqrt(v_hat) + eps)
        store.params[key] = Tensor(updated, requires_grad=True, name=key)

    return store
