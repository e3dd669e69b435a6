"""
Material features, the attention-based stiffness network and Lame conversions.

Stiffness channels are ordered [E_iso, E_x, E_y, E_z]; the anisotropy axes
are the world axes.
"""

from typing import Iterable, Optional

import numpy as np

from config.settings import (
    DEFAULT_GLOBAL_TOKENS,
    DEFAULT_HIDDEN_WIDTH,
    DEFAULT_MATERIAL_BLOCKS,
    DEFAULT_YOUNGS_MIN,
    DEFAULT_YOUNGS_SCALE,
)
from ..autodiff import tensor as ad
from ..autodiff.layers import dense, init_dense
from ..autodiff.optim import ParamStore
from ..autodiff.tensor import Tensor
from .data_models import KnnIndex, MaterialFeatures, RestGeometry
from .exceptions import ContractViolation

HEAD_BIAS_INIT = 0.0


def feature_dim(num_handles: int) -> int:
    """w (J) + g (3J) + kNN variance (J) + handle summary (7) + W_prev (1)."""
    return 5 * num_handles + 8


def _signed_log1p(values: np.ndarray) -> np.ndarray:
    return np.sign(values) * np.log1p(np.abs(values))


def assemble_features(
    w,
    g,
    W_prev: Optional[np.ndarray],
    T_ref: np.ndarray,
    index: KnnIndex,
    ablation: Iterable[str] = (),
) -> MaterialFeatures:
    """
    Per-point feature rows [w, g, var_kNN(w), w @ T_ref, W_prev].

    T_ref and W_prev enter as constants. Ablated groups are replaced by zeros.
    """
    w = ad.as_tensor(w)
    g = ad.as_tensor(g)
    ablation = set(ablation)
    n, j = w.shape
    T_ref = np.asarray(T_ref, dtype=np.float64)
    if T_ref.shape != (j, 7):
        raise ContractViolation(f"reference transforms must be ({j}, 7), got {T_ref.shape}")
    if g.shape != (n, j, 3):
        raise ContractViolation(f"spatial gradient must be ({n}, {j}, 3), got {g.shape}")

    T_unit = T_ref.copy()
    T_unit[:, :4] /= np.linalg.norm(T_unit[:, :4], axis=1, keepdims=True)

    neighborhood = ad.getitem(w, index.neighborhoods())  # (N, K+1, J)
    centered = neighborhood - ad.mean(neighborhood, axis=1, keepdims=True)
    variance = ad.mean(ad.square(centered), axis=1)

    w_part = Tensor(np.zeros((n, j))) if "w" in ablation else w
    g_part = Tensor(np.zeros((n, 3 * j))) if "g" in ablation else ad.reshape(g, (n, 3 * j))
    summary = ad.matmul(w, Tensor(T_unit))
    if W_prev is None or "W_prev" in ablation:
        prev = np.zeros((n, 1))
    else:
        prev = _signed_log1p(np.asarray(W_prev, dtype=np.float64)).reshape(n, 1)

    values = ad.concatenate([w_part, g_part, variance, summary, Tensor(prev)], axis=1)
    return MaterialFeatures(values=values, num_handles=j)


class MaterialNet:
    """
    Cross-attention stiffness field.

    Embedded rest points are the queries; embedded features are keys and
    values. Each block attends locally over the point's kNN neighborhood,
    then globally over a strided token subset, then applies a feed-forward
    layer, all with residual connections.
    """

    def __init__(
        self,
        store: ParamStore,
        num_handles: int,
        center: np.ndarray,
        scale: float,
        hidden_width: int = DEFAULT_HIDDEN_WIDTH,
        blocks: int = DEFAULT_MATERIAL_BLOCKS,
        global_tokens: int = DEFAULT_GLOBAL_TOKENS,
        youngs_min: float = DEFAULT_YOUNGS_MIN,
        youngs_scale: float = DEFAULT_YOUNGS_SCALE,
        use_attention: bool = True,
    ):
        self.store = store
        self.num_handles = num_handles
        self.center = np.asarray(center, dtype=np.float64)
        self.scale = float(scale)
        self.hidden_width = hidden_width
        self.blocks = blocks if use_attention else 0
        self.global_tokens = global_tokens
        self.youngs_min = youngs_min
        self.youngs_scale = youngs_scale
        self.use_attention = use_attention

    @classmethod
    def create(
        cls,
        store: ParamStore,
        geom: RestGeometry,
        num_handles: int,
        rng: np.random.Generator,
        hidden_width: int = DEFAULT_HIDDEN_WIDTH,
        blocks: int = DEFAULT_MATERIAL_BLOCKS,
        global_tokens: int = DEFAULT_GLOBAL_TOKENS,
        youngs_min: float = DEFAULT_YOUNGS_MIN,
        youngs_scale: float = DEFAULT_YOUNGS_SCALE,
        use_attention: bool = True,
        head_bias: float = HEAD_BIAS_INIT,
    ) -> "MaterialNet":
        net = cls(
            store,
            num_handles,
            geom.points.mean(axis=0),
            0.5 * geom.bbox_diagonal,
            hidden_width,
            blocks,
            global_tokens,
            youngs_min,
            youngs_scale,
            use_attention,
        )
        d = hidden_width
        init_dense(store, "material.point", 3, d, rng)
        init_dense(store, "material.feature", feature_dim(num_handles), d, rng)
        for b in range(net.blocks):
            for part in ("local", "global"):
                for proj in ("q", "k", "v", "o"):
                    init_dense(store, f"material.block{b}.{part}.{proj}", d, d, rng)
            init_dense(store, f"material.block{b}.ffn.0", d, d, rng)
            init_dense(store, f"material.block{b}.ffn.1", d, d, rng)
        init_dense(store, "material.head", d, 4, rng, zero=True, bias=[head_bias] * 4)
        return net

    def token_indices(self, n: int) -> np.ndarray:
        if n <= self.global_tokens:
            return np.arange(n)
        return np.linspace(0, n - 1, self.global_tokens).round().astype(np.int64)

    def _attend(self, q: Tensor, k: Tensor, v: Tensor) -> Tensor:
        scores = ad.matmul(q, ad.swap_last(k)) / np.sqrt(self.hidden_width)
        return ad.matmul(ad.softmax(scores, axis=-1), v)

    def _local_attention(self, b: int, h: Tensor, kv: Tensor, neighborhoods: np.ndarray) -> Tensor:
        n, d = h.shape
        prefix = f"material.block{b}.local"
        q = ad.reshape(dense(self.store, f"{prefix}.q", h), (n, 1, d))
        k = ad.getitem(dense(self.store, f"{prefix}.k", kv), neighborhoods)  # (N, K+1, d)
        v = ad.getitem(dense(self.store, f"{prefix}.v", kv), neighborhoods)
        out = ad.reshape(self._attend(q, k, v), (n, d))
        return dense(self.store, f"{prefix}.o", out)

    def _global_attention(self, b: int, h: Tensor) -> Tensor:
        prefix = f"material.block{b}.global"
        tokens = ad.getitem(h, self.token_indices(h.shape[0]))
        q = dense(self.store, f"{prefix}.q", h)
        k = dense(self.store, f"{prefix}.k", tokens)
        v = dense(self.store, f"{prefix}.v", tokens)
        return dense(self.store, f"{prefix}.o", self._attend(q, k, v))

    def _feed_forward(self, b: int, h: Tensor) -> Tensor:
        prefix = f"material.block{b}.ffn"
        return dense(self.store, f"{prefix}.1", ad.elu(dense(self.store, f"{prefix}.0", h)))

    def metadata(self) -> dict:
        return {
            "blocks": self.blocks,
            "global_tokens": self.global_tokens,
            "youngs_min": self.youngs_min,
            "youngs_scale": self.youngs_scale,
            "use_attention": self.use_attention,
        }


def material_forward(
    net: MaterialNet, geom: RestGeometry, feats: MaterialFeatures, index: KnnIndex
) -> Tensor:
    """E = E_min + softplus(head) * E_scale, shape (N, 4)."""
    if feats.values.shape != (geom.num_points, feature_dim(net.num_handles)):
        raise ContractViolation(
            f"features must be ({geom.num_points}, {feature_dim(net.num_handles)}), "
            f"got {feats.values.shape}"
        )
    if index.num_points != geom.num_points:
        raise ContractViolation("kNN index was built on a different geometry")

    h = dense(net.store, "material.point", Tensor((geom.points - net.center) / net.scale))
    kv = ad.elu(dense(net.store, "material.feature", feats.values))
    if net.blocks == 0:
        h = h + kv
    neighborhoods = index.neighborhoods()
    for b in range(net.blocks):
        h = h + net._local_attention(b, h, kv, neighborhoods)
        h = h + net._global_attention(b, h)
        h = h + net._feed_forward(b, h)

    out = dense(net.store, "material.head", h)
    return ad.softplus(out) * net.youngs_scale + net.youngs_min


def _check_poisson(nu: float):
    if not 0.0 <= nu < 0.5:
        raise ContractViolation(f"Poisson ratio must lie in [0, 0.5), got {nu}")


def lame_from_E(E_iso, nu: float):
    """mu = E / 2(1 + nu), lambda = E nu / ((1 + nu)(1 - 2 nu)); works on arrays and Tensors."""
    _check_poisson(nu)
    mu = E_iso * (1.0 / (2.0 * (1.0 + nu)))
    lam = E_iso * (nu / ((1.0 + nu) * (1.0 - 2.0 * nu)))
    return mu, lam


def alpha_from_E(E_k, nu: float):
    _check_poisson(nu)
    return E_k * (1.0 / (2.0 * (1.0 + nu)))
