"""
Run configurations for training and simulation.

Both configs are plain dataclasses parsed from JSON dictionaries.
`from_dict` rejects unknown keys and invalid values with a ConfigError
naming the dotted path of the offending field.
"""

from dataclasses import asdict, dataclass, field, fields
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from config.settings import (
    CORRECTED_NEOHOOKEAN,
    DEFAULT_CHAMFER_SUBSAMPLE,
    DEFAULT_EIGEN_LAYERS,
    DEFAULT_ENERGY_FLOOR,
    DEFAULT_EPOCHS,
    DEFAULT_GLOBAL_TOKENS,
    DEFAULT_GRAD_CLIP,
    DEFAULT_HIDDEN_WIDTH,
    DEFAULT_KNN,
    DEFAULT_LEARNING_RATE,
    DEFAULT_LINE_SEARCH_FACTOR,
    DEFAULT_MATERIAL_BLOCKS,
    DEFAULT_MAX_BACKTRACKS,
    DEFAULT_NEWTON_MAX_ITERS,
    DEFAULT_NEWTON_TOL,
    DEFAULT_NOISE_GAMMA,
    DEFAULT_NUM_HANDLES,
    DEFAULT_POISSON_RATIO,
    DEFAULT_SEED,
    DEFAULT_STAGE1_FRACTION,
    DEFAULT_WEIGHT_ENERGY,
    DEFAULT_WEIGHT_ORTHO,
    DEFAULT_WEIGHT_RECON,
    DEFAULT_WEIGHT_STIFFNESS_REG,
    DEFAULT_YOUNGS_MIN,
    DEFAULT_YOUNGS_SCALE,
    LOG_EVERY_EPOCHS,
)
from .exceptions import ConfigError

TRAIN_MODES = ("observed", "multi_trajectory", "no_observation")
ABLATION_GROUPS = ("w", "g", "W_prev", "attention")


def _reject_unknown(data: Dict[str, Any], allowed, prefix: str = ""):
    if not isinstance(data, dict):
        raise ConfigError(prefix.rstrip(".") or "<root>", "expected a JSON object")
    for key in data:
        if key not in allowed:
            raise ConfigError(f"{prefix}{key}", "unknown field")


def _number(data, key, default, path, integer=False):
    value = data.get(key, default)
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(path, f"expected a number, got {value!r}")
    if not np.isfinite(value):
        raise ConfigError(path, "must be finite")
    if integer:
        if float(value) != int(value):
            raise ConfigError(path, f"expected an integer, got {value!r}")
        return int(value)
    return float(value)


def _boolean(data, key, default, path):
    value = data.get(key, default)
    if not isinstance(value, bool):
        raise ConfigError(path, f"expected true/false, got {value!r}")
    return value


def _vector3(value, path) -> Tuple[float, float, float]:
    try:
        vec = np.asarray(value, dtype=np.float64)
    except (TypeError, ValueError):
        raise ConfigError(path, f"expected a 3-vector, got {value!r}")
    if vec.shape != (3,) or not np.all(np.isfinite(vec)):
        raise ConfigError(path, f"expected a finite 3-vector, got {value!r}")
    return tuple(float(c) for c in vec)


@dataclass
class LossWeights:
    recon: float = DEFAULT_WEIGHT_RECON
    ortho: float = DEFAULT_WEIGHT_ORTHO
    energy: float = DEFAULT_WEIGHT_ENERGY
    stiffness_reg: float = DEFAULT_WEIGHT_STIFFNESS_REG

    @classmethod
    def from_dict(cls, data: Dict[str, Any], prefix: str = "weights."):
        names = [f.name for f in fields(cls)]
        _reject_unknown(data, names, prefix)
        defaults = cls()
        values = {}
        for name in names:
            value = _number(data, name, getattr(defaults, name), prefix + name)
            if value < 0:
                raise ConfigError(prefix + name, "loss weights must be nonnegative")
            values[name] = value
        return cls(**values)


@dataclass
class TrainConfig:
    num_handles: int = DEFAULT_NUM_HANDLES
    knn: int = DEFAULT_KNN
    epochs: int = DEFAULT_EPOCHS
    stage1_epochs: Optional[int] = None
    lr: float = DEFAULT_LEARNING_RATE
    weights: LossWeights = field(default_factory=LossWeights)
    gamma: float = DEFAULT_NOISE_GAMMA
    reverse_noise_schedule: bool = False
    negatives_per_epoch: int = 1
    seed: int = DEFAULT_SEED
    mode: str = "observed"
    hidden_width: int = DEFAULT_HIDDEN_WIDTH
    eigen_layers: int = DEFAULT_EIGEN_LAYERS
    material_blocks: int = DEFAULT_MATERIAL_BLOCKS
    global_tokens: int = DEFAULT_GLOBAL_TOKENS
    youngs_min: float = DEFAULT_YOUNGS_MIN
    youngs_scale: float = DEFAULT_YOUNGS_SCALE
    poisson_ratio: float = DEFAULT_POISSON_RATIO
    corrected_neohookean: bool = CORRECTED_NEOHOOKEAN
    material_ablation: List[str] = field(default_factory=list)
    grad_clip: float = DEFAULT_GRAD_CLIP
    energy_floor: float = DEFAULT_ENERGY_FLOOR
    chamfer_subsample: int = DEFAULT_CHAMFER_SUBSAMPLE
    random_pose_scale: float = 0.1
    random_pose_samples: int = 8
    log_every: int = LOG_EVERY_EPOCHS

    def __post_init__(self):
        if self.stage1_epochs is None:
            self.stage1_epochs = int(round(DEFAULT_STAGE1_FRACTION * self.epochs))
        self.validate()

    def validate(self):
        positive_ints = ("num_handles", "knn", "epochs", "negatives_per_epoch", "hidden_width",
                         "eigen_layers", "global_tokens", "chamfer_subsample",
                         "random_pose_samples", "log_every")
        for name in positive_ints:
            if getattr(self, name) < 1:
                raise ConfigError(name, "must be at least 1")
        if self.eigen_layers < 2:
            raise ConfigError("eigen_layers", "must be at least 2")
        if self.material_blocks < 0:
            raise ConfigError("material_blocks", "must be nonnegative")
        if not 0 <= self.stage1_epochs <= self.epochs:
            raise ConfigError("stage1_epochs", f"must lie in [0, epochs={self.epochs}]")
        if self.lr <= 0:
            raise ConfigError("lr", "must be positive")
        if not 0.0 <= self.gamma <= 1.0:
            raise ConfigError("gamma", f"must lie in [0, 1], got {self.gamma}")
        if self.mode not in TRAIN_MODES:
            raise ConfigError("mode", f"must be one of {', '.join(TRAIN_MODES)}")
        if not 0.0 <= self.poisson_ratio < 0.5:
            raise ConfigError("poisson_ratio", "must lie in [0, 0.5)")
        if self.youngs_min <= 0 or self.youngs_scale <= 0:
            raise ConfigError("youngs_min" if self.youngs_min <= 0 else "youngs_scale", "must be positive")
        if self.energy_floor <= 0:
            raise ConfigError("energy_floor", "must be positive")
        if self.grad_clip < 0:
            raise ConfigError("grad_clip", "must be nonnegative (0 disables clipping)")
        if self.random_pose_scale < 0:
            raise ConfigError("random_pose_scale", "must be nonnegative")
        for i, group in enumerate(self.material_ablation):
            if group not in ABLATION_GROUPS:
                raise ConfigError(
                    f"material_ablation.{i}", f"must be one of {', '.join(ABLATION_GROUPS)}"
                )

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "TrainConfig":
        names = [f.name for f in fields(cls)]
        _reject_unknown(data, names)
        defaults = cls()
        values: Dict[str, Any] = {}
        ints = {"num_handles", "knn", "epochs", "negatives_per_epoch", "seed", "hidden_width",
                "eigen_layers", "material_blocks", "global_tokens", "chamfer_subsample",
                "random_pose_samples", "log_every"}
        bools = {"reverse_noise_schedule", "corrected_neohookean"}
        for name in names:
            if name not in data:
                continue
            if name == "weights":
                values[name] = LossWeights.from_dict(data[name])
            elif name == "mode":
                if not isinstance(data[name], str):
                    raise ConfigError(name, "expected a string")
                values[name] = data[name]
            elif name == "material_ablation":
                if not isinstance(data[name], list):
                    raise ConfigError(name, "expected a list")
                values[name] = list(data[name])
            elif name == "stage1_epochs":
                values[name] = (
                    None if data[name] is None else _number(data, name, None, name, integer=True)
                )
            elif name in bools:
                values[name] = _boolean(data, name, getattr(defaults, name), name)
            else:
                values[name] = _number(data, name, getattr(defaults, name), name, integer=name in ints)
        return cls(**values)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass
class PointMask:
    """Selects points by explicit indices or by an axis-aligned box in rest space."""

    indices: Optional[List[int]] = None
    box_min: Optional[Tuple[float, float, float]] = None
    box_max: Optional[Tuple[float, float, float]] = None

    @classmethod
    def from_dict(cls, data: Dict[str, Any], prefix: str) -> "PointMask":
        _reject_unknown(data, ("indices", "box"), prefix)
        if ("indices" in data) == ("box" in data):
            raise ConfigError(prefix.rstrip("."), "a mask needs exactly one of 'indices' or 'box'")
        if "indices" in data:
            idx = data["indices"]
            if not isinstance(idx, list) or not idx or not all(
                isinstance(i, int) and not isinstance(i, bool) and i >= 0 for i in idx
            ):
                raise ConfigError(prefix + "indices", "expected a nonempty list of point indices")
            return cls(indices=list(idx))
        box = data["box"]
        _reject_unknown(box, ("min", "max"), prefix + "box.")
        if "min" not in box or "max" not in box:
            raise ConfigError(prefix + "box", "needs 'min' and 'max'")
        lo = _vector3(box["min"], prefix + "box.min")
        hi = _vector3(box["max"], prefix + "box.max")
        if any(a > b for a, b in zip(lo, hi)):
            raise ConfigError(prefix + "box", "min must not exceed max")
        return cls(box_min=lo, box_max=hi)

    def resolve(self, rest_points: np.ndarray) -> np.ndarray:
        if self.indices is not None:
            idx = np.asarray(self.indices, dtype=np.int64)
            if idx.max() >= len(rest_points):
                raise ConfigError("mask.indices", f"index {idx.max()} out of range")
            return idx
        inside = np.all((rest_points >= self.box_min) & (rest_points <= self.box_max), axis=1)
        return np.flatnonzero(inside)

    def to_dict(self) -> Dict[str, Any]:
        if self.indices is not None:
            return {"indices": list(self.indices)}
        return {"box": {"min": list(self.box_min), "max": list(self.box_max)}}


@dataclass
class ExternalForce:
    mask: PointMask
    force: Tuple[float, float, float]  # per selected point
    start: float = 0.0
    end: Optional[float] = None

    def active(self, time: float) -> bool:
        return time >= self.start and (self.end is None or time < self.end)


@dataclass
class BoundaryPenalty:
    mask: PointMask
    stiffness: float
    targets: Optional[np.ndarray] = None  # (M, 3) or (3,); rest positions when absent


@dataclass
class FloorConfig:
    enabled: bool = False
    height: float = 0.0
    normal: Tuple[float, float, float] = (0.0, 0.0, 1.0)
    stiffness: float = 1e5


@dataclass
class NewtonConfig:
    max_iters: int = DEFAULT_NEWTON_MAX_ITERS
    tol: float = DEFAULT_NEWTON_TOL
    backtrack_factor: float = DEFAULT_LINE_SEARCH_FACTOR
    max_backtracks: int = DEFAULT_MAX_BACKTRACKS


@dataclass
class SimConfig:
    dt: float = 0.04
    num_frames: int = 40
    gravity: Tuple[float, float, float] = (0.0, 0.0, -9.81)
    forces: List[ExternalForce] = field(default_factory=list)
    boundaries: List[BoundaryPenalty] = field(default_factory=list)
    floor: FloorConfig = field(default_factory=FloorConfig)
    newton: NewtonConfig = field(default_factory=NewtonConfig)
    damping: float = 0.0
    substeps: int = 1
    initial_velocity: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    use_fitted_pose: bool = True

    def __post_init__(self):
        self.validate()

    def validate(self):
        if not self.dt > 0:
            raise ConfigError("dt", "must be positive")
        if self.num_frames < 1:
            raise ConfigError("num_frames", "must be at least 1")
        if self.substeps < 1:
            raise ConfigError("substeps", "must be at least 1")
        if self.damping < 0:
            raise ConfigError("damping", "must be nonnegative")
        for i, b in enumerate(self.boundaries):
            if b.stiffness < 0:
                raise ConfigError(f"boundaries.{i}.stiffness", "must be nonnegative")
        if self.floor.stiffness < 0:
            raise ConfigError("floor.stiffness", "must be nonnegative")
        if np.linalg.norm(self.floor.normal) == 0:
            raise ConfigError("floor.normal", "must be nonzero")
        if not self.newton.tol > 0:
            raise ConfigError("newton.tol", "must be positive")
        if self.newton.max_iters < 1:
            raise ConfigError("newton.max_iters", "must be at least 1")
        if not 0 < self.newton.backtrack_factor < 1:
            raise ConfigError("newton.backtrack_factor", "must lie in (0, 1)")
        if self.newton.max_backtracks < 0:
            raise ConfigError("newton.max_backtracks", "must be nonnegative")

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "SimConfig":
        top = [f.name for f in fields(cls)]
        _reject_unknown(data, top)
        defaults = cls()
        values: Dict[str, Any] = {}

        for name in ("dt", "damping"):
            if name in data:
                values[name] = _number(data, name, None, name)
        for name in ("num_frames", "substeps"):
            if name in data:
                values[name] = _number(data, name, None, name, integer=True)
        for name in ("gravity", "initial_velocity"):
            if name in data:
                values[name] = _vector3(data[name], name)
        if "use_fitted_pose" in data:
            values["use_fitted_pose"] = _boolean(data, "use_fitted_pose", True, "use_fitted_pose")

        if "forces" in data:
            if not isinstance(data["forces"], list):
                raise ConfigError("forces", "expected a list")
            forces = []
            for i, item in enumerate(data["forces"]):
                prefix = f"forces.{i}."
                _reject_unknown(item, ("mask", "force", "start", "end"), prefix)
                if "mask" not in item or "force" not in item:
                    raise ConfigError(prefix.rstrip("."), "needs 'mask' and 'force'")
                end = item.get("end")
                forces.append(
                    ExternalForce(
                        mask=PointMask.from_dict(item["mask"], prefix + "mask."),
                        force=_vector3(item["force"], prefix + "force"),
                        start=_number(item, "start", 0.0, prefix + "start"),
                        end=None if end is None else _number(item, "end", None, prefix + "end"),
                    )
                )
            values["forces"] = forces

        if "boundaries" in data:
            if not isinstance(data["boundaries"], list):
                raise ConfigError("boundaries", "expected a list")
            boundaries = []
            for i, item in enumerate(data["boundaries"]):
                prefix = f"boundaries.{i}."
                _reject_unknown(item, ("mask", "stiffness", "targets"), prefix)
                if "mask" not in item or "stiffness" not in item:
                    raise ConfigError(prefix.rstrip("."), "needs 'mask' and 'stiffness'")
                targets = item.get("targets")
                if targets is not None:
                    try:
                        targets = np.asarray(targets, dtype=np.float64)
                    except (TypeError, ValueError):
                        raise ConfigError(prefix + "targets", "expected numbers")
                    if targets.shape[-1:] != (3,) or targets.ndim > 2:
                        raise ConfigError(prefix + "targets", "expected a 3-vector or a list of them")
                boundaries.append(
                    BoundaryPenalty(
                        mask=PointMask.from_dict(item["mask"], prefix + "mask."),
                        stiffness=_number(item, "stiffness", None, prefix + "stiffness"),
                        targets=targets,
                    )
                )
            values["boundaries"] = boundaries

        if "floor" in data:
            floor = data["floor"]
            _reject_unknown(floor, ("enabled", "height", "normal", "stiffness"), "floor.")
            base = defaults.floor
            values["floor"] = FloorConfig(
                enabled=_boolean(floor, "enabled", True, "floor.enabled"),
                height=_number(floor, "height", base.height, "floor.height"),
                normal=_vector3(floor.get("normal", base.normal), "floor.normal"),
                stiffness=_number(floor, "stiffness", base.stiffness, "floor.stiffness"),
            )

        if "newton" in data:
            newton = data["newton"]
            _reject_unknown(newton, [f.name for f in fields(NewtonConfig)], "newton.")
            base = defaults.newton
            values["newton"] = NewtonConfig(
                max_iters=_number(newton, "max_iters", base.max_iters, "newton.max_iters", integer=True),
                tol=_number(newton, "tol", base.tol, "newton.tol"),
                backtrack_factor=_number(
                    newton, "backtrack_factor", base.backtrack_factor, "newton.backtrack_factor"
                ),
                max_backtracks=_number(
                    newton, "max_backtracks", base.max_backtracks, "newton.max_backtracks", integer=True
                ),
            )

        return cls(**values)

    def to_dict(self) -> Dict[str, Any]:
        out = asdict(self)
        out["forces"] = [
            {"mask": f.mask.to_dict(), "force": list(f.force), "start": f.start, "end": f.end}
            for f in self.forces
        ]
        out["boundaries"] = [
            {
                "mask": b.mask.to_dict(),
                "stiffness": b.stiffness,
                "targets": None if b.targets is None else np.asarray(b.targets).tolist(),
            }
            for b in self.boundaries
        ]
        return out
