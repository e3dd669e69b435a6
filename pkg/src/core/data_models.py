"""
Data models shared by geometry, training, simulation and the CLI.
"""

from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Optional

import numpy as np

from .exceptions import CheckpointError, ContractViolation


@dataclass
class RestGeometry:
    points: np.ndarray  # (N, 3) scene length units
    volume_per_point: np.ndarray  # (N,)
    mass_per_point: np.ndarray  # (N,)
    bbox_diagonal: float = field(init=False)

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        self.volume_per_point = np.asarray(self.volume_per_point, dtype=np.float64)
        self.mass_per_point = np.asarray(self.mass_per_point, dtype=np.float64)

        if self.points.ndim != 2 or self.points.shape[1] != 3:
            raise ContractViolation(f"rest points must be (N, 3), got {self.points.shape}")
        n = self.points.shape[0]
        if n < 4:
            raise ContractViolation(f"rest geometry needs at least 4 points, got {n}")
        if self.volume_per_point.shape != (n,) or self.mass_per_point.shape != (n,):
            raise ContractViolation("volume and mass must have one entry per point")
        if np.any(self.volume_per_point <= 0) or np.any(self.mass_per_point <= 0):
            raise ContractViolation("volumes and masses must be strictly positive")
        if not np.all(np.isfinite(self.points)):
            raise ContractViolation("rest points must be finite")

        self.bbox_diagonal = float(np.linalg.norm(self.points.max(axis=0) - self.points.min(axis=0)))
        if self.bbox_diagonal <= 0:
            raise ContractViolation("rest geometry bounding box is degenerate")

    @classmethod
    def uniform(cls, points: np.ndarray, total_volume: float = 1.0, density: float = 1.0):
        """Uniform quadrature: every point carries total_volume / N."""
        n = len(points)
        volume = np.full(n, total_volume / n)
        return cls(points, volume, density * volume)

    @property
    def num_points(self) -> int:
        return self.points.shape[0]

    @property
    def total_volume(self) -> float:
        return float(self.volume_per_point.sum())


@dataclass
class TrajectoryDataset:
    trajectories: List[np.ndarray]  # each (T, N', 3)
    tracked: List[bool]
    dt: float

    def __post_init__(self):
        self.trajectories = [np.asarray(t, dtype=np.float64) for t in self.trajectories]
        if not self.dt > 0:
            raise ContractViolation(f"dt must be positive, got {self.dt}")
        if len(self.tracked) != len(self.trajectories):
            raise ContractViolation("one tracked flag is required per trajectory")
        for o, traj in enumerate(self.trajectories):
            if traj.ndim != 3 or traj.shape[2] != 3:
                raise ContractViolation(f"trajectory {o} must be (T, N, 3), got {traj.shape}")
            if traj.shape[0] < 2:
                raise ContractViolation(f"trajectory {o} needs at least 2 frames")

    @classmethod
    def empty(cls, dt: float = 1.0):
        return cls([], [], dt)

    def check_against(self, geom: RestGeometry):
        for o, (traj, tracked) in enumerate(zip(self.trajectories, self.tracked)):
            if tracked and traj.shape[1] != geom.num_points:
                raise ContractViolation(
                    f"tracked trajectory {o} has {traj.shape[1]} points, "
                    f"rest geometry has {geom.num_points}"
                )

    @property
    def num_trajectories(self) -> int:
        return len(self.trajectories)

    @property
    def is_empty(self) -> bool:
        return not self.trajectories


@dataclass
class KnnIndex:
    indices: np.ndarray  # (N, K) int
    distances: np.ndarray  # (N, K) nondecreasing per row

    @property
    def K(self) -> int:
        return self.indices.shape[1]

    @property
    def num_points(self) -> int:
        return self.indices.shape[0]

    def neighborhoods(self) -> np.ndarray:
        """(N, K+1) index table: each point followed by its neighbors."""
        own = np.arange(self.num_points)[:, None]
        return np.concatenate([own, self.indices], axis=1)


@dataclass
class SpatialGradientOperator:
    """Precomputed least-squares gradient weights for a fixed rest geometry."""

    index: KnnIndex
    weights: np.ndarray  # (N, 3, K): g_i = weights_i @ (v[nbrs] - v_i)
    flagged: np.ndarray  # (N,) bool, rank-deficient neighborhoods

    def apply(self, values: np.ndarray) -> np.ndarray:
        """Gradient of an (N, J) field as (N, J, 3)."""
        diffs = values[self.index.indices] - values[:, None, :]
        return np.einsum("nck,nkj->njc", self.weights, diffs)


@dataclass
class DeformationState:
    w: np.ndarray  # (N, J)
    g: np.ndarray  # (N, J, 3)
    x: np.ndarray  # (N, 3)
    F: np.ndarray  # (N, 3, 3)

    @property
    def C(self) -> np.ndarray:
        return np.einsum("nki,nkj->nij", self.F, self.F)


@dataclass
class MaterialFeatures:
    values: Any  # (N, 5J + 8) Tensor or array
    num_handles: int

    @property
    def dim(self) -> int:
        return 5 * self.num_handles + 8


@dataclass
class EnergyDensityReport:
    W_iso: np.ndarray
    W_aniso: np.ndarray
    W_total: np.ndarray
    total: float


@dataclass
class EpochMetrics:
    epoch: int
    stage: int
    recon: float
    ortho: float
    energy_pos: float
    energy_neg: float
    energy_neg_reciprocal: float
    stiffness_reg: float
    total: float
    noise_scale: float
    flagged: bool = False

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass
class TrainReport:
    epochs: List[EpochMetrics] = field(default_factory=list)
    checkpoint_path: Optional[str] = None
    reconstruction_chamfer: List[float] = field(default_factory=list)
    flagged_epochs: List[int] = field(default_factory=list)

    @property
    def final(self) -> Optional[EpochMetrics]:
        return self.epochs[-1] if self.epochs else None

    def to_dict(self) -> Dict[str, Any]:
        return {
            "epochs": [m.to_dict() for m in self.epochs],
            "checkpoint_path": self.checkpoint_path,
            "reconstruction_chamfer": list(self.reconstruction_chamfer),
            "flagged_epochs": list(self.flagged_epochs),
        }


@dataclass
class Checkpoint:
    params: Dict[str, np.ndarray]
    metadata: Dict[str, Any]

    def require(self, *keys: str):
        missing = [k for k in keys if k not in self.params]
        if missing:
            raise CheckpointError(f"checkpoint is missing keys: {', '.join(missing)}")

    def transforms(self) -> List[np.ndarray]:
        """Fitted handle transforms per trajectory, in trajectory order."""
        out = []
        if "T" in self.params:
            out.append(self.params["T"])
            o = 1
            while f"T.{o}" in self.params:
                out.append(self.params[f"T.{o}"])
                o += 1
        return out


@dataclass
class SimState:
    z: np.ndarray  # (J, 7)
    z_prev: np.ndarray
    x: np.ndarray  # (N, 3)
    v: np.ndarray  # (N, 3)
    frame: int = 0


@dataclass
class FrameDiagnostics:
    frame: int
    iters: int
    residual: float
    stalled: bool
    energy_elastic: float
    energy_kinetic: float
    energy_gravity: float
    energy_boundary: float
    energy_floor: float
    # residual norm at each accepted Newton iterate of the last substep
    residual_history: List[float] = field(default_factory=list)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass
class SimulationResult:
    trajectory: np.ndarray  # (frames, N, 3), frame 0 is the initial state
    diagnostics: List[FrameDiagnostics]
    failure: Optional[Dict[str, Any]] = None

    @property
    def completed(self) -> bool:
        return self.failure is None


@dataclass
class RunManifest:
    command: str
    config_hash: str
    seed: Optional[int]
    inputs: Dict[str, str]
    output_dir: Optional[str]
    wall_clock_seconds: float
    artifacts: List[str] = field(default_factory=list)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)
