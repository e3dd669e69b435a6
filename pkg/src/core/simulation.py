"""
Implicit-Euler time stepping of a learned system in reduced handle coordinates.

The state is z (J x 7): one quaternion + translation per handle. Positions
and deformation gradients follow from the frozen eigenmode weights w and
their spatial gradients g. Each step minimizes the incremental potential

    IP(z) = sum m/(2h^2) |x(z) - x_tilde|^2 + sum V psi(F(z)) - sum m g.x
            - sum f.x + sum kb/2 |x - target|^2 + sum kf/2 max(0, h_f - n.x)^2

with a Gauss-Newton Newton method and a backtracking line search.
"""

from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np

from ..utils.logging import log_with_timestamp
from .configs import SimConfig
from .data_models import (
    Checkpoint,
    FrameDiagnostics,
    RestGeometry,
    SimState,
    SimulationResult,
)
from .energy import hessian_dPsi_dF2, material_parameters, psi_total, stress_dPsi_dF
from .exceptions import ContractViolation, NumericFailure
from .linalg import (
    identity_transforms,
    quat_normalize_jacobian,
    quat_to_rotmat,
    quat_to_rotmat_jacobian,
)
from .training import SystemModel


@dataclass
class SimulationFields:
    """Frozen per-point quantities the simulator needs from a trained system."""

    w: np.ndarray  # (N, J)
    g: np.ndarray  # (N, J, 3)
    mu: np.ndarray  # (N,)
    lam: np.ndarray  # (N,)
    alpha: np.ndarray  # (N, 3)
    corrected: bool = False

    @classmethod
    def from_stiffness(cls, w, g, E, nu: float, corrected: bool = False) -> "SimulationFields":
        w = np.asarray(w, dtype=np.float64)
        g = np.asarray(g, dtype=np.float64)
        E = np.asarray(E, dtype=np.float64)
        if g.shape != w.shape + (3,) or E.shape != (w.shape[0], 4):
            raise ContractViolation(
                f"inconsistent fields: w {w.shape}, g {g.shape}, E {E.shape}"
            )
        mu, lam, alpha = material_parameters(E, nu)
        return cls(w, g, np.asarray(mu), np.asarray(lam), np.asarray(alpha), corrected)

    @property
    def num_handles(self) -> int:
        return self.w.shape[1]


@dataclass
class StepLoads:
    """Everything that is constant during one implicit step."""

    h: float
    x_tilde: np.ndarray  # (N, 3)
    force: np.ndarray  # (N, 3)
    boundary_weight: np.ndarray  # (N,) summed stiffness of penalties on each point
    boundary_pull: np.ndarray  # (N, 3) sum of stiffness * target


def normalize_quaternions(z: np.ndarray) -> np.ndarray:
    z = np.array(z, dtype=np.float64)
    norm = np.linalg.norm(z[:, :4], axis=1, keepdims=True)
    if np.any(norm == 0.0):
        raise NumericFailure("quat_normalize", "zero-norm quaternion")
    z[:, :4] /= norm
    return z


def reduced_kinematics(z: np.ndarray, geom: RestGeometry, fields: SimulationFields):
    """Positions (N, 3) and deformation gradients (N, 3, 3) for handle state z."""
    qn = np.linalg.norm(z[:, :4], axis=1, keepdims=True)
    if np.any(qn == 0.0):
        raise NumericFailure("quat_normalize", "zero-norm quaternion")
    R = quat_to_rotmat(z[:, :4] / qn)
    P = np.einsum("jab,nb->jna", R, geom.points) + z[:, None, 4:]
    x = np.einsum("nj,jna->na", fields.w, P)
    F = np.einsum("nj,jab->nab", fields.w, R) + np.einsum("jna,njb->nab", P, fields.g)
    return x, F


def reduced_jacobians(z: np.ndarray, geom: RestGeometry, fields: SimulationFields):
    """dx/dz as (N, 3, 7J) and dvec(F)/dz as (N, 9, 7J)."""
    n, J = fields.w.shape
    q = z[:, :4]
    qh = q / np.linalg.norm(q, axis=1, keepdims=True)
    R = quat_to_rotmat(qh)
    dRq = np.einsum("jabk,jkl->jabl", quat_to_rotmat_jacobian(qh), quat_normalize_jacobian(q))
    P = np.einsum("jab,nb->jna", R, geom.points) + z[:, None, 4:]
    dRx = np.einsum("jabk,nb->jnak", dRq, geom.points)

    Jx = np.zeros((n, 3, J, 7))
    Jx[..., :4] = np.einsum("nj,jnak->najk", fields.w, dRx)
    JF = np.zeros((n, 3, 3, J, 7))
    JF[..., :4] = np.einsum("nj,jabk->nabjk", fields.w, dRq) + np.einsum(
        "jnak,njb->nabjk", dRx, fields.g
    )
    g_t = np.transpose(fields.g, (0, 2, 1))  # (N, 3, J)
    for l in range(3):
        Jx[:, l, :, 4 + l] = fields.w
        JF[:, l, :, :, 4 + l] = g_t

    x = np.einsum("nj,jna->na", fields.w, P)
    F = np.einsum("nj,jab->nab", fields.w, R) + np.einsum("jna,njb->nab", P, fields.g)
    return x, F, Jx.reshape(n, 3, 7 * J), JF.reshape(n, 9, 7 * J)


class ReducedSimulator:
    """Implicit-Euler stepping of one rest geometry under a SimConfig."""

    def __init__(self, geom: RestGeometry, fields: SimulationFields, cfg: SimConfig):
        if fields.w.shape[0] != geom.num_points:
            raise ContractViolation("simulation fields do not match the rest geometry")
        self.geom = geom
        self.fields = fields
        self.cfg = cfg
        self.mass = geom.mass_per_point
        self.volume = geom.volume_per_point
        self.gravity = np.asarray(cfg.gravity, dtype=np.float64)
        normal = np.asarray(cfg.floor.normal, dtype=np.float64)
        self.floor_normal = normal / np.linalg.norm(normal)

        n = geom.num_points
        self.boundary_weight = np.zeros(n)
        self.boundary_pull = np.zeros((n, 3))
        self.boundary_targets = []
        for b in cfg.boundaries:
            idx = b.mask.resolve(geom.points)
            target = geom.points[idx] if b.targets is None else np.broadcast_to(b.targets, (len(idx), 3))
            self.boundary_targets.append((idx, target, b.stiffness))
            np.add.at(self.boundary_weight, idx, b.stiffness)
            np.add.at(self.boundary_pull, idx, b.stiffness * target)
        self.force_masks = [f.mask.resolve(geom.points) for f in cfg.forces]

    # Loads

    def loads(self, state: SimState, h: float, time: float) -> StepLoads:
        force = np.zeros((self.geom.num_points, 3))
        for f, idx in zip(self.cfg.forces, self.force_masks):
            if f.active(time):
                force[idx] += np.asarray(f.force)
        return StepLoads(
            h=h,
            x_tilde=state.x + h * state.v,
            force=force,
            boundary_weight=self.boundary_weight,
            boundary_pull=self.boundary_pull,
        )

    # Potential

    def _boundary_energy(self, x: np.ndarray) -> float:
        return float(
            sum(0.5 * k * np.sum((x[idx] - target) ** 2) for idx, target, k in self.boundary_targets)
        )

    def _floor_penetration(self, x: np.ndarray) -> np.ndarray:
        if not self.cfg.floor.enabled:
            return np.zeros(len(x))
        return np.maximum(0.0, self.cfg.floor.height - x @ self.floor_normal)

    def energy_terms(self, x: np.ndarray, F: np.ndarray, loads: StepLoads) -> Dict[str, float]:
        f = self.fields
        terms = {
            "inertia": float(
                np.sum(self.mass / (2.0 * loads.h**2) * np.sum((x - loads.x_tilde) ** 2, axis=1))
            ),
            "elastic": float(np.sum(self.volume * psi_total(F, f.mu, f.lam, f.alpha, f.corrected))),
            "gravity": float(-np.sum(self.mass * (x @ self.gravity))),
            "external": float(-np.sum(loads.force * x)),
            "boundary": self._boundary_energy(x),
            "floor": float(0.5 * self.cfg.floor.stiffness * np.sum(self._floor_penetration(x) ** 2)),
        }
        return terms

    def potential(self, z: np.ndarray, loads: StepLoads) -> float:
        x, F = reduced_kinematics(z, self.geom, self.fields)
        with np.errstate(all="ignore"):
            return float(sum(self.energy_terms(x, F, loads).values()))

    def checked_potential(self, z: np.ndarray, loads: StepLoads, frame: int) -> float:
        x, F = reduced_kinematics(z, self.geom, self.fields)
        with np.errstate(all="ignore"):
            terms = self.energy_terms(x, F, loads)
        for name, value in terms.items():
            if not np.isfinite(value):
                raise NumericFailure("incremental_potential", term=name, frame=frame)
        return float(sum(terms.values()))

    # Derivatives

    def gradient_and_hessian(self, z: np.ndarray, loads: StepLoads) -> Tuple[np.ndarray, np.ndarray]:
        """Exact reduced gradient and the PSD Gauss-Newton Hessian."""
        f = self.fields
        x, F, Jx, JF = reduced_jacobians(z, self.geom, f)
        inertia = self.mass / loads.h**2

        pen = self._floor_penetration(x)
        kf = self.cfg.floor.stiffness
        r = (
            inertia[:, None] * (x - loads.x_tilde)
            - self.mass[:, None] * self.gravity
            - loads.force
            + loads.boundary_weight[:, None] * x
            - loads.boundary_pull
            - kf * pen[:, None] * self.floor_normal
        )
        P = stress_dPsi_dF(F, f.mu, f.lam, f.alpha, f.corrected).reshape(-1, 9)
        grad = np.einsum("nax,na->x", Jx, r) + np.einsum("nix,ni->x", JF, self.volume[:, None] * P)

        H_point = hessian_dPsi_dF2(F, f.mu, f.lam, f.alpha, f.corrected)
        eigval, eigvec = np.linalg.eigh(H_point)
        H_psd = np.einsum("nij,nj,nkj->nik", eigvec, np.maximum(eigval, 0.0), eigvec)
        weighted = np.einsum("nij,njy->niy", self.volume[:, None, None] * H_psd, JF)
        H = np.einsum("nix,niy->xy", JF, weighted)
        H += np.einsum("nax,n,nay->xy", Jx, inertia + loads.boundary_weight, Jx)

        active = pen > 0
        if kf > 0 and np.any(active):
            nJ = np.einsum("a,nax->nx", self.floor_normal, Jx[active])
            H += kf * nJ.T @ nJ

        # x is invariant to quaternion scale; pin that direction
        H = 0.5 * (H + H.T)
        c = float(np.mean(np.abs(np.diag(H)))) + 1.0
        qh = z[:, :4] / np.linalg.norm(z[:, :4], axis=1, keepdims=True)
        for j in range(z.shape[0]):
            block = slice(7 * j, 7 * j + 4)
            H[block, block] += c * np.outer(qh[j], qh[j])
        return grad, H

    def newton_solve(self, z: np.ndarray, loads: StepLoads, frame: int):
        """Returns (z, residual_norm, iters, stalled, residual_history)."""
        newton = self.cfg.newton
        z = normalize_quaternions(z)
        energy = self.checked_potential(z, loads, frame)
        residual = np.inf
        history: List[float] = []
        iters = 0
        stalled = False

        for _ in range(newton.max_iters):
            grad, H = self.gradient_and_hessian(z, loads)
            residual = float(np.linalg.norm(grad))
            if not np.isfinite(residual):
                raise NumericFailure("newton_step", "non-finite gradient", frame=frame)
            history.append(residual)
            if residual <= newton.tol:
                break
            try:
                step = np.linalg.solve(H, -grad)
            except np.linalg.LinAlgError:
                step = np.linalg.lstsq(H, -grad, rcond=None)[0]
            step = step.reshape(z.shape)

            scale = 1.0
            accepted = False
            for _ in range(newton.max_backtracks + 1):
                trial = z + scale * step
                if np.all(np.linalg.norm(trial[:, :4], axis=1) > 0):
                    trial_energy = self.potential(trial, loads)
                    if np.isfinite(trial_energy) and trial_energy <= energy:
                        accepted = True
                        break
                scale *= newton.backtrack_factor
            if not accepted:
                stalled = True
                break
            z = normalize_quaternions(trial)
            energy = trial_energy
            iters += 1
        else:
            grad, _ = self.gradient_and_hessian(z, loads)
            residual = float(np.linalg.norm(grad))
            history.append(residual)

        return z, residual, iters, stalled, history

    # Time stepping

    def initial_state(self, z0: np.ndarray) -> SimState:
        z0 = normalize_quaternions(z0)
        x, _ = reduced_kinematics(z0, self.geom, self.fields)
        v = np.broadcast_to(np.asarray(self.cfg.initial_velocity, dtype=np.float64), x.shape).copy()
        return SimState(z=z0, z_prev=z0.copy(), x=x, v=v, frame=0)

    def advance(self, state: SimState) -> Tuple[SimState, FrameDiagnostics]:
        """One output frame, made of cfg.substeps implicit-Euler steps."""
        cfg = self.cfg
        h = cfg.dt / cfg.substeps
        frame = state.frame + 1
        iters_total, stalled_any, residual, history = 0, False, 0.0, []
        loads = None
        for s in range(cfg.substeps):
            time = state.frame * cfg.dt + (s + 1) * h
            loads = self.loads(state, h, time)
            z, residual, iters, stalled, history = self.newton_solve(state.z, loads, frame)
            x, _ = reduced_kinematics(z, self.geom, self.fields)
            v = (x - state.x) / h * (1.0 - cfg.damping * h)
            state = SimState(z=z, z_prev=state.z, x=x, v=v, frame=state.frame)
            iters_total += iters
            stalled_any = stalled_any or stalled

        state.frame = frame
        diagnostics = self.diagnostics(state, loads, iters_total, residual, stalled_any, history)
        return state, diagnostics

    def diagnostics(
        self,
        state: SimState,
        loads: StepLoads,
        iters: int,
        residual: float,
        stalled: bool,
        history: Optional[List[float]] = None,
    ):
        x, F = reduced_kinematics(state.z, self.geom, self.fields)
        terms = self.energy_terms(x, F, loads)
        return FrameDiagnostics(
            frame=state.frame,
            iters=iters,
            residual=residual,
            stalled=stalled,
            energy_elastic=terms["elastic"],
            energy_kinetic=float(0.5 * np.sum(self.mass * np.sum(state.v**2, axis=1))),
            energy_gravity=terms["gravity"],
            energy_boundary=terms["boundary"],
            energy_floor=terms["floor"],
            residual_history=list(history or []),
        )

    def run(self, z0: np.ndarray) -> SimulationResult:
        state = self.initial_state(z0)
        frames = [state.x.copy()]
        diagnostics: List[FrameDiagnostics] = []
        failure = None

        for _ in range(self.cfg.num_frames - 1):
            try:
                state, diag = self.advance(state)
            except NumericFailure as e:
                failure = {
                    "frame": state.frame + 1,
                    "op": e.op,
                    "term": e.term,
                    "message": str(e),
                }
                log_with_timestamp(f"✗ Simulation: frame {state.frame + 1} aborted: {e}")
                break
            frames.append(state.x.copy())
            diagnostics.append(diag)
            if diag.stalled:
                log_with_timestamp(f"⚠ Simulation: line search stalled at frame {diag.frame}")

        return SimulationResult(trajectory=np.stack(frames), diagnostics=diagnostics, failure=failure)


# Module-level entry points


def incremental_potential(
    z: np.ndarray,
    state: SimState,
    fields: SimulationFields,
    cfg: SimConfig,
    geom: RestGeometry,
    time: Optional[float] = None,
) -> float:
    """IP of handle state z for the step that starts from `state`."""
    sim = ReducedSimulator(geom, fields, cfg)
    h = cfg.dt / cfg.substeps
    loads = sim.loads(state, h, state.frame * cfg.dt + h if time is None else time)
    return sim.checked_potential(normalize_quaternions(z), loads, state.frame + 1)


def newton_step(
    z: np.ndarray,
    state: SimState,
    fields: SimulationFields,
    cfg: SimConfig,
    geom: RestGeometry,
    time: Optional[float] = None,
):
    """Minimize the step's IP from initial guess z; returns (z', residual_norm, iters)."""
    sim = ReducedSimulator(geom, fields, cfg)
    h = cfg.dt / cfg.substeps
    loads = sim.loads(state, h, state.frame * cfg.dt + h if time is None else time)
    z_new, residual, iters, _, _ = sim.newton_solve(z, loads, state.frame + 1)
    return z_new, residual, iters


def fields_from_checkpoint(checkpoint: Checkpoint, geom: RestGeometry) -> SimulationFields:
    model = SystemModel.from_checkpoint(checkpoint, geom)
    w, g, E = model.frozen_fields()
    return SimulationFields.from_stiffness(
        w, g, E, model.config.poisson_ratio, model.config.corrected_neohookean
    )


def initial_handles(checkpoint: Checkpoint, cfg: SimConfig) -> np.ndarray:
    """Fitted pose of trajectory 0, frame 0, or identity handles."""
    fitted = checkpoint.transforms()
    if cfg.use_fitted_pose and fitted:
        return np.array(fitted[0][0], dtype=np.float64)
    return identity_transforms(int(checkpoint.metadata["J"]))


def simulate(checkpoint: Checkpoint, geom: RestGeometry, cfg: SimConfig) -> SimulationResult:
    """Frame 0 is the initial state; num_frames frames in total unless a frame aborts."""
    fields = fields_from_checkpoint(checkpoint, geom)
    sim = ReducedSimulator(geom, fields, cfg)
    log_with_timestamp(
        f"📊 Simulation: {cfg.num_frames} frames, dt={cfg.dt}, substeps={cfg.substeps}, "
        f"J={fields.num_handles}, points={geom.num_points}"
    )
    result = sim.run(initial_handles(checkpoint, cfg))
    if result.completed:
        log_with_timestamp(f"✓ Simulation: completed {len(result.trajectory)} frames")
    return result
