"""
Losses and the two-stage, energy-contrastive training loop.

Stage 1 fits the eigenmode field and the handle transforms to the observed
motion (reconstruction + orthogonality). Stage 2 adds the material network
and trains everything on

    w_recon L_recon + w_ortho L_ortho + w_energy (W(T_pos) + 1 / W(T_neg)) + w_reg mean(1/E)

where T_neg are noise-perturbed copies of the fitted transforms. In
no_observation mode there is no reconstruction target: random poses are
sampled each epoch and energy + orthogonality are minimized with a
frozen uniform stiffness.
"""

from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from ..autodiff import tensor as ad
from ..autodiff.optim import ParamStore, adam_step, clip_grad_norm
from ..autodiff.tensor import Tape, Tensor, backward
from ..services.checkpoint_store import save_checkpoint
from ..utils.logging import log_with_timestamp
from .configs import TrainConfig
from .data_models import (
    Checkpoint,
    EpochMetrics,
    KnnIndex,
    RestGeometry,
    SpatialGradientOperator,
    TrainReport,
    TrajectoryDataset,
)
from .deformation import (
    EigenmodeNet,
    apply_deformation,
    deformation_gradient,
    eigenmode_forward,
    init_handle_transforms,
    ortho_loss,
)
from .energy import energy_density_tensor, material_parameters
from .exceptions import CheckpointError, ContractViolation, NumericFailure, TrainingAborted
from .geometry import (
    build_gradient_operator,
    chamfer_distance,
    chamfer_tensor,
    knn_build,
    lsq_spatial_gradient,
    subsample_points,
)
from .linalg import identity_transforms
from .material import MaterialNet, assemble_features, material_forward


def transform_key(o: int) -> str:
    return "T" if o == 0 else f"T.{o}"


@contextmanager
def loss_term(name: str):
    """Tag numeric failures raised inside the block with the loss term name."""
    try:
        yield
    except NumericFailure as e:
        if e.term is not None:
            raise
        raise NumericFailure(e.op, index=e.index, term=name, frame=e.frame) from e


# Losses


def recon_loss(
    net_or_w,
    transforms: List,
    data: TrajectoryDataset,
    geom: RestGeometry,
    chamfer_subsample: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
) -> Tensor:
    """
    Sum over trajectories and frames of L2 (tracked) or Chamfer (untracked)
    distance between predicted and observed positions.
    """
    if data.is_empty:
        raise ContractViolation("recon_loss: the dataset has no trajectories")
    if len(transforms) != data.num_trajectories:
        raise ContractViolation(
            f"recon_loss: {len(transforms)} transform sets for {data.num_trajectories} trajectories"
        )
    w = eigenmode_forward(net_or_w, geom) if isinstance(net_or_w, EigenmodeNet) else ad.as_tensor(net_or_w)
    rng = rng or np.random.default_rng(0)

    total = Tensor(0.0)
    for T, observed, tracked in zip(transforms, data.trajectories, data.tracked):
        T = ad.as_tensor(T)
        if T.shape[0] != observed.shape[0]:
            raise ContractViolation(
                f"recon_loss: {T.shape[0]} transform frames for {observed.shape[0]} observed frames"
            )
        predicted = apply_deformation(w, T, geom)  # (T, N, 3)
        if tracked:
            total = total + ad.tsum(ad.square(predicted - Tensor(observed)))
            continue
        for t in range(observed.shape[0]):
            target = observed[t]
            if chamfer_subsample is not None:
                target = subsample_points(target, chamfer_subsample, rng)
            total = total + chamfer_tensor(predicted[t], target)
    return total


def noise_scale(epoch: int, total_epochs: int, gamma: float, reverse: bool = False) -> float:
    """alpha_e = 1 - gamma^(e/T); the reversed schedule is gamma^(e/T)."""
    decay = gamma ** (epoch / max(total_epochs, 1))
    return float(decay if reverse else 1.0 - decay)


def sample_negative_transforms(
    T_pos,
    epoch: int,
    total_epochs: int,
    gamma: float,
    rng: np.random.Generator,
    reverse: bool = False,
):
    """
    T_neg = T_pos + alpha_e * eps with eps ~ N(0, 1) per 7-vector entry.

    Returns (T_neg, alpha_e). The noise is a constant, so gradients of
    T_neg still reach T_pos.
    """
    if not 0 <= epoch <= total_epochs:
        raise ContractViolation(f"epoch {epoch} outside [0, {total_epochs}]")
    alpha = noise_scale(epoch, total_epochs, gamma, reverse)
    eps = rng.standard_normal(np.shape(T_pos.data if isinstance(T_pos, Tensor) else T_pos))
    if isinstance(T_pos, Tensor):
        return T_pos + Tensor(alpha * eps), alpha
    return np.asarray(T_pos, dtype=np.float64) + alpha * eps, alpha


def integrated_energy(
    F: Tensor, E_field, geom: RestGeometry, nu: float, corrected: bool = False
) -> Tuple[Tensor, np.ndarray]:
    """
    Volume-integrated energy averaged over leading frame axes.

    Returns the taped scalar and the frame-averaged per-point density
    (detached) for use as the next epoch's W_prev.
    """
    mu, lam, alpha = material_parameters(E_field, nu)
    iso, aniso = energy_density_tensor(F, mu, lam, alpha, corrected)
    density = iso + aniso  # (..., N)
    per_frame = ad.tsum(density * Tensor(geom.volume_per_point), axis=-1)
    W = ad.mean(per_frame)
    flat = density.data.reshape(-1, geom.num_points)
    return W, flat.mean(axis=0)


def contrastive_energy_terms(
    F_pos: Tensor,
    F_neg: Tensor,
    E_field,
    geom: RestGeometry,
    nu: float,
    corrected: bool = False,
    energy_floor: float = 1e-8,
):
    """
    (W_pos, 1 / W_neg, W_neg, flagged).

    When W_neg falls below the floor the reciprocal is clamped to
    1 / energy_floor, carries no gradient, and the result is flagged.
    """
    with loss_term("energy_pos"):
        W_pos, _ = integrated_energy(F_pos, E_field, geom, nu, corrected)
    with loss_term("energy_neg"):
        W_neg, _ = integrated_energy(F_neg, E_field, geom, nu, corrected)
        if W_neg.item() < energy_floor:
            return W_pos, Tensor(1.0 / energy_floor), W_neg, True
        return W_pos, ad.reciprocal(W_neg), W_neg, False


def stiffness_reg(E_field) -> Tensor:
    """Mean of 1/E over points and channels."""
    return ad.mean(ad.reciprocal(ad.as_tensor(E_field)))


# Model


@dataclass
class SystemModel:
    """Everything learned about one rest geometry: eigenmodes, stiffness, fitted transforms."""

    geom: RestGeometry
    index: KnnIndex
    gradient_op: SpatialGradientOperator
    deformation_store: ParamStore
    material_store: ParamStore
    eigen_net: EigenmodeNet
    material_net: MaterialNet
    num_trajectories: int
    config: TrainConfig
    W_prev: Optional[np.ndarray] = None
    E: Optional[np.ndarray] = None
    metadata: Dict = field(default_factory=dict)

    @classmethod
    def create(
        cls, config: TrainConfig, geom: RestGeometry, frame_counts: List[int], rng: np.random.Generator
    ) -> "SystemModel":
        index = knn_build(geom, config.knn)
        gradient_op = build_gradient_operator(geom, index)
        deformation_store = ParamStore("deformation")
        material_store = ParamStore("material")
        eigen_net = EigenmodeNet.create(
            deformation_store,
            geom,
            config.num_handles,
            rng,
            hidden_width=config.hidden_width,
            layers=config.eigen_layers,
        )
        material_net = MaterialNet.create(
            material_store,
            geom,
            config.num_handles,
            rng,
            hidden_width=config.hidden_width,
            blocks=config.material_blocks,
            global_tokens=config.global_tokens,
            youngs_min=config.youngs_min,
            youngs_scale=config.youngs_scale,
            use_attention="attention" not in config.material_ablation,
        )
        for o, frames in enumerate(frame_counts):
            deformation_store.add(
                transform_key(o), init_handle_transforms(frames, config.num_handles, rng)
            )
        return cls(
            geom,
            index,
            gradient_op,
            deformation_store,
            material_store,
            eigen_net,
            material_net,
            len(frame_counts),
            config,
        )

    def transforms(self) -> List[Tensor]:
        return [self.deformation_store[transform_key(o)] for o in range(self.num_trajectories)]

    def reference_transforms(self) -> np.ndarray:
        """Final fitted frame of trajectory 0, or identity handles when nothing was fitted."""
        if self.num_trajectories == 0:
            return identity_transforms(self.config.num_handles)
        return self.deformation_store[transform_key(0)].data[-1].copy()

    def weights(self) -> np.ndarray:
        with ad.no_tape():
            return eigenmode_forward(self.eigen_net, self.geom).data

    def stiffness(self, w: Optional[np.ndarray] = None) -> np.ndarray:
        """Current E field, evaluated without taping."""
        if w is None:
            w = self.weights()
        with ad.no_tape():
            g = lsq_spatial_gradient(w, self.geom, self.index, self.gradient_op)
            feats = assemble_features(
                w, g, self.W_prev, self.reference_transforms(), self.index, self.config.material_ablation
            )
            return material_forward(self.material_net, self.geom, feats, self.index).data

    def frozen_fields(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(w, g, E) for simulation; a stored E buffer wins over re-evaluating the network."""
        w = self.weights()
        g = self.gradient_op.apply(w)
        E = self.E if self.E is not None else self.stiffness(w)
        return w, g, E

    def to_checkpoint(self, stage: int, extra: Optional[Dict] = None) -> Checkpoint:
        params = {}
        params.update(self.deformation_store.values())
        params.update(self.material_store.values())
        n = self.geom.num_points
        params["W_prev"] = np.zeros(n) if self.W_prev is None else self.W_prev.copy()
        params["T_ref"] = self.reference_transforms()
        params["E"] = self.stiffness() if self.E is None else self.E.copy()
        params["rest.points"] = self.geom.points.copy()
        params["rest.volume"] = self.geom.volume_per_point.copy()
        params["rest.mass"] = self.geom.mass_per_point.copy()
        cfg = self.config
        metadata = {
            "J": cfg.num_handles,
            "K": cfg.knn,
            "hidden_width": cfg.hidden_width,
            "seed": cfg.seed,
            "stage": stage,
            "mode": cfg.mode,
            "eigen_layers": cfg.eigen_layers,
            "material_blocks": cfg.material_blocks,
            "global_tokens": cfg.global_tokens,
            "youngs_min": cfg.youngs_min,
            "youngs_scale": cfg.youngs_scale,
            "poisson_ratio": cfg.poisson_ratio,
            "corrected_neohookean": cfg.corrected_neohookean,
            "material_ablation": list(cfg.material_ablation),
            "num_points": n,
            "num_trajectories": self.num_trajectories,
        }
        metadata.update(self.eigen_net.metadata())
        metadata.update(self.metadata)
        metadata.update(extra or {})
        return Checkpoint(params=params, metadata=metadata)

    @classmethod
    def from_checkpoint(cls, checkpoint: Checkpoint, geom: RestGeometry) -> "SystemModel":
        meta = checkpoint.metadata
        required = ("J", "K", "hidden_width", "seed", "stage")
        missing = [k for k in required if k not in meta]
        if missing:
            raise CheckpointError(f"checkpoint metadata is missing: {', '.join(missing)}")
        if meta.get("num_points", geom.num_points) != geom.num_points:
            raise CheckpointError(
                f"checkpoint was trained on {meta['num_points']} points, scene has {geom.num_points}"
            )

        known = {f for f in TrainConfig.__dataclass_fields__}
        overrides = {
            "num_handles": meta["J"],
            "knn": meta["K"],
            "hidden_width": meta["hidden_width"],
            "seed": meta["seed"],
            "epochs": 1,
            "stage1_epochs": 0,
        }
        for key in ("mode", "eigen_layers", "material_blocks", "global_tokens", "youngs_min",
                    "youngs_scale", "poisson_ratio", "corrected_neohookean", "material_ablation"):
            if key in meta and key in known:
                overrides[key] = meta[key]
        try:
            config = TrainConfig(**overrides)
        except Exception as e:
            raise CheckpointError(f"checkpoint metadata is invalid: {e}")

        frame_counts = []
        o = 0
        while transform_key(o) in checkpoint.params:
            frame_counts.append(checkpoint.params[transform_key(o)].shape[0])
            o += 1

        model = cls.create(config, geom, frame_counts, np.random.default_rng(config.seed))
        if "input_center" in meta:
            model.eigen_net.center = np.asarray(meta["input_center"], dtype=np.float64)
            model.material_net.center = model.eigen_net.center
        if "input_scale" in meta:
            model.eigen_net.scale = float(meta["input_scale"])
            model.material_net.scale = model.eigen_net.scale

        for store in (model.deformation_store, model.material_store):
            missing = [k for k in store.keys() if k not in checkpoint.params]
            if missing:
                raise CheckpointError(f"checkpoint is missing keys: {', '.join(missing[:5])}")
            for key in store.keys():
                try:
                    store.set(key, checkpoint.params[key])
                except ContractViolation as e:
                    raise CheckpointError(str(e))

        if "W_prev" in checkpoint.params:
            model.W_prev = np.asarray(checkpoint.params["W_prev"], dtype=np.float64)
        if "E" in checkpoint.params:
            E = np.asarray(checkpoint.params["E"], dtype=np.float64)
            if E.shape != (geom.num_points, 4):
                raise CheckpointError(f"stored E field has shape {E.shape}")
            model.E = E
        model.metadata = {k: v for k, v in meta.items() if k == "scene"}
        return model


@dataclass
class LossTerms:
    total: Tensor
    recon: float = 0.0
    ortho: float = 0.0
    energy_pos: float = 0.0
    energy_neg: float = 0.0
    energy_neg_reciprocal: float = 0.0
    stiffness_reg: float = 0.0
    noise_scale: float = 0.0
    flagged: bool = False
    density: Optional[np.ndarray] = None


class SystemTrainer:
    """Runs the training loop for one geometry and dataset."""

    def __init__(
        self,
        config: TrainConfig,
        geom: RestGeometry,
        data: TrajectoryDataset,
        recorder=None,
        out_dir: Optional[str] = None,
    ):
        self.config = config
        self.geom = geom
        self.data = data
        self.recorder = recorder
        self.out_dir = Path(out_dir) if out_dir else None
        self._check_mode()

        self.rng = np.random.default_rng(config.seed)
        frame_counts = (
            [] if config.mode == "no_observation" else [t.shape[0] for t in data.trajectories]
        )
        self.model = SystemModel.create(config, geom, frame_counts, self.rng)
        self.frozen_E: Optional[Tensor] = None
        if config.mode == "no_observation":
            self.model.material_store.freeze()
            self.frozen_E = Tensor(self.model.stiffness())

    def _check_mode(self):
        mode, data = self.config.mode, self.data
        if mode == "observed" and data.num_trajectories != 1:
            raise ContractViolation(
                f"observed mode needs exactly one trajectory, got {data.num_trajectories}"
            )
        if mode == "multi_trajectory" and data.is_empty:
            raise ContractViolation("multi_trajectory mode needs at least one trajectory")
        if mode != "no_observation":
            data.check_against(self.geom)

    def stage_of(self, epoch: int) -> int:
        if self.config.mode == "no_observation":
            return 2
        return 1 if epoch < self.config.stage1_epochs else 2

    def _positive_transforms(self, rng: np.random.Generator):
        cfg = self.config
        if cfg.mode == "no_observation":
            base = identity_transforms(cfg.random_pose_samples, cfg.num_handles)
            return Tensor(base + cfg.random_pose_scale * rng.standard_normal(base.shape))
        transforms = self.model.transforms()
        return transforms[0] if len(transforms) == 1 else ad.concatenate(transforms, axis=0)

    def loss_terms(self, epoch: int, rng: np.random.Generator) -> LossTerms:
        """Evaluate the epoch's loss on the active tape; RNG draws happen in a fixed order."""
        cfg, model, weights = self.config, self.model, self.config.weights
        stage = self.stage_of(epoch)
        terms = LossTerms(total=Tensor(0.0))

        with loss_term("eigenmodes"):
            w = eigenmode_forward(model.eigen_net, self.geom)
            g = lsq_spatial_gradient(w, self.geom, model.index, model.gradient_op)
        with loss_term("ortho"):
            ortho = ortho_loss(w)
        total = ortho * weights.ortho
        terms.ortho = ortho.item()

        if cfg.mode != "no_observation":
            with loss_term("recon"):
                recon = recon_loss(
                    w, model.transforms(), self.data, self.geom, cfg.chamfer_subsample, rng
                )
            total = total + recon * weights.recon
            terms.recon = recon.item()

        if stage == 2:
            T_pos = self._positive_transforms(rng)
            if cfg.mode == "no_observation":
                E = self.frozen_E
            else:
                with loss_term("material"):
                    feats = assemble_features(
                        w, g, model.W_prev, model.reference_transforms(), model.index, cfg.material_ablation
                    )
                    E = material_forward(model.material_net, self.geom, feats, model.index)

            with loss_term("energy_pos"):
                F_pos = deformation_gradient(w, g, T_pos, self.geom)
                W_pos, terms.density = integrated_energy(
                    F_pos, E, self.geom, cfg.poisson_ratio, cfg.corrected_neohookean
                )
            total = total + W_pos * weights.energy
            terms.energy_pos = W_pos.item()

            if cfg.mode != "no_observation":
                reciprocal_sum, neg_sum = Tensor(0.0), 0.0
                for _ in range(cfg.negatives_per_epoch):
                    T_neg, terms.noise_scale = sample_negative_transforms(
                        T_pos, epoch, cfg.epochs, cfg.gamma, rng, cfg.reverse_noise_schedule
                    )
                    with loss_term("energy_neg"):
                        F_neg = deformation_gradient(w, g, T_neg, self.geom)
                    _, reciprocal, W_neg, flagged = contrastive_energy_terms(
                        F_pos, F_neg, E, self.geom, cfg.poisson_ratio, cfg.corrected_neohookean,
                        cfg.energy_floor,
                    )
                    reciprocal_sum = reciprocal_sum + reciprocal
                    neg_sum += W_neg.item()
                    terms.flagged = terms.flagged or flagged
                reciprocal = reciprocal_sum / float(cfg.negatives_per_epoch)
                with loss_term("stiffness_reg"):
                    reg = stiffness_reg(E)
                total = total + reciprocal * weights.energy + reg * weights.stiffness_reg
                terms.energy_neg = neg_sum / cfg.negatives_per_epoch
                terms.energy_neg_reciprocal = reciprocal.item()
                terms.stiffness_reg = reg.item()

        terms.total = total
        return terms

    def _abort(self, error: NumericFailure, epoch: int, stage: int):
        path = None
        if self.out_dir is not None:
            path = str(self.out_dir / "checkpoint_last_good.json")
            try:
                save_checkpoint(path, self.model.to_checkpoint(stage, {"aborted_epoch": epoch}))
            except Exception as e:  # the abort itself must still surface
                log_with_timestamp(f"✗ Training: could not save last good checkpoint: {e}")
                path = None
        log_with_timestamp(f"✗ Training: non-finite '{error.term}' at epoch {epoch}: {error}")
        raise TrainingAborted(error.term or error.op, epoch, path) from error

    def train(self) -> Tuple[Checkpoint, TrainReport]:
        cfg = self.config
        report = TrainReport()
        log_with_timestamp(
            f"📊 Training: mode={cfg.mode} J={cfg.num_handles} K={cfg.knn} "
            f"epochs={cfg.epochs} stage1={cfg.stage1_epochs if cfg.mode != 'no_observation' else 0} "
            f"points={self.geom.num_points}"
        )

        stage = 1
        for epoch in range(cfg.epochs):
            stage = self.stage_of(epoch)
            with Tape() as tape:
                try:
                    terms = self.loss_terms(epoch, self.rng)
                except NumericFailure as e:
                    self._abort(e, epoch, stage)

            grads = backward(terms.total, tape)
            groups = [self.model.deformation_store.collect_grads(grads)]
            update_material = stage == 2 and cfg.mode != "no_observation"
            if update_material:
                groups.append(self.model.material_store.collect_grads(grads))
            groups, grad_norm = clip_grad_norm(groups, cfg.grad_clip)
            if not np.isfinite(grad_norm):
                self._abort(NumericFailure("backward", "non-finite gradient", term="backward"), epoch, stage)
            adam_step(self.model.deformation_store, groups[0], lr=cfg.lr)
            if update_material:
                adam_step(self.model.material_store, groups[1], lr=cfg.lr)

            if stage == 2 and cfg.mode != "no_observation":
                self.model.W_prev = terms.density

            metrics = EpochMetrics(
                epoch=epoch,
                stage=stage,
                recon=terms.recon,
                ortho=terms.ortho,
                energy_pos=terms.energy_pos,
                energy_neg=terms.energy_neg,
                energy_neg_reciprocal=terms.energy_neg_reciprocal,
                stiffness_reg=terms.stiffness_reg,
                total=terms.total.item(),
                noise_scale=terms.noise_scale,
                flagged=terms.flagged,
            )
            report.epochs.append(metrics)
            if terms.flagged:
                report.flagged_epochs.append(epoch)
                log_with_timestamp(f"⚠ Training: negative energy below floor at epoch {epoch}")
            if self.recorder is not None:
                self.recorder.append_metrics(metrics.to_dict())
            if epoch % cfg.log_every == 0 or epoch == cfg.epochs - 1:
                log_with_timestamp(
                    f"📊 Training: epoch {epoch} stage {stage} total={metrics.total:.6g} "
                    f"recon={metrics.recon:.6g} ortho={metrics.ortho:.6g} "
                    f"W_pos={metrics.energy_pos:.6g} W_neg={metrics.energy_neg:.6g}"
                )

        if cfg.mode != "no_observation":
            self.model.E = self.model.stiffness()
        else:
            self.model.E = self.frozen_E.data.copy()
        report.reconstruction_chamfer = reconstruction_report(self.model, self.data)
        for o, value in enumerate(report.reconstruction_chamfer):
            log_with_timestamp(f"✓ Training: trajectory {o} mean per-point Chamfer {value:.6g}")
        return self.model.to_checkpoint(stage), report


def reconstruction_report(model: SystemModel, data: TrajectoryDataset) -> List[float]:
    """Per trajectory, the mean over frames of chamfer(predicted, observed) / N."""
    if model.num_trajectories == 0:
        return []
    w = model.weights()
    values = []
    for T, observed in zip(model.transforms(), data.trajectories):
        with ad.no_tape():
            predicted = apply_deformation(w, T.data, model.geom).data
        per_frame = [
            chamfer_distance(predicted[t], observed[t]) / model.geom.num_points
            for t in range(observed.shape[0])
        ]
        values.append(float(np.mean(per_frame)))
    return values


def train(
    config: TrainConfig,
    geom: RestGeometry,
    data: TrajectoryDataset,
    recorder=None,
    out_dir: Optional[str] = None,
) -> Tuple[Checkpoint, TrainReport]:
    return SystemTrainer(config, geom, data, recorder=recorder, out_dir=out_dir).train()
