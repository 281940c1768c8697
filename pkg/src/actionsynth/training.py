"""Loss stack, transformer scheduled sampling, and the training loop.

The reconstruction loss sums three weighted terms (6D rotations, root
translation, forward-kinematics joint positions). Each term is the mean over
frames of the squared L2 norm of the flattened per-frame difference, plus a
velocity weight times the same statistic on first differences (frames 2..T).

Scheduled sampling runs the motion decoder twice with shared weights: the
second pass consumes a per-frame Bernoulli mix of ground-truth inputs and
first-pass predictions, with the mix ratio ramped linearly between the
activate and accomplish epochs.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, replace

import numpy as np
import torch

from . import geometry as geo
from .data import MotionDataset
from .errors import DivergenceError, ShapeError
from .geometry import MotionClip, Skeleton
from .model import (ActionGenerator, LatentDistribution, ModelConfig, build_generator,
                    clip_to_tensor, split_pose_tensor)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class LossWeights:
    rotation: float = 1.0
    translation: float = 0.5
    joints: float = 2.0
    velocity: float = 2.0
    kl: float = 1e-8
    first: float = 1.0    # weight of the teacher-forced pass
    second: float = 0.0   # weight of the mixed-input pass

    def with_scheduled_sampling(self, active: bool) -> "LossWeights":
        if active:
            return replace(self, first=0.1, second=0.9)
        return replace(self, first=1.0, second=0.0)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 1000
    activate_epoch: int = 250
    accomplish_epoch: int = 750
    batch_size: int = 30
    learning_rate: float = 1e-4
    seed: int = 0
    val_every: int = 0            # 0 disables periodic validation
    loss_gate: float | None = None  # optional: also require loss < gate before mixing

    def __post_init__(self):
        if not (self.activate_epoch < self.accomplish_epoch <= self.epochs):
            raise ShapeError("need activate_epoch < accomplish_epoch <= epochs")


def mix_ratio(epoch: int, config: TrainConfig) -> float:
    """Linear ramp from 0 at the activate epoch to 1 at the accomplish epoch."""
    if epoch <= config.activate_epoch:
        return 0.0
    if epoch >= config.accomplish_epoch:
        return 1.0
    return (epoch - config.activate_epoch) / (config.accomplish_epoch - config.activate_epoch)


# ---------------------------------------------------------------------------
# differentiable forward kinematics
# ---------------------------------------------------------------------------

def rot6d_to_matrix(r6: torch.Tensor) -> torch.Tensor:
    """(..., 6) -> (..., 3, 3), Gram-Schmidt, differentiable."""
    a1, a2 = r6[..., :3], r6[..., 3:]
    b1 = a1 / (a1.norm(dim=-1, keepdim=True) + 1e-8)
    a2p = a2 - (b1 * a2).sum(dim=-1, keepdim=True) * b1
    b2 = a2p / (a2p.norm(dim=-1, keepdim=True) + 1e-8)
    b3 = torch.cross(b1, b2, dim=-1)
    return torch.stack([b1, b2, b3], dim=-1)


def fk_positions(rot6d: torch.Tensor, root: torch.Tensor, skeleton: Skeleton) -> torch.Tensor:
    """rot6d (..., n_J, 6), root (..., 3) -> joint positions (..., n_J, 3)."""
    mats = rot6d_to_matrix(rot6d)
    offsets = torch.as_tensor(skeleton.offsets, dtype=rot6d.dtype, device=rot6d.device)
    positions = [root]
    globals_ = [mats[..., 0, :, :]]
    for i in range(1, skeleton.n_joints):
        p = skeleton.parents[i]
        positions.append(positions[p] + (globals_[p] @ offsets[i]))
        globals_.append(globals_[p] @ mats[..., i, :, :])
    return torch.stack(positions, dim=-2)


# ---------------------------------------------------------------------------
# reconstruction and KL losses
# ---------------------------------------------------------------------------

def _masked_term(diff: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Mean over valid frames of the squared norm of flattened frame diffs.

    diff (B, T, ...), mask (B, T) with 1 on valid frames. The per-item frame
    mean is averaged over the batch; items with no valid frames contribute 0.
    """
    sq = diff.flatten(2).pow(2).sum(dim=2)          # (B, T)
    counts = mask.sum(dim=1).clamp(min=1.0)
    return ((sq * mask).sum(dim=1) / counts).mean()


def reconstruction_terms(pred: torch.Tensor, gt: torch.Tensor, mask: torch.Tensor,
                         weights: LossWeights, skeleton: Skeleton) -> dict[str, torch.Tensor]:
    """Per-term losses for (B, T, pose_dim) batches; mask marks valid frames."""
    n_j = skeleton.n_joints
    pr, pd = split_pose_tensor(pred, n_j)
    gr, gd = split_pose_tensor(gt, n_j)
    pj = fk_positions(pr, pd, skeleton)
    gj = fk_positions(gr, gd, skeleton)
    vmask = mask[:, 1:] * mask[:, :-1]
    terms = {}
    for name, (a, b) in {"rotation": (pr, gr), "translation": (pd, gd), "joints": (pj, gj)}.items():
        value = _masked_term(a - b, mask)
        if a.shape[1] > 1:
            va = a[:, 1:] - a[:, :-1]
            vb = b[:, 1:] - b[:, :-1]
            value = value + weights.velocity * _masked_term(va - vb, vmask)
        terms[name] = value
    return terms


def combine_terms(terms: dict[str, torch.Tensor], weights: LossWeights) -> torch.Tensor:
    return (weights.rotation * terms["rotation"]
            + weights.translation * terms["translation"]
            + weights.joints * terms["joints"])


def reconstruction_loss(pred: MotionClip, gt: MotionClip, weights: LossWeights,
                        skeleton: Skeleton) -> tuple[float, dict[str, float]]:
    """Clip-level reconstruction loss with a per-term breakdown."""
    if len(pred) != len(gt) or pred.n_joints != gt.n_joints:
        raise ShapeError("pred and gt clips must have matching shapes")
    p = clip_to_tensor(pred, torch.float64).unsqueeze(0)
    g = clip_to_tensor(gt, torch.float64).unsqueeze(0)
    mask = torch.ones(1, len(pred), dtype=torch.float64)
    with torch.no_grad():
        terms = reconstruction_terms(p, g, mask, weights, skeleton)
        total = combine_terms(terms, weights)
    return float(total), {k: float(v) for k, v in terms.items()}


def kl_term(mu: torch.Tensor, log_var: torch.Tensor) -> torch.Tensor:
    """KL(N(mu, sigma^2) || N(0, I)) summed over dims, mean over the batch."""
    per_item = 0.5 * (mu.pow(2) + log_var.exp() - log_var - 1.0).sum(dim=-1)
    return per_item.mean()


def kl_loss(dist: LatentDistribution) -> float:
    mu = torch.as_tensor(dist.mu)
    log_var = torch.as_tensor(dist.log_var)
    return float(kl_term(mu.unsqueeze(0), log_var.unsqueeze(0)))


# ---------------------------------------------------------------------------
# batch preparation
# ---------------------------------------------------------------------------

@dataclass
class PreparedItem:
    """A dataset item re-expressed in its context-anchor local frame."""

    context: torch.Tensor      # (k, pose_dim)
    action: torch.Tensor       # (T, pose_dim)
    trajectory: torch.Tensor   # (T, 2), local frame
    current_tag: int
    next_tag: int


def prepare_item(item, dtype=torch.float32) -> PreparedItem:
    ctx_local, frame = geo.normalize_clip(item.initial_motion)
    inv = frame.inverse()
    action_local = inv.transform_clip(item.action)
    traj_local = inv.transform_planar(item.trajectory)
    return PreparedItem(
        context=clip_to_tensor(ctx_local, dtype),
        action=clip_to_tensor(action_local, dtype),
        trajectory=torch.as_tensor(traj_local, dtype=dtype),
        current_tag=item.current_tag, next_tag=item.next_tag,
    )


@dataclass
class Batch:
    context: torch.Tensor      # (B, k, pose_dim)
    actions: torch.Tensor      # (B, Tmax, pose_dim), zero padded
    trajectory: torch.Tensor   # (B, Tmax, 2)
    mask: torch.Tensor         # (B, Tmax) float, 1 on valid frames
    current_tag: torch.Tensor  # (B,)
    next_tag: torch.Tensor     # (B,)

    @property
    def max_duration(self) -> int:
        return self.actions.shape[1]


def collate(items: list[PreparedItem]) -> Batch:
    B = len(items)
    t_max = max(it.action.shape[0] for it in items)
    dtype = items[0].action.dtype
    pose_dim = items[0].action.shape[1]
    actions = torch.zeros(B, t_max, pose_dim, dtype=dtype)
    traj = torch.zeros(B, t_max, 2, dtype=dtype)
    mask = torch.zeros(B, t_max, dtype=dtype)
    for i, it in enumerate(items):
        T = it.action.shape[0]
        actions[i, :T] = it.action
        traj[i, :T] = it.trajectory
        mask[i, :T] = 1.0
    return Batch(
        context=torch.stack([it.context for it in items]),
        actions=actions, trajectory=traj, mask=mask,
        current_tag=torch.tensor([it.current_tag for it in items]),
        next_tag=torch.tensor([it.next_tag for it in items]),
    )


# ---------------------------------------------------------------------------
# scheduled sampling
# ---------------------------------------------------------------------------

def scheduled_sampling_step(batch: Batch, model: ActionGenerator, xi: float,
                            weights: LossWeights, skeleton: Skeleton,
                            seed: int | None = None,
                            generator: torch.Generator | None = None):
    """One forward pass of the two-decoder scheme.

    Returns (loss, parts, first_pass, second_pass); ``second_pass`` equals the
    first when xi == 0 (the second decode is skipped). Gradients flow through
    both passes.
    """
    if not (0.0 <= xi <= 1.0):
        raise ShapeError(f"xi must be in [0, 1], got {xi}")
    if generator is None:
        generator = torch.Generator()
        generator.manual_seed(0 if seed is None else int(seed))
    dtype = batch.actions.dtype
    pad = batch.mask < 0.5                      # True on padding

    mu, log_var = model.encode(batch.context, batch.current_tag, batch.next_tag)
    z = model.sample_latent(mu, log_var, "random", generator=generator)
    controls = model.unroll_controls(z, batch.max_duration, batch.current_tag,
                                     batch.trajectory, pad_mask=pad)

    bop = batch.context[:, -1:]                                    # (B, 1, pose_dim)
    inputs = torch.cat([bop, batch.actions[:, :-1]], dim=1)        # gt shifted right
    first = model.decode(inputs, controls, pad_mask=pad, memory_pad_mask=pad)

    parts = {}
    terms1 = reconstruction_terms(first, batch.actions, batch.mask, weights, skeleton)
    recon1 = combine_terms(terms1, weights)
    kl = kl_term(mu, log_var)

    if xi == 0.0:
        second = first
        recon2 = recon1
        terms2 = terms1
    else:
        # replace each ground-truth input frame (never the start pose) with
        # the first-pass prediction of the same frame, independently per frame
        draw = torch.rand(batch.actions.shape[:2], generator=generator, dtype=dtype)
        mix = (draw < xi).to(dtype).unsqueeze(-1)
        mix = torch.cat([torch.zeros_like(mix[:, :1]), mix[:, 1:]], dim=1)
        mixed = torch.cat([bop, batch.actions[:, :-1]], dim=1)
        mixed = (1.0 - mix) * mixed + mix * torch.cat([bop, first[:, :-1]], dim=1)
        second = model.decode(mixed, controls, pad_mask=pad, memory_pad_mask=pad)
        terms2 = reconstruction_terms(second, batch.actions, batch.mask, weights, skeleton)
        recon2 = combine_terms(terms2, weights)

    loss = weights.first * recon1 + weights.second * recon2 + weights.kl * kl
    with torch.no_grad():
        for name in ("rotation", "translation", "joints"):
            parts[name] = float(weights.first * terms1[name] + weights.second * terms2[name])
        parts["kl"] = float(kl)
        parts["recon_first"] = float(recon1)
        parts["recon_second"] = float(recon2)
    return loss, parts, first, second


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------

@dataclass
class TrainResult:
    model: ActionGenerator
    log: list[dict]
    val_log: list[dict]


LOG_COLUMNS = ["epoch", "loss_total", "L_R", "L_D", "L_J", "L_KL", "xi"]


def train(dataset: MotionDataset, model_config: ModelConfig, train_config: TrainConfig,
          weights: LossWeights | None = None, log_path: str | None = None,
          val_items: list | None = None) -> TrainResult:
    """Adam training with the scheduled sampling ramp; deterministic under seed."""
    if len(dataset.items) == 0:
        raise ShapeError("cannot train on an empty dataset")
    base_weights = weights or LossWeights()
    skeleton = dataset.skeleton()
    model = build_generator(model_config, seed=train_config.seed)
    model.train()
    optimizer = torch.optim.Adam(model.parameters(), lr=train_config.learning_rate)
    prepared = [prepare_item(it) for it in dataset.items]
    rng = np.random.default_rng(train_config.seed)
    sampler = torch.Generator()
    sampler.manual_seed(train_config.seed)

    writer = None
    log_file = None
    if log_path is not None:
        log_file = open(log_path, "a", newline="")
        writer = csv.DictWriter(log_file, fieldnames=LOG_COLUMNS)
        if log_file.tell() == 0:
            writer.writeheader()

    history: list[dict] = []
    val_log: list[dict] = []
    try:
        for epoch in range(1, train_config.epochs + 1):
            xi = mix_ratio(epoch, train_config)
            mixing_active = xi > 0.0
            if mixing_active and train_config.loss_gate is not None and history:
                mixing_active = history[-1]["loss_total"] < train_config.loss_gate
            w = base_weights.with_scheduled_sampling(mixing_active)
            order = rng.permutation(len(prepared))
            sums = {"loss_total": 0.0, "L_R": 0.0, "L_D": 0.0, "L_J": 0.0, "L_KL": 0.0}
            n_batches = 0
            for start in range(0, len(order), train_config.batch_size):
                batch = collate([prepared[i] for i in order[start:start + train_config.batch_size]])
                loss, parts, _, _ = scheduled_sampling_step(
                    batch, model, xi if mixing_active else 0.0, w, skeleton, generator=sampler)
                if not torch.isfinite(loss):
                    raise DivergenceError(epoch)
                optimizer.zero_grad()
                loss.backward()
                optimizer.step()
                sums["loss_total"] += float(loss.detach())
                sums["L_R"] += parts["rotation"]
                sums["L_D"] += parts["translation"]
                sums["L_J"] += parts["joints"]
                sums["L_KL"] += parts["kl"]
                n_batches += 1
            row = {k: v / n_batches for k, v in sums.items()}
            row["epoch"] = epoch
            row["xi"] = xi if mixing_active else 0.0
            history.append(row)
            if writer is not None:
                writer.writerow({k: row[k] for k in LOG_COLUMNS})
                log_file.flush()
            if train_config.val_every and val_items and epoch % train_config.val_every == 0:
                val_log.append({"epoch": epoch,
                                "jpe_cm": validation_jpe(model, val_items, skeleton)})
    finally:
        if log_file is not None:
            log_file.close()
    model.eval()
    return TrainResult(model=model, log=history, val_log=val_log)


def validation_jpe(model: ActionGenerator, items: list, skeleton: Skeleton) -> float:
    """Mean-mode generation error against held-out items, in centimeters."""
    from .metrics import jpe
    from .model import generate_action

    errs = []
    for item in items:
        prep_ctx, frame = geo.normalize_clip(item.initial_motion)
        gt_local = frame.inverse().transform_clip(item.action)
        traj_local = frame.inverse().transform_planar(item.trajectory)
        gen = generate_action(model, prep_ctx, item.current_tag, item.next_tag,
                              item.duration, traj_local, sample_mode="mean", seed=0)
        errs.append(jpe(gen, gt_local, skeleton))
    return float(np.mean(errs))
