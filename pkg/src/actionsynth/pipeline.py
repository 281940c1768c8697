"""Multi-action synthesis: chaining, start-embedding projection, revision.

Each action is generated in the local frame of its context (anchored at the
last context pose), then rotated and translated back into the world. When a
classifier disagrees with the requested tag, the action is regenerated
exactly once with its start-pose embedding replaced by a least-squares
projection onto the nearest training start embeddings of that tag, and the
regeneration is kept either way.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import geometry as geo
from .errors import DeadRequest, EmptyBank, ShapeError
from .geometry import MotionClip, RigidFrame
from .model import ActionGenerator, clip_to_tensor, embed_pose_array, generate_action

log = logging.getLogger(__name__)

TRAJECTORY_FRAMES = ("world", "local")


@dataclass
class ActionRequest:
    """One requested action: tag, duration, optional ground-plane trajectory.

    ``frame`` says which coordinates the trajectory uses: ``world`` (user
    annotations; re-anchored into each action's local frame before
    conditioning) or ``local`` (already relative to the context anchor, as in
    evaluation chains). In-place actions pass no trajectory and condition on
    local zeros.
    """

    tag: int
    duration: int
    trajectory: np.ndarray | None = None
    frame: str = "world"

    def __post_init__(self):
        if self.frame not in TRAJECTORY_FRAMES:
            raise ShapeError(f"unknown trajectory frame {self.frame!r}")
        if self.trajectory is not None:
            self.trajectory = np.asarray(self.trajectory, dtype=np.float64)
            if self.trajectory.shape != (self.duration, 2):
                raise ShapeError(
                    f"trajectory shape {self.trajectory.shape} must be ({self.duration}, 2)")


@dataclass
class ActionRecord:
    tag: int
    duration: int
    boundary_index: int
    blend_frames: int = 0
    revised: bool = False
    revision_skipped: str | None = None
    classifier_tag: int | None = None
    confidence: float | None = None


@dataclass
class PipelineResult:
    motion: MotionClip
    records: list[ActionRecord]

    def __post_init__(self):
        boundaries = [r.boundary_index for r in self.records]
        if boundaries != sorted(set(boundaries)):
            raise ShapeError("boundary indices must be strictly increasing")


# ---------------------------------------------------------------------------
# start-pose embedding bank
# ---------------------------------------------------------------------------

@dataclass
class StartBank:
    """Per-tag embeddings of training start poses (the last context frame of
    each item), under the model's shared pose embedding."""

    embeddings: dict[int, np.ndarray] = field(default_factory=dict)   # tag -> (N, d)
    item_ids: dict[int, list[int]] = field(default_factory=dict)

    def size(self) -> int:
        return sum(len(v) for v in self.item_ids.values())

    def entries_for(self, tag: int) -> np.ndarray:
        if tag not in self.embeddings or len(self.embeddings[tag]) == 0:
            raise EmptyBank(f"no start embeddings for tag {tag}")
        return self.embeddings[tag]


def build_start_bank(items, model: ActionGenerator) -> StartBank:
    """Embed each item's start pose (last frame of its normalized context)."""
    bank = StartBank()
    grouped: dict[int, list[np.ndarray]] = {}
    for i, item in enumerate(items):
        ctx_local, _ = geo.normalize_clip(item.initial_motion)
        vec = clip_to_tensor(ctx_local)[-1].numpy()
        emb = embed_pose_array(model, vec)
        grouped.setdefault(item.current_tag, []).append(emb)
        bank.item_ids.setdefault(item.current_tag, []).append(i)
    bank.embeddings = {tag: np.stack(v) for tag, v in grouped.items()}
    return bank


def project_start_embedding(f0: np.ndarray, tag: int, bank: StartBank,
                            n_neighbors: int = 16) -> np.ndarray:
    """Least-squares projection of f0 onto the span of its nearest bank
    embeddings for ``tag``; minimum-norm coefficients when rank deficient."""
    f0 = np.asarray(f0, dtype=np.float64)
    entries = bank.entries_for(tag)
    dists = np.linalg.norm(entries - f0, axis=1)
    nearest = entries[np.argsort(dists, kind="stable")[:n_neighbors]]
    # rows of `nearest` are the basis; solve min ||nearest^T phi - f0||
    phi, *_ = np.linalg.lstsq(nearest.T, f0, rcond=None)
    return phi @ nearest


# ---------------------------------------------------------------------------
# chaining
# ---------------------------------------------------------------------------

def _derived_seed(seed: int, action_index: int, attempt: int) -> int:
    ss = np.random.SeedSequence([int(seed), int(action_index), int(attempt)])
    return int(ss.generate_state(1)[0])


def _quantize(clip: MotionClip) -> MotionClip:
    """Round values to float32 so persisted copies reload bit-exactly."""
    return MotionClip(clip.rotations.astype(np.float32).astype(np.float64),
                      clip.root.astype(np.float32).astype(np.float64),
                      frame_rate=clip.frame_rate, tag=clip.tag)


def _local_trajectory(request: ActionRequest, frame: RigidFrame) -> np.ndarray | None:
    if request.trajectory is None:
        return None
    if request.frame == "local":
        return request.trajectory
    return frame.inverse().transform_planar(request.trajectory)


def _check_orientation(request: ActionRequest, frame: RigidFrame,
                       traj_local: np.ndarray | None,
                       valid_range: tuple[float, float] | None):
    """Rotate the body (world requests) or the path (local requests) when the
    angle between facing and the trajectory head is outside the trained range."""
    from .trajectory import orientation_check

    if valid_range is None or traj_local is None or len(traj_local) < 2:
        return frame, traj_local
    head = traj_local[: min(6, len(traj_local))]
    result = orientation_check(0.0, head, valid_range)
    if not result.adjusted:
        return frame, traj_local
    delta = result.yaw
    if request.frame == "world":
        new_frame = RigidFrame(frame.yaw + delta, frame.translation)
        return new_frame, _local_trajectory(request, new_frame)
    spin = RigidFrame(-delta)
    return frame, spin.transform_planar(traj_local)


def generate_chain(requests: list[ActionRequest], initial_motion: MotionClip,
                   model: ActionGenerator, seed: int = 0, classifier=None,
                   sample_mode: str = "random",
                   orientation_range: tuple[float, float] | None = None) -> PipelineResult:
    """Purely generative chaining: normalize context, generate, rotate back,
    and feed the tail of each action to the next."""
    return _run_chain(requests, initial_motion, model, classifier=classifier, bank=None,
                      revise=False, blend_frames=0, seed=seed, sample_mode=sample_mode,
                      orientation_range=orientation_range)


def generate_chain_revised(requests: list[ActionRequest], initial_motion: MotionClip,
                           model: ActionGenerator, classifier, bank: StartBank,
                           blend_frames: int = 4, n_neighbors: int = 16, seed: int = 0,
                           sample_mode: str = "random",
                           orientation_range: tuple[float, float] | None = None) -> PipelineResult:
    """Chaining with classifier-gated revision and boundary blending."""
    return _run_chain(requests, initial_motion, model, classifier=classifier, bank=bank,
                      revise=True, blend_frames=blend_frames, n_neighbors=n_neighbors,
                      seed=seed, sample_mode=sample_mode, orientation_range=orientation_range)


def _run_chain(requests, initial_motion, model, *, classifier, bank, revise,
               blend_frames, seed, sample_mode, orientation_range, n_neighbors=16):
    if not requests:
        raise DeadRequest("need at least one action request")
    k = model.config.context_len
    if len(initial_motion) < k:
        raise ShapeError(f"initial motion must have at least {k} frames, got {len(initial_motion)}")

    context = initial_motion.tail(k)
    pieces: list[MotionClip] = []
    records: list[ActionRecord] = []
    cursor = 0
    for i, request in enumerate(requests):
        if request.duration < 1:
            raise DeadRequest(f"request {i} has duration {request.duration}")
        next_tag = requests[i + 1].tag if i + 1 < len(requests) else request.tag

        ctx_local, frame = geo.normalize_clip(context)
        traj_local = _local_trajectory(request, frame)
        frame, traj_local = _check_orientation(request, frame, traj_local, orientation_range)

        local = generate_action(model, ctx_local, request.tag, next_tag, request.duration,
                                traj_local, sample_mode=sample_mode,
                                seed=_derived_seed(seed, i, 0))
        revised = False
        skipped = None
        cls_tag = conf = None
        if classifier is not None:
            cls_tag, conf = classifier.classify(local)
        if revise and classifier is not None and cls_tag != request.tag:
            try:
                f0 = embed_pose_array(model, clip_to_tensor(ctx_local)[-1].numpy())
                f0_star = project_start_embedding(f0, request.tag, bank, n_neighbors)
                local = generate_action(model, ctx_local, request.tag, next_tag,
                                        request.duration, traj_local, sample_mode=sample_mode,
                                        seed=_derived_seed(seed, i, 1),
                                        start_embedding=f0_star)
                revised = True
                cls_tag, conf = classifier.classify(local)
            except EmptyBank as exc:
                skipped = str(exc)
                log.warning("revision skipped for action %d: %s", i, exc)

        world = _quantize(geo.denormalize_clip(local, frame))
        n_blend = 0
        if revised and blend_frames > 0 and pieces:
            blend = _quantize(geo.slerp_blend(pieces[-1], world, blend_frames))
            pieces.append(blend)
            cursor += blend_frames
            n_blend = blend_frames
        pieces.append(world)
        records.append(ActionRecord(
            tag=request.tag, duration=request.duration, boundary_index=cursor,
            blend_frames=n_blend, revised=revised, revision_skipped=skipped,
            classifier_tag=cls_tag, confidence=conf))
        cursor += request.duration
        context = MotionClip.concatenate([context, world]).tail(k)

    motion = MotionClip.concatenate(pieces)
    return PipelineResult(motion=motion, records=records)
