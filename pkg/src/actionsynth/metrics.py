"""Distribution, pose, and qualification metrics for generated motions.

Positions are meters internally; pose-level metrics are reported in
centimeters. Feature-level metrics (FID, diversity, multimodality) operate
on classifier features.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from . import geometry as geo
from .errors import (BoundaryMismatch, DimensionMismatch, EmptyInput, ShapeError,
                     TooFew, TooShort)
from .geometry import MotionClip, Skeleton

log = logging.getLogger(__name__)

M_TO_CM = 100.0


# ---------------------------------------------------------------------------
# Gaussian feature statistics and the Frechet distance
# ---------------------------------------------------------------------------

@dataclass
class GaussianStats:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.cov = np.asarray(self.cov, dtype=np.float64)
        m = self.mean.shape[0]
        if self.cov.shape != (m, m):
            raise DimensionMismatch(f"cov shape {self.cov.shape} does not match mean dim {m}")
        if np.max(np.abs(self.cov - self.cov.T)) > 1e-8:
            raise DimensionMismatch("covariance must be symmetric")

    @staticmethod
    def from_features(features: np.ndarray) -> "GaussianStats":
        features = np.asarray(features, dtype=np.float64)
        if features.ndim != 2 or features.shape[0] < 2:
            raise TooFew("need at least 2 feature vectors for Gaussian statistics")
        return GaussianStats(features.mean(axis=0), np.cov(features, rowvar=False))


def _psd_sqrt(mat: np.ndarray) -> np.ndarray:
    """Symmetric PSD square root by eigendecomposition, negatives clamped."""
    vals, vecs = np.linalg.eigh((mat + mat.T) / 2.0)
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T


def fid(stats_a: GaussianStats, stats_b: GaussianStats) -> float:
    """||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_a S_b)^{1/2}).

    The cross term is computed as the trace of the square root of
    S_a^{1/2} S_b S_a^{1/2}, which equals Tr((S_a S_b)^{1/2}) and keeps the
    intermediate symmetric.
    """
    if stats_a.mean.shape != stats_b.mean.shape:
        raise DimensionMismatch(
            f"feature dims differ: {stats_a.mean.shape} vs {stats_b.mean.shape}")
    diff = stats_a.mean - stats_b.mean
    root_a = _psd_sqrt(stats_a.cov)
    inner = _psd_sqrt(root_a @ stats_b.cov @ root_a)
    value = float(diff @ diff + np.trace(stats_a.cov) + np.trace(stats_b.cov)
                  - 2.0 * np.trace(inner))
    return max(value, 0.0)


# ---------------------------------------------------------------------------
# feature diversity
# ---------------------------------------------------------------------------

def diversity(features, seed: int = 0) -> float:
    """Mean L2 distance between two seeded-shuffle halves of the features."""
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[0] < 2:
        raise TooFew("diversity needs at least 2 feature vectors")
    rng = np.random.default_rng(seed)
    order = rng.permutation(features.shape[0])
    if len(order) % 2 == 1:
        log.warning("diversity: dropping 1 of %d features to make an even split", len(order))
        order = order[:-1]
    half = len(order) // 2
    a, b = features[order[:half]], features[order[half:]]
    return float(np.mean(np.linalg.norm(a - b, axis=1)))


def multimodality(features_by_tag: dict[int, np.ndarray], seed: int = 0) -> float:
    """Per-tag diversity averaged over tags; tags with < 2 features are skipped."""
    values = []
    skipped = []
    for tag in sorted(features_by_tag):
        feats = np.asarray(features_by_tag[tag], dtype=np.float64)
        if feats.shape[0] < 2:
            skipped.append(tag)
            continue
        values.append(diversity(feats, seed=seed))
    if skipped:
        log.warning("multimodality: skipped tags with <2 samples: %s", skipped)
    if not values:
        raise TooFew("no tag had at least 2 feature vectors")
    return float(np.mean(values))


# ---------------------------------------------------------------------------
# pose-level metrics
# ---------------------------------------------------------------------------

def jpe(pred: MotionClip, gt: MotionClip, skeleton: Skeleton) -> float:
    """Mean per-frame, per-joint L2 position distance, in centimeters."""
    if len(pred) != len(gt):
        raise ShapeError(f"clip lengths differ: {len(pred)} vs {len(gt)}")
    p = geo.clip_joint_positions(pred, skeleton)
    g = geo.clip_joint_positions(gt, skeleton)
    return float(np.mean(np.linalg.norm(p - g, axis=-1))) * M_TO_CM


def transition_gaps(prev: MotionClip, cur: MotionClip,
                    skeleton: Skeleton) -> tuple[float, float | None]:
    """Pose and velocity gaps across a boundary, in cm and cm/frame.

    The velocity gap is None (flagged) when either clip has a single frame.
    """
    p_prev = geo.clip_joint_positions(prev, skeleton)
    p_cur = geo.clip_joint_positions(cur, skeleton)
    dpose = float(np.mean(np.linalg.norm(p_prev[-1] - p_cur[0], axis=-1))) * M_TO_CM
    if len(prev) < 2 or len(cur) < 2:
        return dpose, None
    v_prev = p_prev[-1] - p_prev[-2]
    v_cur = p_cur[1] - p_cur[0]
    dvel = float(np.mean(np.linalg.norm(v_prev - v_cur, axis=-1))) * M_TO_CM
    return dpose, dvel


# ---------------------------------------------------------------------------
# qualification ratios
# ---------------------------------------------------------------------------

def action_qr(per_motion_correct) -> float:
    """Mean over motions of the fraction of correctly classified actions."""
    if len(per_motion_correct) == 0:
        raise EmptyInput("action_qr needs at least one motion")
    fractions = []
    for flags in per_motion_correct:
        if len(flags) == 0:
            raise EmptyInput("action_qr: a motion has no actions")
        fractions.append(float(np.mean([bool(f) for f in flags])))
    return float(np.mean(fractions))


def motion_qr(per_motion_all_correct) -> float:
    """Fraction of motions whose actions were all classified correctly."""
    if len(per_motion_all_correct) == 0:
        raise EmptyInput("motion_qr needs at least one motion")
    return float(np.mean([bool(f) for f in per_motion_all_correct]))


# ---------------------------------------------------------------------------
# multi-action evaluation
# ---------------------------------------------------------------------------

@dataclass
class IndexMetrics:
    index: int          # 1-based action position within the chains
    accuracy: float
    fid: float | None
    count: int


@dataclass
class BoundaryMetrics:
    dpose_cm: float
    dvel_cm: float | None


@dataclass
class EvalReport:
    per_index: list[IndexMetrics]
    aggregate_accuracy: float | None   # from the second action onward
    aggregate_fid: float | None
    mean_dpose_cm: float | None
    mean_dvel_cm: float | None
    action_qr: float
    motion_qr: float
    per_motion: list[dict] = field(default_factory=list)


def split_result_actions(result, skip_blends: bool = True) -> list[MotionClip]:
    """Cut a pipeline result back into its per-action segments."""
    clips = []
    for rec in result.records:
        start = rec.boundary_index
        clips.append(result.motion.slice(start, start + rec.duration))
    return clips


def evaluate_multiaction(results, chains, classifier, real_features,
                         skeleton: Skeleton, seed: int = 0) -> EvalReport:
    """Score generated chains: per-index accuracy/FID curves, aggregates from
    the second action onward, boundary gaps, and qualification ratios."""
    if len(results) != len(chains):
        raise BoundaryMismatch(f"{len(results)} results vs {len(chains)} chains")
    n_actions = None
    per_index_correct: dict[int, list[bool]] = {}
    per_index_features: dict[int, list[np.ndarray]] = {}
    per_motion_flags: list[list[bool]] = []
    dposes, dvels = [], []
    per_motion = []

    for result, chain in zip(results, chains):
        if len(result.records) != len(chain.actions):
            raise BoundaryMismatch(
                f"result has {len(result.records)} actions, chain has {len(chain.actions)}")
        n_actions = len(chain.actions) if n_actions is None else n_actions
        segments = split_result_actions(result)
        flags = []
        for idx, (segment, action) in enumerate(zip(segments, chain.actions), start=1):
            tag, _ = classifier.classify(segment)
            correct = tag == action.tag
            flags.append(correct)
            per_index_correct.setdefault(idx, []).append(correct)
            per_index_features.setdefault(idx, []).append(classifier.extract_features(segment))
        for prev, cur in zip(segments[:-1], segments[1:]):
            dpose, dvel = transition_gaps(prev, cur, skeleton)
            dposes.append(dpose)
            if dvel is not None:
                dvels.append(dvel)
        per_motion_flags.append(flags)
        per_motion.append({"correct": flags, "revised": [r.revised for r in result.records]})

    real_stats = GaussianStats.from_features(real_features) if real_features is not None else None
    per_index = []
    for idx in sorted(per_index_correct):
        feats = np.stack(per_index_features[idx])
        fid_value = None
        if real_stats is not None and feats.shape[0] >= 2:
            fid_value = fid(GaussianStats.from_features(feats), real_stats)
        per_index.append(IndexMetrics(
            index=idx, accuracy=float(np.mean(per_index_correct[idx])),
            fid=fid_value, count=len(per_index_correct[idx])))

    later = [m for m in per_index if m.index >= 2]
    agg_acc = float(np.mean([m.accuracy for m in later])) if later else None
    later_fids = [m.fid for m in later if m.fid is not None]
    agg_fid = float(np.mean(later_fids)) if later_fids else None

    return EvalReport(
        per_index=per_index,
        aggregate_accuracy=agg_acc,
        aggregate_fid=agg_fid,
        mean_dpose_cm=float(np.mean(dposes)) if dposes else None,
        mean_dvel_cm=float(np.mean(dvels)) if dvels else None,
        action_qr=action_qr(per_motion_flags),
        motion_qr=motion_qr([all(f) for f in per_motion_flags]),
        per_motion=per_motion,
    )


def report_to_dict(report: EvalReport) -> dict:
    return {
        "accuracy_from_second": report.aggregate_accuracy,
        "fid_from_second": report.aggregate_fid,
        "dpose_cm": report.mean_dpose_cm,
        "dvel_cm_per_frame": report.mean_dvel_cm,
        "action_qr": report.action_qr,
        "motion_qr": report.motion_qr,
        "per_index": [{"index": m.index, "accuracy": m.accuracy,
                       "fid": m.fid, "count": m.count} for m in report.per_index],
        "per_motion": report.per_motion,
    }


def _fmt(value) -> str:
    return "" if value is None else f"{value:.4f}"


def write_report_csv(report: EvalReport, summary_path: str, per_index_path: str) -> None:
    with open(summary_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["metric", "value"])
        writer.writerow(["accuracy_from_second", _fmt(report.aggregate_accuracy)])
        writer.writerow(["fid_from_second", _fmt(report.aggregate_fid)])
        writer.writerow(["dpose_cm", _fmt(report.mean_dpose_cm)])
        writer.writerow(["dvel_cm_per_frame", _fmt(report.mean_dvel_cm)])
        writer.writerow(["action_qr", _fmt(report.action_qr)])
        writer.writerow(["motion_qr", _fmt(report.motion_qr)])
    with open(per_index_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["index", "accuracy", "fid", "count"])
        for m in report.per_index:
            writer.writerow([m.index, _fmt(m.accuracy), _fmt(m.fid), m.count])
