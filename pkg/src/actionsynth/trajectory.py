"""Annotation preprocessing: cubic Bezier trajectories and orientation checks.

A hand-drawn curve is split into segments; each root-motion segment is fit
with one cubic Bezier (endpoints pinned, inner control points by linear
least squares over a chord-length parameterization) and sampled at
t = n/T for n = 1..T. In-place segments take a zero trajectory.

Extension point: sampling is uniform in the curve parameter; arc-length
uniform resampling (constant ground speed) would slot in at sample_bezier.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .data import TagVocabulary
from .errors import SchemaError, ShapeError
from .geometry import wrap_angle
from .pipeline import ActionRequest

log = logging.getLogger(__name__)

_DEGENERATE_SPAN = 1e-9


@dataclass
class BezierCurve:
    """Four ground-plane control points; ``degenerate`` flags a point curve."""

    control_points: np.ndarray  # (4, 2)
    degenerate: bool = False

    def __post_init__(self):
        self.control_points = np.asarray(self.control_points, dtype=np.float64)
        if self.control_points.shape != (4, 2):
            raise ShapeError(f"control_points must be (4, 2), got {self.control_points.shape}")
        if not np.all(np.isfinite(self.control_points)):
            raise ShapeError("control points must be finite")


@dataclass
class Segment:
    """One annotated action over a slice of the polyline.

    Root segments span polyline indices [start, end]; in-place segments sit
    at a single anchor index.
    """

    kind: str                 # "root" | "in-place"
    tag: int
    duration: int
    start: int | None = None
    end: int | None = None
    anchor: int | None = None


@dataclass
class Annotation:
    polyline: np.ndarray      # (N, 2) meters
    segments: list[Segment]

    def __post_init__(self):
        self.polyline = np.asarray(self.polyline, dtype=np.float64)
        if self.polyline.ndim != 2 or self.polyline.shape[1] != 2:
            raise ShapeError(f"polyline must be (N, 2), got {self.polyline.shape}")


def _bernstein(t: np.ndarray) -> np.ndarray:
    """(N,) -> (N, 4) cubic Bernstein basis values."""
    t = np.asarray(t, dtype=np.float64)
    u = 1.0 - t
    return np.stack([u ** 3, 3 * u ** 2 * t, 3 * u * t ** 2, t ** 3], axis=-1)


def evaluate_bezier(curve: BezierCurve, t) -> np.ndarray:
    return _bernstein(np.atleast_1d(t)) @ curve.control_points


def _bezier_derivative(curve: BezierCurve, t: np.ndarray) -> np.ndarray:
    t = np.asarray(t, dtype=np.float64)
    u = 1.0 - t
    p = curve.control_points
    d = 3 * np.stack([u ** 2, 2 * u * t, t ** 2], axis=-1)
    return d @ (p[1:] - p[:-1])


def _solve_inner(points, t):
    basis = _bernstein(t)
    p0, p3 = points[0], points[-1]
    rhs = points - np.outer(basis[:, 0], p0) - np.outer(basis[:, 3], p3)
    inner, *_ = np.linalg.lstsq(basis[:, 1:3], rhs, rcond=None)
    return BezierCurve(np.stack([p0, inner[0], inner[1], p3]))


def fit_bezier(points) -> tuple[BezierCurve, float]:
    """Fit a cubic Bezier with pinned endpoints; returns (curve, rms error).

    Inner control points solve a linear least-squares problem over the
    chord-length parameterization of the input points. Two input points give
    a straight segment with inner controls at the 1/3 and 2/3 chord
    positions. Coincident points yield a flagged degenerate point curve.
    """
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or points.shape[1] != 2 or points.shape[0] < 2:
        raise ShapeError(f"need at least 2 ground-plane points, got shape {points.shape}")
    chord = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(points, axis=0), axis=1))])
    if chord[-1] < _DEGENERATE_SPAN:
        curve = BezierCurve(np.tile(points[0], (4, 1)), degenerate=True)
        return curve, 0.0
    t = chord / chord[-1]
    p0, p3 = points[0], points[-1]
    if points.shape[0] == 2:
        controls = np.stack([p0, p0 + (p3 - p0) / 3.0, p0 + 2.0 * (p3 - p0) / 3.0, p3])
        return BezierCurve(controls), 0.0
    curve = _solve_inner(points, t)
    residual = evaluate_bezier(curve, t) - points
    rms = float(np.sqrt(np.mean(np.sum(residual ** 2, axis=1))))
    return curve, rms


def sample_bezier(curve: BezierCurve, T: int) -> np.ndarray:
    """T samples at t = n/T for n = 1..T; the last sample is exactly P3."""
    if T < 1:
        raise ShapeError(f"need T >= 1, got {T}")
    return evaluate_bezier(curve, np.arange(1, T + 1) / T)


# ---------------------------------------------------------------------------
# annotation -> action requests
# ---------------------------------------------------------------------------

def validate_annotation(annotation: Annotation, vocabulary: TagVocabulary | None = None) -> None:
    """Check that the segments partition the polyline in order.

    Raises SchemaError naming the offending segment.
    """
    n = annotation.polyline.shape[0]
    if not annotation.segments:
        raise SchemaError("annotation has no segments")
    cursor = 0
    for i, seg in enumerate(annotation.segments):
        where = f"segments[{i}]"
        if seg.duration < 1:
            raise SchemaError(f"{where}: duration must be >= 1, got {seg.duration}")
        if vocabulary is not None:
            if not (0 <= seg.tag < len(vocabulary)):
                raise SchemaError(f"{where}: tag {seg.tag} outside vocabulary")
            is_root_tag = vocabulary.is_root_motion(seg.tag)
            if seg.kind == "root" and not is_root_tag:
                raise SchemaError(f"{where}: tag {seg.tag} is not a root-motion tag")
            if seg.kind == "in-place" and is_root_tag:
                raise SchemaError(f"{where}: root-motion tag {seg.tag} needs a root segment")
        if seg.kind == "root":
            if seg.start is None or seg.end is None:
                raise SchemaError(f"{where}: root segments need start and end indices")
            if seg.start != cursor:
                raise SchemaError(f"{where}: starts at {seg.start}, expected {cursor}")
            if not (seg.start < seg.end < n):
                raise SchemaError(f"{where}: bad slice [{seg.start}, {seg.end}] for {n} points")
            cursor = seg.end
        elif seg.kind == "in-place":
            if seg.anchor is None:
                raise SchemaError(f"{where}: in-place segments need an anchor index")
            if seg.anchor != cursor:
                raise SchemaError(f"{where}: anchored at {seg.anchor}, expected {cursor}")
        else:
            raise SchemaError(f"{where}: unknown kind {seg.kind!r}")
    if cursor != n - 1 and not (n == 1 and cursor == 0):
        raise SchemaError(f"segments cover the polyline up to index {cursor}, expected {n - 1}")


def preprocess_annotation(annotation: Annotation,
                          vocabulary: TagVocabulary | None = None) -> list[ActionRequest]:
    """Turn an annotation into ordered action requests.

    Root segments are Bezier-fit and sampled at their duration (world
    coordinates); in-place segments get a zero local trajectory. Multiple
    in-place actions at one anchor keep their annotation order.
    """
    validate_annotation(annotation, vocabulary)
    requests = []
    for seg in annotation.segments:
        if seg.kind == "root":
            curve, rms = fit_bezier(annotation.polyline[seg.start:seg.end + 1])
            if curve.degenerate:
                log.warning("degenerate root segment fit (all points coincide)")
            else:
                log.debug("bezier fit rms %.4f m", rms)
            requests.append(ActionRequest(tag=seg.tag, duration=seg.duration,
                                          trajectory=sample_bezier(curve, seg.duration),
                                          frame="world"))
        else:
            requests.append(ActionRequest(tag=seg.tag, duration=seg.duration,
                                          trajectory=np.zeros((seg.duration, 2)),
                                          frame="local"))
    return requests


def annotation_from_payload(doc: dict) -> Annotation:
    """Build an Annotation from a request-body dict (the service schema)."""
    try:
        polyline = np.asarray(doc["polyline"], dtype=np.float64)
        segments = []
        for s in doc["segments"]:
            segments.append(Segment(
                kind=s["kind"], tag=int(s["tag"]), duration=int(s["duration"]),
                start=s.get("start"), end=s.get("end"), anchor=s.get("anchor")))
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"malformed annotation: {exc}") from exc
    return Annotation(polyline=polyline, segments=segments)


# ---------------------------------------------------------------------------
# orientation validity
# ---------------------------------------------------------------------------

@dataclass
class OrientationResult:
    yaw: float
    adjusted: bool
    direction_defined: bool


def facing_angle(yaw: float) -> float:
    """World angle of the facing direction (atan2 convention) at a given yaw."""
    return math.atan2(-math.cos(yaw), math.sin(yaw))


def orientation_check(bop_yaw: float, trajectory_head: np.ndarray,
                      valid_range: tuple[float, float]) -> OrientationResult:
    """Clamp the angle between facing and the trajectory head into the range.

    Returns the (possibly rotated) yaw. When the head samples are coincident
    the direction is undefined and the yaw comes back unchanged, flagged.
    """
    head = np.asarray(trajectory_head, dtype=np.float64)
    if head.ndim != 2 or head.shape[1] != 2 or head.shape[0] < 2:
        raise ShapeError(f"trajectory head must be (>=2, 2), got {head.shape}")
    lo, hi = valid_range
    if not lo <= hi:
        raise ShapeError(f"invalid range ({lo}, {hi})")
    direction = head[-1] - head[0]
    if np.linalg.norm(direction) < 1e-8:
        return OrientationResult(yaw=bop_yaw, adjusted=False, direction_defined=False)
    angle = wrap_angle(math.atan2(direction[1], direction[0]) - facing_angle(bop_yaw))
    if lo - 1e-9 <= angle <= hi + 1e-9:
        return OrientationResult(yaw=bop_yaw, adjusted=False, direction_defined=True)
    # nearest boundary in wrapped distance
    boundary = min((lo, hi), key=lambda b: abs(wrap_angle(angle - b)))
    corrected = wrap_angle(bop_yaw + wrap_angle(angle - boundary))
    return OrientationResult(yaw=corrected, adjusted=True, direction_defined=True)


def trajectory_angle_range(items, percentiles: tuple[float, float] = (1.0, 99.0),
                           min_step: float = 1e-4) -> tuple[float, float]:
    """Range of facing-vs-trajectory angles observed in training items.

    Uses each item's normalized context (facing -y) against the head of its
    local trajectory; near-static heads are skipped. Percentile clipping
    keeps outliers from widening the range.
    """
    from . import geometry as geo

    angles = []
    for item in items:
        _, frame = geo.normalize_clip(item.initial_motion)
        local = frame.inverse().transform_planar(item.trajectory)
        head = local[: min(6, len(local))]
        if len(head) < 2 or np.linalg.norm(head[-1] - head[0]) < min_step:
            continue
        direction = head[-1] - head[0]
        angles.append(wrap_angle(math.atan2(direction[1], direction[0]) - facing_angle(0.0)))
    if not angles:
        return (-math.pi, math.pi)
    lo, hi = np.percentile(angles, percentiles)
    return (float(lo), float(hi))
