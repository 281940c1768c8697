"""Pose and rotation algebra on a fixed skeleton.

Conventions used throughout the package:
  * z is the vertical axis; the ground plane is spanned by (x, y).
  * a character with zero root rotation faces the -y direction.
  * joint rotations use the continuous 6D representation: the first two
    columns of the rotation matrix, concatenated. Joint 0 is the root and
    carries the global facing; all other joints are parent-relative.
  * positions are in meters.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from .errors import DegenerateInput, NotARotation, ShapeError

_EPS = 1e-8

FORWARD_AXIS = np.array([0.0, -1.0, 0.0])


# ---------------------------------------------------------------------------
# 6D rotation representation
# ---------------------------------------------------------------------------

def sixd_to_rotation_matrix(r6: np.ndarray) -> np.ndarray:
    """Map 6D vectors (..., 6) to rotation matrices (..., 3, 3).

    Gram-Schmidt on the two embedded 3-vectors gives the first two columns,
    the third column is their cross product.
    """
    r6 = np.asarray(r6, dtype=np.float64)
    if r6.shape[-1] != 6:
        raise ShapeError(f"expected trailing dimension 6, got {r6.shape}")
    if not np.all(np.isfinite(r6)):
        raise DegenerateInput("6D rotation input contains non-finite values")
    a1, a2 = r6[..., :3], r6[..., 3:]
    n1 = np.linalg.norm(a1, axis=-1, keepdims=True)
    if np.any(n1 < _EPS):
        raise DegenerateInput("first basis vector collapsed during orthogonalization")
    b1 = a1 / n1
    a2p = a2 - np.sum(b1 * a2, axis=-1, keepdims=True) * b1
    n2 = np.linalg.norm(a2p, axis=-1, keepdims=True)
    if np.any(n2 < _EPS):
        raise DegenerateInput("second basis vector collapsed during orthogonalization")
    b2 = a2p / n2
    b3 = np.cross(b1, b2)
    return np.stack([b1, b2, b3], axis=-1)


def rotation_matrix_to_sixd(m: np.ndarray) -> np.ndarray:
    """Inverse of :func:`sixd_to_rotation_matrix`: first two columns, concatenated."""
    m = np.asarray(m, dtype=np.float64)
    if m.shape[-2:] != (3, 3):
        raise ShapeError(f"expected trailing shape (3, 3), got {m.shape}")
    ident = np.eye(3)
    gram = np.einsum("...ji,...jk->...ik", m, m)
    if np.max(np.abs(gram - ident)) > 1e-5 or np.any(np.linalg.det(m) < 0):
        raise NotARotation("matrix is not orthonormal with determinant +1")
    return np.concatenate([m[..., :, 0], m[..., :, 1]], axis=-1)


def identity_sixd(n_joints: int) -> np.ndarray:
    """(n_joints, 6) identity rotations."""
    out = np.zeros((n_joints, 6))
    out[:, 0] = 1.0
    out[:, 4] = 1.0
    return out


# ---------------------------------------------------------------------------
# quaternions (w, x, y, z) for blending only
# ---------------------------------------------------------------------------

def matrix_to_quaternion(m: np.ndarray) -> np.ndarray:
    """Rotation matrices (..., 3, 3) to unit quaternions (..., 4), w first."""
    m = np.asarray(m, dtype=np.float64)
    batch = m.shape[:-2]
    m = m.reshape(-1, 3, 3)
    q = np.empty((m.shape[0], 4))
    for i, r in enumerate(m):
        tr = np.trace(r)
        if tr > 0:
            s = math.sqrt(tr + 1.0) * 2
            q[i] = [0.25 * s, (r[2, 1] - r[1, 2]) / s, (r[0, 2] - r[2, 0]) / s, (r[1, 0] - r[0, 1]) / s]
        elif r[0, 0] > r[1, 1] and r[0, 0] > r[2, 2]:
            s = math.sqrt(1.0 + r[0, 0] - r[1, 1] - r[2, 2]) * 2
            q[i] = [(r[2, 1] - r[1, 2]) / s, 0.25 * s, (r[0, 1] + r[1, 0]) / s, (r[0, 2] + r[2, 0]) / s]
        elif r[1, 1] > r[2, 2]:
            s = math.sqrt(1.0 + r[1, 1] - r[0, 0] - r[2, 2]) * 2
            q[i] = [(r[0, 2] - r[2, 0]) / s, (r[0, 1] + r[1, 0]) / s, 0.25 * s, (r[1, 2] + r[2, 1]) / s]
        else:
            s = math.sqrt(1.0 + r[2, 2] - r[0, 0] - r[1, 1]) * 2
            q[i] = [(r[1, 0] - r[0, 1]) / s, (r[0, 2] + r[2, 0]) / s, (r[1, 2] + r[2, 1]) / s, 0.25 * s]
    q /= np.linalg.norm(q, axis=-1, keepdims=True)
    return q.reshape(*batch, 4)


def quaternion_to_matrix(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    q = q / np.linalg.norm(q, axis=-1, keepdims=True)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    m = np.empty(q.shape[:-1] + (3, 3))
    m[..., 0, 0] = 1 - 2 * (y * y + z * z)
    m[..., 0, 1] = 2 * (x * y - z * w)
    m[..., 0, 2] = 2 * (x * z + y * w)
    m[..., 1, 0] = 2 * (x * y + z * w)
    m[..., 1, 1] = 1 - 2 * (x * x + z * z)
    m[..., 1, 2] = 2 * (y * z - x * w)
    m[..., 2, 0] = 2 * (x * z - y * w)
    m[..., 2, 1] = 2 * (y * z + x * w)
    m[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return m


def slerp_quaternion(q0: np.ndarray, q1: np.ndarray, t: float) -> np.ndarray:
    """Shortest-arc spherical interpolation between quaternion arrays (..., 4)."""
    q0 = np.asarray(q0, dtype=np.float64)
    q1 = np.asarray(q1, dtype=np.float64).copy()
    dot = np.sum(q0 * q1, axis=-1, keepdims=True)
    q1 = np.where(dot < 0, -q1, q1)
    dot = np.abs(dot).clip(-1.0, 1.0)
    theta = np.arccos(dot)
    sin_theta = np.sin(theta)
    near = sin_theta < 1e-7
    w0 = np.where(near, 1.0 - t, np.sin((1.0 - t) * theta) / np.where(near, 1.0, sin_theta))
    w1 = np.where(near, t, np.sin(t * theta) / np.where(near, 1.0, sin_theta))
    out = w0 * q0 + w1 * q1
    return out / np.linalg.norm(out, axis=-1, keepdims=True)


# ---------------------------------------------------------------------------
# domain types
# ---------------------------------------------------------------------------

@dataclass
class Pose:
    """A single frame: root translation plus per-joint 6D rotations."""

    root_translation: np.ndarray  # (3,)
    joint_rotations: np.ndarray   # (n_J, 6)

    def __post_init__(self):
        self.root_translation = np.asarray(self.root_translation, dtype=np.float64)
        self.joint_rotations = np.asarray(self.joint_rotations, dtype=np.float64)
        if self.root_translation.shape != (3,):
            raise ShapeError(f"root_translation must be a 3-vector, got {self.root_translation.shape}")
        if self.joint_rotations.ndim != 2 or self.joint_rotations.shape[1] != 6:
            raise ShapeError(f"joint_rotations must be (n_J, 6), got {self.joint_rotations.shape}")

    @property
    def n_joints(self) -> int:
        return self.joint_rotations.shape[0]


@dataclass
class MotionClip:
    """An ordered pose sequence at a fixed frame rate, array backed.

    rotations: (T, n_J, 6), root: (T, 3). ``tag`` is an optional action-tag
    id. Treat instances as immutable once built.
    """

    rotations: np.ndarray
    root: np.ndarray
    frame_rate: float = 30.0
    tag: int | None = None

    def __post_init__(self):
        self.rotations = np.asarray(self.rotations, dtype=np.float64)
        self.root = np.asarray(self.root, dtype=np.float64)
        if self.rotations.ndim != 3 or self.rotations.shape[2] != 6:
            raise ShapeError(f"rotations must be (T, n_J, 6), got {self.rotations.shape}")
        if self.root.shape != (self.rotations.shape[0], 3):
            raise ShapeError(f"root must be (T, 3) matching rotations, got {self.root.shape}")
        if len(self) < 1:
            raise ShapeError("a MotionClip must contain at least one pose")
        if not self.frame_rate > 0:
            raise ShapeError(f"frame_rate must be positive, got {self.frame_rate}")

    def __len__(self) -> int:
        return self.rotations.shape[0]

    @property
    def n_joints(self) -> int:
        return self.rotations.shape[1]

    def pose(self, t: int) -> Pose:
        return Pose(self.root[t], self.rotations[t])

    @property
    def poses(self) -> list[Pose]:
        return [self.pose(t) for t in range(len(self))]

    def slice(self, start: int, stop: int) -> "MotionClip":
        return MotionClip(self.rotations[start:stop], self.root[start:stop],
                          frame_rate=self.frame_rate, tag=self.tag)

    def tail(self, n: int) -> "MotionClip":
        return self.slice(max(0, len(self) - n), len(self))

    @staticmethod
    def from_poses(poses: list[Pose], frame_rate: float = 30.0, tag: int | None = None) -> "MotionClip":
        return MotionClip(np.stack([p.joint_rotations for p in poses]),
                          np.stack([p.root_translation for p in poses]),
                          frame_rate=frame_rate, tag=tag)

    @staticmethod
    def concatenate(clips: list["MotionClip"], tag: int | None = None) -> "MotionClip":
        return MotionClip(np.concatenate([c.rotations for c in clips]),
                          np.concatenate([c.root for c in clips]),
                          frame_rate=clips[0].frame_rate, tag=tag)


@dataclass(frozen=True)
class Skeleton:
    """A fixed joint tree: parent indices (root = -1) and rest-pose bone offsets."""

    names: tuple[str, ...]
    parents: tuple[int, ...]
    offsets: np.ndarray  # (n_J, 3)

    def __post_init__(self):
        object.__setattr__(self, "offsets", np.asarray(self.offsets, dtype=np.float64))
        n = len(self.parents)
        if len(self.names) != n or self.offsets.shape != (n, 3):
            raise ShapeError("names, parents, and offsets must agree on joint count")
        if self.parents[0] != -1:
            raise ShapeError("joint 0 must be the root (parent -1)")
        for i, p in enumerate(self.parents[1:], start=1):
            if not 0 <= p < i:
                raise ShapeError(f"parents must be topologically ordered; joint {i} has parent {p}")
        if not np.all(np.isfinite(self.offsets)):
            raise ShapeError("offsets must be finite")

    @property
    def n_joints(self) -> int:
        return len(self.parents)


@dataclass(frozen=True)
class RigidFrame:
    """A yaw about the vertical axis plus a translation.

    Applied as p -> R_z(yaw) @ p + translation; ``inverse()`` composes to the
    identity. The yaw is stored wrapped to (-pi, pi].
    """

    yaw: float
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "yaw", wrap_angle(float(self.yaw)))
        t = np.asarray(self.translation, dtype=np.float64)
        if t.shape != (3,):
            raise ShapeError(f"translation must be a 3-vector, got {t.shape}")
        object.__setattr__(self, "translation", t)

    @staticmethod
    def identity() -> "RigidFrame":
        return RigidFrame(0.0, np.zeros(3))

    def rotation_matrix(self) -> np.ndarray:
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])

    def inverse(self) -> "RigidFrame":
        r_inv = self.rotation_matrix().T
        return RigidFrame(-self.yaw, -(r_inv @ self.translation))

    def transform_points(self, points: np.ndarray) -> np.ndarray:
        """Apply to 3D points (..., 3)."""
        points = np.asarray(points, dtype=np.float64)
        return points @ self.rotation_matrix().T + self.translation

    def transform_planar(self, points: np.ndarray) -> np.ndarray:
        """Apply to ground-plane points (..., 2)."""
        points = np.asarray(points, dtype=np.float64)
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        rot = np.array([[c, -s], [s, c]])
        return points @ rot.T + self.translation[:2]

    def transform_clip(self, clip: MotionClip) -> MotionClip:
        """Rotate root translations and root joint rotations, then translate."""
        rot = self.rotation_matrix()
        root = clip.root @ rot.T + self.translation
        rotations = clip.rotations.copy()
        root_mats = sixd_to_rotation_matrix(clip.rotations[:, 0, :])
        rotations[:, 0, :] = rotation_matrix_to_sixd(rot @ root_mats)
        return MotionClip(rotations, root, frame_rate=clip.frame_rate, tag=clip.tag)


def wrap_angle(a: float) -> float:
    """Wrap to (-pi, pi]."""
    a = math.fmod(a, 2.0 * math.pi)
    if a <= -math.pi:
        a += 2.0 * math.pi
    elif a > math.pi:
        a -= 2.0 * math.pi
    return a


def extract_yaw(root_rotation: np.ndarray) -> float:
    """Yaw of a root rotation matrix, from the ground-plane projection of the
    rotated forward axis. Zero when the character faces straight up or down."""
    v = np.asarray(root_rotation, dtype=np.float64) @ FORWARD_AXIS
    if math.hypot(v[0], v[1]) < 1e-6:
        return 0.0
    return math.atan2(v[0], -v[1])


# ---------------------------------------------------------------------------
# forward kinematics
# ---------------------------------------------------------------------------

def forward_kinematics(pose: Pose, skeleton: Skeleton) -> np.ndarray:
    """Global joint positions (n_J, 3) for one pose."""
    if pose.n_joints != skeleton.n_joints:
        raise ShapeError(f"pose has {pose.n_joints} joints, skeleton has {skeleton.n_joints}")
    mats = sixd_to_rotation_matrix(pose.joint_rotations)
    positions = np.empty((skeleton.n_joints, 3))
    globals_ = np.empty((skeleton.n_joints, 3, 3))
    positions[0] = pose.root_translation
    globals_[0] = mats[0]
    for i in range(1, skeleton.n_joints):
        p = skeleton.parents[i]
        positions[i] = positions[p] + globals_[p] @ skeleton.offsets[i]
        globals_[i] = globals_[p] @ mats[i]
    return positions


def clip_joint_positions(clip: MotionClip, skeleton: Skeleton) -> np.ndarray:
    """Global joint positions (T, n_J, 3) for every frame of a clip."""
    if clip.n_joints != skeleton.n_joints:
        raise ShapeError(f"clip has {clip.n_joints} joints, skeleton has {skeleton.n_joints}")
    mats = sixd_to_rotation_matrix(clip.rotations)  # (T, n_J, 3, 3)
    T = len(clip)
    positions = np.empty((T, skeleton.n_joints, 3))
    globals_ = np.empty((T, skeleton.n_joints, 3, 3))
    positions[:, 0] = clip.root
    globals_[:, 0] = mats[:, 0]
    for i in range(1, skeleton.n_joints):
        p = skeleton.parents[i]
        positions[:, i] = positions[:, p] + np.einsum("tij,j->ti", globals_[:, p], skeleton.offsets[i])
        globals_[:, i] = globals_[:, p] @ mats[:, i]
    return positions


# ---------------------------------------------------------------------------
# clip normalization
# ---------------------------------------------------------------------------

def normalize_clip(clip: MotionClip) -> tuple[MotionClip, RigidFrame]:
    """Re-express a clip in the local frame of its last pose.

    The anchor frame holds the last pose's yaw and root translation; the
    output clip ends at the origin facing -y (zero yaw). The exact inverse is
    :func:`denormalize_clip`.
    """
    anchor_rot = sixd_to_rotation_matrix(clip.rotations[-1, 0, :])
    frame = RigidFrame(extract_yaw(anchor_rot), clip.root[-1].copy())
    return frame.inverse().transform_clip(clip), frame


def denormalize_clip(clip: MotionClip, frame: RigidFrame) -> MotionClip:
    """Undo :func:`normalize_clip` by applying the anchor frame."""
    return frame.transform_clip(clip)


# ---------------------------------------------------------------------------
# blending
# ---------------------------------------------------------------------------

def slerp_blend(tail: MotionClip, head: MotionClip, n_frames: int) -> MotionClip:
    """Interpolate from the last pose of ``tail`` to the first pose of ``head``.

    Joint rotations take the shortest quaternion arc, the root translation is
    linear. Samples sit at t = i/(n+1) for i = 1..n, so n_frames = 1 yields
    the midpoint pose.
    """
    if n_frames < 1:
        raise ShapeError(f"n_frames must be >= 1, got {n_frames}")
    if tail.n_joints != head.n_joints:
        raise ShapeError("tail and head must share the joint count")
    q0 = matrix_to_quaternion(sixd_to_rotation_matrix(tail.rotations[-1]))
    q1 = matrix_to_quaternion(sixd_to_rotation_matrix(head.rotations[0]))
    r0, r1 = tail.root[-1], head.root[0]
    rotations = np.empty((n_frames, tail.n_joints, 6))
    root = np.empty((n_frames, 3))
    for i in range(1, n_frames + 1):
        t = i / (n_frames + 1)
        rotations[i - 1] = rotation_matrix_to_sixd(quaternion_to_matrix(slerp_quaternion(q0, q1, t)))
        root[i - 1] = (1.0 - t) * r0 + t * r1
    return MotionClip(rotations, root, frame_rate=tail.frame_rate)


# ---------------------------------------------------------------------------
# skeleton files
# ---------------------------------------------------------------------------

def load_skeleton(source) -> Skeleton:
    """Load a skeleton from a JSON document with joints: [{name, parent, offset}]."""
    if hasattr(source, "read"):
        doc = json.load(source)
    else:
        with open(source, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    joints = doc["joints"]
    return Skeleton(
        names=tuple(j["name"] for j in joints),
        parents=tuple(int(j["parent"]) for j in joints),
        offsets=np.array([j["offset"] for j in joints], dtype=np.float64),
    )


def standard_skeleton() -> Skeleton:
    """The bundled 22-joint humanoid tree."""
    ref = resources.files("actionsynth.assets").joinpath("skeleton22.json")
    with ref.open("r", encoding="utf-8") as fh:
        return load_skeleton(fh)


def resolve_skeleton(reference: str) -> Skeleton:
    """Resolve a skeleton reference: ``builtin:standard22`` or a file path."""
    if reference == "builtin:standard22":
        return standard_skeleton()
    return load_skeleton(reference)
