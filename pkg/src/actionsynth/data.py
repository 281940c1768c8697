"""Motion dataset schema, file formats, toy generation, and splits.

The on-disk container comes in two variants sharing one logical schema:
  * binary (default): magic ``MOTD``, uint16 version, uint32 header length,
    a UTF-8 JSON header, then a blob of little-endian float32 arrays in
    frame-major order ([T][n_J][6] rotations, [T][3] roots, [T][2]
    trajectories).
  * a JSON manifest (``.json``) with the arrays inlined, for small fixtures.

Single motions reuse the same container with ``kind: "motion"``.

Extension point: converters from external mocap corpora should produce this
container (or the manifest) offline; ingestion of third-party archive
formats is deliberately out of scope here.
"""

from __future__ import annotations

import io
import json
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from . import geometry as geo
from .errors import DeadEnd, FormatError, RateError, SchemaError, ShapeError
from .geometry import MotionClip, RigidFrame

MAGIC = b"MOTD"
FORMAT_VERSION = 1

TAG_KINDS = ("intention-root", "intention-inplace", "body-state", "body-part")
ROOT_KIND = "intention-root"

DEFAULT_CONTEXT_LEN = 6
DEFAULT_FRAME_RATE = 30.0


# ---------------------------------------------------------------------------
# schema types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Tag:
    name: str
    kind: str

    def __post_init__(self):
        if self.kind not in TAG_KINDS:
            raise SchemaError(f"unknown tag kind {self.kind!r}")


@dataclass(frozen=True)
class TagVocabulary:
    tags: tuple[Tag, ...]

    def __post_init__(self):
        names = [t.name for t in self.tags]
        if len(set(names)) != len(names):
            raise SchemaError("tag names must be unique")
        if len(names) < 2:
            raise SchemaError("a vocabulary needs at least 2 tags")

    def __len__(self):
        return len(self.tags)

    def index(self, name: str) -> int:
        for i, t in enumerate(self.tags):
            if t.name == name:
                return i
        raise KeyError(name)

    def is_root_motion(self, tag_id: int) -> bool:
        return self.tags[tag_id].kind == ROOT_KIND


@dataclass
class DatasetItem:
    """One action with its conditioning context.

    ``initial_motion`` holds the k frames preceding the action, ``action``
    the T frames themselves, and ``trajectory`` the (T, 2) ground-plane root
    positions in the same world coordinates as the clips.
    """

    initial_motion: MotionClip
    current_tag: int
    next_tag: int
    action: MotionClip
    trajectory: np.ndarray

    def __post_init__(self):
        self.trajectory = np.asarray(self.trajectory, dtype=np.float64)
        if self.trajectory.shape != (len(self.action), 2):
            raise SchemaError(
                f"trajectory length {self.trajectory.shape} must match action duration {len(self.action)}")

    @property
    def duration(self) -> int:
        return len(self.action)


@dataclass
class MotionDataset:
    vocabulary: TagVocabulary
    items: list[DatasetItem]
    skeleton_ref: str = "builtin:standard22"
    frame_rate: float = DEFAULT_FRAME_RATE
    n_joints: int = 22
    context_len: int = DEFAULT_CONTEXT_LEN

    def __post_init__(self):
        for i, item in enumerate(self.items):
            if len(item.initial_motion) != self.context_len:
                raise SchemaError(
                    f"item {i}: initial_motion has {len(item.initial_motion)} frames, expected {self.context_len}")
            if item.initial_motion.n_joints != self.n_joints or item.action.n_joints != self.n_joints:
                raise SchemaError(f"item {i}: joint count does not match dataset n_joints={self.n_joints}")
            if not (0 <= item.current_tag < len(self.vocabulary)):
                raise SchemaError(f"item {i}: current_tag {item.current_tag} outside vocabulary")
            if not (0 <= item.next_tag < len(self.vocabulary)):
                raise SchemaError(f"item {i}: next_tag {item.next_tag} outside vocabulary")

    def skeleton(self) -> geo.Skeleton:
        return geo.resolve_skeleton(self.skeleton_ref)

    def __len__(self):
        return len(self.items)


# ---------------------------------------------------------------------------
# container IO
# ---------------------------------------------------------------------------

def _f32_bytes(arr: np.ndarray) -> bytes:
    return np.ascontiguousarray(arr, dtype="<f4").tobytes()


def _read_f32(blob: bytes, offset: int, shape: tuple[int, ...], what: str) -> np.ndarray:
    count = int(np.prod(shape))
    end = offset + 4 * count
    if end > len(blob):
        raise FormatError(f"truncated array {what}", offset=offset)
    return np.frombuffer(blob, dtype="<f4", count=count, offset=offset).astype(np.float64).reshape(shape)


def _vocab_to_json(vocab: TagVocabulary) -> list[dict]:
    return [{"name": t.name, "kind": t.kind} for t in vocab.tags]


def _vocab_from_json(doc) -> TagVocabulary:
    try:
        return TagVocabulary(tuple(Tag(t["name"], t["kind"]) for t in doc))
    except (KeyError, TypeError) as exc:
        raise SchemaError(f"malformed vocabulary entry: {exc}") from exc


def save_dataset(dataset: MotionDataset, path: str, manifest: bool | None = None) -> None:
    """Write a dataset; JSON manifest when ``manifest`` (or a .json path)."""
    if manifest is None:
        manifest = str(path).endswith(".json")
    if manifest:
        doc = _dataset_header(dataset)
        doc["items"] = [_item_to_json(it) for it in dataset.items]
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(doc, fh)
        return
    blob = io.BytesIO()
    items_meta = []
    for it in dataset.items:
        meta = {"current_tag": it.current_tag, "next_tag": it.next_tag,
                "duration": it.duration, "offsets": {}}
        for name, arr in _item_arrays(it).items():
            meta["offsets"][name] = blob.tell()
            blob.write(_f32_bytes(arr))
        items_meta.append(meta)
    header = _dataset_header(dataset)
    header["items"] = items_meta
    _write_container(path, header, blob.getvalue())


def _dataset_header(dataset: MotionDataset) -> dict:
    return {
        "kind": "dataset",
        "format_version": FORMAT_VERSION,
        "frame_rate": dataset.frame_rate,
        "n_joints": dataset.n_joints,
        "context_len": dataset.context_len,
        "skeleton": dataset.skeleton_ref,
        "vocabulary": _vocab_to_json(dataset.vocabulary),
    }


def _item_arrays(it: DatasetItem) -> dict[str, np.ndarray]:
    return {
        "initial_rotations": it.initial_motion.rotations,
        "initial_root": it.initial_motion.root,
        "action_rotations": it.action.rotations,
        "action_root": it.action.root,
        "trajectory": it.trajectory,
    }


def _item_to_json(it: DatasetItem) -> dict:
    doc = {"current_tag": it.current_tag, "next_tag": it.next_tag, "duration": it.duration}
    doc.update({k: v.tolist() for k, v in _item_arrays(it).items()})
    return doc


def _write_container(path: str, header: dict, blob: bytes) -> None:
    header_bytes = json.dumps(header).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<H", FORMAT_VERSION))
        fh.write(struct.pack("<I", len(header_bytes)))
        fh.write(header_bytes)
        fh.write(blob)


def _read_container(path: str) -> tuple[dict, bytes]:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 10:
        raise FormatError("file too short for container header", offset=0)
    if raw[:4] != MAGIC:
        raise FormatError(f"bad magic {raw[:4]!r}", offset=0)
    (version,) = struct.unpack_from("<H", raw, 4)
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported format version {version}", offset=4)
    (header_len,) = struct.unpack_from("<I", raw, 6)
    if 10 + header_len > len(raw):
        raise FormatError("truncated header", offset=10)
    try:
        header = json.loads(raw[10:10 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"unreadable header: {exc}", offset=10) from exc
    return header, raw[10 + header_len:]


def _is_manifest(path: str) -> bool:
    with open(path, "rb") as fh:
        head = fh.read(4)
    if head[:1] in (b"{", b"["):
        return True
    if head == MAGIC:
        return False
    raise FormatError(f"bad magic {head!r}: neither a container nor a JSON manifest", offset=0)


def load_dataset(path: str) -> MotionDataset:
    """Load either container variant; clips are downsampled to 30 Hz."""
    if _is_manifest(path):
        with open(path, "r", encoding="utf-8") as fh:
            header = json.load(fh)
        items_doc = header.get("items", [])
        read_item = lambda meta: _item_from_json(meta, header)
    else:
        header, blob = _read_container(path)
        items_doc = header.get("items", [])
        read_item = lambda meta: _item_from_blob(meta, header, blob)
    if header.get("kind") != "dataset":
        raise FormatError(f"expected a dataset container, got kind {header.get('kind')!r}")
    vocab = _vocab_from_json(header.get("vocabulary", []))
    frame_rate = float(header.get("frame_rate", DEFAULT_FRAME_RATE))
    items = [read_item(meta) for meta in items_doc]
    if frame_rate > DEFAULT_FRAME_RATE:
        # contexts in faster files carry step * context_len frames so that
        # decimation lands on the nominal 30 Hz context length
        step = _decimation_step(frame_rate, DEFAULT_FRAME_RATE)
        items = [
            DatasetItem(
                initial_motion=downsample(it.initial_motion, DEFAULT_FRAME_RATE),
                current_tag=it.current_tag, next_tag=it.next_tag,
                action=downsample(it.action, DEFAULT_FRAME_RATE),
                trajectory=it.trajectory[::step],
            )
            for it in items
        ]
        frame_rate = DEFAULT_FRAME_RATE
    return MotionDataset(
        vocabulary=vocab, items=items,
        skeleton_ref=header.get("skeleton", "builtin:standard22"),
        frame_rate=frame_rate,
        n_joints=int(header.get("n_joints", 22)),
        context_len=int(header.get("context_len", DEFAULT_CONTEXT_LEN)),
    )


def _item_meta(meta: dict) -> tuple[int, int, int]:
    try:
        return int(meta["current_tag"]), int(meta["next_tag"]), int(meta["duration"])
    except (KeyError, TypeError) as exc:
        raise SchemaError(f"malformed item metadata: {exc}") from exc


def _build_item(cur, nxt, duration, arrays, frame_rate, n_joints, context_len) -> DatasetItem:
    if arrays["action_rotations"].shape[0] != duration:
        raise SchemaError(
            f"action length {arrays['action_rotations'].shape[0]} does not equal duration {duration}")
    if arrays["trajectory"].shape[0] != duration:
        raise SchemaError(
            f"trajectory length {arrays['trajectory'].shape[0]} does not equal duration {duration}")
    return DatasetItem(
        initial_motion=MotionClip(arrays["initial_rotations"], arrays["initial_root"], frame_rate=frame_rate),
        current_tag=cur, next_tag=nxt,
        action=MotionClip(arrays["action_rotations"], arrays["action_root"], frame_rate=frame_rate, tag=cur),
        trajectory=arrays["trajectory"],
    )


def _item_from_blob(meta: dict, header: dict, blob: bytes) -> DatasetItem:
    cur, nxt, duration = _item_meta(meta)
    n_j = int(header["n_joints"])
    k = int(header["context_len"])
    shapes = {
        "initial_rotations": (k, n_j, 6), "initial_root": (k, 3),
        "action_rotations": (duration, n_j, 6), "action_root": (duration, 3),
        "trajectory": (duration, 2),
    }
    arrays = {name: _read_f32(blob, int(meta["offsets"][name]), shape, name)
              for name, shape in shapes.items()}
    return _build_item(cur, nxt, duration, arrays, float(header["frame_rate"]),
                       n_j, k)


def _item_from_json(meta: dict, header: dict) -> DatasetItem:
    cur, nxt, duration = _item_meta(meta)
    arrays = {}
    for name in ("initial_rotations", "initial_root", "action_rotations", "action_root", "trajectory"):
        if name not in meta:
            raise SchemaError(f"item is missing array {name!r}")
        arrays[name] = np.asarray(meta[name], dtype=np.float64)
    return _build_item(cur, nxt, duration, arrays, float(header["frame_rate"]),
                       int(header["n_joints"]), int(header["context_len"]))


# single motions -------------------------------------------------------------

def save_motion(path: str, clip: MotionClip, skeleton_ref: str = "builtin:standard22",
                sidecar: dict | None = None) -> None:
    header = {
        "kind": "motion", "format_version": FORMAT_VERSION,
        "frame_rate": clip.frame_rate, "n_joints": clip.n_joints,
        "skeleton": skeleton_ref, "n_frames": len(clip),
        "sidecar": sidecar,
        "offsets": {"rotations": 0, "root": 4 * len(clip) * clip.n_joints * 6},
    }
    _write_container(path, header, _f32_bytes(clip.rotations) + _f32_bytes(clip.root))


def load_motion(path: str) -> tuple[MotionClip, dict]:
    """Returns the clip and its header (sidecar report under ``sidecar``)."""
    header, blob = _read_container(path)
    if header.get("kind") != "motion":
        raise FormatError(f"expected a motion container, got kind {header.get('kind')!r}")
    T, n_j = int(header["n_frames"]), int(header["n_joints"])
    rotations = _read_f32(blob, int(header["offsets"]["rotations"]), (T, n_j, 6), "rotations")
    root = _read_f32(blob, int(header["offsets"]["root"]), (T, 3), "root")
    return MotionClip(rotations, root, frame_rate=float(header["frame_rate"])), header


# ---------------------------------------------------------------------------
# resampling
# ---------------------------------------------------------------------------

def _decimation_step(frame_rate: float, target_hz: float) -> int:
    return max(1, int(round(frame_rate / target_hz)))


def downsample(clip: MotionClip, target_hz: float) -> MotionClip:
    """Nearest-index decimation; keeps every round(rate/target)-th frame."""
    if target_hz > clip.frame_rate:
        raise RateError(f"target {target_hz} Hz exceeds source rate {clip.frame_rate} Hz")
    step = _decimation_step(clip.frame_rate, target_hz)
    return MotionClip(clip.rotations[::step], clip.root[::step],
                      frame_rate=target_hz, tag=clip.tag)


# ---------------------------------------------------------------------------
# toy dataset generation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ToyDatasetConfig:
    n_tags: int = 2
    items_per_tag: int = 20
    duration_range: tuple[int, int] = (16, 28)
    context_len: int = DEFAULT_CONTEXT_LEN
    frame_rate: float = DEFAULT_FRAME_RATE
    seed: int = 0

    def __post_init__(self):
        if self.n_tags < 2:
            raise SchemaError("toy generation needs n_tags >= 2")
        lo, hi = self.duration_range
        if lo < 2 or hi < lo:
            raise SchemaError(f"bad duration_range {self.duration_range}")


_TOY_NAMES = ["sway", "stride", "bounce", "spin", "reach", "march", "twist", "lunge"]

# joint groups that oscillate, cycled per tag; each group carries the local
# rotation axis that actually swings its child bones (arm bones run along x,
# so arms bend about z; legs and spine run along z, so they bend about x)
_TOY_GROUPS = [
    ((16, 17, 18, 19), "z"),   # shoulders and elbows
    ((4, 5, 7, 8), "x"),       # knees and ankles
    ((3, 6, 9, 12), "x"),      # spine and neck
    ((1, 2, 13, 14), "x"),     # hips and collars
]

_BASE_Z = 0.92
_Z_BOB = 0.07


def _toy_tag_params(tag_id: int) -> dict:
    root_motion = tag_id % 2 == 1
    group, axis = _TOY_GROUPS[tag_id % len(_TOY_GROUPS)]
    return {
        "freq": 0.9 + 0.5 * tag_id,                     # Hz
        "amp": 0.85 + 0.15 * (tag_id % 3),              # rad
        "group": group,
        "axis": axis,
        "root_motion": root_motion,
        "speed": 0.6 + 0.2 * tag_id if root_motion else 0.0,   # m/s
        "turn_rate": (0.25 if (tag_id // 2) % 2 == 0 else -0.25) if root_motion else 0.0,  # rad/s
    }


def toy_vocabulary(n_tags: int) -> TagVocabulary:
    tags = []
    for j in range(n_tags):
        base = _TOY_NAMES[j % len(_TOY_NAMES)]
        name = base if j < len(_TOY_NAMES) else f"{base}{j // len(_TOY_NAMES)}"
        kind = ROOT_KIND if _toy_tag_params(j)["root_motion"] else "intention-inplace"
        tags.append(Tag(name, kind))
    return TagVocabulary(tuple(tags))


def _axis_rotation(axis: str, angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    if axis == "x":
        return np.array([[1.0, 0, 0], [0, c, -s], [0, s, c]])
    if axis == "y":
        return np.array([[c, 0, s], [0, 1.0, 0], [-s, 0, c]])
    return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1.0]])


class _ToyState:
    """Character state carried across a chain of toy actions."""

    def __init__(self, n_joints):
        self.angles = np.zeros(n_joints)   # per-joint bend about its local axis
        self.axes = ["x"] * n_joints
        self.pos = np.zeros(2)
        self.yaw = 0.0
        self.z = _BASE_Z

    def pose(self) -> geo.Pose:
        rot = geo.identity_sixd(len(self.angles))
        for j, a in enumerate(self.angles):
            if a != 0.0:
                rot[j] = geo.rotation_matrix_to_sixd(_axis_rotation(self.axes[j], a))
        rot[0] = geo.rotation_matrix_to_sixd(RigidFrame(self.yaw).rotation_matrix())
        root = np.array([self.pos[0], self.pos[1], self.z])
        return geo.Pose(root, rot)


def _toy_action_frames(state: _ToyState, tag_id: int, duration: int,
                       frame_rate: float) -> list[geo.Pose]:
    """Frames of one action, continuing smoothly from the carried state.

    Actions are deterministic given (state, tag, duration) on purpose: the
    generator is conditioned on exactly that information, so a tight overfit
    is achievable and acceptance thresholds are meaningful. Carried joint
    angles decay to the base pose across the action, which keeps the state
    space bounded over arbitrarily long chains.
    """
    p = _toy_tag_params(tag_id)
    dt = 1.0 / frame_rate
    start_angles = state.angles.copy()
    start_z = state.z
    frames = []
    for t in range(1, duration + 1):
        # ease the oscillation and the root speed in over the first frames,
        # like a real transition: every action starts slow
        ramp = min(1.0, t / 4.0)
        osc = math.sin(2 * math.pi * p["freq"] * t * dt) * ramp
        decay = 1.0 - t / duration
        state.angles = start_angles * decay
        for j in p["group"]:
            state.angles[j] = start_angles[j] * decay + p["amp"] * osc
            state.axes[j] = p["axis"]
        state.z = _BASE_Z + (start_z - _BASE_Z) * decay + _Z_BOB * osc
        if p["root_motion"]:
            state.yaw = geo.wrap_angle(state.yaw + p["turn_rate"] * dt * ramp)
            facing = np.array([math.sin(state.yaw), -math.cos(state.yaw)])
            state.pos = state.pos + p["speed"] * dt * ramp * facing
        frames.append(state.pose())
    return frames


def generate_toy_dataset(config: ToyDatasetConfig) -> MotionDataset:
    """Deterministic parametric motions; each tag is a distinct sinusoid family.

    Items are produced in chains, so each item's initial motion is the true
    tail of the preceding action.
    """
    rng = np.random.default_rng(config.seed)
    n_joints = geo.standard_skeleton().n_joints
    vocab = toy_vocabulary(config.n_tags)
    order = np.repeat(np.arange(config.n_tags), config.items_per_tag)
    rng.shuffle(order)

    k = config.context_len
    state = _ToyState(n_joints)
    # lead-in context for the first item: k static frames
    history = [state.pose() for _ in range(k)]
    items: list[DatasetItem] = []
    per_chain = max(4, 2 * config.n_tags)
    for idx, tag_id in enumerate(order):
        if idx > 0 and idx % per_chain == 0:
            # fresh chain: reset the character somewhere else on the floor
            state = _ToyState(n_joints)
            state.pos = rng.uniform(-3.0, 3.0, size=2)
            state.yaw = rng.uniform(-math.pi, math.pi)
            history = [state.pose() for _ in range(k)]
        duration = int(rng.integers(config.duration_range[0], config.duration_range[1] + 1))
        frames = _toy_action_frames(state, int(tag_id), duration, config.frame_rate)
        action = MotionClip.from_poses(frames, frame_rate=config.frame_rate, tag=int(tag_id))
        initial = MotionClip.from_poses(history[-k:], frame_rate=config.frame_rate)
        items.append(DatasetItem(
            initial_motion=initial, current_tag=int(tag_id), next_tag=int(tag_id),
            action=action, trajectory=action.root[:, :2].copy(),
        ))
        history = frames[-k:] if len(frames) >= k else (history + frames)[-k:]

    # next_tag = the following item's tag within a chain, itself for chain tails
    for i, item in enumerate(items):
        same_chain = (i + 1) % per_chain != 0
        if same_chain and i + 1 < len(items):
            item.next_tag = items[i + 1].current_tag
    return MotionDataset(vocabulary=vocab, items=items, frame_rate=config.frame_rate,
                         n_joints=n_joints, context_len=k)


# ---------------------------------------------------------------------------
# splits and transition statistics
# ---------------------------------------------------------------------------

def split_train_test(dataset: MotionDataset, ratio: float = 0.2, cap: int = 100,
                     seed: int = 0) -> tuple[list[DatasetItem], list[DatasetItem]]:
    """Per-class split: test size is min(ceil(ratio * class size), cap)."""
    rng = np.random.default_rng(seed)
    by_tag: dict[int, list[int]] = {}
    for i, item in enumerate(dataset.items):
        by_tag.setdefault(item.current_tag, []).append(i)
    test_idx: set[int] = set()
    for tag in sorted(by_tag):
        idx = by_tag[tag]
        n_test = min(math.ceil(ratio * len(idx)), cap)
        chosen = rng.choice(len(idx), size=n_test, replace=False)
        test_idx.update(idx[c] for c in chosen)
    train = [it for i, it in enumerate(dataset.items) if i not in test_idx]
    test = [it for i, it in enumerate(dataset.items) if i in test_idx]
    return train, test


def transition_matrix(items: list[DatasetItem], n_tags: int) -> np.ndarray:
    """counts[i, j] = number of items with current_tag i and next_tag j."""
    counts = np.zeros((n_tags, n_tags), dtype=np.int64)
    for item in items:
        counts[item.current_tag, item.next_tag] += 1
    return counts


# ---------------------------------------------------------------------------
# multi-action evaluation chains
# ---------------------------------------------------------------------------

@dataclass
class ChainAction:
    """One requested action in an evaluation chain.

    ``trajectory`` is expressed in the local frame of the source item's
    context anchor (None for in-place actions).
    """

    tag: int
    duration: int
    trajectory: np.ndarray | None
    source_item: int

    def __post_init__(self):
        if self.trajectory is not None:
            self.trajectory = np.asarray(self.trajectory, dtype=np.float64)
            if self.trajectory.shape != (self.duration, 2):
                raise SchemaError("chain trajectory must be (duration, 2)")


@dataclass
class ActionChain:
    initial_motion: MotionClip
    actions: list[ChainAction]


def _local_trajectory(item: DatasetItem) -> np.ndarray:
    """The item's trajectory re-expressed in its context-anchor frame."""
    _, frame = geo.normalize_clip(item.initial_motion)
    return frame.inverse().transform_planar(item.trajectory)


def build_multiaction_testset(train_items: list[DatasetItem], test_items: list[DatasetItem],
                              vocabulary: TagVocabulary, classifier, mode: str = "overall",
                              n_actions: int = 20, confidence: float = 0.5,
                              seed: int = 0) -> list[ActionChain]:
    """Chains of action requests built from confidently classified test items.

    ``overall``: the next tag is uniform over tags reachable from the current
    one in the training transition matrix. ``sufficient``: uniform over the
    top-4 most connected tags plus the current tag and the source item's true
    next tag. One chain per pool item, used as the chain's first action.
    """
    if mode not in ("overall", "sufficient"):
        raise ValueError(f"unknown mode {mode!r}")
    counts = transition_matrix(train_items, len(vocabulary))
    pool = [it for it in test_items
            if _true_tag_confidence(classifier, it) >= confidence]
    pool_by_tag: dict[int, list[int]] = {}
    for i, it in enumerate(pool):
        pool_by_tag.setdefault(it.current_tag, []).append(i)

    chains = []
    for chain_idx, first in enumerate(pool):
        rng = np.random.default_rng(np.random.SeedSequence([seed, chain_idx]))
        cur_item, cur_tag = first, first.current_tag
        actions = [_chain_action(first, chain_idx, vocabulary)]
        while len(actions) < n_actions:
            cand = _candidate_tags(counts, cur_tag, cur_item, mode)
            cand = [t for t in cand if pool_by_tag.get(t)]
            if not cand:
                raise DeadEnd(f"tag {cur_tag} ({vocabulary.tags[cur_tag].name}) has no usable successor")
            nxt_tag = int(rng.choice(cand))
            nxt_idx = int(rng.choice(pool_by_tag[nxt_tag]))
            cur_item, cur_tag = pool[nxt_idx], nxt_tag
            actions.append(_chain_action(cur_item, nxt_idx, vocabulary))
        chains.append(ActionChain(initial_motion=first.initial_motion, actions=actions))
    return chains


def _true_tag_confidence(classifier, item: DatasetItem) -> float:
    """Probability the classifier assigns to the item's labelled tag."""
    probs = classifier.probabilities(item.action)
    return float(probs[item.current_tag])


def _chain_action(item: DatasetItem, source: int, vocabulary: TagVocabulary) -> ChainAction:
    traj = _local_trajectory(item) if vocabulary.is_root_motion(item.current_tag) else None
    return ChainAction(tag=item.current_tag, duration=item.duration,
                       trajectory=traj, source_item=source)


def _candidate_tags(counts: np.ndarray, cur_tag: int, cur_item: DatasetItem, mode: str) -> list[int]:
    out = np.flatnonzero(counts[cur_tag] > 0)
    if mode == "overall":
        return [int(t) for t in out]
    # top-4 by count, ties broken by ascending tag index
    ranked = sorted(out, key=lambda t: (-counts[cur_tag, t], t))[:4]
    cand = set(int(t) for t in ranked)
    cand.add(int(cur_tag))
    cand.add(int(cur_item.next_tag))
    return sorted(cand)


def save_testset(chains: list[ActionChain], path: str, mode: str = "overall") -> None:
    doc = {"format": "multiaction-testset", "format_version": 1, "mode": mode, "chains": []}
    for c in chains:
        doc["chains"].append({
            "initial_rotations": c.initial_motion.rotations.tolist(),
            "initial_root": c.initial_motion.root.tolist(),
            "frame_rate": c.initial_motion.frame_rate,
            "actions": [
                {"tag": a.tag, "duration": a.duration, "source_item": a.source_item,
                 "trajectory": None if a.trajectory is None else a.trajectory.tolist()}
                for a in c.actions
            ],
        })
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)


def load_testset(path: str) -> list[ActionChain]:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format") != "multiaction-testset":
        raise FormatError("not a multiaction testset file")
    chains = []
    for c in doc["chains"]:
        initial = MotionClip(np.asarray(c["initial_rotations"], dtype=np.float64),
                             np.asarray(c["initial_root"], dtype=np.float64),
                             frame_rate=float(c.get("frame_rate", DEFAULT_FRAME_RATE)))
        actions = [ChainAction(tag=int(a["tag"]), duration=int(a["duration"]),
                               trajectory=None if a["trajectory"] is None else np.asarray(a["trajectory"]),
                               source_item=int(a.get("source_item", -1)))
                   for a in c["actions"]]
        chains.append(ActionChain(initial_motion=initial, actions=actions))
    return chains
