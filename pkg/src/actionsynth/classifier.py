"""Transformer action recognition network.

Used three ways: as the revision gate in the stitching pipeline, as the
feature extractor behind FID / diversity / multimodality, and to filter the
multi-action evaluation pool by confidence.

Inputs are canonicalized to the local frame of their first pose (yaw and
root translation removed), so classification is invariant to where a clip
sits in the world.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
import torch
from torch import nn

from . import geometry as geo
from .errors import ShapeError
from .geometry import MotionClip
from .model import clip_to_tensor, sinusoidal_encoding

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ClassifierConfig:
    tag_count: int
    n_joints: int = 22
    d_model: int = 64
    n_heads: int = 4
    n_layers: int = 2
    feature_dim: int = 32
    ff_mult: int = 4
    dropout: float = 0.0
    max_len: int = 512

    @property
    def pose_dim(self) -> int:
        return self.n_joints * 6 + 3


class ActionClassifier(nn.Module):
    """Encoder over pose sequences with a class token; the penultimate
    projection at the class token is the action feature."""

    def __init__(self, config: ClassifierConfig):
        super().__init__()
        self.config = config
        self.pose_embed = nn.Linear(config.pose_dim, config.d_model)
        self.cls_token = nn.Parameter(torch.zeros(1, 1, config.d_model))
        layer = nn.TransformerEncoderLayer(
            config.d_model, config.n_heads, dim_feedforward=config.ff_mult * config.d_model,
            dropout=config.dropout, batch_first=True)
        self.encoder = nn.TransformerEncoder(layer, config.n_layers, enable_nested_tensor=False)
        self.feature_proj = nn.Linear(config.d_model, config.feature_dim)
        self.head = nn.Linear(config.feature_dim, config.tag_count)

    def forward(self, poses: torch.Tensor, pad_mask: torch.Tensor | None = None):
        """poses (B, T, pose_dim) -> (logits (B, n_tags), features (B, m))."""
        B, T, _ = poses.shape
        tokens = self.pose_embed(poses) + sinusoidal_encoding(
            torch.arange(1, T + 1, device=poses.device), self.config.d_model)
        tokens = torch.cat([self.cls_token.expand(B, 1, -1), tokens], dim=1)
        if pad_mask is not None:
            pad_mask = torch.cat(
                [torch.zeros(B, 1, dtype=torch.bool, device=poses.device), pad_mask], dim=1)
        out = self.encoder(tokens, src_key_padding_mask=pad_mask)
        features = torch.tanh(self.feature_proj(out[:, 0]))
        return self.head(features), features


def canonicalize(clip: MotionClip) -> MotionClip:
    """Re-express a clip relative to its first pose's yaw and root translation."""
    first_rot = geo.sixd_to_rotation_matrix(clip.rotations[0, 0])
    frame = geo.RigidFrame(geo.extract_yaw(first_rot), clip.root[0].copy())
    return frame.inverse().transform_clip(clip)


def build_classifier(config: ClassifierConfig, seed: int = 0) -> ActionClassifier:
    with torch.random.fork_rng():
        torch.manual_seed(seed)
        model = ActionClassifier(config)
    return model


@dataclass
class TrainedClassifier:
    """Inference wrapper; all methods are pure given the frozen weights."""

    net: ActionClassifier

    @property
    def config(self) -> ClassifierConfig:
        return self.net.config

    @property
    def feature_dim(self) -> int:
        return self.net.config.feature_dim

    def _forward_clip(self, clip: MotionClip) -> tuple[torch.Tensor, torch.Tensor]:
        if clip.n_joints != self.config.n_joints:
            raise ShapeError(
                f"clip has {clip.n_joints} joints, classifier expects {self.config.n_joints}")
        x = clip_to_tensor(canonicalize(clip)).unsqueeze(0)
        self.net.eval()
        with torch.no_grad():
            logits, features = self.net(x)
        return logits[0], features[0]

    def probabilities(self, clip: MotionClip) -> np.ndarray:
        logits, _ = self._forward_clip(clip)
        return torch.softmax(logits, dim=-1).numpy()

    def classify(self, clip: MotionClip) -> tuple[int, float]:
        """Predicted tag and its softmax confidence."""
        probs = self.probabilities(clip)
        tag = int(np.argmax(probs))
        return tag, float(probs[tag])

    def extract_features(self, clip: MotionClip) -> np.ndarray:
        _, features = self._forward_clip(clip)
        return features.numpy().astype(np.float64)


def train_classifier(items, tag_count: int, config: ClassifierConfig | None = None,
                     seed: int = 0, epochs: int = 80, batch_size: int = 16,
                     learning_rate: float = 1e-3, input_noise: float = 0.03,
                     n_joints: int = 22) -> TrainedClassifier:
    """Cross-entropy training on (action clip, current tag) pairs.

    A little Gaussian input noise keeps the decision boundary robust to the
    imperfect motions the generator produces.
    """
    if config is None:
        config = ClassifierConfig(tag_count=tag_count, n_joints=n_joints)
    net = build_classifier(config, seed=seed)
    net.train()
    optimizer = torch.optim.Adam(net.parameters(), lr=learning_rate)
    clips = [clip_to_tensor(canonicalize(it.action)) for it in items]
    labels = torch.tensor([it.current_tag for it in items])
    rng = np.random.default_rng(seed)
    noise_gen = torch.Generator()
    noise_gen.manual_seed(seed)
    for _ in range(epochs):
        order = rng.permutation(len(clips))
        for start in range(0, len(order), batch_size):
            idx = order[start:start + batch_size]
            t_max = max(clips[i].shape[0] for i in idx)
            x = torch.zeros(len(idx), t_max, config.pose_dim)
            pad = torch.ones(len(idx), t_max, dtype=torch.bool)
            for row, i in enumerate(idx):
                T = clips[i].shape[0]
                x[row, :T] = clips[i]
                pad[row, :T] = False
            if input_noise > 0:
                x = x + input_noise * torch.randn(x.shape, generator=noise_gen)
            logits, _ = net(x, pad_mask=pad)
            loss = nn.functional.cross_entropy(logits, labels[idx])
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
    net.eval()
    return TrainedClassifier(net)


def accuracy(classifier: TrainedClassifier, items) -> float:
    hits = [classifier.classify(it.action)[0] == it.current_tag for it in items]
    return float(np.mean(hits))


def save_classifier(classifier: TrainedClassifier, path: str) -> None:
    torch.save({
        "format_version": CHECKPOINT_VERSION,
        "kind": "classifier",
        "config": asdict(classifier.config),
        "state": classifier.net.state_dict(),
    }, path)


def load_classifier(path: str) -> TrainedClassifier:
    doc = torch.load(path, map_location="cpu", weights_only=False)
    if doc.get("kind") != "classifier":
        raise ShapeError(f"checkpoint kind {doc.get('kind')!r} is not a classifier")
    net = ActionClassifier(ClassifierConfig(**doc["config"]))
    net.load_state_dict(doc["state"])
    net.eval()
    return TrainedClassifier(net)
