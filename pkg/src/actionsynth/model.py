"""The single-action generative network.

Three transformer blocks:
  * a condition encoder mapping (k context poses, current tag, next tag) to
    an action-level Gaussian (mu, log sigma^2),
  * a time-unrolling decoder that expands a latent sample into frame-level
    controls, queried by reverse positional encodings with the embedded
    current tag added to every frame, optionally concatenated with a
    projected per-frame trajectory,
  * an autoregressive motion decoder with a causal mask, cross-attending to
    the controls. Training decodes in parallel; inference iterates, seeded
    with the last context pose.

One shared linear layer embeds poses everywhere (encoder context, decoder
inputs, and the start-pose bank used by the stitching pipeline).
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
import torch
from torch import nn

from .errors import DurationError, ShapeError
from .geometry import MotionClip

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    tag_count: int
    n_joints: int = 22
    context_len: int = 6
    d_model: int = 256
    d_ctrl_latent: int = 240          # latent share of each frame control
    n_heads: int = 4
    n_encoder_layers: int = 2
    n_unroll_layers: int = 2
    n_decoder_layers: int = 2
    ff_mult: int = 4
    dropout: float = 0.1
    max_duration: int = 512

    def __post_init__(self):
        if not (0 < self.d_ctrl_latent <= self.d_model):
            raise ShapeError("d_ctrl_latent must be in (0, d_model]")
        if self.d_model % self.n_heads != 0:
            raise ShapeError("d_model must be divisible by n_heads")

    @property
    def pose_dim(self) -> int:
        return self.n_joints * 6 + 3

    @property
    def trajectory_enabled(self) -> bool:
        # d_ctrl_latent == d_model leaves no channels for the trajectory
        return self.d_ctrl_latent < self.d_model


@dataclass
class LatentDistribution:
    """Action-level Gaussian, sigma stored as log variance."""

    mu: np.ndarray
    log_var: np.ndarray

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=np.float64)
        self.log_var = np.asarray(self.log_var, dtype=np.float64)
        if self.mu.shape != self.log_var.shape:
            raise ShapeError("mu and log_var must have the same shape")
        if not (np.all(np.isfinite(self.mu)) and np.all(np.isfinite(self.log_var))):
            raise ShapeError("latent distribution parameters must be finite")

    @property
    def sigma(self) -> np.ndarray:
        return np.exp(0.5 * self.log_var)


def sinusoidal_encoding(positions: torch.Tensor, d_model: int) -> torch.Tensor:
    """Standard sinusoid table for integer positions (...,) -> (..., d_model)."""
    device = positions.device
    half = torch.arange(0, d_model, 2, device=device, dtype=torch.get_default_dtype())
    div = torch.exp(-math.log(10000.0) * half / d_model)
    args = positions.unsqueeze(-1).to(div.dtype) * div
    out = torch.zeros(*positions.shape, d_model, device=device, dtype=div.dtype)
    out[..., 0::2] = torch.sin(args)
    out[..., 1::2] = torch.cos(args)
    return out


def reverse_positional_encoding(T: int, d_model: int, max_duration: int = 512) -> np.ndarray:
    """(T, d) table where row t encodes the time-to-arrival position T - t.

    The final row is always the position-0 encoding, whatever T is, so the
    decoder can see how far the action end is.
    """
    if not (1 <= T <= max_duration):
        raise DurationError(f"duration {T} outside [1, {max_duration}]")
    positions = torch.arange(T - 1, -1, -1)
    return sinusoidal_encoding(positions, d_model).numpy()


def causal_mask(size: int, device=None) -> torch.Tensor:
    return torch.triu(torch.ones(size, size, dtype=torch.bool, device=device), diagonal=1)


class ActionGenerator(nn.Module):
    """Conditional VAE over single actions, decoded autoregressively."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        d = config.d_model
        ff = config.ff_mult * d
        self.pose_embed = nn.Linear(config.pose_dim, d)     # shared everywhere
        self.tag_embed = nn.Embedding(config.tag_count, d)

        enc_layer = nn.TransformerEncoderLayer(
            d, config.n_heads, dim_feedforward=ff, dropout=config.dropout, batch_first=True)
        self.encoder = nn.TransformerEncoder(enc_layer, config.n_encoder_layers,
                                             enable_nested_tensor=False)
        self.mu_head = nn.Linear(d, d)
        self.logvar_head = nn.Linear(d, d)

        unroll_layer = nn.TransformerDecoderLayer(
            d, config.n_heads, dim_feedforward=ff, dropout=config.dropout, batch_first=True)
        self.unroll = nn.TransformerDecoder(unroll_layer, config.n_unroll_layers)
        self.latent_proj = nn.Linear(d, config.d_ctrl_latent)
        if config.trajectory_enabled:
            self.trajectory_proj = nn.Linear(2, d - config.d_ctrl_latent)

        dec_layer = nn.TransformerDecoderLayer(
            d, config.n_heads, dim_feedforward=ff, dropout=config.dropout, batch_first=True)
        self.decoder = nn.TransformerDecoder(dec_layer, config.n_decoder_layers)
        self.pose_head = nn.Linear(d, config.pose_dim)

    # --- condition encoder -------------------------------------------------

    def encode(self, context: torch.Tensor, current_tag: torch.Tensor,
               next_tag: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """context (B, k, pose_dim), tags (B,) -> mu, log_var (B, d)."""
        k = self.config.context_len
        if context.shape[1] != k:
            raise ShapeError(f"context must have {k} frames, got {context.shape[1]}")
        tokens = torch.cat([
            self.pose_embed(context),
            self.tag_embed(current_tag).unsqueeze(1),
            self.tag_embed(next_tag).unsqueeze(1),
        ], dim=1)
        positions = torch.arange(k + 2, device=tokens.device)
        tokens = tokens + sinusoidal_encoding(positions, self.config.d_model)
        out = self.encoder(tokens)
        action_token = out[:, k]          # the current-tag token
        return self.mu_head(action_token), self.logvar_head(action_token)

    @staticmethod
    def sample_latent(mu: torch.Tensor, log_var: torch.Tensor, mode: str = "random",
                      generator: torch.Generator | None = None) -> torch.Tensor:
        """Reparameterized draw; ``mean`` mode returns mu directly."""
        if mode == "mean":
            return mu
        if mode != "random":
            raise ValueError(f"unknown sample mode {mode!r}")
        eps = torch.empty_like(mu).normal_(generator=generator)
        return mu + torch.exp(0.5 * log_var) * eps

    # --- time unrolling ----------------------------------------------------

    def unroll_controls(self, z: torch.Tensor, T: int, current_tag: torch.Tensor,
                        trajectory: torch.Tensor | None,
                        pad_mask: torch.Tensor | None = None) -> torch.Tensor:
        """z (B, d) -> frame controls (B, T, d).

        Queries are reverse positional encodings with the embedded current
        tag added to every frame; z is the single key/value token.
        """
        if not (1 <= T <= self.config.max_duration):
            raise DurationError(f"duration {T} outside [1, {self.config.max_duration}]")
        B = z.shape[0]
        rev = sinusoidal_encoding(torch.arange(T - 1, -1, -1, device=z.device),
                                  self.config.d_model)
        query = rev.unsqueeze(0) + self.tag_embed(current_tag).unsqueeze(1)  # (B, T, d)
        frames = self.unroll(query, z.unsqueeze(1), tgt_key_padding_mask=pad_mask)
        latent_part = self.latent_proj(frames)
        if not self.config.trajectory_enabled:
            return latent_part
        if trajectory is None:
            trajectory = torch.zeros(B, T, 2, dtype=z.dtype, device=z.device)
        if trajectory.shape != (B, T, 2):
            raise ShapeError(f"trajectory must be (B, {T}, 2), got {tuple(trajectory.shape)}")
        return torch.cat([latent_part, self.trajectory_proj(trajectory)], dim=-1)

    # --- motion decoder ----------------------------------------------------

    def decode_embedded(self, input_embeddings: torch.Tensor, controls: torch.Tensor,
                        pad_mask: torch.Tensor | None = None,
                        memory_pad_mask: torch.Tensor | None = None) -> torch.Tensor:
        """Embedded input poses (B, S, d) + controls (B, T, d) -> poses (B, S, pose_dim)."""
        S = input_embeddings.shape[1]
        positions = torch.arange(S, device=input_embeddings.device)
        query = input_embeddings + sinusoidal_encoding(positions, self.config.d_model)
        out = self.decoder(query, controls,
                           tgt_mask=causal_mask(S, device=query.device),
                           tgt_key_padding_mask=pad_mask,
                           memory_key_padding_mask=memory_pad_mask)
        return self.pose_head(out)

    def decode(self, input_poses: torch.Tensor, controls: torch.Tensor,
               pad_mask: torch.Tensor | None = None,
               memory_pad_mask: torch.Tensor | None = None,
               first_embedding: torch.Tensor | None = None) -> torch.Tensor:
        """Parallel decode; prediction at index t sees input poses <= t only.

        ``first_embedding`` (B, d), when given, replaces the embedding of the
        input pose at index 0 (the start-pose substitution used by the
        stitching pipeline).
        """
        if input_poses.shape[1] != controls.shape[1]:
            raise ShapeError("input poses and controls must have equal length")
        emb = self.pose_embed(input_poses)
        if first_embedding is not None:
            emb = torch.cat([first_embedding.unsqueeze(1), emb[:, 1:]], dim=1)
        return self.decode_embedded(emb, controls, pad_mask, memory_pad_mask)

    def decode_iterative(self, bop: torch.Tensor, controls: torch.Tensor,
                         first_embedding: torch.Tensor | None = None) -> torch.Tensor:
        """Frame-by-frame decode from the start pose ``bop`` (B, pose_dim).

        Appends each newly predicted pose to the decoder input; returns
        (B, T, pose_dim) after exactly T iterations.
        """
        T = controls.shape[1]
        inputs = bop.unsqueeze(1)
        outputs = []
        for _ in range(T):
            emb = self.pose_embed(inputs)
            if first_embedding is not None:
                emb = torch.cat([first_embedding.unsqueeze(1), emb[:, 1:]], dim=1)
            # the full control sequence stays visible: controls are known
            # upfront, causality only constrains the pose inputs
            pred = self.decode_embedded(emb, controls)
            outputs.append(pred[:, -1])
            inputs = torch.cat([inputs, pred[:, -1:]], dim=1)
        return torch.stack(outputs, dim=1)


def build_generator(config: ModelConfig, seed: int = 0) -> ActionGenerator:
    """Deterministically initialized generator."""
    with torch.random.fork_rng():
        torch.manual_seed(seed)
        model = ActionGenerator(config)
    return model


# ---------------------------------------------------------------------------
# clip <-> tensor plumbing
# ---------------------------------------------------------------------------

def clip_to_tensor(clip: MotionClip, dtype=torch.float32) -> torch.Tensor:
    """(T, pose_dim) with rotations flattened first, root translation last."""
    flat = np.concatenate([clip.rotations.reshape(len(clip), -1), clip.root], axis=1)
    return torch.as_tensor(flat, dtype=dtype)


def tensor_to_clip(x: torch.Tensor, n_joints: int, frame_rate: float = 30.0,
                   tag: int | None = None) -> MotionClip:
    arr = x.detach().cpu().numpy().astype(np.float64)
    rot = arr[:, : n_joints * 6].reshape(len(arr), n_joints, 6)
    root = arr[:, n_joints * 6:]
    return MotionClip(rot, root, frame_rate=frame_rate, tag=tag)


def split_pose_tensor(x: torch.Tensor, n_joints: int) -> tuple[torch.Tensor, torch.Tensor]:
    """(..., pose_dim) -> rotations (..., n_J, 6) and root (..., 3)."""
    rot = x[..., : n_joints * 6].reshape(*x.shape[:-1], n_joints, 6)
    return rot, x[..., n_joints * 6:]


# ---------------------------------------------------------------------------
# clip-level operations
# ---------------------------------------------------------------------------

def encode_condition(model: ActionGenerator, initial_motion: MotionClip,
                     current_tag: int, next_tag: int) -> LatentDistribution:
    """Action-level latent distribution for one conditioning bundle."""
    _check_tags(model.config, current_tag, next_tag)
    if len(initial_motion) != model.config.context_len:
        raise ShapeError(
            f"initial motion must have {model.config.context_len} frames, got {len(initial_motion)}")
    dtype = next(model.parameters()).dtype
    model.eval()
    with torch.no_grad():
        mu, log_var = model.encode(
            clip_to_tensor(initial_motion, dtype).unsqueeze(0),
            torch.tensor([current_tag]), torch.tensor([next_tag]))
    return LatentDistribution(mu[0].numpy(), log_var[0].numpy())


def sample_latent(dist: LatentDistribution, mode: str = "random",
                  seed: int | None = None) -> np.ndarray:
    """Draw an action-level latent; ``mean`` returns mu."""
    if mode == "mean":
        return dist.mu.copy()
    gen = torch.Generator()
    if seed is not None:
        gen.manual_seed(int(seed))
    eps = torch.empty(dist.mu.shape, dtype=torch.float64).normal_(generator=gen).numpy()
    return dist.mu + dist.sigma * eps


def generate_action(model: ActionGenerator, initial_motion: MotionClip, current_tag: int,
                    next_tag: int, duration: int, trajectory: np.ndarray | None = None,
                    sample_mode: str = "random", seed: int | None = None,
                    start_embedding: np.ndarray | None = None) -> MotionClip:
    """Generate one action of exactly ``duration`` frames.

    The decoder is seeded with the last frame of ``initial_motion``;
    ``start_embedding`` substitutes that frame's embedding when given.
    Inputs are expected in the normalized local frame.
    """
    cfg = model.config
    _check_tags(cfg, current_tag, next_tag)
    if len(initial_motion) != cfg.context_len:
        raise ShapeError(f"initial motion must have {cfg.context_len} frames, got {len(initial_motion)}")
    if not (1 <= duration <= cfg.max_duration):
        raise DurationError(f"duration {duration} outside [1, {cfg.max_duration}]")
    if trajectory is not None:
        trajectory = np.asarray(trajectory, dtype=np.float64)
        if trajectory.shape != (duration, 2):
            raise ShapeError(f"trajectory must be ({duration}, 2), got {trajectory.shape}")

    dtype = next(model.parameters()).dtype
    gen = torch.Generator()
    gen.manual_seed(0 if seed is None else int(seed))
    model.eval()
    with torch.no_grad():
        ctx = clip_to_tensor(initial_motion, dtype).unsqueeze(0)
        cur = torch.tensor([current_tag])
        mu, log_var = model.encode(ctx, cur, torch.tensor([next_tag]))
        z = model.sample_latent(mu, log_var, sample_mode, generator=gen)
        traj_t = None if trajectory is None else torch.as_tensor(trajectory, dtype=dtype).unsqueeze(0)
        controls = model.unroll_controls(z, duration, cur, traj_t)
        bop = ctx[:, -1]
        emb = None
        if start_embedding is not None:
            emb = torch.as_tensor(start_embedding, dtype=dtype).unsqueeze(0)
        preds = model.decode_iterative(bop, controls, first_embedding=emb)
    return tensor_to_clip(preds[0], cfg.n_joints, frame_rate=initial_motion.frame_rate,
                          tag=current_tag)


def embed_pose_array(model: ActionGenerator, pose_vector: np.ndarray) -> np.ndarray:
    """The shared pose embedding of one flattened pose (pose_dim,) -> (d,)."""
    dtype = next(model.parameters()).dtype
    x = torch.as_tensor(np.asarray(pose_vector), dtype=dtype)
    if x.shape != (model.config.pose_dim,):
        raise ShapeError(f"expected pose vector of length {model.config.pose_dim}, got {tuple(x.shape)}")
    with torch.no_grad():
        return model.pose_embed(x).numpy()


def project_pose_array(model: ActionGenerator, feature: np.ndarray) -> np.ndarray:
    """The output head applied to one feature vector (d,) -> (pose_dim,)."""
    dtype = next(model.parameters()).dtype
    x = torch.as_tensor(np.asarray(feature), dtype=dtype)
    if x.shape != (model.config.d_model,):
        raise ShapeError(f"expected feature of length {model.config.d_model}, got {tuple(x.shape)}")
    with torch.no_grad():
        return model.pose_head(x).numpy()


def _check_tags(config: ModelConfig, *tags: int) -> None:
    for t in tags:
        if not (0 <= t < config.tag_count):
            raise ShapeError(f"tag {t} outside vocabulary of size {config.tag_count}")


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def save_checkpoint(model: ActionGenerator, path: str, extra: dict | None = None) -> None:
    torch.save({
        "format_version": CHECKPOINT_VERSION,
        "kind": "generator",
        "config": asdict(model.config),
        "state": model.state_dict(),
        "extra": extra or {},
    }, path)


def load_checkpoint(path: str) -> ActionGenerator:
    doc = torch.load(path, map_location="cpu", weights_only=False)
    if doc.get("kind") != "generator":
        raise ShapeError(f"checkpoint kind {doc.get('kind')!r} is not a generator")
    config = ModelConfig(**doc["config"])
    model = ActionGenerator(config)
    model.load_state_dict(doc["state"])
    model.eval()
    return model


def checkpoint_metadata(path: str) -> dict:
    doc = torch.load(path, map_location="cpu", weights_only=False)
    n_params = sum(int(np.prod(t.shape)) for t in doc["state"].values())
    return {"kind": doc.get("kind"), "format_version": doc.get("format_version"),
            "config": doc.get("config"), "n_parameters": n_params}
