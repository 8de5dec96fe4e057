"""Differentiable architecture: epoch encoder, sequence encoder, projection
and prediction heads, latent convolutional encoder, Transformer context
encoder, and the signal reconstruction head.

The epoch encoder is a 4-block 1-D CNN with global average pooling producing
a 64-dimensional feature vector per 30-s epoch; the sequence encoder is a
residual dilated temporal CNN emitting 5 logits per epoch in a window.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
import torch
from torch import nn

NUM_STAGES = 5

CHECKPOINT_MAGIC = b"SLEEPSSL-CKPT-1\n"


@dataclass
class NetConfig:
    in_channels: int = 2
    samples_per_epoch: int = 3840
    conv_widths: tuple[int, ...] = (32, 64, 64, 64)
    kernel_sizes: tuple[int, ...] = (7, 7, 5, 5)
    pool: int = 4
    seq_width: int = 128
    seq_kernel: int = 5
    seq_dilations: tuple[int, ...] = (1, 2, 4)
    window: int = 100
    proj_dim: int = 128
    transformer_layers: int = 4
    transformer_heads: int = 4
    mask_span: int = 4
    mask_prob: float = 0.065

    @property
    def feature_dim(self) -> int:
        return self.conv_widths[-1]

    @property
    def stride_product(self) -> int:
        return self.pool ** len(self.conv_widths)

    @property
    def latent_steps(self) -> int:
        return self.samples_per_epoch // self.stride_product

    def __post_init__(self):
        if len(self.conv_widths) != len(self.kernel_sizes):
            raise ValueError("conv_widths and kernel_sizes must have equal length")
        if self.samples_per_epoch % self.stride_product != 0:
            raise ValueError(
                f"samples_per_epoch {self.samples_per_epoch} not divisible by "
                f"total pooling stride {self.stride_product}"
            )
        if self.latent_steps < 8:
            raise ValueError(
                f"latent sequence of {self.latent_steps} steps is too short to mask"
            )

    def fingerprint(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


class EpochEncoder(nn.Module):
    """Per-epoch 1-D CNN feature extractor (conv, batch norm, ReLU, max-pool
    blocks, then global average pooling)."""

    def __init__(self, config: NetConfig):
        super().__init__()
        self.config = config
        blocks = []
        in_ch = config.in_channels
        for width, kernel in zip(config.conv_widths, config.kernel_sizes):
            blocks.append(nn.Sequential(
                nn.Conv1d(in_ch, width, kernel, padding="same"),
                nn.BatchNorm1d(width),
                nn.ReLU(),
                nn.MaxPool1d(config.pool),
            ))
            in_ch = width
        self.blocks = nn.ModuleList(blocks)

    def latent(self, x: torch.Tensor) -> torch.Tensor:
        """Pre-pooling convolutional map, shape (B, S, D)."""
        if x.shape[-2:] != (self.config.in_channels, self.config.samples_per_epoch):
            raise ValueError(
                f"expected (*, {self.config.in_channels}, {self.config.samples_per_epoch}), "
                f"got {tuple(x.shape)}"
            )
        for block in self.blocks:
            x = block(x)
        return x.transpose(1, 2)  # (B, S, D)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """64-d feature vector per epoch, shape (B, D)."""
        return self.latent(x).mean(dim=1)


class SequenceEncoder(nn.Module):
    """Residual dilated temporal CNN over a window of epoch features,
    emitting per-epoch stage logits."""

    def __init__(self, config: NetConfig):
        super().__init__()
        self.config = config
        self.input_proj = nn.Conv1d(config.feature_dim, config.seq_width, 1)
        self.blocks = nn.ModuleList([
            nn.Sequential(
                nn.Conv1d(config.seq_width, config.seq_width, config.seq_kernel,
                          dilation=d, padding="same"),
                nn.BatchNorm1d(config.seq_width),
                nn.ReLU(),
            )
            for d in config.seq_dilations
        ])
        self.head = nn.Conv1d(config.seq_width, NUM_STAGES, 1)

    def forward(self, features: torch.Tensor) -> torch.Tensor:
        """(B, L, D) epoch features -> (B, L, 5) logits."""
        if features.shape[-1] != self.config.feature_dim:
            raise ValueError(
                f"expected feature dim {self.config.feature_dim}, got {features.shape[-1]}"
            )
        if features.shape[-2] != self.config.window:
            raise ValueError(
                f"expected window {self.config.window}, got {features.shape[-2]}"
            )
        x = self.input_proj(features.transpose(1, 2))
        for block in self.blocks:
            x = x + block(x)
        return self.head(x).transpose(1, 2)


def classify(logits: torch.Tensor | np.ndarray) -> np.ndarray:
    """Argmax stage per logit row; ties break toward the lowest class index."""
    arr = logits.detach().cpu().numpy() if isinstance(logits, torch.Tensor) else np.asarray(logits)
    if not np.all(np.isfinite(arr)):
        raise ValueError("non-finite logits")
    return np.argmax(arr, axis=-1)


class ProjectionHead(nn.Module):
    """MLP projection head; the deep variant adds one more hidden layer."""

    def __init__(self, in_dim: int, out_dim: int, deep: bool = False):
        super().__init__()
        if deep:
            self.net = nn.Sequential(
                nn.Linear(in_dim, out_dim), nn.ReLU(),
                nn.Linear(out_dim, out_dim), nn.ReLU(),
                nn.Linear(out_dim, out_dim),
            )
        else:
            self.net = nn.Sequential(
                nn.Linear(in_dim, out_dim), nn.ReLU(),
                nn.Linear(out_dim, out_dim),
            )

    def forward(self, h: torch.Tensor) -> torch.Tensor:
        return self.net(h)


class PredictionHead(nn.Module):
    """Small MLP mapping projections to predictions (online branch only)."""

    def __init__(self, dim: int):
        super().__init__()
        self.net = nn.Sequential(
            nn.Linear(dim, dim), nn.ReLU(),
            nn.Linear(dim, dim),
        )

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        return self.net(z)


class ContextTransformer(nn.Module):
    """Transformer encoder that fills in masked latent positions.

    Masked positions are replaced by a learned token before adding learned
    positional embeddings; attention is global across the sequence.
    """

    def __init__(self, config: NetConfig):
        super().__init__()
        self.config = config
        d = config.feature_dim
        self.mask_token = nn.Parameter(torch.zeros(d))
        nn.init.normal_(self.mask_token, std=0.02)
        self.pos_embed = nn.Parameter(torch.zeros(config.latent_steps, d))
        nn.init.normal_(self.pos_embed, std=0.02)
        layer = nn.TransformerEncoderLayer(
            d_model=d, nhead=config.transformer_heads,
            dim_feedforward=2 * d, batch_first=True, dropout=0.0,
        )
        self.encoder = nn.TransformerEncoder(layer, config.transformer_layers)

    def forward(self, latent: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        """(B, S, D) latents and a (B, S) boolean mask -> contextual (B, S, D)."""
        if mask is None:
            raise ValueError("a boolean mask is required")
        if mask.shape != latent.shape[:2]:
            raise ValueError(f"mask shape {tuple(mask.shape)} != {tuple(latent.shape[:2])}")
        x = torch.where(mask.unsqueeze(-1), self.mask_token.expand_as(latent), latent)
        x = x + self.pos_embed[: latent.shape[1]]
        return self.encoder(x)


class ReconstructionHead(nn.Module):
    """Two layers projecting contextual latent steps back to the signal
    domain; each latent step maps to its stride's worth of raw samples."""

    def __init__(self, config: NetConfig):
        super().__init__()
        self.config = config
        d = config.feature_dim
        out = config.in_channels * config.stride_product
        self.net = nn.Sequential(
            nn.Linear(d, d), nn.ReLU(),
            nn.Linear(d, out),
        )

    def forward(self, contextual: torch.Tensor) -> torch.Tensor:
        """(B, S, D) -> (B, C, T) reconstruction."""
        b, s, _ = contextual.shape
        if s != self.config.latent_steps:
            raise ValueError(f"expected {self.config.latent_steps} latent steps, got {s}")
        y = self.net(contextual)  # (B, S, C * stride)
        y = y.view(b, s, self.config.in_channels, self.config.stride_product)
        return y.permute(0, 2, 1, 3).reshape(b, self.config.in_channels,
                                             self.config.samples_per_epoch)


def draw_latent_mask(n_steps: int, config: NetConfig,
                     rng: np.random.Generator) -> np.ndarray:
    """Boolean mask over latent steps: contiguous spans, independent start
    probability per position; at least one span is always masked."""
    mask = np.zeros(n_steps, dtype=bool)
    starts = rng.random(n_steps) < config.mask_prob
    if not starts.any():
        starts[rng.integers(n_steps)] = True
    for i in np.flatnonzero(starts):
        mask[i : i + config.mask_span] = True
    return mask


class StagingModel(nn.Module):
    """Epoch encoder + sequence encoder: windows of raw epochs to per-epoch
    stage logits."""

    def __init__(self, config: NetConfig):
        super().__init__()
        self.config = config
        self.epoch_encoder = EpochEncoder(config)
        self.sequence_encoder = SequenceEncoder(config)

    def forward(self, windows: torch.Tensor) -> torch.Tensor:
        """(B, L, C, T) raw windows -> (B, L, 5) logits."""
        b, l, c, t = windows.shape
        features = self.epoch_encoder(windows.reshape(b * l, c, t)).reshape(b, l, -1)
        return self.sequence_encoder(features)


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def save_checkpoint(path: str | Path, module: nn.Module, config: NetConfig,
                    metadata: dict | None = None) -> None:
    """Versioned container: magic, JSON header, named little-endian float32
    tensors. Byte-identical for identical parameters and metadata."""
    state = module.state_dict()
    tensors = []
    blobs = []
    offset = 0
    for name in sorted(state):
        arr = state[name].detach().cpu().numpy().astype("<f4")
        blob = arr.tobytes()
        tensors.append({"name": name, "shape": list(arr.shape),
                        "offset": offset, "nbytes": len(blob)})
        blobs.append(blob)
        offset += len(blob)
    header = json.dumps({
        "version": 1,
        "fingerprint": config.fingerprint(),
        "config": asdict(config),
        "metadata": metadata or {},
        "tensors": tensors,
    }, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", len(header)))
        f.write(header)
        for blob in blobs:
            f.write(blob)


def read_checkpoint(path: str | Path) -> tuple[dict, dict]:
    """Return (header, name -> float32 array)."""
    with open(path, "rb") as f:
        magic = f.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"{path} is not a checkpoint file")
        (hlen,) = struct.unpack("<I", f.read(4))
        header = json.loads(f.read(hlen))
        data = f.read()
    arrays = {}
    for t in header["tensors"]:
        raw = data[t["offset"] : t["offset"] + t["nbytes"]]
        arrays[t["name"]] = np.frombuffer(raw, dtype="<f4").reshape(t["shape"]).copy()
    return header, arrays


def load_checkpoint(path: str | Path, module: nn.Module, config: NetConfig) -> dict:
    """Load parameters into a module; the architecture fingerprint must match."""
    header, arrays = read_checkpoint(path)
    if header["fingerprint"] != config.fingerprint():
        raise ValueError(
            f"checkpoint fingerprint {header['fingerprint']} does not match "
            f"configured architecture {config.fingerprint()}"
        )
    state = {name: torch.from_numpy(arr) for name, arr in arrays.items()}
    module.load_state_dict(state)
    return header["metadata"]


def config_from_checkpoint(path: str | Path) -> NetConfig:
    header, _ = read_checkpoint(path)
    cfg = dict(header["config"])
    for key in ("conv_widths", "kernel_sizes", "seq_dilations"):
        cfg[key] = tuple(cfg[key])
    return NetConfig(**cfg)
