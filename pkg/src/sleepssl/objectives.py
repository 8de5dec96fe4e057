"""The seven pretext objectives and their supporting mechanics: EMA targets,
stop-gradient, world representations, and latent masking.

Default hyperparameters follow the published ablation values; BENDR and MAEEG
inherit their originating recipes with a 4-layer Transformer and batch 64.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from . import augment
from .net import (ContextTransformer, EpochEncoder, NetConfig, PredictionHead,
                  ProjectionHead, ReconstructionHead, draw_latent_mask)

METHODS = ("simclr", "byol", "simsiam", "barlow_twins", "contrawr", "bendr", "maeeg")


@dataclass
class Hyperparams:
    epochs: int
    batch_size: int
    lr: float = 1e-4
    weight_decay: float = 1e-4  # lambda_opt
    lambda_loss: float | None = None
    tau_loss: float | None = None
    tau_ema: float | None = None
    delta: float | None = None
    sigma: float | None = None
    augmentation_set: str = "T1"


HYPER_DEFAULTS: dict[str, Hyperparams] = {
    "simclr": Hyperparams(epochs=350, batch_size=512, weight_decay=1e-4, tau_loss=0.1),
    "byol": Hyperparams(epochs=200, batch_size=512, weight_decay=1e-4, tau_ema=0.9,
                        augmentation_set="T2"),
    "simsiam": Hyperparams(epochs=100, batch_size=512, weight_decay=1e-6),
    "barlow_twins": Hyperparams(epochs=350, batch_size=512, weight_decay=1e-4,
                                lambda_loss=0.005),
    "contrawr": Hyperparams(epochs=100, batch_size=512, weight_decay=1e-7,
                            tau_loss=1.0, tau_ema=0.999, delta=0.1, sigma=2.0),
    "bendr": Hyperparams(epochs=200, batch_size=64, weight_decay=1e-4, tau_loss=0.1),
    "maeeg": Hyperparams(epochs=200, batch_size=64, weight_decay=1e-4),
}


def default_hyperparams(method: str) -> Hyperparams:
    if method not in HYPER_DEFAULTS:
        raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")
    return copy.deepcopy(HYPER_DEFAULTS[method])


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

def nt_xent(z_a: torch.Tensor, z_b: torch.Tensor, tau: float) -> torch.Tensor:
    """Normalized-temperature cross entropy over 2B anchors.

    Rows are l2-normalized; each anchor's positive is its counterpart in the
    other branch, negatives are everything else in the doubled batch.
    """
    b = z_a.shape[0]
    if b < 2:
        raise ValueError("nt_xent needs batch size >= 2 for negatives")
    if tau <= 0:
        raise ValueError("temperature must be positive")
    z = torch.cat([F.normalize(z_a, dim=1), F.normalize(z_b, dim=1)])
    sim = z @ z.T / tau
    sim.fill_diagonal_(float("-inf"))  # exclude self-pairs
    targets = torch.cat([torch.arange(b, 2 * b), torch.arange(0, b)]).to(z.device)
    return F.cross_entropy(sim, targets)


def byol_loss(q: torch.Tensor, z_target: torch.Tensor) -> torch.Tensor:
    """Mean squared error between l2-normalized predictions and (detached)
    target projections; equals 2 - 2 cos per row."""
    norms_q = q.norm(dim=1)
    norms_z = z_target.norm(dim=1)
    if (norms_q == 0).any() or (norms_z == 0).any():
        raise ValueError("zero-norm row in byol_loss input")
    qn = F.normalize(q, dim=1)
    zn = F.normalize(z_target.detach(), dim=1)
    return ((qn - zn) ** 2).sum(dim=1).mean()


def negative_cosine(p: torch.Tensor, z: torch.Tensor) -> torch.Tensor:
    """Batch-mean negative cosine similarity with stop-gradient on z."""
    if (p.norm(dim=1) == 0).any() or (z.norm(dim=1) == 0).any():
        raise ValueError("zero-norm row in cosine loss input")
    return -F.cosine_similarity(p, z.detach(), dim=1).mean()


def simsiam_loss(q_a: torch.Tensor, z_a: torch.Tensor,
                 q_b: torch.Tensor, z_b: torch.Tensor) -> torch.Tensor:
    """Symmetrized negative cosine with stop-gradient on each opposite
    branch: -cos(q_a, sg(z_b))/2 - cos(q_b, sg(z_a))/2."""
    return 0.5 * negative_cosine(q_a, z_b) + 0.5 * negative_cosine(q_b, z_a)


def barlow_twins_loss(z_a: torch.Tensor, z_b: torch.Tensor,
                      lambda_loss: float = 0.005) -> torch.Tensor:
    """Cross-correlation loss: drive the diagonal of C toward 1 and the
    off-diagonal toward 0, with columns standardized over the batch."""
    b = z_a.shape[0]
    if b < 2:
        raise ValueError("barlow_twins_loss needs batch size >= 2")
    std_a = z_a.std(dim=0, unbiased=False)
    std_b = z_b.std(dim=0, unbiased=False)
    if (std_a == 0).any() or (std_b == 0).any():
        raise ValueError("zero-variance column in barlow_twins_loss input")
    za = (z_a - z_a.mean(dim=0)) / std_a
    zb = (z_b - z_b.mean(dim=0)) / std_b
    c = za.T @ zb / b
    on_diag = ((1 - torch.diagonal(c)) ** 2).sum()
    off_diag = (c ** 2).sum() - (torch.diagonal(c) ** 2).sum()
    return on_diag + lambda_loss * off_diag


def gaussian_similarity(a: torch.Tensor, b: torch.Tensor, sigma: float) -> torch.Tensor:
    """exp(-||a - b||^2 / (2 sigma^2)), row-wise."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    return torch.exp(-((a - b) ** 2).sum(dim=-1) / (2 * sigma ** 2))


def world_representation(z: torch.Tensor, mode: str = "global",
                         sigma: float = 2.0) -> torch.Tensor:
    """Average embedding used as the contrastive negative.

    Global mode is the minibatch column mean (broadcast per anchor);
    instance-aware mode is a per-anchor kernel-weighted mean over the other
    rows of the batch.
    """
    b = z.shape[0]
    if b < 2:
        raise ValueError("world_representation needs batch size >= 2")
    if mode == "global":
        return z.mean(dim=0, keepdim=True).expand_as(z)
    if mode == "instance":
        d2 = torch.cdist(z, z) ** 2
        w = torch.exp(-d2 / (2 * sigma ** 2))
        w = w - torch.diag_embed(torch.diagonal(w))  # exclude the anchor itself
        w = w / w.sum(dim=1, keepdim=True)
        return w @ z
    raise ValueError(f"unknown world representation mode {mode!r}")


def contrawr_loss(z: torch.Tensor, z_target: torch.Tensor, z_world: torch.Tensor,
                  delta: float = 0.1, sigma: float = 2.0) -> torch.Tensor:
    """Gaussian-kernel triplet: the positive pair must beat the world
    representation by the margin delta."""
    sim_pos = gaussian_similarity(z, z_target.detach(), sigma)
    sim_world = gaussian_similarity(z, z_world.detach(), sigma)
    return torch.clamp(sim_world - sim_pos + delta, min=0.0).mean()


def maeeg_loss(x: torch.Tensor, x_hat: torch.Tensor) -> torch.Tensor:
    """Mean squared reconstruction error in the signal domain."""
    if x.shape != x_hat.shape:
        raise ValueError(f"shape mismatch {tuple(x.shape)} vs {tuple(x_hat.shape)}")
    return ((x - x_hat) ** 2).mean()


@torch.no_grad()
def ema_update(target: nn.Module, online: nn.Module, tau_ema: float) -> None:
    """xi' = tau * xi + (1 - tau) * theta, elementwise over parameters and
    floating-point buffers."""
    if not 0 < tau_ema <= 1:
        raise ValueError("tau_ema must be in (0, 1]")
    t_state = target.state_dict()
    o_state = online.state_dict()
    if t_state.keys() != o_state.keys():
        raise ValueError("target and online modules have different parameter sets")
    for name, t in t_state.items():
        o = o_state[name]
        if t.shape != o.shape:
            raise ValueError(f"shape mismatch for {name}: {t.shape} vs {o.shape}")
        if t.is_floating_point():
            t.mul_(tau_ema).add_(o, alpha=1 - tau_ema)
        else:
            t.copy_(o)


def masked_position_nt_xent(latent: torch.Tensor, contextual: torch.Tensor,
                            mask: torch.Tensor, tau: float) -> torch.Tensor:
    """NT-Xent over masked latent positions.

    For each masked position the positive is (contextual output, original
    latent) at that position; negatives are the latents at every other
    position of the same sequence.
    """
    if not mask.any():
        raise ValueError("no masked positions")
    zl = F.normalize(latent, dim=-1)
    zc = F.normalize(contextual, dim=-1)
    sim = torch.bmm(zc, zl.transpose(1, 2)) / tau  # (B, S, S)
    logp = F.log_softmax(sim, dim=-1)
    pos = torch.diagonal(logp, dim1=1, dim2=2)  # (B, S)
    return -(pos[mask]).mean()


# ---------------------------------------------------------------------------
# pretext tasks
# ---------------------------------------------------------------------------

class PretextTask:
    """One SSL method's model bundle and training step.

    ``training_step`` consumes a float batch of raw epochs (B, C, T) and a
    numpy generator for augmentation draws, and returns a scalar loss with
    gradients on the online parameters.
    """

    method: str

    def __init__(self, method: str, net_config: NetConfig,
                 hyper: Hyperparams | None = None,
                 world_mode: str = "global"):
        if method not in METHODS:
            raise ValueError(f"unknown method {method!r}")
        self.method = method
        self.net_config = net_config
        self.hyper = hyper or default_hyperparams(method)
        self.world_mode = world_mode
        self.encoder = EpochEncoder(net_config)
        d = net_config.feature_dim
        p = net_config.proj_dim
        self.target_encoder: EpochEncoder | None = None
        self.target_projector: ProjectionHead | None = None
        self._modules: list[nn.Module] = [self.encoder]

        if method == "simclr":
            self.projector = ProjectionHead(d, p)
            self.final_bn = nn.BatchNorm1d(p)
            self._modules += [self.projector, self.final_bn]
        elif method == "byol":
            self.projector = ProjectionHead(d, p)
            self.predictor = PredictionHead(p)
            self.target_encoder = copy.deepcopy(self.encoder)
            self.target_projector = copy.deepcopy(self.projector)
            self._freeze(self.target_encoder, self.target_projector)
            self._modules += [self.projector, self.predictor]
        elif method == "simsiam":
            self.projector = ProjectionHead(d, p, deep=True)
            self.predictor = PredictionHead(p)
            self._modules += [self.projector, self.predictor]
        elif method == "barlow_twins":
            self.projector = ProjectionHead(d, p, deep=True)
            self._modules += [self.projector]
        elif method == "contrawr":
            self.projector = ProjectionHead(d, p)
            self.target_encoder = copy.deepcopy(self.encoder)
            self.target_projector = copy.deepcopy(self.projector)
            self._freeze(self.target_encoder, self.target_projector)
            self._modules += [self.projector]
        elif method == "bendr":
            self.transformer = ContextTransformer(net_config)
            self._modules += [self.transformer]
        elif method == "maeeg":
            self.transformer = ContextTransformer(net_config)
            self.recon = ReconstructionHead(net_config)
            self._modules += [self.transformer, self.recon]

    @staticmethod
    def _freeze(*modules: nn.Module) -> None:
        for m in modules:
            for param in m.parameters():
                param.requires_grad_(False)

    def parameters(self):
        for m in self._modules:
            yield from m.parameters()

    def train(self) -> None:
        for m in self._modules:
            m.train()
        if self.target_encoder is not None:
            self.target_encoder.train()
            self.target_projector.train()

    def _two_views(self, batch: np.ndarray, rng: np.random.Generator) -> tuple[torch.Tensor, torch.Tensor]:
        set_name = self.hyper.augmentation_set
        rate = self.net_config.samples_per_epoch / 30.0
        views = []
        for _ in range(2):
            v = np.stack([augment.augment_epoch(e, set_name, rng, rate) for e in batch])
            views.append(torch.as_tensor(v, dtype=torch.float32))
        return views[0], views[1]

    def training_step(self, batch: np.ndarray, rng: np.random.Generator) -> torch.Tensor:
        m = self.method
        if m in ("bendr", "maeeg"):
            x = torch.as_tensor(batch, dtype=torch.float32)
            latent = self.encoder.latent(x)
            mask_np = np.stack([
                draw_latent_mask(latent.shape[1], self.net_config, rng)
                for _ in range(latent.shape[0])
            ])
            mask = torch.as_tensor(mask_np)
            contextual = self.transformer(latent, mask)
            if m == "bendr":
                return masked_position_nt_xent(latent, contextual, mask, self.hyper.tau_loss)
            return maeeg_loss(x, self.recon(contextual))

        v_a, v_b = self._two_views(batch, rng)
        if m == "simclr":
            z_a = self.final_bn(self.projector(self.encoder(v_a)))
            z_b = self.final_bn(self.projector(self.encoder(v_b)))
            return nt_xent(z_a, z_b, self.hyper.tau_loss)
        if m == "byol":
            q_a = self.predictor(self.projector(self.encoder(v_a)))
            q_b = self.predictor(self.projector(self.encoder(v_b)))
            with torch.no_grad():
                t_a = self.target_projector(self.target_encoder(v_a))
                t_b = self.target_projector(self.target_encoder(v_b))
            return 0.5 * byol_loss(q_a, t_b) + 0.5 * byol_loss(q_b, t_a)
        if m == "simsiam":
            z_a = self.projector(self.encoder(v_a))
            z_b = self.projector(self.encoder(v_b))
            return simsiam_loss(self.predictor(z_a), z_a, self.predictor(z_b), z_b)
        if m == "barlow_twins":
            z_a = self.projector(self.encoder(v_a))
            z_b = self.projector(self.encoder(v_b))
            return barlow_twins_loss(z_a, z_b, self.hyper.lambda_loss)
        if m == "contrawr":
            z = self.projector(self.encoder(v_a))
            with torch.no_grad():
                z_t = self.target_projector(self.target_encoder(v_b))
            z_w = world_representation(z.detach(), self.world_mode, self.hyper.sigma)
            return contrawr_loss(z, z_t, z_w, self.hyper.delta, self.hyper.sigma)
        raise AssertionError(m)

    def after_step(self) -> None:
        """Post-optimizer bookkeeping (EMA target updates)."""
        if self.target_encoder is not None:
            ema_update(self.target_encoder, self.encoder, self.hyper.tau_ema)
            ema_update(self.target_projector, self.projector, self.hyper.tau_ema)
