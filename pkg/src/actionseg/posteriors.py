"""Amortized posteriors: the classifier q(y_t | x) and the per-class Gaussian encoder q(z_t | x, y_t)."""

from __future__ import annotations

from typing import Optional

import torch
import torch.nn as nn

from .tcn import FrameMLPBackbone, TCNBackbone, TCNConfig


class PosteriorNets(nn.Module):
    """Two backbone networks: a classifier head over K states and K Gaussian encoder heads.

    The encoder realizes conditioning on y as one (mu, log-variance) head per
    class, so the marginalized objective needs a single forward pass.
    """

    def __init__(self, tcn_config: TCNConfig, n_classes: int, latent_dim: int, temporal: bool = True):
        super().__init__()
        self.n_classes = n_classes
        self.latent_dim = latent_dim
        self.temporal = temporal
        backbone_cls = TCNBackbone if temporal else FrameMLPBackbone
        self.classifier_backbone = backbone_cls(tcn_config)
        self.classifier_head = nn.Linear(tcn_config.n_filters, n_classes)
        self.encoder_backbone = backbone_cls(tcn_config)
        self.encoder_heads = nn.ModuleList(
            [nn.Linear(tcn_config.n_filters, 2 * latent_dim) for _ in range(n_classes)]
        )

    def class_logits(self, x: torch.Tensor, training: bool = False, generator=None) -> torch.Tensor:
        h = self.classifier_backbone(x, training=training, generator=generator)
        return self.classifier_head(h)

    def encode_all(self, x: torch.Tensor, training: bool = False, generator=None):
        """(mu, var) for every class head: both [..., T, K, L]."""
        h = self.encoder_backbone(x, training=training, generator=generator)
        out = torch.stack([head(h) for head in self.encoder_heads], dim=-2)  # [..., T, K, 2L]
        mu, log_var = out.chunk(2, dim=-1)
        return mu, torch.exp(log_var)


def classify(nets: PosteriorNets, x, training: bool = False, seed: Optional[int] = None) -> torch.Tensor:
    """Per-frame probability simplex over the K discrete states."""
    generator = _gen(training, seed)
    x = _as_tensor(nets, x)
    return torch.softmax(nets.class_logits(x, training=training, generator=generator), dim=-1)


def encode_z(nets: PosteriorNets, x, k: int, training: bool = False, seed: Optional[int] = None):
    """(mu, sigma^2) of q(z_t | x, y_t = k) for every frame."""
    if not 0 <= k < nets.n_classes:
        raise ValueError(f"class index {k} outside [0, {nets.n_classes})")
    generator = _gen(training, seed)
    x = _as_tensor(nets, x)
    mu, var = nets.encode_all(x, training=training, generator=generator)
    return mu[..., k, :], var[..., k, :]


def reparam_sample(mu: torch.Tensor, var: torch.Tensor, seed: int) -> torch.Tensor:
    """z = mu + sigma * eps with eps drawn deterministically from the seed."""
    g = torch.Generator()
    g.manual_seed(seed)
    eps = torch.randn(mu.shape, generator=g, dtype=mu.dtype)
    return mu + torch.sqrt(var) * eps


def draw_noise(n_frames: int, n_classes: int, latent_dim: int, seed: int, dtype=torch.float64) -> torch.Tensor:
    """The shared [T x K x L] standard-normal draw used by the sequence objectives.

    The labeled objective indexes this tensor at the observed class so that it
    agrees exactly with the marginalized objective under one-hot weights.
    """
    g = torch.Generator()
    g.manual_seed(seed)
    return torch.randn(n_frames, n_classes, latent_dim, generator=g, dtype=dtype)


def _gen(training: bool, seed: Optional[int]) -> Optional[torch.Generator]:
    if training and seed is not None:
        g = torch.Generator()
        g.manual_seed(seed)
        return g
    return None


def _as_tensor(nets: nn.Module, x) -> torch.Tensor:
    return torch.as_tensor(x, dtype=next(nets.parameters()).dtype)
