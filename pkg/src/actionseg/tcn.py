"""Dilated temporal convolutional backbone shared by the classifier and both posteriors."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import torch
import torch.nn as nn


@dataclass
class TCNConfig:
    input_dim: int
    n_blocks: int = 2
    n_lags: int = 4
    n_filters: int = 32
    dropout_p: float = 0.10
    leak: float = 0.01

    def __post_init__(self):
        if self.n_blocks < 1 or self.n_lags < 1 or self.n_filters < 1:
            raise ValueError("n_blocks, n_lags, n_filters must be >= 1")
        if not 0 <= self.dropout_p < 1:
            raise ValueError("dropout_p must be in [0, 1)")


def receptive_field_radius(config: TCNConfig) -> int:
    """Frames on each side of t that can influence the output at t.

    Each block has two symmetric conv layers of radius n_lags * dilation,
    with dilation doubling per block.
    """
    return config.n_lags * sum(2 * 2**b for b in range(config.n_blocks))


def _dropout(x: torch.Tensor, p: float, generator: Optional[torch.Generator]) -> torch.Tensor:
    # functional dropout with an explicit generator so training runs are reproducible
    if p <= 0:
        return x
    keep = (torch.rand(x.shape, generator=generator, device=x.device, dtype=x.dtype) >= p).to(x.dtype)
    return x * keep / (1.0 - p)


class DilatedBlock(nn.Module):
    """Two (conv -> leaky ReLU -> dropout) sub-blocks with a residual connection."""

    def __init__(self, in_channels: int, config: TCNConfig, dilation: int):
        super().__init__()
        k = 2 * config.n_lags + 1
        pad = config.n_lags * dilation
        f = config.n_filters
        self.conv1 = nn.Conv1d(in_channels, f, k, padding=pad, dilation=dilation)
        self.conv2 = nn.Conv1d(f, f, k, padding=pad, dilation=dilation)
        self.residual = nn.Conv1d(in_channels, f, 1) if in_channels != f else nn.Identity()
        self.leak = config.leak
        self.dropout_p = config.dropout_p

    def forward(self, x, training=False, generator=None):
        h = torch.nn.functional.leaky_relu(self.conv1(x), self.leak)
        if training:
            h = _dropout(h, self.dropout_p, generator)
        h = torch.nn.functional.leaky_relu(self.conv2(h), self.leak)
        if training:
            h = _dropout(h, self.dropout_p, generator)
        return h + self.residual(x)


class TCNBackbone(nn.Module):
    """Stack of dilated blocks mapping [T x D] (or [B x T x D]) to [T x n_filters]."""

    def __init__(self, config: TCNConfig):
        super().__init__()
        self.config = config
        blocks = []
        in_ch = config.input_dim
        for b in range(config.n_blocks):
            blocks.append(DilatedBlock(in_ch, config, dilation=2**b))
            in_ch = config.n_filters
        self.blocks = nn.ModuleList(blocks)

    def forward(self, x: torch.Tensor, training: bool = False, generator=None) -> torch.Tensor:
        if not torch.all(torch.isfinite(x)):
            raise ValueError("non-finite input to TCN")
        squeeze = x.dim() == 2
        if squeeze:
            x = x.unsqueeze(0)
        h = x.transpose(1, 2)  # [B, D, T]
        for block in self.blocks:
            h = block(h, training=training, generator=generator)
        h = h.transpose(1, 2)  # [B, T, F]
        return h.squeeze(0) if squeeze else h


class FrameMLPBackbone(nn.Module):
    """Per-frame MLP with the same output width as the TCN; no temporal context.

    Used by the static-inference model variant.
    """

    def __init__(self, config: TCNConfig):
        super().__init__()
        self.config = config
        f = config.n_filters
        self.fc1 = nn.Linear(config.input_dim, f)
        self.fc2 = nn.Linear(f, f)
        self.leak = config.leak
        self.dropout_p = config.dropout_p

    def forward(self, x: torch.Tensor, training: bool = False, generator=None) -> torch.Tensor:
        if not torch.all(torch.isfinite(x)):
            raise ValueError("non-finite input to backbone")
        h = torch.nn.functional.leaky_relu(self.fc1(x), self.leak)
        if training:
            h = _dropout(h, self.dropout_p, generator)
        return torch.nn.functional.leaky_relu(self.fc2(h), self.leak)


def tcn_forward(net: TCNBackbone, x, training: bool = False, seed: Optional[int] = None):
    """Functional entry point; dropout noise is drawn from `seed` when training."""
    generator = None
    if training and seed is not None:
        generator = torch.Generator()
        generator.manual_seed(seed)
    return net(torch.as_tensor(x, dtype=next(net.parameters()).dtype), training=training, generator=generator)
