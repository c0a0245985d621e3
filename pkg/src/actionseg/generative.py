"""Switching dynamical-system and Gaussian-mixture generative models.

Log-densities and closed-form KLs used inside the variational objectives, plus
ancestral sampling for synthetic-data experiments.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn

LOG_2PI = math.log(2.0 * math.pi)


@dataclass
class LatentTrajectory:
    """A sampled (y, z, x) path: discrete states, continuous latents, observations."""

    y: np.ndarray  # [T] int
    z: np.ndarray  # [T x L]
    x: np.ndarray  # [T x D]


class StateMLP(nn.Module):
    """One-hidden-layer dense network; hidden width equals the latent dimension."""

    def __init__(self, in_dim: int, hidden_dim: int, out_dim: int, leak: float = 0.01):
        super().__init__()
        self.fc1 = nn.Linear(in_dim, hidden_dim)
        self.fc2 = nn.Linear(hidden_dim, out_dim)
        self.leak = leak

    def forward(self, z):
        return self.fc2(torch.nn.functional.leaky_relu(self.fc1(z), self.leak))


class SLDSParams(nn.Module):
    """Generative parameters for the switching (non)linear dynamical system.

    Linear variant: per-state dynamics z_t ~ N(A_k z_{t-1} + b_k, diag Q_k) and
    per-previous-state recurrent transition logits R_k z_{t-1} + r_k.
    Nonlinear variant replaces both linear maps with one-hidden-layer networks.
    The decoder g (shared across states) maps latents to observation means with
    state-independent diagonal noise S.
    """

    def __init__(self, n_classes: int, latent_dim: int, obs_dim: int, nonlinear: bool = False):
        super().__init__()
        if n_classes < 1 or latent_dim < 1 or obs_dim < 1:
            raise ValueError("n_classes, latent_dim, obs_dim must be >= 1")
        self.n_classes = n_classes
        self.latent_dim = latent_dim
        self.obs_dim = obs_dim
        self.nonlinear = nonlinear
        k, l, d = n_classes, latent_dim, obs_dim
        if nonlinear:
            self.dyn_nets = nn.ModuleList([StateMLP(l, l, l) for _ in range(k)])
            self.trans_nets = nn.ModuleList([StateMLP(l, l, k) for _ in range(k)])
        else:
            eye = torch.eye(l).unsqueeze(0).repeat(k, 1, 1)
            self.A = nn.Parameter(eye + 0.01 * torch.randn(k, l, l))
            self.b = nn.Parameter(torch.zeros(k, l))
            self.R = nn.Parameter(0.01 * torch.randn(k, k, l))
            self.r = nn.Parameter(torch.zeros(k, k))
        self.log_Q = nn.Parameter(torch.zeros(k, l))
        self.log_S = nn.Parameter(torch.zeros(d))
        self.decoder = StateMLP(l, l, d)
        self.register_buffer("pi", torch.full((k,), 1.0 / k))

    @property
    def Q(self):
        return torch.exp(self.log_Q)

    @property
    def S(self):
        return torch.exp(self.log_S)

    def dynamics_mean(self, z_prev: torch.Tensor, k: int) -> torch.Tensor:
        """Mean of p(z_t | z_{t-1}, y_t = k); z_prev may carry leading batch dims."""
        if self.nonlinear:
            return self.dyn_nets[k](z_prev)
        return z_prev @ self.A[k].T + self.b[k]

    def transition_logits(self, z_prev: torch.Tensor, k_prev: int) -> torch.Tensor:
        """Unnormalized logits of p(y_t | y_{t-1} = k_prev, z_{t-1})."""
        if self.nonlinear:
            return self.trans_nets[k_prev](z_prev)
        return z_prev @ self.R[k_prev].T + self.r[k_prev]

    def decode(self, z: torch.Tensor) -> torch.Tensor:
        return self.decoder(z)


class GMDGMParams(nn.Module):
    """Static Gaussian-mixture generative model: p(z|y) = N(f_y, diag s_y), p(x|z) = N(g(z), S)."""

    def __init__(self, n_classes: int, latent_dim: int, obs_dim: int):
        super().__init__()
        self.n_classes = n_classes
        self.latent_dim = latent_dim
        self.obs_dim = obs_dim
        self.f = nn.Parameter(torch.randn(n_classes, latent_dim))
        self.log_s = nn.Parameter(torch.zeros(n_classes, latent_dim))
        self.log_S = nn.Parameter(torch.zeros(obs_dim))
        self.decoder = StateMLP(latent_dim, latent_dim, obs_dim)
        self.register_buffer("pi", torch.full((n_classes,), 1.0 / n_classes))

    @property
    def s(self):
        return torch.exp(self.log_s)

    @property
    def S(self):
        return torch.exp(self.log_S)

    def decode(self, z):
        return self.decoder(z)


def gaussian_logpdf(x: torch.Tensor, mean: torch.Tensor, var: torch.Tensor) -> torch.Tensor:
    """Diagonal-Gaussian log-density, summed over the last dimension."""
    return -0.5 * (LOG_2PI + torch.log(var) + (x - mean) ** 2 / var).sum(-1)


def gaussian_kl(mu_q, var_q, mu_p, var_p) -> torch.Tensor:
    """KL(N(mu_q, diag var_q) || N(mu_p, diag var_p)), summed over the last dimension."""
    return 0.5 * (
        torch.log(var_p) - torch.log(var_q) + (var_q + (mu_q - mu_p) ** 2) / var_p - 1.0
    ).sum(-1)


def categorical_kl(q: torch.Tensor, log_p: torch.Tensor) -> torch.Tensor:
    """KL(q || p) for simplex rows q and log-probabilities log_p (0 log 0 := 0)."""
    qlogq = torch.where(q > 0, q * torch.log(q.clamp_min(1e-300)), torch.zeros_like(q))
    return (qlogq - q * log_p).sum(-1)


def transition_probs(params: SLDSParams, y_prev: int, z_prev: torch.Tensor) -> torch.Tensor:
    return torch.softmax(params.transition_logits(z_prev, y_prev), dim=-1)


def dynamics_logpdf(params: SLDSParams, z_t, z_prev, k: int) -> torch.Tensor:
    return gaussian_logpdf(z_t, params.dynamics_mean(z_prev, k), params.Q[k])


def dynamics_kl(q_mean, q_var, params: SLDSParams, z_prev, k: int) -> torch.Tensor:
    return gaussian_kl(q_mean, q_var, params.dynamics_mean(z_prev, k), params.Q[k])


def emission_logpdf(params, x_t, z_t) -> torch.Tensor:
    return gaussian_logpdf(x_t, params.decode(z_t), params.S)


def _sample_categorical(probs: torch.Tensor, generator: torch.Generator) -> int:
    u = torch.rand((), generator=generator, dtype=probs.dtype)
    return int(torch.searchsorted(torch.cumsum(probs, 0), u).clamp(max=probs.numel() - 1))


@torch.no_grad()
def sample_sequence(params: SLDSParams, n_frames: int, seed: int) -> LatentTrajectory:
    """Ancestral sampling: y_1, z_1, x_1, then y_t | (y_{t-1}, z_{t-1}), z_t | (z_{t-1}, y_t), x_t | z_t."""
    if n_frames < 1:
        raise ValueError("n_frames must be >= 1")
    g = torch.Generator()
    g.manual_seed(seed)
    dtype = params.log_Q.dtype
    k, l, d = params.n_classes, params.latent_dim, params.obs_dim
    y = np.zeros(n_frames, dtype=np.int64)
    z = torch.zeros(n_frames, l, dtype=dtype)
    x = torch.zeros(n_frames, d, dtype=dtype)
    q_std = torch.sqrt(params.Q)
    s_std = torch.sqrt(params.S)
    y[0] = _sample_categorical(params.pi, g)
    z[0] = torch.randn(l, generator=g, dtype=dtype)
    x[0] = params.decode(z[0]) + s_std * torch.randn(d, generator=g, dtype=dtype)
    for t in range(1, n_frames):
        probs = transition_probs(params, int(y[t - 1]), z[t - 1])
        y[t] = _sample_categorical(probs, g)
        mean = params.dynamics_mean(z[t - 1], int(y[t]))
        z[t] = mean + q_std[int(y[t])] * torch.randn(l, generator=g, dtype=dtype)
        x[t] = params.decode(z[t]) + s_std * torch.randn(d, generator=g, dtype=dtype)
    return LatentTrajectory(y=y, z=z.numpy(), x=x.numpy())


def gmdgm_prior_logpdf(params: GMDGMParams, z: torch.Tensor, k: int) -> torch.Tensor:
    return gaussian_logpdf(z, params.f[k], params.s[k])


@torch.no_grad()
def gmdgm_sample(params: GMDGMParams, n: int, seed: int):
    """Draw n i.i.d. (y, z, x) triples from the static mixture model."""
    g = torch.Generator()
    g.manual_seed(seed)
    dtype = params.f.dtype
    y = np.zeros(n, dtype=np.int64)
    z = torch.zeros(n, params.latent_dim, dtype=dtype)
    for i in range(n):
        y[i] = _sample_categorical(params.pi, g)
        z[i] = params.f[y[i]] + torch.sqrt(params.s[y[i]]) * torch.randn(
            params.latent_dim, generator=g, dtype=dtype
        )
    x = params.decode(z) + torch.sqrt(params.S) * torch.randn(
        n, params.obs_dim, generator=g, dtype=dtype
    )
    return y, z.numpy(), x.numpy()


def init_nonlinear_from_linear(
    params: SLDSParams, A, b, R, r, shift: float = 1e3
) -> None:
    """Set the nonlinear variant's networks to reproduce given linear maps exactly.

    Uses the identity-first-layer trick: with a large positive pre-activation
    shift the leaky ReLU stays in its linear region, so the two-layer network
    computes W2 z + (W2*shift + c2). Exact for trajectories with |z| < shift.
    """
    if not params.nonlinear:
        raise ValueError("params must be the nonlinear variant")
    A = torch.as_tensor(A, dtype=params.log_Q.dtype)
    b = torch.as_tensor(b, dtype=params.log_Q.dtype)
    R = torch.as_tensor(R, dtype=params.log_Q.dtype)
    r = torch.as_tensor(r, dtype=params.log_Q.dtype)
    l = params.latent_dim
    shift_vec = torch.full((l,), shift, dtype=params.log_Q.dtype)
    with torch.no_grad():
        for k in range(params.n_classes):
            for net, w, c in ((params.dyn_nets[k], A[k], b[k]), (params.trans_nets[k], R[k], r[k])):
                net.fc1.weight.copy_(torch.eye(l))
                net.fc1.bias.copy_(shift_vec)
                net.fc2.weight.copy_(w)
                net.fc2.bias.copy_(c - w @ shift_vec)


def save_slds_params(params: SLDSParams, path) -> None:
    from .container import write_container

    manifest = {
        "kind": "slds_params",
        "n_classes": str(params.n_classes),
        "latent_dim": str(params.latent_dim),
        "obs_dim": str(params.obs_dim),
        "nonlinear": str(int(params.nonlinear)),
    }
    write_container(path, manifest, dict(params.state_dict()))


def load_slds_params(path) -> SLDSParams:
    from .container import read_container

    manifest, tensors, _ = read_container(path)
    if manifest.get("kind") != "slds_params":
        raise ValueError(f"{path} is not a dynamics-parameter file")
    params = SLDSParams(
        int(manifest["n_classes"]),
        int(manifest["latent_dim"]),
        int(manifest["obs_dim"]),
        nonlinear=bool(int(manifest["nonlinear"])),
    ).double()
    params.load_state_dict(tensors)
    return params


def well_separated_params(
    n_classes: int = 3,
    latent_dim: int = 2,
    obs_dim: int = 4,
    self_prob: float = 0.95,
    dynamics_noise: float = 0.01,
    emission_noise: float = 0.01,
    seed: int = 0,
) -> SLDSParams:
    """Build linear SLDS parameters with distinct rotation/decay dynamics per state.

    States share the emission decoder, so they are distinguishable only through
    their latent dynamics. Transitions ignore z (R = 0) with a self-transition
    probability of `self_prob`.
    """
    torch.manual_seed(seed)
    params = SLDSParams(n_classes, latent_dim, obs_dim, nonlinear=False).double()
    with torch.no_grad():
        angles = np.linspace(0.6, -0.6, n_classes)
        decays = np.linspace(0.995, 0.9, n_classes)
        for k in range(n_classes):
            theta = float(angles[k])
            a = float(decays[k]) * torch.eye(latent_dim, dtype=torch.float64)
            if latent_dim >= 2:
                a[:2, :2] = 0.995 * torch.tensor(
                    [[math.cos(theta), -math.sin(theta)], [math.sin(theta), math.cos(theta)]],
                    dtype=torch.float64,
                )
            params.A[k] = a
            params.b[k].zero_()
        params.R.zero_()
        off = math.log((1.0 - self_prob) / max(n_classes - 1, 1))
        params.r.fill_(off)
        params.r += torch.eye(n_classes, dtype=torch.float64) * (math.log(self_prob) - off)
        params.log_Q.fill_(math.log(dynamics_noise))
        params.log_S.fill_(math.log(emission_noise))
        # decoder: identity hidden layer held in the leaky-linear region plus a
        # well-conditioned random read-out, so observations retain the latents
        shift = 100.0
        params.decoder.fc1.weight.copy_(torch.eye(latent_dim, dtype=torch.float64))
        params.decoder.fc1.bias.fill_(shift)
        w = torch.randn(obs_dim, latent_dim, dtype=torch.float64)
        if obs_dim >= latent_dim:
            w, _ = torch.linalg.qr(w)
            w = w * math.sqrt(obs_dim / latent_dim)
        params.decoder.fc2.weight.copy_(w)
        params.decoder.fc2.bias.copy_(-w @ torch.full((latent_dim,), shift, dtype=torch.float64))
    return params
