"""Training objectives: sequence ELBOs (labeled / marginalized / semi-supervised),
static mixture-model ELBOs, the weighted classification loss, and KL annealing."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import torch

from .generative import (
    GMDGMParams,
    SLDSParams,
    categorical_kl,
    gaussian_kl,
    gaussian_logpdf,
)
from .posteriors import PosteriorNets, draw_noise


@dataclass
class LossWeights:
    alpha: float = 100.0
    kl_anneal: float = 1.0
    class_weights: Optional[torch.Tensor] = None  # [K], strictly positive

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")
        if not 0 <= self.kl_anneal <= 1:
            raise ValueError("kl_anneal must be in [0, 1]")


@dataclass
class RDistribution:
    """Per-frame class weights: exact one-hots on labeled frames, classifier rows elsewhere."""

    probs: torch.Tensor  # [T x K]
    is_labeled: torch.Tensor  # [T] bool


def build_r_distribution(classifier_probs: torch.Tensor, labels: torch.Tensor) -> RDistribution:
    labels = torch.as_tensor(labels, dtype=torch.long)
    is_labeled = labels >= 0
    one_hot = torch.zeros_like(classifier_probs)
    if is_labeled.any():
        one_hot[is_labeled] = torch.nn.functional.one_hot(
            labels[is_labeled], classifier_probs.shape[-1]
        ).to(classifier_probs.dtype)
    probs = torch.where(is_labeled.unsqueeze(-1), one_hot, classifier_probs)
    return RDistribution(probs=probs, is_labeled=is_labeled)


def anneal_weight(epoch: int, anneal_epochs: int = 100) -> float:
    """Linear ramp from 0 to 1 over `anneal_epochs`, then constant 1."""
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    return min(epoch / anneal_epochs, 1.0)


def classification_loss(probs: torch.Tensor, labels, class_weights) -> tuple[torch.Tensor, bool]:
    """Weighted cross-entropy over labeled frames; (0, False) if nothing is labeled."""
    labels = torch.as_tensor(labels, dtype=torch.long)
    mask = labels >= 0
    if not mask.any():
        return torch.zeros((), dtype=probs.dtype), False
    w = torch.as_tensor(class_weights, dtype=probs.dtype)
    wt = w[labels[mask]]
    logp = torch.log(probs[mask].gather(-1, labels[mask].unsqueeze(-1)).squeeze(-1).clamp_min(1e-300))
    return -(wt * logp).sum() / wt.sum(), True


def _encode_and_sample(x, nets, seed, training, dropout_seed):
    """Shared setup: all-class encoder moments plus the [T x K x L] reparameterized draws."""
    g_enc = _maybe_gen(training, dropout_seed, offset=1)
    mu, var = nets.encode_all(x, training=training, generator=g_enc)
    n_frames, n_classes, latent_dim = mu.shape
    eps = draw_noise(n_frames, n_classes, latent_dim, seed, dtype=mu.dtype)
    z = mu + torch.sqrt(var) * eps
    return mu, var, z


def elbo_labeled(
    x: torch.Tensor,
    y,
    nets: PosteriorNets,
    gen: SLDSParams,
    seed: int,
    training: bool = False,
    dropout_seed: Optional[int] = None,
) -> torch.Tensor:
    """Single-sample sequence ELBO with every frame's discrete state observed."""
    x = _as_tensor(nets, x)
    y = torch.as_tensor(y, dtype=torch.long)
    if (y < 0).any():
        raise ValueError("elbo_labeled requires every frame to be labeled")
    mu, var, z_all = _encode_and_sample(x, nets, seed, training, dropout_seed)
    n_frames = x.shape[0]
    idx = y.view(-1, 1, 1).expand(-1, 1, mu.shape[-1])
    mu_y = mu.gather(1, idx).squeeze(1)
    var_y = var.gather(1, idx).squeeze(1)
    z = z_all.gather(1, idx).squeeze(1)  # [T x L]

    elbo = gaussian_logpdf(x, gen.decode(z), gen.S).sum()
    elbo = elbo - gaussian_kl(mu_y[0], var_y[0], torch.zeros_like(mu_y[0]), torch.ones_like(var_y[0]))
    elbo = elbo + torch.log(gen.pi[y[0]])
    if n_frames > 1:
        for k in range(gen.n_classes):
            cur = (y[1:] == k).nonzero(as_tuple=True)[0]  # offsets into t = 2..T
            if cur.numel():
                mean = gen.dynamics_mean(z[cur], k)
                elbo = elbo - gaussian_kl(mu_y[cur + 1], var_y[cur + 1], mean, gen.Q[k]).sum()
            prev = (y[:-1] == k).nonzero(as_tuple=True)[0]
            if prev.numel():
                logits = gen.transition_logits(z[prev], k)
                logp = torch.log_softmax(logits, dim=-1)
                elbo = elbo + logp.gather(-1, y[prev + 1].unsqueeze(-1)).sum()
    return elbo


def _marginal_elbo(x, r, nets, gen, seed, kl_anneal=1.0, training=False, dropout_seed=None,
                   return_parts=False):
    """The marginalized sequence ELBO evaluated with per-frame class weights r.

    With r equal to the classifier output this is the fully unlabeled bound;
    with one-hot rows it reduces term-by-term to the labeled bound. KL-bearing
    terms (both z-KLs, both y-KLs) are scaled by kl_anneal.
    """
    mu, var, z = _encode_and_sample(x, nets, seed, training, dropout_seed)
    n_frames, n_classes, _ = mu.shape

    # (i) reconstruction, weighted over classes
    x_mean = gen.decode(z)  # [T x K x D]
    recon = (r * gaussian_logpdf(x.unsqueeze(1), x_mean, gen.S)).sum()

    # (ii) initial-frame KLs
    kl_z1 = gaussian_kl(mu[0], var[0], torch.zeros_like(mu[0]), torch.ones_like(var[0]))  # [K]
    kl_init = (r[0] * kl_z1).sum() + categorical_kl(r[0], torch.log(gen.pi))

    # (iii) dynamics KLs, double sum over (current k, previous k')
    kl_dyn = x.new_zeros(())
    kl_trans = x.new_zeros(())
    if n_frames > 1:
        for k in range(n_classes):
            mean_k = gen.dynamics_mean(z[:-1], k)  # [T-1 x K' x L]
            kl = gaussian_kl(mu[1:, k].unsqueeze(1), var[1:, k].unsqueeze(1), mean_k, gen.Q[k])
            kl_dyn = kl_dyn + (r[1:, k].unsqueeze(-1) * r[:-1] * kl).sum()
            # (iv) transition KL, conditioned on previous state k
            logp = torch.log_softmax(gen.transition_logits(z[:-1, k], k), dim=-1)  # [T-1 x K]
            kl_trans = kl_trans + (r[:-1, k] * categorical_kl(r[1:], logp)).sum()

    elbo = recon - kl_anneal * (kl_init + kl_dyn + kl_trans)
    if return_parts:
        parts = {
            "recon": float(recon.detach()),
            "kl_z": float((kl_dyn + (r[0] * kl_z1).sum()).detach()),
            "kl_y": float((kl_trans + categorical_kl(r[0], torch.log(gen.pi))).detach()),
        }
        return elbo, parts
    return elbo


def elbo_unlabeled(
    x: torch.Tensor,
    nets: PosteriorNets,
    gen: SLDSParams,
    seed: int,
    probs: Optional[torch.Tensor] = None,
    training: bool = False,
    dropout_seed: Optional[int] = None,
) -> torch.Tensor:
    """Marginalized sequence ELBO; `probs` overrides the classifier output when given."""
    x = _as_tensor(nets, x)
    if probs is None:
        g_cls = _maybe_gen(training, dropout_seed, offset=0)
        probs = torch.softmax(nets.class_logits(x, training=training, generator=g_cls), dim=-1)
    return _marginal_elbo(x, probs, nets, gen, seed, training=training, dropout_seed=dropout_seed)


def elbo_semisupervised(
    x: torch.Tensor,
    labels,
    nets: PosteriorNets,
    gen: SLDSParams,
    weights: LossWeights,
    seed: int,
    training: bool = False,
    dropout_seed: Optional[int] = None,
    return_parts: bool = False,
):
    """Marginalized ELBO with one-hot substitution on labeled frames plus the
    alpha-weighted classification term."""
    x = _as_tensor(nets, x)
    labels = torch.as_tensor(labels, dtype=torch.long)
    g_cls = _maybe_gen(training, dropout_seed, offset=0)
    q = torch.softmax(nets.class_logits(x, training=training, generator=g_cls), dim=-1)
    r = build_r_distribution(q, labels)
    out = _marginal_elbo(
        x, r.probs, nets, gen, seed, kl_anneal=weights.kl_anneal,
        training=training, dropout_seed=dropout_seed, return_parts=return_parts,
    )
    elbo, parts = out if return_parts else (out, None)
    class_term = x.new_zeros(())
    if r.is_labeled.any():
        w = weights.class_weights
        if w is None:
            w = torch.ones(q.shape[-1], dtype=q.dtype)
        w = torch.as_tensor(w, dtype=q.dtype)
        yl = labels[r.is_labeled]
        logq = torch.log(q[r.is_labeled].gather(-1, yl.unsqueeze(-1)).squeeze(-1).clamp_min(1e-300))
        class_term = weights.alpha * (w[yl] * logq).sum()
    elbo = elbo + class_term
    if return_parts:
        parts["classification"] = float(class_term.detach())
        return elbo, parts
    return elbo


def _gmdgm_marginal(x, r, nets, gen: GMDGMParams, seed, kl_anneal=1.0, training=False,
                    dropout_seed=None):
    """Per-frame mixture ELBO with class weights r.

    Reconstruction is unannealed; the z-KL and the categorical KL[r || pi]
    (which bundles log p(y) and the entropy of r) are scaled by kl_anneal.
    """
    mu, var, z = _encode_and_sample(x, nets, seed, training, dropout_seed)
    x_mean = gen.decode(z)  # [T x K x D]
    recon = (r * gaussian_logpdf(x.unsqueeze(1), x_mean, gen.S)).sum()
    kl_z = (r * gaussian_kl(mu, var, gen.f, gen.s)).sum()
    kl_y = categorical_kl(r, torch.log(gen.pi)).sum()
    return recon - kl_anneal * (kl_z + kl_y)


def gmdgm_elbo_labeled(
    x: torch.Tensor, y, nets: PosteriorNets, gen: GMDGMParams, seed: int,
    training: bool = False, dropout_seed: Optional[int] = None,
) -> torch.Tensor:
    """Static labeled bound: sum_t [ log p(x_t|z~_t) + log pi_y - KL(q(z|x,y) || p(z|y)) ]."""
    x = _as_tensor(nets, x)
    y = torch.as_tensor(y, dtype=torch.long)
    if (y < 0).any():
        raise ValueError("gmdgm_elbo_labeled requires every frame to be labeled")
    one_hot = torch.nn.functional.one_hot(y, gen.n_classes).to(x.dtype)
    return _gmdgm_marginal(x, one_hot, nets, gen, seed, training=training, dropout_seed=dropout_seed)


def gmdgm_elbo_unlabeled(
    x: torch.Tensor, nets: PosteriorNets, gen: GMDGMParams, seed: int,
    probs: Optional[torch.Tensor] = None, training: bool = False,
    dropout_seed: Optional[int] = None,
) -> torch.Tensor:
    """Static unlabeled bound: sum_k q_k * L_l(x, k) plus the entropy of q."""
    x = _as_tensor(nets, x)
    if probs is None:
        g_cls = _maybe_gen(training, dropout_seed, offset=0)
        probs = torch.softmax(nets.class_logits(x, training=training, generator=g_cls), dim=-1)
    return _gmdgm_marginal(x, probs, nets, gen, seed, training=training, dropout_seed=dropout_seed)


def gmdgm_semisupervised(
    x: torch.Tensor, labels, nets: PosteriorNets, gen: GMDGMParams,
    weights: LossWeights, seed: int, training: bool = False,
    dropout_seed: Optional[int] = None,
) -> torch.Tensor:
    x = _as_tensor(nets, x)
    labels = torch.as_tensor(labels, dtype=torch.long)
    g_cls = _maybe_gen(training, dropout_seed, offset=0)
    q = torch.softmax(nets.class_logits(x, training=training, generator=g_cls), dim=-1)
    r = build_r_distribution(q, labels)
    elbo = _gmdgm_marginal(
        x, r.probs, nets, gen, seed, kl_anneal=weights.kl_anneal,
        training=training, dropout_seed=dropout_seed,
    )
    if r.is_labeled.any():
        w = weights.class_weights
        if w is None:
            w = torch.ones(q.shape[-1], dtype=q.dtype)
        w = torch.as_tensor(w, dtype=q.dtype)
        yl = labels[r.is_labeled]
        logq = torch.log(q[r.is_labeled].gather(-1, yl.unsqueeze(-1)).squeeze(-1).clamp_min(1e-300))
        elbo = elbo + weights.alpha * (w[yl] * logq).sum()
    return elbo


def _maybe_gen(training: bool, dropout_seed: Optional[int], offset: int):
    if training and dropout_seed is not None:
        g = torch.Generator()
        g.manual_seed(dropout_seed + offset)
        return g
    return None


def _as_tensor(nets, x):
    return torch.as_tensor(x, dtype=next(nets.parameters()).dtype)
