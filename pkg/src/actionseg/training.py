"""Optimization loop, model-variant dispatch, checkpointing, and seeding."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np
import torch

from . import losses
from .container import read_container, write_container
from .data import (
    DatasetSplit,
    FeatureSequence,
    Standardizer,
    fit_standardizer,
    make_batches,
    select_latent_dim,
    subsample_labeled_videos,
)
from .generative import GMDGMParams, SLDSParams
from .metrics import f1_scores
from .posteriors import PosteriorNets
from .tcn import TCNConfig

VARIANTS = ("tcn", "gmdgm", "gmdgm_tcn", "s3lds", "s3nlds")
CHECKPOINT_VERSION = 1


@dataclass
class TrainConfig:
    model_variant: str = "tcn"
    learning_rate: float = 1e-4
    n_epochs: int = 500
    batch_size: int = 8
    window: int = 1000
    alpha: float = 100.0
    anneal_epochs: int = 100
    seed: int = 0
    latent_dim: str | int = "auto-pca-0.95"
    n_blocks: int = 2
    n_lags: int = 4
    n_filters: int = 32
    dropout_p: float = 0.10

    def __post_init__(self):
        if self.model_variant not in VARIANTS:
            raise ValueError(f"model_variant must be one of {VARIANTS}")
        if self.learning_rate < 0 or self.n_epochs < 0 or self.batch_size < 1 or self.window < 1:
            raise ValueError("invalid optimizer/batching settings")

    def tcn_config(self, input_dim: int) -> TCNConfig:
        return TCNConfig(
            input_dim=input_dim,
            n_blocks=self.n_blocks,
            n_lags=self.n_lags,
            n_filters=self.n_filters,
            dropout_p=self.dropout_p,
        )

    def to_dict(self) -> dict[str, str]:
        return {
            "model_variant": self.model_variant,
            "learning_rate": repr(self.learning_rate),
            "n_epochs": str(self.n_epochs),
            "batch_size": str(self.batch_size),
            "window": str(self.window),
            "alpha": repr(self.alpha),
            "anneal_epochs": str(self.anneal_epochs),
            "seed": str(self.seed),
            "latent_dim": str(self.latent_dim),
            "n_blocks": str(self.n_blocks),
            "n_lags": str(self.n_lags),
            "n_filters": str(self.n_filters),
            "dropout_p": repr(self.dropout_p),
        }

    @classmethod
    def from_dict(cls, kv: dict[str, str]) -> "TrainConfig":
        known = {f.name for f in cls.__dataclass_fields__.values()}
        unknown = set(kv) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        kwargs: dict = {}
        for key, value in kv.items():
            if key == "model_variant":
                kwargs[key] = value
            elif key in ("learning_rate", "alpha", "dropout_p"):
                kwargs[key] = float(value)
            elif key == "latent_dim":
                kwargs[key] = value if value.startswith("auto") else int(value)
            else:
                kwargs[key] = int(value)
        return cls(**kwargs)


@dataclass
class Model:
    """A trained model bundle: config, networks, generative params, and standardizer."""

    config: TrainConfig
    n_classes: int
    obs_dim: int
    latent_dim: int
    nets: PosteriorNets
    gen: Optional[torch.nn.Module]
    standardizer: Standardizer
    class_weights: np.ndarray
    history: list[dict] = field(default_factory=list)


def build_model(config: TrainConfig, n_classes: int, obs_dim: int, latent_dim: int) -> Model:
    """Construct an untrained model with seeded initialization in 64-bit precision."""
    torch.manual_seed(config.seed)
    temporal = config.model_variant != "gmdgm"
    nets = PosteriorNets(
        config.tcn_config(obs_dim), n_classes, latent_dim, temporal=temporal
    ).double()
    gen: Optional[torch.nn.Module] = None
    if config.model_variant in ("s3lds", "s3nlds"):
        gen = SLDSParams(
            n_classes, latent_dim, obs_dim, nonlinear=config.model_variant == "s3nlds"
        ).double()
    elif config.model_variant in ("gmdgm", "gmdgm_tcn"):
        gen = GMDGMParams(n_classes, latent_dim, obs_dim).double()
    return Model(
        config=config,
        n_classes=n_classes,
        obs_dim=obs_dim,
        latent_dim=latent_dim,
        nets=nets,
        gen=gen,
        standardizer=Standardizer(mean=np.zeros(obs_dim), std=np.ones(obs_dim)),
        class_weights=np.ones(n_classes),
    )


def compute_class_weights(train: list[FeatureSequence], n_classes: int) -> np.ndarray:
    """w_k proportional to 1/count_k, normalized to mean 1; unseen classes use count 1."""
    counts = np.zeros(n_classes)
    for seq in train:
        labeled = seq.labels[seq.labels >= 0]
        counts += np.bincount(labeled, minlength=n_classes)
    inv = 1.0 / np.maximum(counts, 1.0)
    return inv / inv.mean()


def _sequence_loss(model: Model, x: torch.Tensor, labels: np.ndarray, weights: losses.LossWeights,
                   seed: int, dropout_seed: int):
    """Per-frame training loss (to minimize) for one cropped sequence."""
    variant = model.config.model_variant
    n = x.shape[0]
    if variant == "tcn":
        g = torch.Generator()
        g.manual_seed(dropout_seed)
        probs = torch.softmax(model.nets.class_logits(x, training=True, generator=g), dim=-1)
        loss, any_labeled = losses.classification_loss(probs, labels, weights.class_weights)
        parts = {"classification": float(loss.detach()), "recon": 0.0, "kl_z": 0.0, "kl_y": 0.0}
        return (loss if any_labeled else loss * 0.0), parts
    if variant in ("s3lds", "s3nlds"):
        elbo, parts = losses.elbo_semisupervised(
            x, labels, model.nets, model.gen, weights, seed,
            training=True, dropout_seed=dropout_seed, return_parts=True,
        )
        return -elbo / n, {k: v / n for k, v in parts.items()}
    elbo = losses.gmdgm_semisupervised(
        x, labels, model.nets, model.gen, weights, seed,
        training=True, dropout_seed=dropout_seed,
    )
    return -elbo / n, {"recon": 0.0, "kl_z": 0.0, "kl_y": 0.0, "classification": 0.0}


def train(config: TrainConfig, dataset: DatasetSplit) -> Model:
    """Run Adam over windowed batches; returns the final-epoch model with history."""
    if config.model_variant == "tcn":
        n_labeled = sum(int((s.labels >= 0).sum()) for s in dataset.train)
        if n_labeled == 0:
            raise ValueError("supervised tcn variant requires labeled frames")
    standardizer = fit_standardizer(dataset.train)
    train_std = [
        FeatureSequence(
            id=s.id,
            features=standardizer.apply(s.features),
            sample_rate_hz=s.sample_rate_hz,
            labels=s.labels,
        )
        for s in dataset.train
    ]
    obs_dim = train_std[0].n_features
    if isinstance(config.latent_dim, int):
        latent_dim = config.latent_dim
    else:
        threshold = float(config.latent_dim.rsplit("-", 1)[-1]) if "-" in str(config.latent_dim) else 0.95
        stacked = np.concatenate([s.features for s in train_std], axis=0)
        latent_dim = select_latent_dim(stacked, threshold)
    model = build_model(config, dataset.n_classes, obs_dim, latent_dim)
    model.standardizer = standardizer
    model.class_weights = compute_class_weights(dataset.train, dataset.n_classes)

    opt = torch.optim.Adam(
        list(model.nets.parameters()) + (list(model.gen.parameters()) if model.gen else []),
        lr=config.learning_rate, betas=(0.9, 0.999), eps=1e-8,
    )
    cw = torch.as_tensor(model.class_weights, dtype=torch.float64)
    for epoch in range(config.n_epochs):
        weights = losses.LossWeights(
            alpha=config.alpha,
            kl_anneal=losses.anneal_weight(epoch, config.anneal_epochs),
            class_weights=cw,
        )
        epoch_loss = 0.0
        epoch_parts = {"recon": 0.0, "kl_z": 0.0, "kl_y": 0.0, "classification": 0.0}
        n_batches = 0
        batches = make_batches(
            train_std, batch_size=config.batch_size, window=config.window,
            seed=_mix(config.seed, epoch, 0),
        )
        for step, (feats, labels, mask) in enumerate(batches):
            opt.zero_grad()
            batch_loss = 0.0
            total_frames = int(mask.sum())
            for j in range(feats.shape[0]):
                n_valid = int(mask[j].sum())
                x = torch.as_tensor(feats[j, :n_valid], dtype=torch.float64)
                loss_j, parts = _sequence_loss(
                    model, x, labels[j, :n_valid], weights,
                    seed=_mix(config.seed, epoch, step * 1000 + j + 1),
                    dropout_seed=_mix(config.seed, epoch, step * 1000 + j + 500_000),
                )
                if not torch.isfinite(loss_j):
                    bad = [k for k, v in parts.items() if not np.isfinite(v)]
                    raise RuntimeError(
                        f"non-finite loss at epoch {epoch}, step {step} "
                        f"(offending terms: {bad or ['total']})"
                    )
                scale = n_valid / total_frames
                batch_loss = batch_loss + loss_j * scale
                for key in epoch_parts:
                    epoch_parts[key] += parts.get(key, 0.0) * scale
            if isinstance(batch_loss, torch.Tensor) and batch_loss.requires_grad:
                batch_loss.backward()
                opt.step()
                batch_loss = batch_loss.detach()
            epoch_loss += float(batch_loss)
            n_batches += 1
        row = {"epoch": epoch, "loss": epoch_loss / n_batches, "anneal": weights.kl_anneal}
        row.update({k: v / n_batches for k, v in epoch_parts.items()})
        model.history.append(row)
    return model


def _mix(seed: int, epoch: int, step: int) -> int:
    return (seed * 1_000_003 + epoch * 10_007 + step) % (2**63)


@torch.no_grad()
def predict(model: Model, features: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Standardize, classify in eval mode, argmax. Returns (labels [T], probs [T x K])."""
    features = np.asarray(features, dtype=np.float64)
    if features.shape[1] != model.obs_dim:
        raise ValueError(f"expected {model.obs_dim} features, got {features.shape[1]}")
    x = torch.as_tensor(model.standardizer.apply(features), dtype=torch.float64)
    probs = torch.softmax(model.nets.class_logits(x, training=False), dim=-1)
    return probs.argmax(dim=-1).numpy(), probs.numpy()


@torch.no_grad()
def extract_latents(model: Model, features: np.ndarray) -> np.ndarray:
    """Backbone output for the supervised TCN; posterior z-mean at the argmax class otherwise."""
    features = np.asarray(features, dtype=np.float64)
    x = torch.as_tensor(model.standardizer.apply(features), dtype=torch.float64)
    if model.config.model_variant == "tcn":
        return model.nets.classifier_backbone(x, training=False).numpy()
    probs = torch.softmax(model.nets.class_logits(x, training=False), dim=-1)
    y_hat = probs.argmax(dim=-1)
    mu, _ = model.nets.encode_all(x, training=False)
    idx = y_hat.view(-1, 1, 1).expand(-1, 1, mu.shape[-1])
    return mu.gather(1, idx).squeeze(1).numpy()


def evaluate_split(model: Model, sequences: list[FeatureSequence], n_classes: int):
    """Pool predictions over a split and return (macro_f1, pred, true, probs)."""
    if not sequences:
        raise ValueError("empty evaluation split")
    preds, trues, all_probs = [], [], []
    for seq in sequences:
        pred, probs = predict(model, seq.features)
        preds.append(pred)
        trues.append(seq.labels)
        all_probs.append(probs)
    pred = np.concatenate(preds)
    true = np.concatenate(trues)
    probs = np.concatenate(all_probs)
    _, macro = f1_scores(pred, true, n_classes)
    return macro, pred, true, probs


def run_experiment(
    config: TrainConfig,
    dataset: DatasetSplit,
    n_seeds: int = 5,
    n_labeled_videos: Optional[int] = None,
) -> dict:
    """Train n_seeds models (optionally on random labeled-video subsets) and
    summarize test macro-F1 with mean and population standard deviation."""
    if n_seeds < 1:
        raise ValueError("n_seeds must be >= 1")
    scores = []
    for s in range(n_seeds):
        cfg = replace(config, seed=config.seed + s)
        train_seqs = dataset.train
        if n_labeled_videos is not None:
            train_seqs = subsample_labeled_videos(dataset.train, n_labeled_videos, seed=cfg.seed)
        split = DatasetSplit(train=train_seqs, test=dataset.test, n_classes=dataset.n_classes)
        model = train(cfg, split)
        macro, _, _, _ = evaluate_split(model, dataset.test, dataset.n_classes)
        scores.append(macro)
    scores = np.asarray(scores)
    return {
        "f1_scores": scores.tolist(),
        "mean_f1": float(scores.mean()),
        "std_f1": float(scores.std()),  # population std, matching n-seed error bars
    }


# -- checkpoint container ----------------------------------------------------


def _state_tensors(model: Model) -> dict[str, torch.Tensor]:
    tensors = {f"nets.{k}": v for k, v in model.nets.state_dict().items()}
    if model.gen is not None:
        tensors.update({f"gen.{k}": v for k, v in model.gen.state_dict().items()})
    tensors["standardizer.mean"] = torch.as_tensor(model.standardizer.mean, dtype=torch.float64)
    tensors["standardizer.std"] = torch.as_tensor(model.standardizer.std, dtype=torch.float64)
    tensors["class_weights"] = torch.as_tensor(model.class_weights, dtype=torch.float64)
    return tensors


def save_checkpoint(model: Model, path) -> None:
    """Write a versioned container: manifest (canonical key-value text), raw
    little-endian 64-bit tensors with named shapes, and the training history."""
    manifest: dict[str, str] = {"format_version": str(CHECKPOINT_VERSION)}
    for key, value in model.config.to_dict().items():
        manifest[f"config.{key}"] = value
    manifest["model.n_classes"] = str(model.n_classes)
    manifest["model.obs_dim"] = str(model.obs_dim)
    manifest["model.latent_dim"] = str(model.latent_dim)
    history_cols = ["epoch", "loss", "recon", "kl_z", "kl_y", "classification", "anneal"]
    history_lines = [",".join(history_cols)]
    for row in model.history:
        history_lines.append(",".join(repr(row[c]) for c in history_cols))
    write_container(
        path, manifest, _state_tensors(model),
        extra_files={"history.csv": "\n".join(history_lines) + "\n"},
    )


def load_checkpoint(path) -> Model:
    manifest, tensors, extra = read_container(path)
    if int(manifest.pop("format_version")) != CHECKPOINT_VERSION:
        raise ValueError("unsupported checkpoint format version")
    config = TrainConfig.from_dict(
        {k[len("config."):]: v for k, v in manifest.items() if k.startswith("config.")}
    )
    model = build_model(
        config,
        n_classes=int(manifest["model.n_classes"]),
        obs_dim=int(manifest["model.obs_dim"]),
        latent_dim=int(manifest["model.latent_dim"]),
    )
    model.nets.load_state_dict(
        {k[len("nets."):]: v for k, v in tensors.items() if k.startswith("nets.")}
    )
    if model.gen is not None:
        model.gen.load_state_dict(
            {k[len("gen."):]: v for k, v in tensors.items() if k.startswith("gen.")}
        )
    model.standardizer = Standardizer(
        mean=tensors["standardizer.mean"].numpy(),
        std=tensors["standardizer.std"].numpy(),
    )
    model.class_weights = tensors["class_weights"].numpy()
    history = []
    history_text = extra["history.csv"].strip().splitlines()
    cols = history_text[0].split(",")
    for line in history_text[1:]:
        values = line.split(",")
        history.append({c: (int(v) if c == "epoch" else float(v)) for c, v in zip(cols, values)})
    model.history = history
    return model
