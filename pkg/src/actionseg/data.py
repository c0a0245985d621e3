"""Loading, featurization, standardization, and batching of behavioral sequences."""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Optional

import numpy as np

STD_FLOOR = 1e-8


@dataclass
class FeatureSequence:
    """One recording: a [T x D] observation matrix plus optional per-frame labels.

    Labels are integers in {-1, 0..K-1}; -1 marks an unlabeled frame.
    """

    id: str
    features: np.ndarray
    sample_rate_hz: float
    labels: np.ndarray = field(default=None)

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 2 or self.features.shape[0] < 1 or self.features.shape[1] < 1:
            raise ValueError(f"features must be a [T x D] matrix with T, D >= 1, got shape {self.features.shape}")
        if not np.all(np.isfinite(self.features)):
            raise ValueError(f"sequence {self.id!r}: non-finite feature values")
        if self.sample_rate_hz <= 0:
            raise ValueError("sample_rate_hz must be positive")
        if self.labels is None:
            self.labels = np.full(self.features.shape[0], -1, dtype=np.int64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.labels.shape != (self.features.shape[0],):
            raise ValueError(
                f"sequence {self.id!r}: {self.labels.shape[0]} labels for {self.features.shape[0]} feature rows"
            )
        if np.any(self.labels < -1):
            raise ValueError(f"sequence {self.id!r}: labels must be -1 or nonnegative")

    @property
    def n_frames(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def check_labels(self, n_classes: int):
        if np.any(self.labels >= n_classes):
            bad = int(self.labels.max())
            raise ValueError(f"sequence {self.id!r}: label {bad} outside [0, {n_classes})")


@dataclass
class DatasetSplit:
    """Train/test sequences plus the number of discrete classes K."""

    train: list[FeatureSequence]
    test: list[FeatureSequence]
    n_classes: int

    def __post_init__(self):
        if self.n_classes < 2:
            raise ValueError("n_classes must be >= 2")
        train_ids = {s.id for s in self.train}
        test_ids = {s.id for s in self.test}
        if train_ids & test_ids:
            raise ValueError(f"train/test ids overlap: {sorted(train_ids & test_ids)}")
        for seq in self.train + self.test:
            seq.check_labels(self.n_classes)


@dataclass
class Standardizer:
    """Per-column z-scoring statistics fit on training data."""

    mean: np.ndarray
    std: np.ndarray

    def apply(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=np.float64) - self.mean) / self.std

    def inverse(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x, dtype=np.float64) * self.std + self.mean


def load_sequence(
    features_path,
    labels_path=None,
    sample_rate_hz: float = 1.0,
    seq_id: Optional[str] = None,
    header: bool = False,
) -> FeatureSequence:
    """Load a feature CSV (one frame per row) and an optional label CSV.

    A missing labels file means every frame is unlabeled (-1).
    """
    features_path = Path(features_path)
    try:
        features = np.loadtxt(features_path, delimiter=",", skiprows=1 if header else 0, ndmin=2)
    except ValueError as e:
        raise ValueError(f"{features_path}: non-numeric cell ({e})") from e
    labels = None
    if labels_path is not None:
        labels_path = Path(labels_path)
        try:
            raw = np.loadtxt(labels_path, delimiter=",", ndmin=1)
        except ValueError as e:
            raise ValueError(f"{labels_path}: non-numeric label ({e})") from e
        if raw.ndim != 1 or raw.shape[0] != features.shape[0]:
            raise ValueError(
                f"{labels_path}: {raw.shape[0] if raw.ndim == 1 else raw.shape} labels "
                f"for {features.shape[0]} feature rows"
            )
        labels = raw.astype(np.int64)
        if not np.allclose(raw, labels):
            raise ValueError(f"{labels_path}: labels must be integers")
    return FeatureSequence(
        id=seq_id or features_path.stem,
        features=features,
        sample_rate_hz=sample_rate_hz,
        labels=labels,
    )


def position_velocity(x: np.ndarray) -> np.ndarray:
    """Concatenate positions with first differences; the first row's velocity is zero."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("expected a [T x D] matrix")
    vel = np.zeros_like(x)
    vel[1:] = np.diff(x, axis=0)
    return np.concatenate([x, vel], axis=1)


def fit_standardizer(train: list[FeatureSequence]) -> Standardizer:
    """Per-column mean/std over all concatenated training frames (population std, floored)."""
    if not train:
        raise ValueError("empty training set")
    stacked = np.concatenate([s.features for s in train], axis=0)
    mean = stacked.mean(axis=0)
    std = stacked.std(axis=0)
    return Standardizer(mean=mean, std=np.maximum(std, STD_FLOOR))


def apply_standardizer(s: Standardizer, x: np.ndarray) -> np.ndarray:
    return s.apply(x)


def select_latent_dim(train_features: np.ndarray, variance_threshold: float = 0.95) -> int:
    """Smallest number of principal components whose cumulative variance ratio meets the threshold."""
    if not 0 < variance_threshold <= 1:
        raise ValueError("variance_threshold must be in (0, 1]")
    x = np.asarray(train_features, dtype=np.float64)
    x = x - x.mean(axis=0)
    cov = x.T @ x / max(x.shape[0], 1)
    eigvals = np.linalg.eigvalsh(cov)[::-1]
    eigvals = np.clip(eigvals, 0.0, None)
    total = eigvals.sum()
    if total <= 0:
        return 1
    ratios = np.cumsum(eigvals) / total
    return int(np.searchsorted(ratios, variance_threshold - 1e-12) + 1)


def subsample_labeled_videos(
    train: list[FeatureSequence], n_videos: int, seed: int
) -> list[FeatureSequence]:
    """Keep labels only for a random subset of sequences; the rest become fully unlabeled."""
    if not 1 <= n_videos <= len(train):
        raise ValueError(f"n_videos must be in [1, {len(train)}], got {n_videos}")
    rng = np.random.default_rng(seed)
    keep = set(rng.choice(len(train), size=n_videos, replace=False).tolist())
    out = []
    for i, seq in enumerate(train):
        if i in keep:
            out.append(seq)
        else:
            stripped = copy.copy(seq)
            stripped.labels = np.full(seq.n_frames, -1, dtype=np.int64)
            out.append(stripped)
    return out


def make_batches(
    train: list[FeatureSequence],
    batch_size: int = 8,
    window: int = 1000,
    seed: int = 0,
) -> Iterator[tuple[np.ndarray, np.ndarray, np.ndarray]]:
    """Yield (features [B x W x D], labels [B x W], mask [B x W]) batches for one epoch.

    Windows tile each sequence from its start with stride `window`; the trailing
    partial window is zero-padded with mask 0. Window order is shuffled by seed;
    every frame appears exactly once per epoch.
    """
    if not train:
        raise ValueError("empty training set")
    d = train[0].n_features
    slots = [(i, start) for i, seq in enumerate(train) for start in range(0, seq.n_frames, window)]
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(slots))
    for chunk_start in range(0, len(order), batch_size):
        chunk = order[chunk_start : chunk_start + batch_size]
        b = len(chunk)
        feats = np.zeros((b, window, d), dtype=np.float64)
        labels = np.full((b, window), -1, dtype=np.int64)
        mask = np.zeros((b, window), dtype=np.int64)
        for j, slot in enumerate(chunk):
            i, start = slots[slot]
            seq = train[i]
            n = min(window, seq.n_frames - start)
            feats[j, :n] = seq.features[start : start + n]
            labels[j, :n] = seq.labels[start : start + n]
            mask[j, :n] = 1
        yield feats, labels, mask


def load_manifest(path, header: bool = False) -> DatasetSplit:
    """Read a key-value dataset manifest and load every sequence it lists.

    Expected keys::

        n_classes = 3
        sequence.<id>.features = path/to/features.csv
        sequence.<id>.labels = path/to/labels.csv     (optional)
        sequence.<id>.sample_rate_hz = 70
        sequence.<id>.split = train | test
    """
    from .config import read_keyvalue_file

    path = Path(path)
    kv = read_keyvalue_file(path)
    if "n_classes" not in kv:
        raise ValueError(f"{path}: manifest missing n_classes")
    n_classes = int(kv["n_classes"])
    seq_keys: dict[str, dict[str, str]] = {}
    for key, value in kv.items():
        if key.startswith("sequence."):
            _, seq_id, attr = key.split(".", 2)
            seq_keys.setdefault(seq_id, {})[attr] = value
    train, test = [], []
    base = path.parent
    for seq_id, attrs in seq_keys.items():
        if "features" not in attrs or "split" not in attrs:
            raise ValueError(f"{path}: sequence {seq_id!r} missing features or split")
        seq = load_sequence(
            base / attrs["features"],
            base / attrs["labels"] if "labels" in attrs else None,
            sample_rate_hz=float(attrs.get("sample_rate_hz", 1.0)),
            seq_id=seq_id,
            header=header,
        )
        if attrs["split"] == "train":
            train.append(seq)
        elif attrs["split"] == "test":
            test.append(seq)
        else:
            raise ValueError(f"{path}: sequence {seq_id!r} has unknown split {attrs['split']!r}")
    return DatasetSplit(train=train, test=test, n_classes=n_classes)
