"""Semi-supervised action segmentation of behavioral time series.

Supervised TCN classifier, static Gaussian-mixture deep generative baselines,
and a semi-supervised switching (non)linear dynamical system trained by
amortized variational inference, plus a simulator and evaluation metrics.
"""

from .data import (
    DatasetSplit,
    FeatureSequence,
    Standardizer,
    fit_standardizer,
    load_manifest,
    load_sequence,
    make_batches,
    position_velocity,
    select_latent_dim,
    subsample_labeled_videos,
)
from .generative import GMDGMParams, LatentTrajectory, SLDSParams, sample_sequence
from .losses import LossWeights, anneal_weight
from .metrics import ClusterReport, EvalReport
from .posteriors import PosteriorNets
from .tcn import TCNBackbone, TCNConfig, receptive_field_radius
from .training import (
    Model,
    TrainConfig,
    extract_latents,
    load_checkpoint,
    predict,
    run_experiment,
    save_checkpoint,
    train,
)

__version__ = "0.1.0"
