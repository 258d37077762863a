"""scikit-learn compatible wrappers around the functional core.

``fit`` takes high-resolution images; LR inputs are synthesized on the fly
exactly as in the CLI pipeline. ``predict`` takes LR images and returns
clamped SR outputs.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClusterMixin, RegressorMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_images, check_rows
from .data import extract_patches
from .degradation import degrade, spec_for_type, test_variant_specs
from .evaluation import psnr
from .federation import MIXED, TrainConfig, run_centralized, run_federated
from .model import ModelConfig, forward
from .partition import PRESET_PROPORTIONS, DirichletParams, build_partition, cluster_result_rows
from .rng import derive_stream


class Degrader(TransformerMixin, BaseEstimator):
    """Turn HR images into LR images with one degradation type or test combo.

    ``degradation`` is a client type (clean/blur/noise/jpeg, sampled per
    image in train mode) or a test combo name such as ``"b+n+j"``.
    """

    def __init__(self, degradation="clean", scale=4, seed=0, ranges=None, test_params=None):
        self.degradation = degradation
        self.scale = scale
        self.seed = seed
        self.ranges = ranges
        self.test_params = test_params

    def fit(self, X, y=None):
        check_images(X, multiple_of=self.scale)
        combos = test_variant_specs(self.scale, self.test_params)
        if self.degradation in combos and self.degradation not in ("blur", "noise", "jpeg"):
            self.spec_ = combos[self.degradation]
        else:
            self.spec_ = spec_for_type(self.degradation, self.scale, self.ranges)
        return self

    def transform(self, X):
        check_is_fitted(self, "spec_")
        X = check_images(X, multiple_of=self.scale)
        return np.stack([
            degrade(x, self.spec_, derive_stream(self.seed, f"noise/{i}"))
            for i, x in enumerate(X)
        ])


class SRResNetRegressor(RegressorMixin, BaseEstimator):
    """Centralized (one-client) training of the SR network."""

    def __init__(self, features=16, blocks=2, scale=4, rounds=200, local_epochs=1,
                 batch_size=16, lr=2e-4, loss="l1", patch_size=128, stride=64,
                 degradation=MIXED, seed=0):
        self.features = features
        self.blocks = blocks
        self.scale = scale
        self.rounds = rounds
        self.local_epochs = local_epochs
        self.batch_size = batch_size
        self.lr = lr
        self.loss = loss
        self.patch_size = patch_size
        self.stride = stride
        self.degradation = degradation
        self.seed = seed

    def _train_config(self, **extra):
        return TrainConfig(
            rounds=self.rounds, local_epochs=self.local_epochs, batch_size=self.batch_size,
            lr=self.lr, patch_size=self.patch_size, loss=self.loss,
            model=ModelConfig(self.features, self.blocks, self.scale), seed=self.seed, **extra,
        )

    def _patch_dataset(self, X):
        X = check_images(X, multiple_of=self.scale)
        if self.patch_size % self.scale:
            raise ValueError("patch_size must be divisible by scale")
        dataset = {}
        for i, img in enumerate(X):
            patches = extract_patches(img, self.patch_size, self.stride)
            if not patches:
                raise ValueError(f"image {i} is smaller than patch_size={self.patch_size}")
            dataset[f"{i:06d}"] = np.stack(patches)
        return dataset

    def _fit(self, dataset, config):
        return run_centralized(config, dataset, self.degradation)

    def fit(self, X, y=None):
        """Train on HR images ``X`` of shape (N,3,H,W); ``y`` is ignored."""
        config = self._train_config()
        self.weights_, self.reports_ = self._fit(self._patch_dataset(X), config)
        self.model_config_ = config.model
        return self

    def predict(self, X):
        check_is_fitted(self, "weights_")
        X = check_images(X)
        return np.stack([
            np.clip(forward(self.weights_, x[None], self.model_config_)[0], 0.0, 1.0) for x in X
        ])

    def score(self, X, y, sample_weight=None):
        """Mean PSNR (dB) of ``predict(X)`` against HR targets ``y``."""
        pred = self.predict(X)
        y = check_images(y)
        scores = [psnr(p, t) for p, t in zip(pred, y)]
        return float(np.average(scores, weights=sample_weight))


class FederatedSRRegressor(SRResNetRegressor):
    """FedAvg training where each client holds one degradation type."""

    def __init__(self, num_clients=16, partition="uniform", alpha=0.5, aggregate="weighted",
                 workers=1, features=16, blocks=2, scale=4, rounds=200, local_epochs=1,
                 batch_size=16, lr=2e-4, loss="l1", patch_size=128, stride=64, seed=0):
        self.features = features
        self.blocks = blocks
        self.scale = scale
        self.rounds = rounds
        self.local_epochs = local_epochs
        self.batch_size = batch_size
        self.lr = lr
        self.loss = loss
        self.patch_size = patch_size
        self.stride = stride
        self.seed = seed
        self.num_clients = num_clients
        self.partition = partition
        self.alpha = alpha
        self.aggregate = aggregate
        self.workers = workers

    def _proportions(self):
        if self.partition == "uniform":
            return "uniform"
        if self.partition == "dirichlet":
            if np.isscalar(self.alpha):
                return DirichletParams.symmetric(float(self.alpha))
            return DirichletParams(tuple(self.alpha))
        if isinstance(self.partition, str):
            try:
                return PRESET_PROPORTIONS[self.partition]
            except KeyError:
                raise ValueError(f"unknown partition {self.partition!r}")
        return tuple(self.partition)

    def fit(self, X, y=None):
        config = self._train_config(aggregate=self.aggregate)
        dataset = self._patch_dataset(X)
        self.partition_ = build_partition(sorted(dataset), self.num_clients, self._proportions(),
                                          derive_stream(self.seed, "partition"), self.seed)
        self.weights_, self.reports_ = run_federated(self.partition_, config, dataset, self.workers)
        self.model_config_ = config.model
        return self


class AverageLinkageClustering(ClusterMixin, BaseEstimator):
    """Agglomerative clustering (average linkage, Euclidean) down to ``n_clusters``."""

    def __init__(self, n_clusters=5):
        self.n_clusters = n_clusters

    def fit(self, X, y=None):
        X = check_rows(X)
        self.labels_ = np.asarray(cluster_result_rows(X, self.n_clusters))
        self.n_features_in_ = X.shape[1]
        return self


__all__ = ["Degrader", "SRResNetRegressor", "FederatedSRRegressor", "AverageLinkageClustering"]
