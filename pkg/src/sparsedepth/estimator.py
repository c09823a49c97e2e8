"""scikit-learn style wrappers around the depth networks.

``X`` is a sequence of :class:`~sparsedepth.scene.RenderedPair`.  ``y`` is
optional: a sequence of :class:`~sparsedepth.scene.SparseLabelSet`; when it
is omitted, ``n_labels`` pixels per pair are drawn from the pair's ground
truth.  ``predict`` returns depth maps ``[N, H, W]``; ``score`` is the
negated mean Abs-Inv, so larger is better.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.exceptions import NotFittedError

from .losses import MetricsRecord
from .model import ModelConfig, build_model
from .training import Sample, TrainConfig, attach_labels, evaluate, predict_depth, predict_inverse_depth, train
from .validation import check_labels, check_pairs, check_spatial_size


class _DepthEstimator(RegressorMixin, BaseEstimator):
    _kind = "global-local"

    def _model_config(self) -> ModelConfig:
        return ModelConfig()

    def _train_config(self) -> TrainConfig:
        return TrainConfig(
            lr=self.lr,
            batch_size=self.batch_size,
            iterations=self.iterations,
            n_labels=self.n_labels,
            label_mode=self.label_mode,
            augment=self.augment,
            seed=self.random_state,
            depth_weight=self.depth_weight,
            smooth_weight=self.smooth_weight,
        )

    def fit(self, X, y=None):
        pairs = check_pairs(X)
        check_spatial_size(*pairs[0].shape)
        cfg = self._train_config()
        if y is None:
            samples = attach_labels(pairs, cfg.n_labels, cfg.label_mode)
        else:
            samples = [Sample(p, lab) for p, lab in zip(pairs, check_labels(y, pairs))]
        self.model_ = build_model(self._kind, self._model_config(), seed=self.random_state)
        self.model_, self.log_ = train(self.model_, samples, cfg)
        self.n_features_in_ = int(np.prod(pairs[0].shape))
        return self

    def _check_fitted(self):
        if not hasattr(self, "model_"):
            raise NotFittedError(f"{type(self).__name__} is not fitted yet; call fit first")

    def predict(self, X) -> np.ndarray:
        """Depth maps ``[N, H, W]`` (inverse depth clamped below at 1e-3)."""
        self._check_fitted()
        return predict_depth(self.model_, check_pairs(X))

    def predict_inverse(self, X) -> np.ndarray:
        self._check_fitted()
        return predict_inverse_depth(self.model_, check_pairs(X))

    def evaluate(self, X) -> MetricsRecord:
        self._check_fitted()
        return evaluate(self.model_, check_pairs(X))

    def score(self, X, y=None, sample_weight=None) -> float:
        return -self.evaluate(X).abs_inv


class GlobalLocalDepthEstimator(_DepthEstimator):
    """Hypernetwork model; the boolean switches select ablation variants."""

    _kind = "global-local"

    def __init__(
        self,
        n_labels=1,
        lr=1e-4,
        batch_size=16,
        iterations=5000,
        augment=True,
        label_mode="uniform-random",
        depth_weight=5.0,
        smooth_weight=2.0,
        use_images=True,
        use_coords=True,
        generated_filters=True,
        local_input="flow",
        random_state=0,
    ):
        self.n_labels = n_labels
        self.lr = lr
        self.batch_size = batch_size
        self.iterations = iterations
        self.augment = augment
        self.label_mode = label_mode
        self.depth_weight = depth_weight
        self.smooth_weight = smooth_weight
        self.use_images = use_images
        self.use_coords = use_coords
        self.generated_filters = generated_filters
        self.local_input = local_input
        self.random_state = random_state

    def _model_config(self) -> ModelConfig:
        return ModelConfig(
            use_images=self.use_images,
            use_coords=self.use_coords,
            generated_filters=self.generated_filters,
            local_input=self.local_input,
        )


class SmallEncDecDepthEstimator(_DepthEstimator):
    """Encoder-decoder baseline."""

    _kind = "small-encdec"

    def __init__(
        self,
        n_labels=1,
        lr=1e-4,
        batch_size=16,
        iterations=5000,
        augment=True,
        label_mode="uniform-random",
        depth_weight=5.0,
        smooth_weight=2.0,
        random_state=0,
    ):
        self.n_labels = n_labels
        self.lr = lr
        self.batch_size = batch_size
        self.iterations = iterations
        self.augment = augment
        self.label_mode = label_mode
        self.depth_weight = depth_weight
        self.smooth_weight = smooth_weight
        self.random_state = random_state
