"""Input checks shared by the estimator wrappers and the CLI."""
from __future__ import annotations

from typing import Sequence

import numpy as np

from .errors import ConfigurationError
from .scene import RenderedPair, SparseLabelSet


def check_pairs(X) -> list[RenderedPair]:
    """A non-empty sequence of same-sized :class:`RenderedPair` objects."""
    if isinstance(X, RenderedPair):
        X = [X]
    try:
        pairs = list(X)
    except TypeError:
        raise ConfigurationError(f"expected a sequence of RenderedPair, got {type(X).__name__}") from None
    if not pairs:
        raise ConfigurationError("expected at least one image pair")
    for i, p in enumerate(pairs):
        if not isinstance(p, RenderedPair):
            raise ConfigurationError(f"item {i} is {type(p).__name__}, not RenderedPair")
    shape = pairs[0].shape
    for i, p in enumerate(pairs):
        if p.shape != shape:
            raise ConfigurationError(f"pair {i} has shape {p.shape}, expected {shape}")
        check_finite(p.flow12, f"pair {i} flow")
        check_finite(p.image1, f"pair {i} image1")
        check_finite(p.image2, f"pair {i} image2")
    return pairs


def check_finite(a, name: str = "array") -> np.ndarray:
    arr = np.asarray(a)
    if not np.all(np.isfinite(arr)):
        raise ConfigurationError(f"{name} contains non-finite values")
    return arr


def check_depth(d, name: str = "depth") -> np.ndarray:
    arr = check_finite(np.asarray(d, dtype=np.float64), name)
    if np.any(arr <= 0):
        raise ConfigurationError(f"{name} must be positive")
    return arr


def check_labels(y, pairs: Sequence[RenderedPair]) -> list[SparseLabelSet]:
    labels = list(y)
    if len(labels) != len(pairs):
        raise ConfigurationError(f"{len(labels)} label sets for {len(pairs)} pairs")
    for i, (lab, p) in enumerate(zip(labels, pairs)):
        if not isinstance(lab, SparseLabelSet):
            raise ConfigurationError(f"label set {i} is {type(lab).__name__}, not SparseLabelSet")
        h, w = p.shape
        if len(lab) == 0:
            raise ConfigurationError(f"label set {i} is empty")
        if np.any((lab.xs < 0) | (lab.xs >= w) | (lab.ys < 0) | (lab.ys >= h)):
            raise ConfigurationError(f"label set {i} has pixels outside the {w}x{h} image")
        if np.any(~np.isfinite(lab.z)) or np.any(lab.z <= 0):
            raise ConfigurationError(f"label set {i} needs positive finite inverse depths")
    return labels


def check_spatial_size(h: int, w: int, multiple: int = 16) -> None:
    if h % multiple or w % multiple:
        raise ConfigurationError(f"image size {w}x{h} must be a multiple of {multiple} in both directions")
