"""Training losses on predicted inverse depth and the evaluation metrics."""
from __future__ import annotations

import csv
import math
import os
from dataclasses import asdict, dataclass
from typing import Iterable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigurationError, EvaluationError, UsageError
from .scene import SparseLabelSet

METRICS_HEADER = ("run_id", "split", "n_labels", "abs_inv", "abs_rel", "s_rmse", "n_pixels")


@dataclass(frozen=True)
class LossWeights:
    depth: float = 5.0
    smooth: float = 2.0

    def __post_init__(self):
        if not (self.depth >= 0 and self.smooth >= 0):
            raise ConfigurationError(f"loss weights must be nonnegative, got {self.depth}, {self.smooth}")


def _as_batch(z_hat) -> Tensor:
    z = z_hat if isinstance(z_hat, Tensor) else Tensor(np.asarray(z_hat, dtype=np.float64))
    if z.ndim == 2:
        return ad.reshape(z, (1, 1) + z.shape)
    if z.ndim == 3:
        return ad.reshape(z, (z.shape[0], 1) + z.shape[1:])
    if z.ndim != 4 or z.shape[1] != 1:
        raise ConfigurationError(f"expected an inverse-depth map [N,1,H,W], got {z.shape}")
    return z


def loss_depth(z_hat, labels: SparseLabelSet | Sequence[SparseLabelSet]) -> Tensor:
    """Mean absolute inverse-depth error over the labelled pixels.

    With a batch, each image's mean is taken first, then averaged over images.
    """
    z = _as_batch(z_hat)
    n, _, h, w = z.shape
    sets = [labels] if isinstance(labels, SparseLabelSet) else list(labels)
    if len(sets) != n:
        raise UsageError(f"{len(sets)} label sets for a batch of {n}")
    flat_idx, targets, weights = [], [], []
    for i, s in enumerate(sets):
        if len(s) == 0:
            raise UsageError(f"empty label set for image {i}")
        if np.any(s.z <= 0):
            raise UsageError("label inverse depth must be positive")
        flat_idx.append(i * h * w + s.ys * w + s.xs)
        targets.append(s.z)
        weights.append(np.full(len(s), 1.0 / (len(s) * n)))
    idx = np.concatenate(flat_idx)
    picked = ad.reshape(z, (-1,))[idx]
    diff = ad.abs_(ad.sub(picked, np.concatenate(targets)))
    return ad.sum_(ad.mul(diff, np.concatenate(weights)))


def _image_batch(image, n: int, h: int, w: int) -> np.ndarray:
    I = np.asarray(image, dtype=np.float64)
    if I.ndim == 2:
        I = I[None, None]
    elif I.ndim == 3:
        I = I[None] if n == 1 and I.shape[1:] == (h, w) else I[:, None]
    if I.shape[0] != n or I.shape[2:] != (h, w):
        raise ConfigurationError(f"image shape {np.shape(image)} does not match prediction [{n},1,{h},{w}]")
    return I


def edge_weights(image, n: int, h: int, w: int) -> tuple[np.ndarray, np.ndarray]:
    """``exp(-|dI|)`` along x ``[N,1,H,W-1]`` and y ``[N,1,H-1,W]``; channels averaged."""
    I = _image_batch(image, n, h, w)
    gx = np.mean(np.abs(I[..., :, 1:] - I[..., :, :-1]), axis=1, keepdims=True)
    gy = np.mean(np.abs(I[..., 1:, :] - I[..., :-1, :]), axis=1, keepdims=True)
    return np.exp(-gx), np.exp(-gy)


def loss_smooth(z_hat, image) -> Tensor:
    """Edge-aware first-order smoothness, normalised by the pixel count.

    Forward differences; the last column (row) has zero x (y) gradient.
    ``image`` is ``[H,W]``, ``[N,H,W]`` or ``[N,C,H,W]``.
    """
    z = _as_batch(z_hat)
    n, _, h, w = z.shape
    ex, ey = edge_weights(image, n, h, w)
    dx = ad.abs_(ad.sub(z[:, :, :, 1:], z[:, :, :, :-1]))
    dy = ad.abs_(ad.sub(z[:, :, 1:, :], z[:, :, :-1, :]))
    total = ad.add(ad.sum_(ad.mul(dx, ex)), ad.sum_(ad.mul(dy, ey)))
    return ad.mul(total, 1.0 / (n * h * w))


def loss_total(z_hat, labels, image, weights: LossWeights | None = None) -> Tensor:
    weights = weights or LossWeights()
    z = _as_batch(z_hat)
    out = ad.mul(loss_depth(z, labels), weights.depth)
    if weights.smooth:
        out = ad.add(out, ad.mul(loss_smooth(z, image), weights.smooth))
    return out


# ---------------------------------------------------------------------------
# metrics


def _masked(d, d_hat, mask) -> tuple[np.ndarray, np.ndarray]:
    d = np.asarray(d, dtype=np.float64)
    d_hat = np.asarray(d_hat, dtype=np.float64)
    if d.shape != d_hat.shape:
        raise EvaluationError(f"depth shapes differ: {d.shape} vs {d_hat.shape}")
    m = np.ones(d.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    a, b = d[m], d_hat[m]
    if a.size == 0:
        raise EvaluationError("evaluation mask selects no pixels")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise EvaluationError("non-finite depth inside the evaluation mask")
    if np.any(a <= 0) or np.any(b <= 0):
        raise EvaluationError("non-positive depth inside the evaluation mask")
    return a, b


def abs_inv(d, d_hat, mask=None) -> float:
    a, b = _masked(d, d_hat, mask)
    return float(np.mean(np.abs(1.0 / a - 1.0 / b)))


def abs_rel(d, d_hat, mask=None) -> float:
    a, b = _masked(d, d_hat, mask)
    return float(np.mean(np.abs(a - b) / a))


def s_rmse(d, d_hat, mask=None) -> float:
    """Scale-invariant RMSE of ``log(d / d_hat)`` in variance form."""
    a, b = _masked(d, d_hat, mask)
    e = np.log(a / b)
    # centring first avoids cancellation in mean(e^2) - mean(e)^2
    return float(np.sqrt(np.mean((e - e.mean()) ** 2)))


@dataclass
class MetricsRecord:
    abs_inv: float
    abs_rel: float
    s_rmse: float
    n_pixels: int

    def __post_init__(self):
        for k in ("abs_inv", "abs_rel", "s_rmse"):
            v = getattr(self, k)
            if not math.isfinite(v) or v < 0:
                raise EvaluationError(f"{k} must be finite and nonnegative, got {v}")

    def as_dict(self) -> dict:
        return asdict(self)


def compute_metrics(d, d_hat, mask=None) -> MetricsRecord:
    a, _ = _masked(d, d_hat, mask)
    return MetricsRecord(abs_inv(d, d_hat, mask), abs_rel(d, d_hat, mask), s_rmse(d, d_hat, mask), int(a.size))


def mean_metrics(records: Iterable[MetricsRecord]) -> MetricsRecord:
    """Per-image metrics averaged over images; pixel counts summed."""
    records = list(records)
    if not records:
        raise EvaluationError("no metrics to average")
    return MetricsRecord(
        float(np.mean([r.abs_inv for r in records])),
        float(np.mean([r.abs_rel for r in records])),
        float(np.mean([r.s_rmse for r in records])),
        int(sum(r.n_pixels for r in records)),
    )


def append_metrics_csv(path, run_id: str, split: str, n_labels, record: MetricsRecord) -> None:
    """Append one row, writing the header when the file is new."""
    new = not os.path.exists(path) or os.path.getsize(path) == 0
    with open(path, "a", newline="") as fh:
        wr = csv.writer(fh)
        if new:
            wr.writerow(METRICS_HEADER)
        wr.writerow([run_id, split, n_labels, repr(record.abs_inv), repr(record.abs_rel), repr(record.s_rmse), record.n_pixels])


def read_metrics_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        for k in ("abs_inv", "abs_rel", "s_rmse"):
            r[k] = float(r[k])
        r["n_pixels"] = int(r["n_pixels"])
    return rows
