"""Mini-batch Adam training and evaluation of the depth networks."""
from __future__ import annotations

import csv
import io
import time
from dataclasses import asdict, dataclass, field
from typing import Iterator, Sequence

import numpy as np

from . import autodiff as ad
from .errors import ConfigurationError, TrainingDivergedError, UsageError
from .losses import LossWeights, MetricsRecord, compute_metrics, loss_depth, loss_smooth, mean_metrics
from .model import EPS_Z, inverse_to_depth
from .optim import Adam
from .scene import LABEL_MODES, RenderedPair, SparseLabelSet, augment, label_seed, sample_sparse_labels


@dataclass
class TrainConfig:
    lr: float = 1e-4
    batch_size: int = 16
    iterations: int = 5000
    n_labels: int | str = 1
    label_mode: str = "uniform-random"
    augment: bool = True
    seed: int = 0
    eval_every: int = 0
    log_every: int = 100
    depth_weight: float = 5.0
    smooth_weight: float = 2.0
    lr_decay_every: int = 0
    lr_decay: float = 1.0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigurationError("train.batch_size must be >= 1")
        if self.iterations < 0:
            raise ConfigurationError("train.iterations must be >= 0")
        if not self.lr > 0:
            raise ConfigurationError("train.lr must be positive")
        if self.n_labels != "dense" and (isinstance(self.n_labels, bool) or int(self.n_labels) < 1):
            raise ConfigurationError("train.n_labels must be a positive count or 'dense'")
        if self.label_mode not in LABEL_MODES:
            raise ConfigurationError(f"train.label_mode must be one of {LABEL_MODES}")
        if self.log_every < 1:
            raise ConfigurationError("train.log_every must be >= 1")

    @property
    def weights(self) -> LossWeights:
        return LossWeights(self.depth_weight, self.smooth_weight)


@dataclass
class Sample:
    """A rendered pair together with its fixed sparse supervision."""

    pair: RenderedPair
    labels: SparseLabelSet


def attach_labels(pairs: Sequence[RenderedPair], n_labels, mode: str = "uniform-random") -> list[Sample]:
    """Labels are seeded by ``(pair.seed, pair.index)``, so a pair always gets the same pixels for a given count."""
    return [Sample(p, sample_sparse_labels(p.depth1, n_labels, mode, label_seed(p.seed, p.index))) for p in pairs]


def _channels_first(image: np.ndarray) -> np.ndarray:
    return image[None] if image.ndim == 2 else np.moveaxis(image, -1, 0)


def stack_inputs(pairs: Sequence[RenderedPair]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """``(I1, I2, flow)`` as ``[N, C, H, W]`` arrays."""
    I1 = np.stack([_channels_first(p.image1) for p in pairs])
    I2 = np.stack([_channels_first(p.image2) for p in pairs])
    F = np.stack([np.moveaxis(p.flow12, -1, 0) for p in pairs])
    return I1, I2, F


class EpochSampler:
    """Endless stream of index batches from seeded shuffled epochs."""

    def __init__(self, n: int, batch_size: int, seed: int):
        if n < 1:
            raise UsageError("cannot sample batches from an empty dataset")
        self.n, self.batch_size = n, batch_size
        self.rng = np.random.default_rng(seed)
        self._buf = np.empty(0, dtype=np.int64)

    def __iter__(self) -> Iterator[np.ndarray]:
        return self

    def __next__(self) -> np.ndarray:
        while self._buf.size < self.batch_size:
            self._buf = np.concatenate([self._buf, self.rng.permutation(self.n)])
        out, self._buf = self._buf[: self.batch_size], self._buf[self.batch_size :]
        return out


@dataclass
class RunLog:
    config_hash: str = ""
    steps: list[int] = field(default_factory=list)
    train_loss: list[float] = field(default_factory=list)
    test: list[MetricsRecord | None] = field(default_factory=list)
    loss_history: list[float] = field(default_factory=list)
    wall_clock: float = 0.0

    def add(self, step: int, loss: float, test: MetricsRecord | None) -> None:
        if self.steps and step <= self.steps[-1]:
            raise UsageError("RunLog steps must increase")
        self.steps.append(step)
        self.train_loss.append(loss)
        self.test.append(test)

    def to_csv(self) -> str:
        """Deterministic CSV text; wall-clock is left out on purpose."""
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(["step", "train_loss_depth", "abs_inv", "abs_rel", "s_rmse", "n_pixels"])
        for s, l, t in zip(self.steps, self.train_loss, self.test):
            tail = ["", "", "", ""] if t is None else [repr(t.abs_inv), repr(t.abs_rel), repr(t.s_rmse), t.n_pixels]
            wr.writerow([s, repr(l), *tail])
        return buf.getvalue()

    def summary(self) -> dict:
        last = next((t for t in reversed(self.test) if t is not None), None)
        return {
            "config_hash": self.config_hash,
            "steps": len(self.loss_history),
            "final_train_loss_depth": self.train_loss[-1] if self.train_loss else None,
            "final_test": None if last is None else last.as_dict(),
            "wall_clock_s": self.wall_clock,
        }


def _batch(samples: Sequence[Sample], idx: np.ndarray, cfg: TrainConfig, step: int):
    pairs, labels = [], []
    for j, i in enumerate(idx):
        p, lab = samples[i].pair, samples[i].labels
        if cfg.augment:
            p, lab = augment(p, lab, np.random.SeedSequence([cfg.seed, step, j, 17]))
        pairs.append(p)
        labels.append(lab)
    return stack_inputs(pairs), labels


def train_step(model, opt: Adam, inputs, labels, weights: LossWeights) -> float:
    """One Adam step; returns the labelled-pixel depth loss before the update."""
    I1, I2, F = inputs
    opt.zero_grad()
    with ad.Tape() as tape:
        z = model(I1, I2, F)
        ld = loss_depth(z, labels)
        total = ad.mul(ld, weights.depth)
        if weights.smooth:
            total = ad.add(total, ad.mul(loss_smooth(z, I1), weights.smooth))
        tape.backward(total)
    opt.step()
    return ld.item()


def train(model, dataset: Sequence[Sample], cfg: TrainConfig | None = None, testset=None, config_hash: str = ""):
    """Run ``cfg.iterations`` Adam steps on the weighted loss.

    Returns ``(model, RunLog)``.  A non-finite loss or gradient raises
    :class:`TrainingDivergedError` carrying the last finite weights, which
    also remain loaded in ``model``.
    """
    cfg = cfg or TrainConfig()
    log = RunLog(config_hash=config_hash)
    if cfg.iterations == 0:
        return model, log
    if not dataset:
        raise UsageError("training set is empty")
    t0 = time.perf_counter()
    opt = Adam(model.parameters(), lr=cfg.lr)
    sampler = EpochSampler(len(dataset), cfg.batch_size, cfg.seed)
    window: list[float] = []
    for step in range(1, cfg.iterations + 1):
        if cfg.lr_decay_every and step > 1 and (step - 1) % cfg.lr_decay_every == 0:
            opt.state.lr *= cfg.lr_decay
        inputs, labels = _batch(dataset, next(sampler), cfg, step)
        try:
            ld = train_step(model, opt, inputs, labels, cfg.weights)
        except FloatingPointError as exc:
            raise TrainingDivergedError(f"training diverged at step {step}: {exc}", model.state_dict(), step) from exc
        log.loss_history.append(ld)
        window.append(ld)
        at_eval = cfg.eval_every and step % cfg.eval_every == 0
        if step % cfg.log_every == 0 or at_eval or step == cfg.iterations:
            test = evaluate(model, testset) if (testset and (at_eval or step == cfg.iterations)) else None
            log.add(step, float(np.mean(window)), test)
            window = []
    log.wall_clock = time.perf_counter() - t0
    return model, log


def _pairs_of(items) -> list[RenderedPair]:
    return [s.pair if isinstance(s, Sample) else s for s in items]


def predict_inverse_depth(model, pairs, batch_size: int = 32) -> np.ndarray:
    """``[N, H, W]`` raw inverse-depth predictions (float64)."""
    pairs = _pairs_of(pairs)
    out = []
    with ad.no_grad():
        for k in range(0, len(pairs), batch_size):
            z = model(*stack_inputs(pairs[k : k + batch_size]))
            out.append(np.asarray(z.data[:, 0], dtype=np.float64))
    return np.concatenate(out) if out else np.empty((0, 0, 0))


def predict_depth(model, pairs, batch_size: int = 32) -> np.ndarray:
    return inverse_to_depth(predict_inverse_depth(model, pairs, batch_size), EPS_Z)


def evaluate_images(model, testset, batch_size: int = 32, masks=None) -> list[MetricsRecord]:
    pairs = _pairs_of(testset)
    if not pairs:
        raise UsageError("test set is empty")
    pred = predict_depth(model, pairs, batch_size)
    return [compute_metrics(p.depth1, d, None if masks is None else masks[i]) for i, (p, d) in enumerate(zip(pairs, pred))]


def evaluate(model, testset, batch_size: int = 32, masks=None) -> MetricsRecord:
    """Per-image metrics over the full image, averaged over the set."""
    return mean_metrics(evaluate_images(model, testset, batch_size, masks))


def per_pixel_abs_inv(depth_gt: np.ndarray, depth_pred: np.ndarray) -> np.ndarray:
    return np.abs(1.0 / np.asarray(depth_gt) - 1.0 / np.asarray(depth_pred))


def config_record(cfg: TrainConfig) -> dict:
    return asdict(cfg)
