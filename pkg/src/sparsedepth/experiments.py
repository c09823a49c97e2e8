"""Experiment drivers: sparsity sweep, intrinsics and flow robustness,
ablations and the pose probe.

Replicate ``s`` of an experiment uses training data seeded by
``experiment.data_seed + s``, a disjoint test stream, and model and batch
seeds ``s``.  Trained models are memoised per process on
``(config hash, replicate, corruption flag)`` so experiments sharing a
configuration share their models.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .config import RunConfig, VARIANTS
from .errors import ConfigurationError
from .geometry import TriangulationStatus, triangulate_depth_map, triangulate_inverse_depth_map
from .losses import MetricsRecord, compute_metrics, mean_metrics
from .model import ModelConfig, build_model
from .probe import ProbeConfig, ProbeRegime, eval_pose_probe, global_features, probe_to_pose, train_pose_probe
from .scene import RenderedPair, corrupt_flow, make_pair
from .training import RunLog, Sample, attach_labels, evaluate, evaluate_images, predict_inverse_depth, train

TEST_STREAM_OFFSET = 1_000_003
METRICS = ("abs_inv", "abs_rel", "s_rmse")

_DATA_CACHE: dict = {}
_MODEL_CACHE: dict = {}


def clear_caches() -> None:
    _DATA_CACHE.clear()
    _MODEL_CACHE.clear()


# ---------------------------------------------------------------------------
# data and models


def _data_key(cfg: RunConfig) -> str:
    import json

    return json.dumps(dataclasses.asdict(cfg.data), sort_keys=True, default=list)


def dataset(cfg: RunConfig, seed: int, split: str) -> list[RenderedPair]:
    """Training or test pairs of replicate ``seed`` (memoised)."""
    if split not in ("train", "test"):
        raise ConfigurationError(f"split must be 'train' or 'test', got {split!r}")
    exp = cfg.experiment
    base = exp.data_seed + seed + (TEST_STREAM_OFFSET if split == "test" else 0)
    count = exp.n_train if split == "train" else exp.n_test
    key = (_data_key(cfg), base, count)
    if key not in _DATA_CACHE:
        _DATA_CACHE[key] = [make_pair(base, i, cfg.data) for i in range(count)]
    return _DATA_CACHE[key]


def corrupt_pairs(pairs: Sequence[RenderedPair], cfg: RunConfig, stream: int) -> tuple[list[RenderedPair], list[np.ndarray]]:
    """Corrupted copies of ``pairs`` and the per-pixel corruption magnitudes."""
    exp = cfg.experiment
    out, mags = [], []
    for p in pairs:
        ss = np.random.SeedSequence([p.seed, p.index, stream, 31])
        f, mag = corrupt_flow(p.flow12, ss, exp.flow_sigma, exp.flow_outlier_frac, exp.flow_outlier_mag)
        out.append(p.replace(flow12=f))
        mags.append(mag)
    return out, mags


def variant_config(config: ModelConfig, variant: str) -> ModelConfig:
    """Model configuration of an ablation variant."""
    if variant not in VARIANTS:
        raise ConfigurationError(f"unknown ablation variant {variant!r}")
    changes = {
        "full": {},
        "no-image-pair": {"use_images": False},
        "no-coordconv": {"use_coords": False},
        "no-global-module": {"generated_filters": False},
        "no-flow": {"local_input": "images"},
    }[variant]
    return dataclasses.replace(config, **changes)


@dataclass
class FitResult:
    model: object
    log: RunLog
    test: MetricsRecord


def fit_model(cfg: RunConfig, seed: int, corrupted: bool = False) -> FitResult:
    """Train ``cfg.model`` on replicate ``seed`` and evaluate it on the test split."""
    key = (cfg.hash, seed, corrupted)
    if key in _MODEL_CACHE:
        return _MODEL_CACHE[key]
    train_pairs = dataset(cfg, seed, "train")
    test_pairs = dataset(cfg, seed, "test")
    if corrupted:
        train_pairs, _ = corrupt_pairs(train_pairs, cfg, stream=1)
        test_pairs, _ = corrupt_pairs(test_pairs, cfg, stream=2)
    samples = attach_labels(train_pairs, cfg.train.n_labels, cfg.train.label_mode)
    model = build_model(cfg.model.kind, cfg.model_config(), seed=seed)
    tcfg = dataclasses.replace(cfg.train, seed=seed)
    model, log = train(model, samples, tcfg, config_hash=cfg.hash)
    res = FitResult(model, log, evaluate(model, test_pairs))
    _MODEL_CACHE[key] = res
    return res


def _median(xs) -> float:
    return float(np.median(np.asarray(xs, dtype=np.float64)))


def _level_name(level) -> str:
    return str(level)


# ---------------------------------------------------------------------------
# sparsity sweep


@dataclass
class SweepResult:
    records: dict = field(default_factory=dict)  # (model, level, seed) -> MetricsRecord

    def median(self, model: str, level, metric: str = "abs_inv") -> float:
        vals = [getattr(r, metric) for (m, l, _), r in self.records.items() if m == model and l == level]
        return _median(vals)

    def ratios(self, model: str, sparse=1, dense="dense", metric: str = "abs_inv") -> list[float]:
        seeds = sorted({s for (m, l, s) in self.records if m == model})
        return [
            getattr(self.records[(model, sparse, s)], metric) / getattr(self.records[(model, dense, s)], metric)
            for s in seeds
        ]

    def rows(self):
        models = list(dict.fromkeys(m for m, _, _ in self.records))
        levels = list(dict.fromkeys(l for _, l, _ in self.records))
        seeds = sorted({s for _, _, s in self.records})
        for m in models:
            for lev in levels:
                for metric in METRICS:
                    vals = [getattr(self.records[(m, lev, s)], metric) for s in seeds]
                    yield [m, _level_name(lev), metric, _median(vals), ";".join(repr(float(v)) for v in vals)]


SWEEP_HEADER = ("model", "level", "metric", "median", "per_seed")


def sparsity_sweep(cfg: RunConfig) -> SweepResult:
    """Both models at every supervision level, identical data per replicate."""
    exp = cfg.experiment
    out = SweepResult()
    for kind in exp.models:
        for level in exp.levels:
            run = cfg.with_overrides({"model.kind": kind, "train.n_labels": level})
            for s in exp.seeds:
                out.records[(kind, level, s)] = fit_model(run, s).test
    return out


# ---------------------------------------------------------------------------
# intrinsics robustness


def depth_bounds(cfg: RunConfig) -> tuple[float, float]:
    """Depth range the generator can produce after normalising ``||t|| = 1``."""
    (d_lo, d_hi), (t_lo, t_hi) = cfg.data.scene.depth_range, cfg.data.translation_range
    return d_lo / t_hi, d_hi / t_lo


def triangulation_metrics(pairs: Sequence[RenderedPair], use_nominal: bool, bounds: tuple[float, float] | None = None) -> MetricsRecord:
    """Per-image metrics of the triangulation baseline over its valid pixels.

    With ``use_nominal`` both views are assumed to have the nominal
    intrinsics, which is wrong when the data were rendered with perturbed ones.
    ``bounds`` clips triangulated depth to a known range; without it a few
    near-epipole pixels with depth close to zero dominate Abs-Inv.
    """
    recs = []
    for p in pairs:
        K1 = p.nominal_intrinsics if use_nominal else p.intrinsics1
        K2 = p.nominal_intrinsics if use_nominal else p.intrinsics2
        d, status = triangulate_depth_map(p.flow12, K1, K2, p.pose)
        ok = status == TriangulationStatus.OK
        if bounds is not None:
            d = np.clip(d, *bounds)
        if np.any(ok):
            recs.append(compute_metrics(p.depth1, np.where(ok, d, 1.0), ok))
    return mean_metrics(recs)


INTRINSICS_HEADER = ("method", "condition", "metric", "median", "per_seed")


@dataclass
class IntrinsicsResult:
    records: dict = field(default_factory=dict)  # (method, condition, seed) -> MetricsRecord

    def increase(self, method: str, metric: str = "abs_inv") -> list[float]:
        seeds = sorted({s for (_, _, s) in self.records})
        return [
            getattr(self.records[(method, "perturbed", s)], metric) / getattr(self.records[(method, "reference", s)], metric)
            - 1.0
            for s in seeds
        ]

    def rows(self):
        seeds = sorted({s for (_, _, s) in self.records})
        for method in ("global-local", "triangulation-nominal-K"):
            for cond in ("reference", "perturbed"):
                for metric in METRICS:
                    vals = [getattr(self.records[(method, cond, s)], metric) for s in seeds]
                    yield [method, cond, metric, _median(vals), ";".join(repr(float(v)) for v in vals)]
            inc = self.increase(method)
            yield [method, "relative-increase", "abs_inv", _median(inc), ";".join(repr(float(v)) for v in inc)]


def intrinsics_robustness(cfg: RunConfig) -> IntrinsicsResult:
    """Global-local vs triangulation with nominal K, with and without
    per-pair perturbed intrinsics in training and test data."""
    exp = cfg.experiment
    base = cfg.with_overrides({"model.kind": "global-local", "data.intrinsics_maxfrac": 0.0})
    pert = base.with_overrides({"data.intrinsics_maxfrac": exp.intrinsics_maxfrac})
    out = IntrinsicsResult()
    for s in exp.seeds:
        for cond, run in (("reference", base), ("perturbed", pert)):
            out.records[("global-local", cond, s)] = fit_model(run, s).test
            out.records[("triangulation-nominal-K", cond, s)] = triangulation_metrics(dataset(run, s, "test"), True, depth_bounds(run))
    return out


# ---------------------------------------------------------------------------
# flow robustness

FLOW_HEADER = ("method", "bin", "flow_err_lo", "flow_err_hi", "mean_flow_err", "abs_inv", "n_pixels", "seed")
FLOW_METHODS = ("global-local", "triangulation-gt-pose", "triangulation-probe-pose")


def bin_edges(errors: np.ndarray, n_bins: int) -> np.ndarray:
    """Quantile edges of the nonzero errors; bin 0 holds the zero-error pixels."""
    nz = errors[errors > 0]
    if nz.size == 0:
        return np.zeros(n_bins + 1)
    return np.quantile(nz, np.linspace(0.0, 1.0, n_bins + 1))


def assign_bins(errors: np.ndarray, edges: np.ndarray) -> np.ndarray:
    b = np.searchsorted(edges, errors, side="right")
    b = np.clip(b, 1, len(edges) - 1)
    b[errors <= 0] = 0
    return b


@dataclass
class FlowResult:
    curves: dict = field(default_factory=dict)  # (method, seed) -> list of (lo, hi, mean_err, abs_inv, n)

    def top_bin(self, method: str) -> list[float]:
        seeds = sorted({s for (_, s) in self.curves})
        return [self.curves[(method, s)][-1][3] for s in seeds]

    def rows(self):
        for (method, seed), curve in sorted(self.curves.items(), key=lambda kv: (FLOW_METHODS.index(kv[0][0]), kv[0][1])):
            for i, (lo, hi, me, ai, n) in enumerate(curve):
                yield [method, i, lo, hi, me, ai, n, seed]


def _curve(per_pixel: np.ndarray, errors: np.ndarray, bins: np.ndarray, edges: np.ndarray):
    out = []
    for b in range(len(edges)):
        m = (bins == b) & np.isfinite(per_pixel)
        lo, hi = (0.0, 0.0) if b == 0 else (float(edges[b - 1]), float(edges[b]))
        if not np.any(m):
            out.append((lo, hi, float("nan"), float("nan"), 0))
            continue
        out.append((lo, hi, float(errors[m].mean()), float(per_pixel[m].mean()), int(m.sum())))
    return out


def flow_robustness(cfg: RunConfig, with_probe: bool = True) -> FlowResult:
    """Binned per-pixel Abs-Inv against normalised flow error.

    The flow error of a pixel is the norm of its injected corruption divided
    by the image width.  Triangulation uses the true intrinsics with either
    the ground-truth pose or the pose read out by a probe.
    """
    exp = cfg.experiment
    run = cfg.with_overrides({"model.kind": "global-local"})
    out = FlowResult()
    for s in exp.seeds:
        fit = fit_model(run, s, corrupted=exp.train_with_corrupted_flow)
        test, mags = corrupt_pairs(dataset(run, s, "test"), run, stream=2)
        w = run.data.width
        errors = np.concatenate([m.ravel() / w for m in mags])
        edges = bin_edges(errors, exp.flow_bins)
        bins = assign_bins(errors, edges)
        inv_gt = np.concatenate([(1.0 / p.depth1).ravel() for p in test])
        inv_gl = predict_inverse_depth(fit.model, test)
        inv_gl = np.maximum(inv_gl, 1e-3).ravel()
        out.curves[("global-local", s)] = _curve(np.abs(inv_gt - inv_gl), errors, bins, edges)
        tri = [triangulate_inverse_depth_map(p.flow12, p.intrinsics1, p.intrinsics2, p.pose)[0].ravel() for p in test]
        out.curves[("triangulation-gt-pose", s)] = _curve(np.abs(inv_gt - np.concatenate(tri)), errors, bins, edges)
        if with_probe:
            train_pairs, _ = corrupt_pairs(dataset(run, s, "train"), run, stream=1)
            probe, enc, _ = train_pose_probe("pretrained-mlp", train_pairs, _probe_cfg(exp, s), pretrained=fit.model)
            outs = probe.predict(global_features(enc, test))
            tri = []
            for p, o in zip(test, outs):
                pose = probe_to_pose(o)
                tri.append(triangulate_inverse_depth_map(p.flow12, p.intrinsics1, p.intrinsics2, pose)[0].ravel())
            out.curves[("triangulation-probe-pose", s)] = _curve(np.abs(inv_gt - np.concatenate(tri)), errors, bins, edges)
    return out


# ---------------------------------------------------------------------------
# ablation

ABLATION_HEADER = ("variant", "metric", "median", "per_seed")


@dataclass
class AblationResult:
    records: dict = field(default_factory=dict)  # (variant, seed) -> MetricsRecord

    def median(self, variant: str, metric: str = "abs_inv") -> float:
        return _median([getattr(r, metric) for (v, _), r in self.records.items() if v == variant])

    def rows(self):
        variants = list(dict.fromkeys(v for v, _ in self.records))
        seeds = sorted({s for _, s in self.records})
        for v in variants:
            for metric in METRICS:
                vals = [getattr(self.records[(v, s)], metric) for s in seeds]
                yield [v, metric, _median(vals), ";".join(repr(float(x)) for x in vals)]


def ablate(cfg: RunConfig, variant: str, seed: int) -> MetricsRecord:
    base = cfg.with_overrides({"model.kind": "global-local"})
    mc = variant_config(base.model_config(), variant)
    run = base.with_overrides({f"model.{k}": v for k, v in dataclasses.asdict(mc).items()})
    return fit_model(run, seed).test


def ablation_study(cfg: RunConfig) -> AblationResult:
    out = AblationResult()
    for v in cfg.experiment.variants:
        for s in cfg.experiment.seeds:
            out.records[(v, s)] = ablate(cfg, v, s)
    return out


# ---------------------------------------------------------------------------
# pose probe

PROBE_HEADER = ("regime", "seed", "rot_deg", "trans_deg")


def _probe_cfg(exp, seed: int) -> ProbeConfig:
    return ProbeConfig(exp.probe_hidden, exp.probe_lr, exp.probe_iterations, exp.probe_batch_size, seed)


@dataclass
class ProbeResult:
    records: dict = field(default_factory=dict)  # (regime, seed) -> (rot, trans)

    def median(self, regime: str, which: int = 1) -> float:
        return _median([v[which] for (r, _), v in self.records.items() if r == regime])

    def rows(self):
        for (regime, seed), (rot, trans) in self.records.items():
            yield [regime, seed, rot, trans]
        regimes = list(dict.fromkeys(r for r, _ in self.records))
        for r in regimes:
            yield [r, "median", self.median(r, 0), self.median(r, 1)]


def probe_experiment(cfg: RunConfig, pretrained: dict | None = None) -> ProbeResult:
    """All requested regimes per replicate; pretrained encoders come from
    depth training with ``cfg.train`` (or from ``pretrained[seed]``)."""
    exp = cfg.experiment
    run = cfg.with_overrides({"model.kind": "global-local"})
    out = ProbeResult()
    for s in exp.seeds:
        train_pairs = dataset(run, s, "train")
        test_pairs = dataset(run, s, "test")
        for name in exp.probe_regimes:
            regime = ProbeRegime.parse(name)
            enc = None
            if regime.init == "pretrained":
                enc = pretrained[s] if pretrained and s in pretrained else fit_model(run, s).model
            probe, model, _ = train_pose_probe(regime, train_pairs, _probe_cfg(exp, s), pretrained=enc, model_config=run.model_config())
            out.records[(name, s)] = eval_pose_probe(probe, model, test_pairs)
    return out


__all__ = [
    "dataset",
    "fit_model",
    "variant_config",
    "sparsity_sweep",
    "intrinsics_robustness",
    "flow_robustness",
    "ablate",
    "ablation_study",
    "probe_experiment",
    "triangulation_metrics",
    "depth_bounds",
    "clear_caches",
]
