"""Command line entry point.

``sparsedepth <kind> [--config PATH] [--seed N] [--out DIR] [options]``

Every run writes into its output directory: ``config.json`` (the effective
configuration including command-line overrides), ``config_hash.txt``, CSV
results, PFM depth dumps where a model is involved and ``summary.json``.
Failures print a JSON error object on stderr (and to ``error.json`` when an
output directory is known) and exit with a nonzero code.

``SPARSEDEPTH_THREADS`` caps the BLAS thread pool; ``1`` gives
bit-reproducible runs.
"""
from __future__ import annotations

import argparse
import contextlib
import json
import os
import sys
import time
import traceback
from pathlib import Path

import numpy as np

from . import experiments as ex
from . import io as sio
from .config import EXPERIMENT_KINDS, RunConfig, config_from_dict, load_config
from .errors import ConfigurationError, SparseDepthError, UsageError
from .geometry import triangulate_depth_map
from .losses import METRICS_HEADER
from .model import build_model
from .probe import REGIMES, PoseProbe, global_features, probe_to_pose, train_pose_probe
from .scene import make_pair
from .training import attach_labels, evaluate, evaluate_images, predict_depth, stack_inputs, train

THREADS_ENV = "SPARSEDEPTH_THREADS"
SWEEP_KINDS = ("sparsity", "intrinsics", "flow", "ablation")


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sparsedepth", description="Sparse-supervision depth from flow experiments.")
    p.add_argument("kind", choices=EXPERIMENT_KINDS + ("sweep",), help="what to run")
    p.add_argument("--config", help="JSON run configuration")
    p.add_argument("--seed", type=int, help="overrides train.seed and experiment.data_seed")
    p.add_argument("--out", help="output directory (triangulate: a .pfm path)")
    p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE", help="override any configuration field")
    p.add_argument("--kind", dest="sweep_kind", choices=SWEEP_KINDS, help="sweep only: which experiment")
    p.add_argument("--count", type=int, help="generate: number of pairs (experiment.n_train)")
    p.add_argument("--checkpoint", help="model checkpoint (eval, probe, dump-filters)")
    p.add_argument("--data", help="dataset directory written by 'generate' (eval, dump-filters)")
    p.add_argument("--regime", choices=REGIMES, help="probe only: a single regime")
    p.add_argument("--pair", help="triangulate: a sample directory from 'generate' or a dataset directory")
    p.add_argument("--pose", choices=("gt", "probe"), help="triangulate: camera motion source")
    p.add_argument("--probe", help="triangulate --pose probe: output directory of a 'probe' run")
    return p


def _overrides(args) -> dict:
    ov = {}
    if args.seed is not None:
        ov["train.seed"] = args.seed
        ov["experiment.data_seed"] = args.seed
    if args.count is not None:
        ov["experiment.n_train"] = args.count
    if args.checkpoint is not None:
        ov["experiment.checkpoint"] = args.checkpoint
    if args.data is not None:
        ov["experiment.data_dir"] = args.data
    if args.regime is not None:
        ov["experiment.probe_regimes"] = [args.regime]
    if args.pair is not None:
        ov["experiment.pair_file"] = args.pair
    if args.pose is not None:
        ov["experiment.pose_source"] = args.pose
    if args.probe is not None:
        ov["experiment.probe_dir"] = args.probe
    for item in args.set:
        key, sep, val = item.partition("=")
        if not sep:
            raise UsageError(f"--set expects SECTION.KEY=VALUE, got {item!r}")
        ov[key.strip()] = _parse_value(val)
    return ov


@contextlib.contextmanager
def thread_limit():
    n = os.environ.get(THREADS_ENV)
    if not n:
        yield
        return
    try:
        k = int(n)
    except ValueError:
        raise ConfigurationError(f"{THREADS_ENV} must be an integer, got {n!r}") from None
    from threadpoolctl import threadpool_limits

    with threadpool_limits(limits=k):
        yield


# ---------------------------------------------------------------------------
# per-kind runners; each returns a summary dict


def _dump_depths(model, pairs, out: Path, count: int) -> None:
    if count <= 0:
        return
    d = sio.ensure_dir(out / "dumps")
    pred = predict_depth(model, pairs[:count])
    for p, dp in zip(pairs[:count], pred):
        sio.write_pfm(d / f"pred_{p.index:05d}.pfm", dp)
        sio.write_pfm(d / f"gt_{p.index:05d}.pfm", p.depth1)


def run_generate(cfg: RunConfig, out: Path) -> dict:
    seed = cfg.experiment.data_seed
    pairs = [make_pair(seed, i, cfg.data) for i in range(cfg.experiment.n_train)]
    sio.save_pairs(out / "data", pairs, cfg.hash, {"global_seed": seed})
    return {"count": len(pairs), "data_dir": "data"}


def run_train(cfg: RunConfig, out: Path) -> dict:
    train_pairs = ex.dataset(cfg, 0, "train")
    test_pairs = ex.dataset(cfg, 0, "test")
    model = build_model(cfg.model.kind, cfg.model_config(), seed=cfg.train.seed)
    model, log = train(model, attach_labels(train_pairs, cfg.train.n_labels, cfg.train.label_mode), cfg.train, testset=None, config_hash=cfg.hash)
    rec = evaluate(model, test_pairs)
    sio.save_checkpoint(out / "model.ckpt", model, cfg.hash)
    (out / "runlog.csv").write_text(log.to_csv(), encoding="utf-8")
    sio.write_csv(out / "metrics.csv", METRICS_HEADER, [[cfg.hash[:12], "test", cfg.train.n_labels, rec.abs_inv, rec.abs_rel, rec.s_rmse, rec.n_pixels]])
    _dump_depths(model, test_pairs, out, cfg.experiment.dump_count)
    return {"test": rec.as_dict(), "checkpoint": "model.ckpt", "runlog": log.summary()}


def _load_model(cfg: RunConfig):
    path = cfg.experiment.checkpoint
    if not path:
        raise ConfigurationError("experiment.checkpoint: a checkpoint path is required (--checkpoint)")
    return sio.load_checkpoint(path)


def _test_pairs(cfg: RunConfig):
    if cfg.experiment.data_dir:
        return sio.load_pairs(cfg.experiment.data_dir)
    return ex.dataset(cfg, 0, "test")


def run_eval(cfg: RunConfig, out: Path) -> dict:
    model, header = _load_model(cfg)
    pairs = _test_pairs(cfg)
    rec = evaluate(model, pairs)
    per = evaluate_images(model, pairs)
    rows = [[header.get("config_hash", "")[:12], "test", "", rec.abs_inv, rec.abs_rel, rec.s_rmse, rec.n_pixels]]
    sio.write_csv(out / "metrics.csv", METRICS_HEADER, rows)
    sio.write_csv(
        out / "per_image.csv",
        ("index", "abs_inv", "abs_rel", "s_rmse", "n_pixels"),
        [[p.index, r.abs_inv, r.abs_rel, r.s_rmse, r.n_pixels] for p, r in zip(pairs, per)],
    )
    _dump_depths(model, pairs, out, cfg.experiment.dump_count)
    return {"test": rec.as_dict(), "checkpoint": cfg.experiment.checkpoint}


def run_sparsity(cfg: RunConfig, out: Path) -> dict:
    res = ex.sparsity_sweep(cfg)
    sio.write_csv(out / "sparsity.csv", ex.SWEEP_HEADER, res.rows())
    ratios = {m: res.ratios(m) for m in cfg.experiment.models if 1 in cfg.experiment.levels and "dense" in cfg.experiment.levels}
    first = (cfg.experiment.models[0], cfg.experiment.levels[0])
    run = cfg.with_overrides({"model.kind": first[0], "train.n_labels": first[1]})
    _dump_depths(ex.fit_model(run, cfg.experiment.seeds[0]).model, ex.dataset(run, cfg.experiment.seeds[0], "test"), out, cfg.experiment.dump_count)
    return {"rows": sum(1 for _ in res.rows()), "ratio_1_over_dense": ratios}


def run_intrinsics(cfg: RunConfig, out: Path) -> dict:
    res = ex.intrinsics_robustness(cfg)
    sio.write_csv(out / "intrinsics.csv", ex.INTRINSICS_HEADER, res.rows())
    return {"increase": {m: res.increase(m) for m in ("global-local", "triangulation-nominal-K")}}


def run_flow(cfg: RunConfig, out: Path) -> dict:
    res = ex.flow_robustness(cfg)
    sio.write_csv(out / "flow.csv", ex.FLOW_HEADER, res.rows())
    return {"top_bin_abs_inv": {m: res.top_bin(m) for m in ex.FLOW_METHODS}}


def run_ablation(cfg: RunConfig, out: Path) -> dict:
    res = ex.ablation_study(cfg)
    sio.write_csv(out / "ablation.csv", ex.ABLATION_HEADER, res.rows())
    return {"median_abs_inv": {v: res.median(v) for v in cfg.experiment.variants}}


def run_probe(cfg: RunConfig, out: Path) -> dict:
    pretrained = None
    if cfg.experiment.checkpoint:
        model, _ = _load_model(cfg)
        pretrained = {s: model for s in cfg.experiment.seeds}
    res = ex.probe_experiment(cfg, pretrained)
    sio.write_csv(out / "pose.csv", ex.PROBE_HEADER, res.rows())
    # keep the last regime's probe for 'triangulate --pose probe'
    regime = cfg.experiment.probe_regimes[-1]
    s = cfg.experiment.seeds[0]
    run = cfg.with_overrides({"model.kind": "global-local"})
    enc = None
    if regime.startswith("pretrained"):
        enc = pretrained[s] if pretrained else ex.fit_model(run, s).model
    probe, model, _ = train_pose_probe(regime, ex.dataset(run, s, "train"), ex._probe_cfg(cfg.experiment, s), enc, run.model_config())
    np.savez(out / "probe.npz", hidden=probe.hidden, **probe.state_dict())
    sio.save_checkpoint(out / "encoder.ckpt", model, cfg.hash, {"probe_regime": regime})
    return {"median": {r: {"rot_deg": res.median(r, 0), "trans_deg": res.median(r, 1)} for r in cfg.experiment.probe_regimes}}


def load_probe(directory):
    d = Path(directory)
    if not (d / "probe.npz").exists():
        raise FileNotFoundError(f"probe weights not found: {d / 'probe.npz'}")
    z = np.load(d / "probe.npz")
    probe = PoseProbe(int(z["hidden"]))
    for k in probe.params:
        probe.params[k].data = z[k].astype(np.float64)
    encoder, _ = sio.load_checkpoint(d / "encoder.ckpt")
    return probe, encoder


def _pair_from_path(cfg: RunConfig):
    path = cfg.experiment.pair_file
    if not path:
        return make_pair(cfg.experiment.data_seed, cfg.experiment.pair_index, cfg.data)
    p = Path(path)
    root, name = (p, None) if (p / sio.MANIFEST).exists() else (p.parent, p.name)
    mf = root / sio.MANIFEST
    if not mf.exists():
        raise FileNotFoundError(f"dataset manifest not found: {mf}")
    entries = json.loads(mf.read_text(encoding="utf-8"))["samples"]
    if name is None:
        entry = entries[cfg.experiment.pair_index]
    else:
        match = [e for e in entries if e["dir"] == name]
        if not match:
            raise FileNotFoundError(f"sample {name!r} not listed in {mf}")
        entry = match[0]
    return sio.load_pair_dir(root, entry)


def run_triangulate(cfg: RunConfig, out: Path, target: Path) -> dict:
    pair = _pair_from_path(cfg)
    pose = pair.pose
    if cfg.experiment.pose_source == "probe":
        if not cfg.experiment.probe_dir:
            raise ConfigurationError("experiment.probe_dir: --probe DIR is required with --pose probe")
        probe, encoder = load_probe(cfg.experiment.probe_dir)
        pose = probe_to_pose(probe.predict(global_features(encoder, [pair]))[0])
    depth, status = triangulate_depth_map(pair.flow12, pair.intrinsics1, pair.intrinsics2, pose)
    ok = np.isfinite(depth)
    # invalid pixels carry +inf: PFM forbids NaN only
    sio.write_pfm(target, np.where(ok, depth, np.inf))
    counts = np.bincount(status.ravel(), minlength=4)
    sio.write_csv(
        out / (target.stem + "_status.csv"),
        ("status", "pixels"),
        [["ok", counts[0]], ["degenerate", counts[1]], ["at-infinity", counts[2]], ["behind-camera", counts[3]]],
    )
    return {"depth": target.name, "valid_pixels": int(ok.sum()), "pose_source": cfg.experiment.pose_source}


def run_dump_filters(cfg: RunConfig, out: Path) -> dict:
    model, _ = _load_model(cfg)
    pairs = _test_pairs(cfg)
    fv = model.filter_vector(*stack_inputs(pairs))
    g = global_features(model, pairs) if model.config.generated_filters else np.zeros((len(pairs), 0))
    np.save(out / "filters.npy", fv)
    sio.write_csv(out / "global.csv", ("index",) + tuple(f"g{i}" for i in range(g.shape[1])), [[p.index, *row] for p, row in zip(pairs, g)])
    return {"pairs": len(pairs), "n_filters": int(fv.shape[1])}


RUNNERS = {
    "generate": run_generate,
    "train": run_train,
    "eval": run_eval,
    "sparsity": run_sparsity,
    "intrinsics": run_intrinsics,
    "flow": run_flow,
    "ablation": run_ablation,
    "probe": run_probe,
    "dump-filters": run_dump_filters,
}


def run_experiment(kind: str, cfg: RunConfig, out) -> Path:
    """Run ``kind`` and write its artifacts; returns the artifact directory."""
    if kind not in EXPERIMENT_KINDS:
        raise UsageError(f"unknown experiment kind {kind!r}")
    out = Path(out)
    if kind == "triangulate":
        target = out if out.suffix == ".pfm" else out / "depth.pfm"
        out = target.parent
    sio.ensure_dir(out)
    sio.write_json(out / "config.json", cfg.to_dict())
    (out / "config_hash.txt").write_text(cfg.hash + "\n", encoding="ascii")
    t0 = time.perf_counter()
    with thread_limit():
        summary = run_triangulate(cfg, out, target) if kind == "triangulate" else RUNNERS[kind](cfg, out)
    summary = {"kind": kind, "config_hash": cfg.hash, **summary, "wall_clock_s": time.perf_counter() - t0}
    sio.write_json(out / "summary.json", summary)
    return out


def _error_payload(exc: BaseException) -> dict:
    payload = {"error": type(exc).__name__, "message": str(exc)}
    path = getattr(exc, "filename", None)
    if path:
        payload["path"] = str(path)
    elif isinstance(exc, FileNotFoundError) and exc.args:
        payload["path"] = str(exc.args[0]).split(": ", 1)[-1]
    return payload


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    out = Path(args.out) if args.out else None
    try:
        kind = args.kind
        if kind == "sweep":
            if not args.sweep_kind:
                raise UsageError("sweep needs --kind {sparsity|intrinsics|flow|ablation}")
            kind = args.sweep_kind
        cfg = load_config(args.config) if args.config else config_from_dict({})
        cfg = cfg.with_overrides(_overrides(args))
        if out is None:
            out = Path("runs") / f"{kind}-{cfg.hash[:12]}"
        result = run_experiment(kind, cfg, out)
        print(json.dumps({"status": "ok", "kind": kind, "out": str(result)}))
        return 0
    except Exception as exc:  # every failure becomes a machine-readable error
        payload = _error_payload(exc)
        if os.environ.get("SPARSEDEPTH_DEBUG"):
            payload["traceback"] = traceback.format_exc()
        print(json.dumps(payload), file=sys.stderr)
        if out is not None:
            err_dir = out.parent if out.suffix == ".pfm" else out
            with contextlib.suppress(OSError):
                sio.ensure_dir(err_dir)
                sio.write_json(err_dir / "error.json", payload)
        return 2 if isinstance(exc, (ConfigurationError, UsageError)) else 1


if __name__ == "__main__":
    sys.exit(main())
