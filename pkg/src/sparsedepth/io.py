"""PFM rasters, model checkpoints and CSV helpers."""
from __future__ import annotations

import csv
import io
import json
import os
import re
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, FormatError
from .model import GlobalLocalModel, ModelConfig, SmallEncDec, config_dict, model_kind

# ---------------------------------------------------------------------------
# PFM


@dataclass
class PfmRaster:
    """Float raster with row 0 at the top; ``[H, W]`` or ``[H, W, 3]``."""

    data: np.ndarray
    scale: float = -1.0

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float32)
        if self.data.ndim not in (2, 3) or (self.data.ndim == 3 and self.data.shape[2] != 3):
            raise FormatError(f"PFM holds [H,W] or [H,W,3] rasters, got {self.data.shape}")
        if self.scale == 0 or not np.isfinite(self.scale):
            raise FormatError("PFM scale must be finite and nonzero")

    @property
    def channels(self) -> int:
        return 1 if self.data.ndim == 2 else 3


_PFM_HEADER = re.compile(rb"\A(P[fF])\s+(\d+)\s+(\d+)\s+(\S+)\s")


def encode_pfm(raster: PfmRaster | np.ndarray) -> bytes:
    if not isinstance(raster, PfmRaster):
        raster = PfmRaster(raster)
    data = raster.data
    if np.any(np.isnan(data)):
        raise FormatError("NaN is not allowed in a PFM payload")
    h, w = data.shape[:2]
    magic = b"Pf" if raster.channels == 1 else b"PF"
    order = "<" if raster.scale < 0 else ">"
    header = magic + b"\n" + f"{w} {h}\n{raster.scale!r}\n".encode("ascii")
    payload = np.ascontiguousarray(data[::-1]).astype(order + "f4").tobytes()
    return header + payload


def decode_pfm(blob: bytes) -> PfmRaster:
    m = _PFM_HEADER.match(blob)
    if m is None:
        raise FormatError("not a PFM file: bad magic or header")
    ch = 1 if m.group(1) == b"Pf" else 3
    w, h = int(m.group(2)), int(m.group(3))
    try:
        scale = float(m.group(4))
    except ValueError as exc:
        raise FormatError(f"bad PFM scale field {m.group(4)!r}") from exc
    if scale == 0:
        raise FormatError("PFM scale field must be nonzero")
    payload = blob[m.end() :]
    need = 4 * w * h * ch
    if len(payload) != need:
        raise FormatError(f"PFM payload has {len(payload)} bytes, expected {need}")
    arr = np.frombuffer(payload, dtype=("<" if scale < 0 else ">") + "f4")
    if np.any(np.isnan(arr)):
        raise FormatError("NaN in PFM payload")
    arr = arr.reshape((h, w) if ch == 1 else (h, w, 3))[::-1]
    return PfmRaster(arr.astype(np.float32), scale)


def write_pfm(path, raster) -> None:
    Path(path).write_bytes(encode_pfm(raster))


def read_pfm(path) -> PfmRaster:
    return decode_pfm(Path(path).read_bytes())


# ---------------------------------------------------------------------------
# checkpoints

CHECKPOINT_MAGIC = b"SDCKPT\x00\x01"
CHECKPOINT_VERSION = 1


def save_checkpoint(path, model, config_hash: str = "", extra: dict | None = None) -> None:
    """Magic, 8-byte header length, JSON header, raw little-endian values."""
    state = model.state_dict()
    names = sorted(state)
    header = {
        "version": CHECKPOINT_VERSION,
        "config_hash": config_hash,
        "kind": model_kind(model),
        "seed": int(model.seed),
        "model_config": config_dict(model.config),
        "params": [{"name": k, "shape": list(state[k].shape), "dtype": state[k].dtype.str.lstrip("<>=|")} for k in names],
        "extra": extra or {},
    }
    if isinstance(model, SmallEncDec):
        header["encdec"] = {
            "enc_channels": list(model.enc_channels),
            "enc_kernels": list(model.enc_kernels),
            "dec_channels": list(model.dec_channels),
        }
    hb = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<Q", len(hb)))
        fh.write(hb)
        for k in names:
            a = state[k]
            fh.write(np.ascontiguousarray(a).astype(a.dtype.newbyteorder("<")).tobytes())


def load_checkpoint(path):
    """Returns ``(model, header)``."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    blob = path.read_bytes()
    if not blob.startswith(CHECKPOINT_MAGIC):
        raise FormatError(f"{path}: not a checkpoint (bad magic)")
    off = len(CHECKPOINT_MAGIC)
    if len(blob) < off + 8:
        raise FormatError(f"{path}: truncated header")
    (n,) = struct.unpack("<Q", blob[off : off + 8])
    off += 8
    try:
        header = json.loads(blob[off : off + n].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: corrupt header") from exc
    off += n
    if header.get("version") != CHECKPOINT_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {header.get('version')}")
    mc = dict(header["model_config"])
    for key in ("encoder_channels", "local_channels"):
        mc[key] = tuple(mc[key])
    cfg = ModelConfig(**mc)
    if header["kind"] == "global-local":
        model = GlobalLocalModel(cfg, header["seed"])
    elif header["kind"] == "small-encdec":
        e = header.get("encdec", {})
        model = SmallEncDec(cfg, header["seed"], **{k: tuple(v) for k, v in e.items()})
    else:
        raise FormatError(f"{path}: unknown model kind {header['kind']!r}")
    state = {}
    for spec in header["params"]:
        dt = np.dtype("<" + spec["dtype"])
        count = int(np.prod(spec["shape"])) if spec["shape"] else 1
        size = count * dt.itemsize
        if off + size > len(blob):
            raise FormatError(f"{path}: truncated payload at {spec['name']}")
        state[spec["name"]] = np.frombuffer(blob[off : off + size], dtype=dt).reshape(spec["shape"]).astype(dt.newbyteorder("="))
        off += size
    if off != len(blob):
        raise FormatError(f"{path}: {len(blob) - off} trailing bytes")
    try:
        model.load_state_dict(state)
    except ConfigurationError as exc:
        raise FormatError(f"{path}: {exc}") from exc
    return model, header


# ---------------------------------------------------------------------------
# CSV


def format_cell(v) -> str:
    """Shortest round-tripping text for floats; plain ``str`` otherwise."""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return "" if v is None else str(v)


def csv_text(header, rows) -> str:
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(header)
    for r in rows:
        wr.writerow([format_cell(v) for v in r])
    return buf.getvalue()


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(csv_text(header, rows))


def read_csv(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def write_json(path, obj) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, tuple):
        return list(o)
    raise TypeError(f"not JSON serialisable: {type(o).__name__}")


def ensure_dir(path) -> Path:
    p = Path(path)
    os.makedirs(p, exist_ok=True)
    return p


# ---------------------------------------------------------------------------
# datasets on disk

MANIFEST = "manifest.json"


def _pose_dict(pose) -> dict:
    return {"R": pose.R.tolist(), "t": pose.t.tolist()}


def save_pairs(directory, pairs, config_hash: str = "", extra: dict | None = None) -> Path:
    """One sub-directory of PFM rasters per pair plus a JSON manifest.

    Flow is stored as a 3-channel raster whose last channel is zero.
    """
    root = ensure_dir(directory)
    entries = []
    for p in pairs:
        name = f"sample_{p.index:05d}"
        d = ensure_dir(root / name)
        write_pfm(d / "image1.pfm", _raster(p.image1))
        write_pfm(d / "image2.pfm", _raster(p.image2))
        write_pfm(d / "depth1.pfm", p.depth1)
        flow3 = np.concatenate([p.flow12, np.zeros(p.flow12.shape[:2] + (1,))], axis=-1)
        write_pfm(d / "flow12.pfm", flow3)
        write_pfm(d / "occlusion.pfm", p.occlusion.astype(np.float32))
        entries.append(
            {
                "dir": name,
                "index": int(p.index),
                "seed": int(p.seed),
                "intrinsics1": p.intrinsics1.as_dict(),
                "intrinsics2": p.intrinsics2.as_dict(),
                "nominal_intrinsics": None if p.nominal_intrinsics is None else p.nominal_intrinsics.as_dict(),
                "pose": _pose_dict(p.pose),
                "channels": 1 if p.image1.ndim == 2 else int(p.image1.shape[2]),
            }
        )
    write_json(root / MANIFEST, {"config_hash": config_hash, "count": len(entries), "samples": entries, **(extra or {})})
    return root


def _raster(image: np.ndarray) -> np.ndarray:
    if image.ndim == 2 or image.shape[2] == 3:
        return image
    raise FormatError("only 1- or 3-channel images can be stored as PFM")


def load_pair_dir(directory, entry: dict):
    from .scene import CameraIntrinsics, PoseSE3, RenderedPair

    d = Path(directory) / entry["dir"]
    for f in ("image1.pfm", "image2.pfm", "depth1.pfm", "flow12.pfm", "occlusion.pfm"):
        if not (d / f).exists():
            raise FileNotFoundError(f"missing raster: {d / f}")

    def f64(name):
        return read_pfm(d / name).data.astype(np.float64)

    nominal = entry.get("nominal_intrinsics")
    return RenderedPair(
        image1=f64("image1.pfm"),
        image2=f64("image2.pfm"),
        depth1=f64("depth1.pfm"),
        flow12=f64("flow12.pfm")[..., :2].copy(),
        occlusion=f64("occlusion.pfm") > 0.5,
        intrinsics1=CameraIntrinsics(**entry["intrinsics1"]),
        intrinsics2=CameraIntrinsics(**entry["intrinsics2"]),
        pose=PoseSE3(np.array(entry["pose"]["R"]), np.array(entry["pose"]["t"])),
        index=int(entry["index"]),
        seed=int(entry["seed"]),
        nominal_intrinsics=None if nominal is None else CameraIntrinsics(**nominal),
    )


def load_pairs(directory) -> list:
    root = Path(directory)
    mf = root / MANIFEST
    if not mf.exists():
        raise FileNotFoundError(f"dataset manifest not found: {mf}")
    try:
        manifest = json.loads(mf.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"{mf}: invalid JSON") from exc
    return [load_pair_dir(root, e) for e in manifest["samples"]]
