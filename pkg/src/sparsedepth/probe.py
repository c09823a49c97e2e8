"""Supervised camera-motion readout from the global parameters.

A small MLP maps the 6-d global vector to a quaternion and a translation
direction.  Four regimes combine the encoder initialisation (random or
taken from a depth-trained model) with the trained scope (probe only, or
probe and encoder together).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigurationError, DegenerateConfigurationError, UsageError
from .geometry import rotation_angle_error, translation_angle_error
from .model import GlobalLocalModel, ModelConfig, kaiming_bound
from .optim import Adam
from .scene import PoseSE3, RenderedPair
from .training import EpochSampler, stack_inputs

INITS = ("scratch", "pretrained")
SCOPES = ("mlp-only", "full")
REGIMES = ("scratch-mlp", "pretrained-mlp", "scratch-full", "pretrained-full")


@dataclass(frozen=True)
class ProbeRegime:
    init: str = "scratch"
    scope: str = "mlp-only"

    def __post_init__(self):
        if self.init not in INITS or self.scope not in SCOPES:
            raise ConfigurationError(f"unknown probe regime {self.init!r}/{self.scope!r}")

    @classmethod
    def parse(cls, name: str) -> "ProbeRegime":
        if name not in REGIMES:
            raise ConfigurationError(f"probe regime must be one of {REGIMES}, got {name!r}")
        init, scope = name.split("-")
        return cls(init, "mlp-only" if scope == "mlp" else "full")

    @property
    def name(self) -> str:
        return f"{self.init}-{'mlp' if self.scope == 'mlp-only' else 'full'}"


@dataclass
class ProbeConfig:
    hidden: int = 256
    lr: float = 1e-4
    iterations: int = 2000
    batch_size: int = 16
    seed: int = 0

    def __post_init__(self):
        if self.hidden < 1 or self.batch_size < 1 or self.iterations < 0 or not self.lr > 0:
            raise ConfigurationError("probe config needs hidden >= 1, batch_size >= 1, iterations >= 0, lr > 0")


# ---------------------------------------------------------------------------
# rotation parameterisation


def quaternion_to_rotation(q) -> np.ndarray:
    """Rotation matrix of a (not necessarily unit) quaternion ``(w, x, y, z)``."""
    q = np.asarray(q, dtype=np.float64)
    n = np.linalg.norm(q)
    if n < 1e-8:
        raise DegenerateConfigurationError(f"quaternion norm {n:g} too small to define a rotation")
    w, x, y, z = q / n
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def rotation_to_quaternion(R) -> np.ndarray:
    """Unit quaternion with nonnegative scalar part (Shepperd's branch choice)."""
    R = np.asarray(R, dtype=np.float64)
    tr = np.trace(R)
    cands = np.array([tr, R[0, 0], R[1, 1], R[2, 2]])
    k = int(np.argmax(cands))
    if k == 0:
        s = 2.0 * math.sqrt(1.0 + tr)
        q = np.array([s / 4, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s])
    elif k == 1:
        s = 2.0 * math.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2])
        q = np.array([(R[2, 1] - R[1, 2]) / s, s / 4, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s])
    elif k == 2:
        s = 2.0 * math.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2])
        q = np.array([(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, s / 4, (R[1, 2] + R[2, 1]) / s])
    else:
        s = 2.0 * math.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1])
        q = np.array([(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, s / 4])
    q /= np.linalg.norm(q)
    return -q if q[0] < 0 else q


def pose_target(pose: PoseSE3) -> np.ndarray:
    """7-vector ``(q, t / ||t||)``."""
    t = pose.t / np.linalg.norm(pose.t)
    return np.concatenate([rotation_to_quaternion(pose.R), t])


def probe_to_pose(output) -> PoseSE3:
    out = np.asarray(output, dtype=np.float64).ravel()
    if out.shape != (7,) or not np.all(np.isfinite(out)):
        raise DegenerateConfigurationError("probe output must be 7 finite numbers")
    R = quaternion_to_rotation(out[:4])
    tn = np.linalg.norm(out[4:])
    if tn < 1e-8:
        raise DegenerateConfigurationError(f"translation norm {tn:g} too small to define a direction")
    return PoseSE3(R, out[4:] / tn)


# ---------------------------------------------------------------------------
# network


class PoseProbe:
    """MLP ``6 -> hidden -> hidden -> 7`` with leaky ReLU."""

    def __init__(self, hidden: int = 256, seed: int = 0, in_dim: int = 6, slope: float = 0.1):
        self.hidden, self.in_dim, self.slope = hidden, in_dim, slope
        rng = np.random.default_rng(seed)
        self.params: dict[str, Tensor] = {}
        dims = [(hidden, in_dim), (hidden, hidden), (7, hidden)]
        for i, (o, c) in enumerate(dims, start=1):
            b = kaiming_bound(c, slope)
            self.params[f"fc{i}.weight"] = Tensor(rng.uniform(-b, b, size=(o, c)), True, name=f"fc{i}.weight")
            self.params[f"fc{i}.bias"] = Tensor(np.zeros(o), True, name=f"fc{i}.bias")

    def parameters(self) -> dict[str, Tensor]:
        return dict(self.params)

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.params.items()}

    def forward(self, g) -> Tensor:
        p = self.params
        x = g if isinstance(g, Tensor) else Tensor._result(np.asarray(g, dtype=np.float64), False)
        if x.dtype != np.float64:
            x = _cast64(x)
        x = ad.leaky_relu(ad.linear(x, p["fc1.weight"], p["fc1.bias"]), self.slope)
        x = ad.leaky_relu(ad.linear(x, p["fc2.weight"], p["fc2.bias"]), self.slope)
        return ad.linear(x, p["fc3.weight"], p["fc3.bias"])

    __call__ = forward

    def predict(self, g) -> np.ndarray:
        with ad.no_grad():
            return self.forward(g).data


def _cast64(x: Tensor) -> Tensor:
    src = x.dtype
    return ad._make(x.data.astype(np.float64), (x,), lambda g: (g.astype(src),))


def probe_loss(out: Tensor, targets: np.ndarray) -> Tensor:
    """L1 between (normalised, hemisphere-aligned) quaternion and unit translation.

    Averaged over the batch.
    """
    n = out.shape[0]
    q = ad.l2_normalize(out[:, :4], axis=-1)
    t = ad.l2_normalize(out[:, 4:], axis=-1)
    sign = np.where(np.sum(q.data * targets[:, :4], axis=1) < 0, -1.0, 1.0)
    q = ad.mul(q, np.repeat(sign[:, None], 4, axis=1))
    dq = ad.sum_(ad.abs_(ad.sub(q, targets[:, :4])))
    dt = ad.sum_(ad.abs_(ad.sub(t, targets[:, 4:])))
    return ad.mul(ad.add(dq, dt), 1.0 / n)


# ---------------------------------------------------------------------------
# training and evaluation


def _global_params(model: GlobalLocalModel) -> dict[str, Tensor]:
    return {k: v for k, v in model.parameters().items() if k.startswith("global.")}


def _clone(model: GlobalLocalModel) -> GlobalLocalModel:
    twin = GlobalLocalModel(model.config, model.seed)
    twin.load_state_dict(model.state_dict())
    return twin


def global_features(model: GlobalLocalModel, pairs: Sequence[RenderedPair], batch_size: int = 64) -> np.ndarray:
    out = []
    with ad.no_grad():
        for k in range(0, len(pairs), batch_size):
            out.append(np.asarray(model.global_forward(*stack_inputs(pairs[k : k + batch_size])).data, dtype=np.float64))
    return np.concatenate(out)


def train_pose_probe(
    regime: ProbeRegime | str,
    dataset: Sequence[RenderedPair],
    cfg: ProbeConfig | None = None,
    pretrained: GlobalLocalModel | None = None,
    model_config: ModelConfig | None = None,
) -> tuple[PoseProbe, GlobalLocalModel, list[float]]:
    """Fit a probe (and, for the full scope, the encoder) to the GT poses.

    A pretrained encoder is copied, never modified in place.  Returns
    ``(probe, encoder_model, loss_history)``.
    """
    regime = ProbeRegime.parse(regime) if isinstance(regime, str) else regime
    cfg = cfg or ProbeConfig()
    if regime.init == "pretrained":
        if pretrained is None:
            raise ConfigurationError("pretrained probe regime needs a depth-trained checkpoint")
        model = _clone(pretrained)
    else:
        model = GlobalLocalModel(model_config, seed=cfg.seed + 7)
    if not model.config.generated_filters:
        raise ConfigurationError("probe needs a model with a global module")
    probe = PoseProbe(cfg.hidden, seed=cfg.seed)
    if cfg.iterations == 0:
        return probe, model, []
    pairs = list(dataset)
    if not pairs:
        raise UsageError("probe training set is empty")
    targets = np.stack([pose_target(p.pose) for p in pairs])
    params = probe.parameters()
    frozen = regime.scope == "mlp-only"
    if frozen:
        feats = global_features(model, pairs)
    else:
        params.update(_global_params(model))
    opt = Adam(params, lr=cfg.lr)
    sampler = EpochSampler(len(pairs), cfg.batch_size, cfg.seed)
    history = []
    for _ in range(cfg.iterations):
        idx = next(sampler)
        opt.zero_grad()
        with ad.Tape() as tape:
            if frozen:
                g = Tensor._result(feats[idx], False)
            else:
                g = _cast64(model.global_forward(*stack_inputs([pairs[i] for i in idx])))
            loss = probe_loss(probe(g), targets[idx])
            tape.backward(loss)
        opt.step()
        history.append(loss.item())
    return probe, model, history


def eval_pose_probe(probe: PoseProbe, model: GlobalLocalModel, testset: Sequence[RenderedPair]) -> tuple[float, float]:
    """Mean rotation and translation-direction errors in degrees."""
    pairs = list(testset)
    if not pairs:
        raise UsageError("probe test set is empty")
    out = probe.predict(global_features(model, pairs))
    rot, trans = [], []
    for o, p in zip(out, pairs):
        est = probe_to_pose(o)
        rot.append(rotation_angle_error(est.R, p.pose.R))
        trans.append(translation_angle_error(est.t, p.pose.t))
    return float(np.mean(rot)), float(np.mean(trans))
