"""Global-local depth network and the Small Enc-Dec baseline.

The global encoder reduces ``[I1, I2, flow]`` to a 6-vector ``g``.  A single
linear perceptron maps ``g`` to three 3x3 filter banks (20, 10, 20 output
channels) which form a per-sample fully convolutional network applied to
``flow`` plus two coordinate channels.  A fixed, learned 3x3 head reduces the
20 channels to one inverse-depth map.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Iterable

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigurationError

EPS_Z = 1e-3

LOCAL_INPUTS = ("flow", "images")


@dataclass
class ModelConfig:
    """Architecture switches; the defaults give the full global-local model.

    ``use_images``, ``use_coords``, ``generated_filters`` and ``local_input``
    implement the ablation variants.
    """

    image_channels: int = 1
    leaky_slope: float = 0.1
    encoder_channels: tuple[int, ...] = (16, 32, 64, 128, 256)
    global_dim: int = 6
    local_channels: tuple[int, ...] = (20, 10, 20)
    use_images: bool = True
    use_coords: bool = True
    generated_filters: bool = True
    local_input: str = "flow"
    flow_scale: float = 10.0
    dtype: str = "float32"

    def __post_init__(self):
        self.encoder_channels = tuple(int(c) for c in self.encoder_channels)
        self.local_channels = tuple(int(c) for c in self.local_channels)
        if self.image_channels < 1:
            raise ConfigurationError("model.image_channels must be >= 1")
        if not 0.0 < self.leaky_slope < 1.0:
            raise ConfigurationError("model.leaky_slope must lie in (0, 1)")
        if len(self.encoder_channels) != 5:
            raise ConfigurationError("model.encoder_channels must list 5 layers")
        if self.local_input not in LOCAL_INPUTS:
            raise ConfigurationError(f"model.local_input must be one of {LOCAL_INPUTS}")
        if not self.flow_scale > 0:
            raise ConfigurationError("model.flow_scale must be positive")
        if self.dtype not in ("float32", "float64"):
            raise ConfigurationError("model.dtype must be float32 or float64")

    @property
    def global_in_channels(self) -> int:
        return 2 * self.image_channels + 2 if self.use_images else 2

    @property
    def local_in_channels(self) -> int:
        base = 2 if self.local_input == "flow" else 2 * self.image_channels
        return base + (2 if self.use_coords else 0)


def kaiming_bound(fan_in: int, slope: float) -> float:
    gain = math.sqrt(2.0 / (1.0 + slope**2))
    return gain * math.sqrt(3.0 / fan_in)


def coord_channels(h: int, w: int, dtype=np.float64) -> np.ndarray:
    """``[2, H, W]`` array of x and y coordinates spanning [-1, 1]."""
    xs = np.linspace(-1.0, 1.0, w) if w > 1 else np.zeros(1)
    ys = np.linspace(-1.0, 1.0, h) if h > 1 else np.zeros(1)
    out = np.empty((2, h, w), dtype=dtype)
    out[0] = xs[None, :]
    out[1] = ys[:, None]
    return out


def bank_shapes(c_in: int, channels: Iterable[int] = (20, 10, 20), k: int = 3) -> list[tuple[int, ...]]:
    """Filter-bank weight shapes in generation order."""
    shapes = []
    prev = c_in
    for c in channels:
        shapes.append((c, prev, k, k))
        prev = c
    return shapes


def filter_count(c_in: int, channels: Iterable[int] = (20, 10, 20), k: int = 3) -> int:
    """Length of the perceptron output: all bank weights and biases."""
    return sum(int(np.prod(s)) + s[0] for s in bank_shapes(c_in, channels, k))


def _batchify(a) -> np.ndarray:
    a = np.asarray(a)
    return a[None] if a.ndim == 3 else a


def _to_nhwc(x: Tensor) -> Tensor:
    n, c, h, w = x.shape
    data = np.ascontiguousarray(x.data.transpose(0, 2, 3, 1))
    return ad._make(data, (x,), lambda g: (np.ascontiguousarray(g.transpose(0, 3, 1, 2)),))


def inverse_to_depth(z_hat: np.ndarray, eps: float = EPS_Z) -> np.ndarray:
    """Depth from predicted inverse depth, guarded against non-positive values."""
    return 1.0 / np.maximum(z_hat, eps)


class _Network:
    """Parameter bookkeeping shared by both architectures."""

    config: ModelConfig

    def __init__(self):
        self.params: dict[str, Tensor] = {}

    @property
    def np_dtype(self):
        return np.dtype(self.config.dtype)

    def _add(self, name: str, shape, bound: float | None, rng: np.random.Generator) -> Tensor:
        if bound is None:
            data = np.zeros(shape, dtype=np.float64)
        else:
            data = rng.uniform(-bound, bound, size=shape)
        t = Tensor(data.astype(self.np_dtype), requires_grad=True, name=name)
        self.params[name] = t
        return t

    def _conv(self, name: str, c_out: int, c_in: int, k: int, rng) -> None:
        self._add(name + ".weight", (c_out, c_in, k, k), kaiming_bound(c_in * k * k, self.config.leaky_slope), rng)
        self._add(name + ".bias", (c_out,), None, rng)

    def parameters(self) -> dict[str, Tensor]:
        return self.params

    def n_parameters(self) -> int:
        return int(sum(p.data.size for p in self.params.values()))

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        missing = set(self.params) - set(state)
        extra = set(state) - set(self.params)
        if missing or extra:
            raise ConfigurationError(f"state mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for k, v in state.items():
            if tuple(v.shape) != self.params[k].shape:
                raise ConfigurationError(f"parameter {k}: shape {v.shape} != {self.params[k].shape}")
            self.params[k].data = np.array(v, dtype=self.np_dtype)

    def _inputs(self, I1, I2, flow):
        I1, I2, flow = _batchify(I1), _batchify(I2), _batchify(flow)
        if flow.shape[1] != 2:
            raise ConfigurationError(f"flow must have 2 channels, got {flow.shape[1]}")
        c = self.config.image_channels
        if I1.shape[1] != c or I2.shape[1] != c:
            raise ConfigurationError(f"images must have {c} channels")
        if not (I1.shape[0] == I2.shape[0] == flow.shape[0]) or not (I1.shape[2:] == I2.shape[2:] == flow.shape[2:]):
            raise ConfigurationError("image and flow batches disagree in size")
        h, w = flow.shape[2:]
        if h % 16 or w % 16:
            raise ConfigurationError(f"spatial size {h}x{w} must be divisible by 16")
        dt = self.np_dtype
        # NHWC internally; flow enters the networks as flow_scale * flow / W
        return (
            I1.transpose(0, 2, 3, 1).astype(dt),
            I2.transpose(0, 2, 3, 1).astype(dt),
            (flow * (self.config.flow_scale / float(w))).transpose(0, 2, 3, 1).astype(dt),
        )


class GlobalLocalModel(_Network):
    """Hypernetwork depth model: global encoder -> perceptron -> local CNN."""

    def __init__(self, config: ModelConfig | None = None, seed: int = 0):
        super().__init__()
        self.config = config or ModelConfig()
        self.seed = seed
        self.init_weights(seed)

    # -- construction -----------------------------------------------------
    @property
    def bank_shapes(self) -> list[tuple[int, ...]]:
        return bank_shapes(self.config.local_in_channels, self.config.local_channels)

    @property
    def n_filters(self) -> int:
        return filter_count(self.config.local_in_channels, self.config.local_channels)

    def init_weights(self, seed: int) -> "GlobalLocalModel":
        """Kaiming-uniform (fan-in) weights, zero biases, deterministic in ``seed``."""
        cfg = self.config
        rng = np.random.default_rng(seed)
        self.params = {}
        if cfg.generated_filters:
            prev = cfg.global_in_channels
            for i, c in enumerate(cfg.encoder_channels):
                self._conv(f"global.conv{i + 1}", c, prev, 3, rng)
                prev = c
            self._conv("global.out", cfg.global_dim, prev, 3, rng)
            # The perceptron bias holds a Kaiming-initialised base filter set;
            # rows of W are scaled so that a unit-variance g would give
            # Kaiming-sized modulations.  With the small g of an untrained
            # encoder the local network therefore starts as an ordinary CNN.
            w = np.empty((self.n_filters, cfg.global_dim))
            b = np.zeros(self.n_filters)
            row = 0
            for shape in self.bank_shapes:
                fan_in = int(np.prod(shape[1:]))
                kb = kaiming_bound(fan_in, cfg.leaky_slope)
                nw = int(np.prod(shape))
                n = nw + shape[0]
                w[row : row + n] = rng.uniform(-kb, kb, size=(n, cfg.global_dim)) / math.sqrt(cfg.global_dim)
                b[row : row + nw] = rng.uniform(-kb, kb, size=nw)
                row += n
            self.params["local.perceptron.weight"] = Tensor(w.astype(self.np_dtype), True, name="local.perceptron.weight")
            self.params["local.perceptron.bias"] = Tensor(b.astype(self.np_dtype), True, name="local.perceptron.bias")
        else:
            for i, shape in enumerate(self.bank_shapes):
                self._add(f"local.bank{i + 1}.weight", shape, kaiming_bound(int(np.prod(shape[1:])), cfg.leaky_slope), rng)
                self._add(f"local.bank{i + 1}.bias", (shape[0],), None, rng)
        self._conv("local.head", 1, cfg.local_channels[-1], 3, rng)
        return self

    # -- forward pieces ---------------------------------------------------
    def global_forward(self, I1, I2, flow) -> Tensor:
        """``[N, 6]`` global parameters from an image pair and its flow."""
        cfg = self.config
        if not cfg.generated_filters:
            raise ConfigurationError("model variant without a global module has no global_forward")
        I1, I2, flow = self._inputs(I1, I2, flow)
        x = np.concatenate([I1, I2, flow], axis=-1) if cfg.use_images else flow
        return self._encode(Tensor._result(np.ascontiguousarray(x), False))

    def _encode(self, x: Tensor) -> Tensor:
        p, slope = self.params, self.config.leaky_slope
        for i in range(5):
            stride = 2 if i < 4 else 1
            x = ad.conv2d(x, p[f"global.conv{i + 1}.weight"], p[f"global.conv{i + 1}.bias"], stride, "nhwc")
            x = ad.leaky_relu(x, slope)
        x = ad.conv2d(x, p["global.out.weight"], p["global.out.bias"], 1, "nhwc")
        return ad.global_avg_pool(x, axes=(1, 2))

    def generate_filters(self, g: Tensor) -> list[tuple[Tensor, Tensor]]:
        """Split the perceptron output into ``(weight, bias)`` per bank.

        Layout per sample: bank1 weights, bank1 bias, bank2 weights, bank2
        bias, bank3 weights, bank3 bias.
        """
        p = self.params
        if not self.config.generated_filters:
            return [(p[f"local.bank{i + 1}.weight"], p[f"local.bank{i + 1}.bias"]) for i in range(len(self.bank_shapes))]
        if g.ndim == 1:
            g = ad.reshape(g, (1, g.shape[0]))
        if g.shape[1] != self.config.global_dim:
            raise ConfigurationError(f"global parameters must have {self.config.global_dim} entries")
        flat = ad.linear(g, p["local.perceptron.weight"], p["local.perceptron.bias"])
        n = g.shape[0]
        banks = []
        off = 0
        for shape in self.bank_shapes:
            nw = int(np.prod(shape))
            w = ad.reshape(flat[:, off : off + nw], (n,) + shape)
            off += nw
            b = flat[:, off : off + shape[0]]
            off += shape[0]
            banks.append((w, b))
        return banks

    def local_input(self, I1, I2, flow) -> np.ndarray:
        """Local-network input ``[N, C_in, H, W]``: flow (or images) plus coordinates."""
        I1, I2, flow = self._inputs(I1, I2, flow)
        base = flow if self.config.local_input == "flow" else np.concatenate([I1, I2], axis=-1)
        if self.config.use_coords:
            n, h, w, _ = base.shape
            coords = np.broadcast_to(coord_channels(h, w, base.dtype).transpose(1, 2, 0), (n, h, w, 2))
            base = np.concatenate([base, coords], axis=-1)
        return np.ascontiguousarray(base.transpose(0, 3, 1, 2))

    def local_forward(self, x, banks) -> Tensor:
        """Apply the generated banks and the fixed head to ``x`` (``[N, C_in, H, W]``).

        Returns inverse depth ``[N, 1, H, W]``.
        """
        p, slope = self.params, self.config.leaky_slope
        if isinstance(x, Tensor):
            n, c, h, w = x.shape
            x = _to_nhwc(x)
        else:
            x = np.asarray(x, dtype=self.np_dtype)
            n, c, h, w = x.shape
            x = Tensor._result(np.ascontiguousarray(x.transpose(0, 2, 3, 1)), False)
        for wt, b in banks:
            x = ad.leaky_relu(ad.conv2d(x, wt, b, 1, "nhwc"), slope)
        z = ad.conv2d(x, p["local.head.weight"], p["local.head.bias"], 1, "nhwc")
        return ad.reshape(z, (n, 1, h, w))

    def forward(self, I1, I2, flow) -> Tensor:
        """Predicted inverse depth ``[N, 1, H, W]``."""
        g = self.global_forward(I1, I2, flow) if self.config.generated_filters else None
        banks = self.generate_filters(g)
        return self.local_forward(self.local_input(I1, I2, flow), banks)

    __call__ = forward

    def filter_vector(self, I1, I2, flow) -> np.ndarray:
        """Flattened banks ``[N, N_F]`` in generation order."""
        with ad.no_grad():
            if self.config.generated_filters:
                g = self.global_forward(I1, I2, flow)
                p = self.params
                return (g.data @ p["local.perceptron.weight"].data.T + p["local.perceptron.bias"].data).astype(np.float64)
            n = _batchify(flow).shape[0]
            parts = []
            for w, b in self.generate_filters(None):
                parts += [w.data.ravel(), b.data.ravel()]
            return np.tile(np.concatenate(parts), (n, 1)).astype(np.float64)


class SmallEncDec(_Network):
    """Encoder-decoder baseline with skip connections.

    Encoder: four stride-2 convolutions with kernel sizes (7, 5, 3, 3).
    Decoder: four stages of 2x nearest upsampling, concatenation with the
    matching encoder feature (the raw input at full resolution) and a 3x3
    convolution, then a 3x3 convolution to one channel.
    """

    def __init__(
        self,
        config: ModelConfig | None = None,
        seed: int = 0,
        enc_channels: tuple[int, ...] = (16, 32, 64, 128),
        enc_kernels: tuple[int, ...] = (7, 5, 3, 3),
        dec_channels: tuple[int, ...] = (128, 64, 32, 16),
    ):
        super().__init__()
        self.config = config or ModelConfig()
        self.enc_channels = tuple(enc_channels)
        self.enc_kernels = tuple(enc_kernels)
        self.dec_channels = tuple(dec_channels)
        if not (len(self.enc_channels) == len(self.enc_kernels) == len(self.dec_channels) == 4):
            raise ConfigurationError("SmallEncDec needs four encoder and decoder stages")
        self.seed = seed
        self.init_weights(seed)

    @property
    def in_channels(self) -> int:
        return 2 * self.config.image_channels + 2

    def init_weights(self, seed: int) -> "SmallEncDec":
        rng = np.random.default_rng(seed)
        self.params = {}
        skips = [self.in_channels]
        prev = self.in_channels
        for i, (c, k) in enumerate(zip(self.enc_channels, self.enc_kernels)):
            self._conv(f"enc{i + 1}", c, prev, k, rng)
            skips.append(c)
            prev = c
        for i, c in enumerate(self.dec_channels):
            skip = skips[-(i + 2)]
            self._conv(f"dec{i + 1}", c, prev + skip, 3, rng)
            prev = c
        self._conv("out", 1, prev, 3, rng)
        return self

    def forward(self, I1, I2, flow) -> Tensor:
        I1, I2, flow = self._inputs(I1, I2, flow)
        p, slope = self.params, self.config.leaky_slope
        x = Tensor._result(np.ascontiguousarray(np.concatenate([I1, I2, flow], axis=-1)), False)
        n, h, w, _ = x.shape
        feats = [x]
        for i in range(4):
            x = ad.conv2d(x, p[f"enc{i + 1}.weight"], p[f"enc{i + 1}.bias"], 2, "nhwc")
            x = ad.leaky_relu(x, slope)
            feats.append(x)
        for i in range(4):
            x = ad.concat([ad.upsample_nearest2x(x, axes=(1, 2)), feats[-(i + 2)]], axis=-1)
            x = ad.leaky_relu(ad.conv2d(x, p[f"dec{i + 1}.weight"], p[f"dec{i + 1}.bias"], 1, "nhwc"), slope)
        z = ad.conv2d(x, p["out.weight"], p["out.bias"], 1, "nhwc")
        return ad.reshape(z, (n, 1, h, w))

    __call__ = forward


def build_model(kind: str, config: ModelConfig | None = None, seed: int = 0) -> _Network:
    if kind == "global-local":
        return GlobalLocalModel(config, seed)
    if kind == "small-encdec":
        return SmallEncDec(config, seed)
    raise ConfigurationError(f"unknown model kind {kind!r}")


def model_kind(model) -> str:
    return "global-local" if isinstance(model, GlobalLocalModel) else "small-encdec"


def config_dict(config: ModelConfig) -> dict:
    d = asdict(config)
    d["encoder_channels"] = list(config.encoder_channels)
    d["local_channels"] = list(config.local_channels)
    return d
