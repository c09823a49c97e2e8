"""Synthetic two-view data: textured piecewise-planar scenes seen by two
pinhole cameras, with exact depth, analytic optical flow and occlusion masks.

Pixel ``(x, y)`` sits at integer column ``x`` and row ``y``; its camera ray is
``((x - cx) / fx, (y - cy) / fy, 1)``, so depth is the z coordinate.  A pose
maps camera-1 coordinates to camera-2 coordinates: ``X2 = R @ X1 + t``.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, DegenerateMotionError

LABEL_COUNTS = (1, 4, 16, 64)
LABEL_MODES = ("uniform-random", "center")


# ---------------------------------------------------------------------------
# cameras


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ConfigurationError(f"focal lengths must be positive, got {self.fx}, {self.fy}")
        if self.width < 1 or self.height < 1:
            raise ConfigurationError("image extents must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ConfigurationError(f"principal point ({self.cx}, {self.cy}) outside the image")

    @classmethod
    def nominal(cls, width: int, height: int, focal_factor: float = 0.8) -> "CameraIntrinsics":
        f = focal_factor * width
        return cls(f, f, width / 2.0, height / 2.0, width, height)

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def rays(self) -> np.ndarray:
        """``[H, W, 3]`` ray directions with unit z component."""
        xs = (np.arange(self.width) - self.cx) / self.fx
        ys = (np.arange(self.height) - self.cy) / self.fy
        r = np.empty((self.height, self.width, 3))
        r[..., 0] = xs[None, :]
        r[..., 1] = ys[:, None]
        r[..., 2] = 1.0
        return r

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass(frozen=True, eq=False)
class PoseSE3:
    R: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        R = np.asarray(self.R, dtype=np.float64).reshape(3, 3)
        t = np.asarray(self.t, dtype=np.float64).reshape(3)
        if np.max(np.abs(R.T @ R - np.eye(3))) > 1e-9 or abs(np.linalg.det(R) - 1.0) > 1e-9:
            raise ConfigurationError("R is not a rotation matrix")
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "t", t)

    @classmethod
    def identity(cls) -> "PoseSE3":
        return cls(np.eye(3), np.zeros(3))

    def apply(self, X: np.ndarray) -> np.ndarray:
        return X @ self.R.T + self.t

    def __eq__(self, other):
        return isinstance(other, PoseSE3) and np.array_equal(self.R, other.R) and np.array_equal(self.t, other.t)


def rotation_xyz(ax: float, ay: float, az: float) -> np.ndarray:
    """Rotation ``Rz @ Ry @ Rx`` from angles in radians."""
    cx, sx, cy, sy, cz, sz = math.cos(ax), math.sin(ax), math.cos(ay), math.sin(ay), math.cos(az), math.sin(az)
    Rx = np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]])
    Ry = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    Rz = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1]])
    return Rz @ Ry @ Rx


# ---------------------------------------------------------------------------
# scenes


@dataclass
class SceneConfig:
    n_patches: tuple[int, int] = (2, 6)
    depth_range: tuple[float, float] = (1.0, 8.0)
    max_patch_tilt_deg: float = 50.0
    max_background_tilt_deg: float = 10.0
    patch_half_size: tuple[float, float] = (0.1, 0.35)  # relative to patch depth
    ray_tan: float = 0.8  # patch centres and depth guarantees cover |x|, |y| <= ray_tan
    texture_cell: tuple[float, float] = (0.05, 0.4)  # world units

    def __post_init__(self):
        lo, hi = self.depth_range
        if not (0 < lo < hi):
            raise ConfigurationError(f"scene.depth_range must satisfy 0 < d_min < d_max, got {self.depth_range}")
        if self.n_patches[0] < 0 or self.n_patches[1] < self.n_patches[0]:
            raise ConfigurationError(f"scene.n_patches must be a non-negative range, got {self.n_patches}")


@dataclass
class Texture:
    seed: int
    cell: float
    checker_mix: float
    base: float
    contrast: float

    def __call__(self, s: np.ndarray, t: np.ndarray) -> np.ndarray:
        noise = 0.65 * _value_noise(s / self.cell, t / self.cell, self.seed)
        noise += 0.35 * _value_noise(2.7 * s / self.cell, 2.7 * t / self.cell, self.seed + 1)
        checker = (np.floor(s / (2.0 * self.cell)) + np.floor(t / (2.0 * self.cell))) % 2.0
        v = self.checker_mix * checker + (1.0 - self.checker_mix) * noise
        return np.clip(self.base + self.contrast * (v - 0.5), 0.0, 1.0)


def _hash01(ix: np.ndarray, iy: np.ndarray, seed: int) -> np.ndarray:
    h = ix.astype(np.int64) * 73856093 ^ iy.astype(np.int64) * 19349663 ^ (seed * 83492791)
    h = h.astype(np.uint64)
    h ^= h >> np.uint64(13)
    h *= np.uint64(0x5BD1E995)
    h ^= h >> np.uint64(15)
    return (h & np.uint64(0xFFFFFF)).astype(np.float64) / float(0xFFFFFF)


def _value_noise(s: np.ndarray, t: np.ndarray, seed: int) -> np.ndarray:
    i0, j0 = np.floor(s), np.floor(t)
    fs, ft = s - i0, t - j0
    fs = fs * fs * (3 - 2 * fs)
    ft = ft * ft * (3 - 2 * ft)
    a = _hash01(i0, j0, seed)
    b = _hash01(i0 + 1, j0, seed)
    c = _hash01(i0, j0 + 1, seed)
    d = _hash01(i0 + 1, j0 + 1, seed)
    return (a * (1 - fs) + b * fs) * (1 - ft) + (c * (1 - fs) + d * fs) * ft


@dataclass
class PlanarPatch:
    """Plane ``normal . X = offset`` in camera-1 coordinates.

    The visible part is the rectangle ``|(X - center) . u| <= half_u``,
    ``|(X - center) . v| <= half_v``; infinite extents give an unbounded plane.
    """

    normal: np.ndarray
    offset: float
    center: np.ndarray
    u: np.ndarray
    v: np.ndarray
    half_u: float
    half_v: float
    texture: Texture


@dataclass
class PlanarScene:
    patches: list[PlanarPatch]
    background: PlanarPatch

    @property
    def surfaces(self) -> list[PlanarPatch]:
        return [self.background] + list(self.patches)


def _plane_basis(n: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    a = np.array([1.0, 0.0, 0.0]) if abs(n[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    u = np.cross(n, a)
    u /= np.linalg.norm(u)
    return u, np.cross(n, u)


def _tilted_normal(rng: np.random.Generator, max_deg: float) -> np.ndarray:
    tilt = math.radians(max_deg) * math.sqrt(rng.uniform())
    az = rng.uniform(0, 2 * math.pi)
    return np.array([math.sin(tilt) * math.cos(az), math.sin(tilt) * math.sin(az), math.cos(tilt)])


def _texture(rng: np.random.Generator, cfg: SceneConfig) -> Texture:
    lo, hi = cfg.texture_cell
    return Texture(
        seed=int(rng.integers(0, 2**31 - 1)),
        cell=float(math.exp(rng.uniform(math.log(lo), math.log(hi)))),
        checker_mix=float(rng.uniform(0.0, 0.6)),
        base=float(rng.uniform(0.3, 0.7)),
        contrast=float(rng.uniform(0.4, 1.0)),
    )


def background_plane(normal, offset, texture: Texture) -> PlanarPatch:
    n = np.asarray(normal, dtype=np.float64)
    n = n / np.linalg.norm(n)
    u, v = _plane_basis(n)
    return PlanarPatch(n, float(offset), n * offset, u, v, math.inf, math.inf, texture)


def sample_scene(seed: int, config: SceneConfig | None = None) -> PlanarScene:
    """Random background plane plus textured rectangles; deterministic in ``seed``."""
    cfg = config or SceneConfig()
    d_min, d_max = cfg.depth_range
    rng = np.random.default_rng(seed)
    # Background: its depth over |x|,|y| <= ray_tan stays inside [d_min, d_max].
    n = _tilted_normal(rng, cfg.max_background_tilt_deg)
    rho = cfg.ray_tan * math.sqrt(2.0)
    sin_a = math.hypot(n[0], n[1])
    lo_dot, hi_dot = n[2] - sin_a * rho, n[2] + sin_a * rho
    if lo_dot <= 0:
        raise ConfigurationError("background tilt too large for the field of view")
    delta_hi = d_max * lo_dot
    delta_lo = max(d_min * hi_dot, 0.55 * delta_hi)
    if delta_lo > delta_hi:
        raise ConfigurationError("depth range too narrow for the background tilt")
    delta = rng.uniform(delta_lo, delta_hi)
    background = background_plane(n, delta, _texture(rng, cfg))

    patches = []
    count = int(rng.integers(cfg.n_patches[0], cfg.n_patches[1] + 1))
    margin = 0.05 * (d_max - d_min)
    for _ in range(count):
        cz = rng.uniform(d_min + margin, d_min + 0.8 * (d_max - d_min))
        cxy = rng.uniform(-cfg.ray_tan, cfg.ray_tan, size=2)
        center = cz * np.array([cxy[0], cxy[1], 1.0])
        pn = _tilted_normal(rng, cfg.max_patch_tilt_deg)
        u, v = _plane_basis(pn)
        a, b = cz * rng.uniform(*cfg.patch_half_size, size=2)
        extent = a * abs(u[2]) + b * abs(v[2])
        allowed = min(cz - d_min, d_max - cz)
        if extent > allowed:
            a, b = a * allowed / extent, b * allowed / extent
        patches.append(PlanarPatch(pn, float(pn @ center), center, u, v, float(a), float(b), _texture(rng, cfg)))
    return PlanarScene(patches, background)


def render_view(scene: PlanarScene, K: CameraIntrinsics, pose: PoseSE3 | None = None, channels: int = 1):
    """Ray-cast ``scene`` from the camera at ``pose``; returns ``(image, depth)``.

    Visibility is resolved per pixel by nearest positive intersection.
    """
    pose = pose or PoseSE3.identity()
    rays = K.rays()
    h, w = K.height, K.width
    depth = np.full((h, w), np.inf)
    owner = np.full((h, w), -1)
    coords = np.zeros((h, w, 2))
    Rt = pose.R.T
    for idx, surf in enumerate(scene.surfaces):
        n2 = pose.R @ surf.normal
        d2 = surf.offset + n2 @ pose.t
        denom = rays @ n2
        with np.errstate(divide="ignore", invalid="ignore"):
            z = np.where(np.abs(denom) > 1e-12, d2 / denom, np.inf)
        hit = (z > 0) & np.isfinite(z)
        zf = np.where(hit, z, 1.0)
        X1 = ((rays * zf[..., None]) - pose.t) @ Rt
        rel = X1 - surf.center
        s = rel @ surf.u
        t = rel @ surf.v
        if math.isfinite(surf.half_u):
            hit &= (np.abs(s) <= surf.half_u) & (np.abs(t) <= surf.half_v)
        closer = hit & (z < depth)
        depth = np.where(closer, z, depth)
        owner = np.where(closer, idx, owner)
        coords[closer] = np.stack([s[closer], t[closer]], axis=-1)
    if np.any(owner < 0):
        raise ConfigurationError("camera ray hit no surface; the background plane must cover the view")
    image = np.zeros((h, w))
    for idx, surf in enumerate(scene.surfaces):
        m = owner == idx
        if np.any(m):
            image[m] = surf.texture(coords[m, 0], coords[m, 1])
    if channels > 1:
        tint = np.linspace(0.85, 1.15, channels)
        image = np.clip(image[..., None] * tint, 0.0, 1.0)
    return image, depth


# ---------------------------------------------------------------------------
# flow


def project_points(X: np.ndarray, K: CameraIntrinsics) -> np.ndarray:
    z = X[..., 2]
    return np.stack([K.fx * X[..., 0] / z + K.cx, K.fy * X[..., 1] / z + K.cy], axis=-1)


def backproject(depth: np.ndarray, K: CameraIntrinsics) -> np.ndarray:
    return K.rays() * depth[..., None]


def compute_flow(
    depth1: np.ndarray,
    K1: CameraIntrinsics,
    K2: CameraIntrinsics,
    pose: PoseSE3,
    depth2: np.ndarray | None = None,
    tau_occ: float = 0.01,
):
    """Analytic flow ``[H, W, 2]`` and occlusion mask ``[H, W]``.

    A pixel is occluded when its point lies behind camera 2, projects outside
    image 2, or (given ``depth2``) sits more than ``tau_occ`` relative depth
    behind the surface seen at the nearest camera-2 pixel.
    """
    depth1 = np.asarray(depth1, dtype=np.float64)
    if np.any(depth1 <= 0):
        raise ConfigurationError("depth1 must be positive")
    X2 = pose.apply(backproject(depth1, K1))
    z2 = X2[..., 2]
    front = z2 > 0
    safe = np.where(front[..., None], X2, np.array([0.0, 0.0, 1.0]))
    p2 = project_points(safe, K2)
    h, w = depth1.shape
    grid = np.stack(np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64)), axis=-1)
    flow = np.where(front[..., None], p2 - grid, 0.0)
    occ = ~front
    px, py = np.rint(p2[..., 0]), np.rint(p2[..., 1])
    inside = front & (px >= 0) & (px <= K2.width - 1) & (py >= 0) & (py <= K2.height - 1)
    occ |= front & ~inside
    if depth2 is not None:
        ix = np.clip(px, 0, K2.width - 1).astype(int)
        iy = np.clip(py, 0, K2.height - 1).astype(int)
        seen = depth2[iy, ix]
        occ |= inside & (z2 > seen * (1.0 + tau_occ))
    return flow, occ


# ---------------------------------------------------------------------------
# pairs


@dataclass
class RenderedPair:
    image1: np.ndarray
    image2: np.ndarray
    depth1: np.ndarray
    flow12: np.ndarray
    occlusion: np.ndarray
    intrinsics1: CameraIntrinsics
    intrinsics2: CameraIntrinsics
    pose: PoseSE3
    index: int = 0
    seed: int = 0
    nominal_intrinsics: CameraIntrinsics | None = None

    @property
    def shape(self) -> tuple[int, int]:
        return self.depth1.shape

    def replace(self, **changes) -> "RenderedPair":
        return dataclasses.replace(self, **changes)


def reprojection_error(pair: RenderedPair) -> np.ndarray:
    """Per-pixel distance between projected backprojection and ``p + flow``."""
    X2 = pair.pose.apply(backproject(pair.depth1, pair.intrinsics1))
    front = X2[..., 2] > 0
    p2 = project_points(np.where(front[..., None], X2, 1.0), pair.intrinsics2)
    h, w = pair.shape
    grid = np.stack(np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64)), axis=-1)
    err = np.linalg.norm(p2 - (grid + pair.flow12), axis=-1)
    return np.where(front, err, np.inf)


def normalize_pair(pair: RenderedPair, eps_t: float = 1e-6) -> RenderedPair:
    """Rescale depth and translation jointly so that ``||t|| = 1``."""
    s = float(np.linalg.norm(pair.pose.t))
    if s < eps_t:
        raise DegenerateMotionError(f"translation norm {s:g} below {eps_t:g}")
    # a normalised t has unit norm only up to rounding; leave it alone
    if abs(s - 1.0) <= 8 * np.finfo(np.float64).eps:
        return pair
    return pair.replace(depth1=pair.depth1 / s, pose=PoseSE3(pair.pose.R, pair.pose.t / s))


def recompute_flow(pair: RenderedPair):
    return compute_flow(pair.depth1, pair.intrinsics1, pair.intrinsics2, pair.pose)


# ---------------------------------------------------------------------------
# labels


@dataclass
class SparseLabelSet:
    xs: np.ndarray
    ys: np.ndarray
    z: np.ndarray

    def __post_init__(self):
        self.xs = np.asarray(self.xs, dtype=np.int64)
        self.ys = np.asarray(self.ys, dtype=np.int64)
        self.z = np.asarray(self.z, dtype=np.float64)

    def __len__(self) -> int:
        return int(self.xs.size)

    def mask(self, h: int, w: int) -> np.ndarray:
        m = np.zeros((h, w), dtype=bool)
        m[self.ys, self.xs] = True
        return m

    def target(self, h: int, w: int) -> np.ndarray:
        t = np.zeros((h, w))
        t[self.ys, self.xs] = self.z
        return t


def sample_sparse_labels(depth1: np.ndarray, n, mode: str = "uniform-random", seed: int = 0) -> SparseLabelSet:
    """``n`` distinct supervised pixels (or ``"dense"``) with inverse depth."""
    h, w = depth1.shape
    if mode not in LABEL_MODES:
        raise ConfigurationError(f"label mode must be one of {LABEL_MODES}, got {mode!r}")
    if n == "dense":
        ys, xs = np.divmod(np.arange(h * w), w)
    else:
        n = int(n)
        if n < 1 or n > h * w:
            raise ConfigurationError(f"cannot draw {n} labels from a {h}x{w} image")
        if mode == "center":
            yy, xx = np.mgrid[0:h, 0:w]
            d2 = (xx - w // 2) ** 2 + (yy - h // 2) ** 2
            flat = np.lexsort((np.arange(h * w), d2.ravel()))[:n]
        else:
            flat = np.random.default_rng(seed).choice(h * w, size=n, replace=False)
        ys, xs = np.divmod(np.sort(flat), w)
    return SparseLabelSet(xs, ys, 1.0 / depth1[ys, xs])


# ---------------------------------------------------------------------------
# perturbation, corruption, augmentation


def perturb_intrinsics(K: CameraIntrinsics, seed, maxfrac: float = 0.2) -> CameraIntrinsics:
    """Scale ``fx, fy, cx, cy`` by independent factors in ``[1 - maxfrac, 1 + maxfrac]``."""
    if not 0.0 <= maxfrac < 1.0:
        raise ConfigurationError(f"maxfrac must lie in [0, 1), got {maxfrac}")
    if maxfrac == 0.0:
        return K
    f = 1.0 + np.random.default_rng(seed).uniform(-maxfrac, maxfrac, size=4)
    cx = min(K.cx * f[2], np.nextafter(K.width, 0))
    cy = min(K.cy * f[3], np.nextafter(K.height, 0))
    return CameraIntrinsics(K.fx * f[0], K.fy * f[1], cx, cy, K.width, K.height)


def corrupt_flow(flow12: np.ndarray, seed, sigma: float = 0.0, outlier_frac: float = 0.0, outlier_mag: float = 0.0):
    """Gaussian noise plus sparse outliers.

    Returns ``(corrupted_flow, magnitude)`` where ``magnitude`` is the
    per-pixel norm of the injected displacement.  Outlier pixels receive an
    extra offset in a uniform direction with length uniform in
    ``[0, outlier_mag]``.
    """
    if sigma < 0 or not 0.0 <= outlier_frac <= 1.0:
        raise ConfigurationError("need sigma >= 0 and outlier_frac in [0, 1]")
    flow12 = np.asarray(flow12, dtype=np.float64)
    h, w, _ = flow12.shape
    rng = np.random.default_rng(seed)
    delta = rng.normal(0.0, 1.0, size=flow12.shape) * sigma
    n_out = int(round(outlier_frac * h * w))
    if n_out and outlier_mag > 0:
        idx = rng.choice(h * w, size=n_out, replace=False)
        ang = rng.uniform(0, 2 * math.pi, size=n_out)
        mag = rng.uniform(0, outlier_mag, size=n_out)
        d = delta.reshape(-1, 2)
        d[idx, 0] += mag * np.cos(ang)
        d[idx, 1] += mag * np.sin(ang)
    return flow12 + delta, np.linalg.norm(delta, axis=-1)


_MIRROR = np.diag([-1.0, 1.0, 1.0])
_ROT180 = np.diag([-1.0, -1.0, 1.0])


def _flip_K(K: CameraIntrinsics, x: bool, y: bool) -> CameraIntrinsics:
    cx = K.width - 1 - K.cx if x else K.cx
    cy = K.height - 1 - K.cy if y else K.cy
    # the reflected principal point may fall just outside [0, W) when cx > W - 1
    cx = min(max(cx, 0.0), np.nextafter(K.width, 0))
    cy = min(max(cy, 0.0), np.nextafter(K.height, 0))
    return CameraIntrinsics(K.fx, K.fy, cx, cy, K.width, K.height)


def transform_pair(pair: RenderedPair, labels: SparseLabelSet | None, mirror: bool, rotate: bool):
    """Apply a horizontal mirror and/or 180-degree rotation to every field."""
    out, lab = pair, labels
    h, w = pair.shape
    for active, S, fy in ((mirror, _MIRROR, False), (rotate, _ROT180, True)):
        if not active:
            continue
        sl = (slice(None, None, -1) if fy else slice(None), slice(None, None, -1))
        flow = out.flow12[sl].copy()
        flow[..., 0] *= -1
        if fy:
            flow[..., 1] *= -1
        out = out.replace(
            image1=out.image1[sl].copy(),
            image2=out.image2[sl].copy(),
            depth1=out.depth1[sl].copy(),
            flow12=flow,
            occlusion=out.occlusion[sl].copy(),
            intrinsics1=_flip_K(out.intrinsics1, True, fy),
            intrinsics2=_flip_K(out.intrinsics2, True, fy),
            pose=PoseSE3(S @ out.pose.R @ S, S @ out.pose.t),
            nominal_intrinsics=None if out.nominal_intrinsics is None else _flip_K(out.nominal_intrinsics, True, fy),
        )
        if lab is not None:
            lab = SparseLabelSet(w - 1 - lab.xs, (h - 1 - lab.ys) if fy else lab.ys, lab.z)
    return out, lab


def augment(pair: RenderedPair, labels: SparseLabelSet | None, seed):
    """Mirror and 180-degree rotation, each with probability one half."""
    mirror, rotate = np.random.default_rng(seed).random(2) < 0.5
    return transform_pair(pair, labels, bool(mirror), bool(rotate))


# ---------------------------------------------------------------------------
# generation


@dataclass
class DataConfig:
    width: int = 64
    height: int = 48
    channels: int = 1
    focal_factor: float = 0.8
    max_rotation_deg: float = 10.0
    translation_range: tuple[float, float] = (0.05, 0.5)
    occlusion_tau: float = 0.01
    intrinsics_maxfrac: float = 0.0
    scene: SceneConfig = field(default_factory=SceneConfig)

    def __post_init__(self):
        if isinstance(self.scene, dict):
            self.scene = SceneConfig(**self.scene)
        lo, hi = self.translation_range
        if not 0 < lo <= hi:
            raise ConfigurationError("data.translation_range must be positive and ordered")
        if self.width < 1 or self.height < 1:
            raise ConfigurationError("data resolution must be positive")

    @property
    def nominal_intrinsics(self) -> CameraIntrinsics:
        return CameraIntrinsics.nominal(self.width, self.height, self.focal_factor)


def sample_motion(rng: np.random.Generator, cfg: DataConfig) -> PoseSE3:
    """Rotation up to ``max_rotation_deg`` per axis, translation uniform on a
    sphere shell; pure rotations never occur."""
    ang = np.radians(rng.uniform(-cfg.max_rotation_deg, cfg.max_rotation_deg, size=3))
    d = rng.normal(size=3)
    d /= np.linalg.norm(d)
    return PoseSE3(rotation_xyz(*ang), d * rng.uniform(*cfg.translation_range))


def make_pair(global_seed: int, index: int, cfg: DataConfig | None = None) -> RenderedPair:
    """Sample ``index`` of the stream seeded by ``global_seed``, normalised to ``||t|| = 1``."""
    cfg = cfg or DataConfig()
    nominal = cfg.nominal_intrinsics
    for attempt in range(100):
        ss = np.random.SeedSequence([global_seed, index, attempt])
        scene_seed, motion_seed, k_seed = (int(s.generate_state(1)[0]) for s in ss.spawn(3))
        scene = sample_scene(scene_seed, cfg.scene)
        pose = sample_motion(np.random.default_rng(motion_seed), cfg)
        if cfg.intrinsics_maxfrac > 0:
            ks = np.random.SeedSequence(k_seed).spawn(2)
            K1 = perturb_intrinsics(nominal, ks[0], cfg.intrinsics_maxfrac)
            K2 = perturb_intrinsics(nominal, ks[1], cfg.intrinsics_maxfrac)
        else:
            K1 = K2 = nominal
        try:
            img1, depth1 = render_view(scene, K1, None, cfg.channels)
            img2, depth2 = render_view(scene, K2, pose, cfg.channels)
        except ConfigurationError:
            continue
        flow, occ = compute_flow(depth1, K1, K2, pose, depth2, cfg.occlusion_tau)
        pair = RenderedPair(img1, img2, depth1, flow, occ, K1, K2, pose, index, global_seed, nominal)
        return normalize_pair(pair)
    raise ConfigurationError("could not render a valid pair in 100 attempts")


def label_seed(global_seed: int, index: int) -> int:
    return int(np.random.SeedSequence([global_seed, index, 7919]).generate_state(1)[0])


def generate_dataset(global_seed: int, count: int, cfg: DataConfig | None = None) -> list[RenderedPair]:
    return [make_pair(global_seed, i, cfg) for i in range(count)]
