"""Two-view projective geometry: projection, linear triangulation and
pose-error metrics.

A point ``M`` is triangulated from ``m1 <-> m2`` as the unit vector that
minimises ``||A M|| / ||M||`` with ``A = [[m1]_x P1; [m2]_x P2]``, i.e. the
eigenvector of ``A^T A`` with the smallest eigenvalue.  The 4x4 eigenproblem
is solved with a cyclic Jacobi iteration vectorised over pixels.
"""
from __future__ import annotations

import enum
import math

import numpy as np

from .errors import DegenerateConfigurationError, DegenerateMotionError, PointAtInfinityError
from .scene import CameraIntrinsics, PoseSE3

INFINITY_TOL = 1e-12
DEGENERACY_TOL = 1e-10


class TriangulationStatus(enum.IntEnum):
    OK = 0
    DEGENERATE = 1
    AT_INFINITY = 2
    BEHIND_CAMERA = 3


def projection_matrix(K: CameraIntrinsics | np.ndarray, pose: PoseSE3 | None = None) -> np.ndarray:
    """``P = K [R | t]``; the identity pose gives the reference camera."""
    Km = K.K if isinstance(K, CameraIntrinsics) else np.asarray(K, dtype=np.float64)
    pose = pose or PoseSE3.identity()
    return Km @ np.hstack([pose.R, pose.t[:, None]])


def project(P: np.ndarray, M) -> tuple[np.ndarray, float]:
    """Pixel ``(u, v)`` of a 3-D (or homogeneous 4-D) point and its scale ``lambda``."""
    M = np.asarray(M, dtype=np.float64)
    Mh = np.append(M, 1.0) if M.shape == (3,) else M
    x = P @ Mh
    lam = float(x[2])
    if abs(lam) < INFINITY_TOL:
        raise PointAtInfinityError(f"projective scale {lam:g} vanishes")
    return x[:2] / lam, lam


def backproject_pixel(K: CameraIntrinsics, uv, depth: float) -> np.ndarray:
    u, v = uv
    return depth * np.array([(u - K.cx) / K.fx, (v - K.cy) / K.fy, 1.0])


def cross_matrix(u) -> np.ndarray:
    """Skew-symmetric ``[u]_x`` with ``[u]_x v = u x v``; batched over leading axes."""
    u = np.asarray(u, dtype=np.float64)
    out = np.zeros(u.shape[:-1] + (3, 3))
    out[..., 0, 1] = -u[..., 2]
    out[..., 0, 2] = u[..., 1]
    out[..., 1, 0] = u[..., 2]
    out[..., 1, 2] = -u[..., 0]
    out[..., 2, 0] = -u[..., 1]
    out[..., 2, 1] = u[..., 0]
    return out


def triangulation_matrix(P1: np.ndarray, P2: np.ndarray, m1, m2) -> np.ndarray:
    """The 6x4 system ``A`` (or ``[..., 6, 4]`` for batched correspondences)."""
    top = cross_matrix(m1) @ P1
    bottom = cross_matrix(m2) @ P2
    return np.concatenate([top, bottom], axis=-2)


def jacobi_eigh(S: np.ndarray, tol: float = 1e-30, max_sweeps: int = 50) -> tuple[np.ndarray, np.ndarray]:
    """Eigen-decomposition of symmetric matrices by cyclic Jacobi rotations.

    ``S`` has shape ``[..., n, n]``.  Returns ascending eigenvalues
    ``[..., n]`` and eigenvectors as columns ``[..., n, n]``.
    """
    S = np.asarray(S, dtype=np.float64)
    n = S.shape[-1]
    batch = S.shape[:-2]
    A = S.reshape((-1, n, n)).copy()
    V = np.broadcast_to(np.eye(n), A.shape).copy()
    scale = np.maximum(np.sum(A * A, axis=(1, 2)), np.finfo(float).tiny)
    iu = np.triu_indices(n, 1)
    for _ in range(max_sweeps):
        off = np.sum(A[:, iu[0], iu[1]] ** 2, axis=1)
        if np.all(off <= tol * scale):
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[:, p, q]
                active = np.abs(apq) > 0
                if not np.any(active):
                    continue
                app, aqq = A[:, p, p], A[:, q, q]
                with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
                    theta = np.where(active, (aqq - app) / (2.0 * np.where(active, apq, 1.0)), 0.0)
                    # a huge theta means a negligible rotation; t underflows to 0 correctly
                    t = np.where(theta >= 0, 1.0, -1.0) / (np.abs(theta) + np.hypot(theta, 1.0))
                t = np.where(active, t, 0.0)
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                c3, s3 = c[:, None], s[:, None]
                rp, rq = A[:, p, :].copy(), A[:, q, :].copy()
                A[:, p, :] = c3 * rp - s3 * rq
                A[:, q, :] = s3 * rp + c3 * rq
                cp, cq = A[:, :, p].copy(), A[:, :, q].copy()
                A[:, :, p] = c3 * cp - s3 * cq
                A[:, :, q] = s3 * cp + c3 * cq
                A[:, p, q] = 0.0
                A[:, q, p] = 0.0
                vp, vq = V[:, :, p].copy(), V[:, :, q].copy()
                V[:, :, p] = c3 * vp - s3 * vq
                V[:, :, q] = s3 * vp + c3 * vq
    w = np.diagonal(A, axis1=1, axis2=2)
    order = np.argsort(w, axis=1, kind="stable")
    w = np.take_along_axis(w, order, axis=1)
    V = np.take_along_axis(V, order[:, None, :], axis=2)
    return w.reshape(batch + (n,)), V.reshape(batch + (n, n))


def _solve(A: np.ndarray):
    """Smallest eigenvector of ``A^T A`` plus a per-row status code."""
    AtA = np.swapaxes(A, -1, -2) @ A
    w, V = jacobi_eigh(AtA)
    M = V[..., :, 0]
    status = np.full(M.shape[:-1], TriangulationStatus.OK, dtype=np.int8)
    gap = w[..., 1] - w[..., 0]
    status[gap <= DEGENERACY_TOL * np.maximum(np.abs(w[..., -1]), np.finfo(float).tiny)] = TriangulationStatus.DEGENERATE
    inf = (np.abs(M[..., 3]) <= INFINITY_TOL) & (status == TriangulationStatus.OK)
    status[inf] = TriangulationStatus.AT_INFINITY
    return M, status


def linear_triangulate(A: np.ndarray, homogeneous: bool = False) -> np.ndarray:
    """Minimiser of ``||A M|| / ||M||`` for one 6x4 system.

    Returns the dehomogenised 3-D point, or the unit 4-vector when
    ``homogeneous`` is set.
    """
    M, status = _solve(np.asarray(A, dtype=np.float64))
    if status == TriangulationStatus.DEGENERATE:
        raise DegenerateConfigurationError("smallest eigenvalue of A^T A is not simple")
    if homogeneous:
        return M
    if status == TriangulationStatus.AT_INFINITY:
        raise PointAtInfinityError("triangulated point lies at infinity")
    return M[:3] / M[3]


def triangulate_point(P1, P2, m1, m2) -> np.ndarray:
    m1 = np.append(np.asarray(m1, dtype=np.float64)[:2], 1.0)
    m2 = np.append(np.asarray(m2, dtype=np.float64)[:2], 1.0)
    return linear_triangulate(triangulation_matrix(P1, P2, m1, m2))


def triangulate_depth_map(
    flow12: np.ndarray,
    K1: CameraIntrinsics,
    K2: CameraIntrinsics,
    pose: PoseSE3,
) -> tuple[np.ndarray, np.ndarray]:
    """Per-pixel linear triangulation of ``p <-> p + flow``.

    Returns ``(depth, status)``; depth is NaN wherever status is not OK.
    """
    flow12 = np.asarray(flow12, dtype=np.float64)
    h, w, _ = flow12.shape
    P1 = projection_matrix(K1)
    P2 = projection_matrix(K2, pose)
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    m1 = np.stack([xs, ys, np.ones_like(xs)], axis=-1).reshape(-1, 3)
    m2 = m1.copy()
    m2[:, :2] += flow12.reshape(-1, 2)
    M, status = _solve(triangulation_matrix(P1, P2, m1, m2))
    ok = status == TriangulationStatus.OK
    depth = np.full(h * w, np.nan)
    X = M[ok, :3] / M[ok, 3:4]
    z1 = X[:, 2]
    z2 = X @ pose.R[2] + pose.t[2]
    behind = (z1 <= 0) | (z2 <= 0)
    idx = np.flatnonzero(ok)
    status[idx[behind]] = TriangulationStatus.BEHIND_CAMERA
    depth[idx[~behind]] = z1[~behind]
    return depth.reshape(h, w), status.reshape(h, w)


def triangulate_inverse_depth_map(
    flow12: np.ndarray,
    K1: CameraIntrinsics,
    K2: CameraIntrinsics,
    pose: PoseSE3,
) -> tuple[np.ndarray, np.ndarray]:
    """Per-pixel triangulated inverse depth ``M4 / M3`` and status.

    Unlike :func:`triangulate_depth_map` this stays finite for points at
    infinity (inverse depth 0) and is negative for points behind camera 1;
    only degenerate pixels are NaN.
    """
    flow12 = np.asarray(flow12, dtype=np.float64)
    h, w, _ = flow12.shape
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    m1 = np.stack([xs, ys, np.ones_like(xs)], axis=-1).reshape(-1, 3)
    m2 = m1.copy()
    m2[:, :2] += flow12.reshape(-1, 2)
    M, status = _solve(triangulation_matrix(projection_matrix(K1), projection_matrix(K2, pose), m1, m2))
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = M[:, 3] / M[:, 2]
    inv[status == TriangulationStatus.DEGENERATE] = np.nan
    return inv.reshape(h, w), status.reshape(h, w)


def rotation_angle_error(R_est: np.ndarray, R_gt: np.ndarray) -> float:
    """Angle of ``R_est^T R_gt`` in degrees."""
    c = (np.trace(np.asarray(R_est).T @ np.asarray(R_gt)) - 1.0) / 2.0
    return math.degrees(math.acos(min(1.0, max(-1.0, c))))


def translation_angle_error(t_est, t_gt) -> float:
    """Angle between translation directions in degrees."""
    a = np.asarray(t_est, dtype=np.float64)
    b = np.asarray(t_gt, dtype=np.float64)
    if np.linalg.norm(a) == 0 or np.linalg.norm(b) == 0:
        raise DegenerateMotionError("translation direction undefined for a zero vector")
    return math.degrees(math.atan2(np.linalg.norm(np.cross(a, b)), float(a @ b)))
