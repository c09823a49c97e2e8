"""Independent reference implementations used as test oracles."""
from __future__ import annotations

import math
import struct

import numpy as np

from sparsedepth import autodiff as ad


def analytic_grads(fn, leaves):
    """Gradients of the scalar ``fn(*leaves)`` from the tape."""
    for t in leaves:
        t.grad = None
    with ad.Tape() as tape:
        loss = fn(*leaves)
        tape.backward(loss)
    return [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in leaves]


def numeric_grads(fn, leaves, h=1e-6, coords=None):
    """Central differences of ``fn`` at every (or the listed) coordinate."""
    out = []
    with ad.no_grad():
        for k, t in enumerate(leaves):
            g = np.zeros_like(t.data)
            flat, gf = t.data.reshape(-1), g.reshape(-1)
            idx = range(flat.size) if coords is None else coords[k]
            for i in idx:
                old = flat[i]
                flat[i] = old + h
                fp = fn(*leaves).item()
                flat[i] = old - h
                fm = fn(*leaves).item()
                flat[i] = old
                gf[i] = (fp - fm) / (2 * h)
            out.append(g)
    return out


def max_rel_error(a, n, coords=None) -> float:
    """``max |a - n| / max(max |a|, max |n|)`` over all leaves."""
    if coords is not None:
        a = [x.reshape(-1)[c] for x, c in zip(a, coords)]
        n = [x.reshape(-1)[c] for x, c in zip(n, coords)]
    num = max(float(np.max(np.abs(x - y))) if x.size else 0.0 for x, y in zip(a, n))
    den = max(max(float(np.max(np.abs(x))) if x.size else 0.0 for x in a), max(float(np.max(np.abs(y))) if y.size else 0.0 for y in n))
    return num / max(den, 1e-300)


def gradcheck(fn, leaves, h=1e-6, coords=None) -> float:
    return max_rel_error(analytic_grads(fn, leaves), numeric_grads(fn, leaves, h, coords), coords)


def weighted_sum(out, weights):
    """Scalar ``sum(out * weights)``: a generic probe of all output entries."""
    return ad.sum_(ad.mul(out, weights))


# ---------------------------------------------------------------------------
# metrics, written per pixel with plain Python floats


def ref_abs_inv(d, dh):
    d, dh = np.ravel(d), np.ravel(dh)
    return math.fsum(abs(1.0 / float(a) - 1.0 / float(b)) for a, b in zip(d, dh)) / len(d)


def ref_abs_rel(d, dh):
    d, dh = np.ravel(d), np.ravel(dh)
    return math.fsum(abs(float(a) - float(b)) / float(a) for a, b in zip(d, dh)) / len(d)


def ref_s_rmse(d, dh):
    d, dh = np.ravel(d), np.ravel(dh)
    e = [math.log(float(a) / float(b)) for a, b in zip(d, dh)]
    mu = math.fsum(e) / len(e)
    return math.sqrt(math.fsum((x - mu) ** 2 for x in e) / len(e))


# ---------------------------------------------------------------------------
# a second, minimal PFM writer (row loop, struct packing)


def reference_pfm(values, color=False) -> bytes:
    a = np.asarray(values, dtype=np.float64)
    h, w = a.shape[:2]
    head = ("PF" if color else "Pf") + "\n" + f"{w} {h}\n-1.0\n"
    body = bytearray()
    for r in range(h - 1, -1, -1):
        for c in range(w):
            px = a[r, c] if color else [a[r, c]]
            for v in np.ravel(px):
                body += struct.pack("<f", float(v))
    return head.encode("ascii") + bytes(body)


# ---------------------------------------------------------------------------
# brute-force direct convolution


def conv_reference(x, f, b, stride):
    """``x [C,H,W]``, ``f [O,C,k,k]`` -> ``[O, ceil(H/s), ceil(W/s)]`` by explicit loops."""
    c, h, w = x.shape
    o, _, k, _ = f.shape
    p = (k - 1) // 2
    ho, wo = -(-h // stride), -(-w // stride)
    y = np.zeros((o, ho, wo))
    for oc in range(o):
        for i in range(ho):
            for j in range(wo):
                acc = b[oc] if b is not None else 0.0
                for ci in range(c):
                    for di in range(k):
                        for dj in range(k):
                            yy, xx = i * stride + di - p, j * stride + dj - p
                            if 0 <= yy < h and 0 <= xx < w:
                                acc += x[ci, yy, xx] * f[oc, ci, di, dj]
                y[oc, i, j] = acc
    return y
