"""Closed-form potential, field and curvature of planar polygonal electrodes.

All electrodes lie in the plane z = 0 and the plane is assumed to be fully
covered by electrodes without gaps.  The basis potential of a polygon held
at 1 V (everything else grounded) is its solid angle seen from the
observation point divided by 2π.  The gradient of the solid angle is a
line integral over the polygon boundary with the same kernel as the
Biot-Savart law of a current loop, which has a closed form per straight
segment.
"""
from __future__ import annotations

import numpy as np

_CHUNK = 1 << 18


def _as_points(points):
    p = np.asarray(points, dtype=float)
    if p.ndim == 1:
        p = p[None, :]
    if p.shape[-1] != 3:
        raise ValueError("points must have 3 coordinates")
    return p


def fan_triangles(polygons, weights):
    """Triangulate each polygon as a fan from its first vertex.

    Returns arrays ``(v0, v1, v2, w)`` with one row per triangle.
    """
    v0, v1, v2, w = [], [], [], []
    for poly, wt in zip(polygons, weights):
        poly = np.asarray(poly, dtype=float)
        n = len(poly)
        v0.append(np.repeat(poly[:1], n - 2, axis=0))
        v1.append(poly[1:-1])
        v2.append(poly[2:])
        w.append(np.full(n - 2, wt))
    if not v0:
        e = np.zeros((0, 2))
        return e, e, e, np.zeros(0)
    return (np.concatenate(v0), np.concatenate(v1), np.concatenate(v2),
            np.concatenate(w))


def polygon_edges(polygons, weights):
    """Directed boundary segments ``(start, end, weight)`` of closed polygons."""
    a, b, w = [], [], []
    for poly, wt in zip(polygons, weights):
        poly = np.asarray(poly, dtype=float)
        a.append(poly)
        b.append(np.roll(poly, -1, axis=0))
        w.append(np.full(len(poly), wt))
    if not a:
        e = np.zeros((0, 2))
        return e, e, np.zeros(0)
    return np.concatenate(a), np.concatenate(b), np.concatenate(w)


def _lift(xy):
    return np.concatenate([xy, np.zeros((len(xy), 1))], axis=1)


def solid_angle_sum(points, tris) -> np.ndarray:
    """Weighted sum of signed triangle solid angles (Van Oosterom-Strackee).

    Counter-clockwise triangles seen from z > 0 give positive angles.
    """
    p = _as_points(points)
    v0, v1, v2, w = tris
    if len(w) == 0:
        return np.zeros(len(p))
    v0, v1, v2 = _lift(v0), _lift(v1), _lift(v2)
    out = np.zeros(len(p))
    step = max(1, _CHUNK // len(w))
    for s in range(0, len(p), step):
        r = p[s:s + step, None, :]
        a, b, c = v0[None] - r, v1[None] - r, v2[None] - r
        la = np.linalg.norm(a, axis=-1)
        lb = np.linalg.norm(b, axis=-1)
        lc = np.linalg.norm(c, axis=-1)
        num = np.einsum("pek,pek->pe", a, np.cross(b, c))
        den = (la * lb * lc + np.einsum("pek,pek->pe", a, b) * lc
               + np.einsum("pek,pek->pe", a, c) * lb
               + np.einsum("pek,pek->pe", b, c) * la)
        # the points lie above the plane, so num < 0 for CCW triangles
        out[s:s + step] = (-2.0 * np.arctan2(num, den)) @ w
    return out


def _cross_matrix(v):
    """Skew matrices [v]x with [v]x @ u = v x u, shape (..., 3, 3)."""
    z = np.zeros(v.shape[:-1])
    x, y, q = v[..., 0], v[..., 1], v[..., 2]
    return np.stack([
        np.stack([z, -q, y], -1),
        np.stack([q, z, -x], -1),
        np.stack([-y, x, z], -1),
    ], -2)


def edge_gradient_hessian(points, edges, hessian=True):
    """Gradient (and Hessian) of the weighted solid angle sum.

    Parameters
    ----------
    points : (P, 3) array
    edges : tuple (start, end, weight) from :func:`polygon_edges`
    hessian : bool
        Also return the (P, 3, 3) Hessian.

    Returns
    -------
    grad : (P, 3) array
    hess : (P, 3, 3) array, only if ``hessian``
    """
    p = _as_points(points)
    A, B, w = edges
    P = len(p)
    grad = np.zeros((P, 3))
    hess = np.zeros((P, 3, 3))
    if len(w) == 0:
        return (grad, hess) if hessian else grad
    A3, B3 = _lift(A), _lift(B)
    L = B3 - A3
    Lx = _cross_matrix(L)
    step = max(1, _CHUNK // len(w))
    for s in range(0, P, step):
        r = p[s:s + step, None, :]
        a = r - A3[None]
        b = r - B3[None]
        al = np.linalg.norm(a, axis=-1)
        be = np.linalg.norm(b, axis=-1)
        c = np.einsum("pek,pek->pe", a, b)
        n = np.cross(a, b)
        D = al * be * (al * be + c)
        sfac = (al + be) / D
        # sign: a CCW loop below the point has grad(solid angle) = -sum n s
        grad[s:s + step] = -np.einsum("pek,pe,e->pk", n, sfac, w)
        if not hessian:
            continue
        ua = a / al[..., None]
        ub = b / be[..., None]
        dD = (2 * be[..., None] ** 2 * a + 2 * al[..., None] ** 2 * b
              + c[..., None] * (be[..., None] * ua + al[..., None] * ub)
              + (al * be)[..., None] * (a + b))
        ds = (ua + ub) / D[..., None] - (sfac / D)[..., None] * dD
        h = (Lx[None] * sfac[..., None, None]
             + n[..., :, None] * ds[..., None, :])
        hs = -np.einsum("peij,e->pij", h, w)
        hess[s:s + step] = 0.5 * (hs + np.swapaxes(hs, -1, -2))
    return (grad, hess) if hessian else grad
