"""Basis functions, composite static fields and the RF pseudopotential.

Conventions: lengths in µm, basis potentials dimensionless (1 V on the
electrode), so gradients are in 1/µm and Hessians in 1/µm².  The
pseudopotential is reported in meV, its curvature in meV/µm².
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .geometry import ElectrodeLayout, Role
from .kernels import edge_gradient_hessian, fan_triangles, polygon_edges, solid_angle_sum
from .physics import PhysicalContext

GROUND = "gnd"
EDGE_CLEARANCE = 0.1
THIRD_DERIVATIVE_STEP = 1e-2


class FieldError(ValueError):
    pass


@dataclass
class FieldSample:
    """Potential and derivatives at one or more points (leading axis = points)."""

    potential: np.ndarray | None = None
    gradient: np.ndarray | None = None
    hessian: np.ndarray | None = None
    third: np.ndarray | None = None

    @property
    def field(self):
        return -self.gradient

    def __getitem__(self, i) -> "FieldSample":
        pick = lambda a: None if a is None else a[i]
        return FieldSample(pick(self.potential), pick(self.gradient),
                           pick(self.hessian), pick(self.third))


@dataclass
class PseudoSample:
    phi: np.ndarray
    gradient: np.ndarray
    hessian: np.ndarray | None
    laplacian: np.ndarray

    def __getitem__(self, i) -> "PseudoSample":
        return PseudoSample(self.phi[i], self.gradient[i],
                            None if self.hessian is None else self.hessian[i],
                            self.laplacian[i])


def check_points(points, layout: ElectrodeLayout | None = None) -> np.ndarray:
    p = np.asarray(points, dtype=float)
    p = p[None, :] if p.ndim == 1 else p
    if p.shape[-1] != 3:
        raise FieldError("points must be 3D (x, y, z) in µm")
    if np.any(p[:, 2] <= 0):
        raise FieldError("field is undefined on or below the electrode plane (z <= 0)")
    if layout is not None and np.any(p[:, 2] < EDGE_CLEARANCE):
        A, B, _ = _edges(layout, layout.names)
        near = _edge_distance(p[p[:, 2] < EDGE_CLEARANCE], A, B)
        if np.any(near < EDGE_CLEARANCE):
            raise FieldError(f"point within {EDGE_CLEARANCE} µm of an electrode edge")
    return p


def _edge_distance(p, A, B):
    d = B - A
    t = np.clip(np.einsum("pek,ek->pe", p[:, None, :2] - A[None], d)
                / np.einsum("ek,ek->e", d, d), 0, 1)
    q = A[None] + t[..., None] * d[None]
    return np.sqrt(np.sum((p[:, None, :2] - q) ** 2, -1) + p[:, None, 2] ** 2).min(axis=1)


def _resolve(layout: ElectrodeLayout, names) -> list:
    if isinstance(names, str):
        names = [names]
    for n in names:
        if n != GROUND and n not in layout:
            raise KeyError(f"unknown electrode {n!r}")
    return list(names)


def _edges(layout, names, weights=None):
    polys, w = [], []
    weights = [1.0] * len(names) if weights is None else weights
    for n, wt in zip(names, weights):
        for p in layout[n].polygons:
            polys.append(p)
            w.append(wt)
    return polygon_edges(polys, w)


def _tris(layout, names, weights=None):
    polys, w = [], []
    weights = [1.0] * len(names) if weights is None else weights
    for n, wt in zip(names, weights):
        for p in layout[n].polygons:
            polys.append(p)
            w.append(wt)
    return fan_triangles(polys, w)


def weighted_potential(layout, names, weights, points) -> np.ndarray:
    """Sum_j w_j Theta_j at the points; ``gnd`` is the uncovered remainder."""
    p = check_points(points, layout)
    names, weights = list(names), list(weights)
    g = 0.0
    if GROUND in names:
        i = names.index(GROUND)
        g = weights.pop(i)
        names.pop(i)
        # Theta_gnd = 1 - sum of all listed electrodes
        all_names = layout.names
        extra = {n: -g for n in all_names}
        for n, w in zip(names, weights):
            extra[n] += w
        names, weights = list(extra), list(extra.values())
    omega = solid_angle_sum(p, _tris(layout, names, weights))
    return g + omega / (2 * np.pi)


def weighted_field(layout, names, weights, points, hessian=True, third=False) -> FieldSample:
    """Gradient/Hessian (optional third derivatives) of Sum_j w_j Theta_j."""
    p = check_points(points, layout)
    names, weights = list(names), list(weights)
    if GROUND in names:
        i = names.index(GROUND)
        g = weights.pop(i)
        names.pop(i)
        extra = {n: -g for n in layout.names}
        for n, w in zip(names, weights):
            extra[n] += w
        names, weights = list(extra), list(extra.values())
    edges = _edges(layout, names, weights)
    return _edge_sample(p, edges, hessian, third)


def _edge_sample(p, edges, hessian=True, third=False) -> FieldSample:
    scale = 1 / (2 * np.pi)
    if not hessian and not third:
        g = edge_gradient_hessian(p, edges, hessian=False)
        return FieldSample(gradient=g * scale)
    g, H = edge_gradient_hessian(p, edges)
    T = None
    if third:
        T = third_derivatives(lambda q: edge_gradient_hessian(q, edges)[1], p) * scale
    return FieldSample(gradient=g * scale, hessian=H * scale, third=T)


def third_derivatives(hess_fn, p, step: float = THIRD_DERIVATIVE_STEP) -> np.ndarray:
    """Central differences of an analytic Hessian, symmetrized over all indices."""
    T = np.zeros((len(p), 3, 3, 3))
    for k in range(3):
        e = np.zeros(3)
        e[k] = step
        T[..., k] = (hess_fn(p + e) - hess_fn(p - e)) / (2 * step)
    perms = [(0, 1, 2, 3), (0, 1, 3, 2), (0, 2, 1, 3), (0, 2, 3, 1), (0, 3, 1, 2), (0, 3, 2, 1)]
    return sum(np.transpose(T, ax) for ax in perms) / 6


def basis_potential(layout: ElectrodeLayout, name: str, points) -> np.ndarray:
    """Solid angle of electrode ``name`` seen from the points, over 2π."""
    _resolve(layout, name)
    return weighted_potential(layout, [name], [1.0], points)


def basis_field(layout: ElectrodeLayout, name: str, points, third=False) -> FieldSample:
    _resolve(layout, name)
    s = weighted_field(layout, [name], [1.0], points, third=third)
    s.potential = weighted_potential(layout, [name], [1.0], points)
    return s


def rf_field(layout: ElectrodeLayout, points, hessian=True, third=False) -> FieldSample:
    """Basis function derivatives of all RF electrodes driven together."""
    rf = layout.rf_names
    if not rf:
        raise FieldError("layout has no RF electrode")
    return weighted_field(layout, rf, [1.0] * len(rf), points, hessian, third)


def pp_from_rf(rf: FieldSample, prefactor: float) -> PseudoSample:
    """Pseudopotential and derivatives from RF basis derivatives.

    ``prefactor`` converts |grad Theta|² into the desired energy unit.
    """
    g, H = rf.gradient, rf.hessian
    phi = prefactor * np.einsum("pk,pk->p", g, g)
    grad = 2 * prefactor * np.einsum("pik,pk->pi", H, g)
    lap = 2 * prefactor * np.einsum("pij,pij->p", H, H)
    hpp = None
    if rf.third is not None:
        hpp = 2 * prefactor * (np.einsum("pik,pjk->pij", H, H)
                               + np.einsum("pk,pkij->pij", g, rf.third))
    return PseudoSample(phi, grad, hpp, lap)


def pseudopotential(layout: ElectrodeLayout, ctx: PhysicalContext, points,
                    hessian: bool = True) -> PseudoSample:
    """phi_PP = Q V_RF² |grad Theta_RF|² / (4 m Omega²) in meV and derivatives.

    The Hessian needs third derivatives of Theta and is skipped when
    ``hessian`` is False.
    """
    rf = rf_field(layout, points, third=hessian)
    return pp_from_rf(rf, ctx.pp_prefactor)


@dataclass
class SecularModes:
    eigenvalues: np.ndarray  # meV/µm², ascending
    axes: np.ndarray  # columns are principal axes
    frequencies: np.ndarray  # MHz, nan for unstable directions

    @property
    def unstable(self) -> np.ndarray:
        return self.eigenvalues <= 0


def secular_frequencies(hessian, ctx: PhysicalContext) -> SecularModes:
    """Eigen-decompose a total curvature matrix (meV/µm²) into modes."""
    H = np.asarray(hessian, dtype=float)
    if not np.allclose(H, H.T, atol=1e-9 * max(1.0, np.abs(H).max())):
        raise ValueError("Hessian must be symmetric")
    lam, vec = np.linalg.eigh(0.5 * (H + H.T))
    return SecularModes(lam, vec, ctx.curvature_to_frequency(lam))


def composite_static_field(layout: ElectrodeLayout, voltages: Mapping[str, float],
                           points, third: bool = False) -> FieldSample:
    """Electrostatic potential (V), gradient (V/µm) and Hessian (V/µm²)."""
    names = _resolve(layout, list(voltages))
    w = [float(voltages[n]) for n in names]
    s = weighted_field(layout, names, w, points, third=third)
    s.potential = weighted_potential(layout, names, w, points)
    return s


# ---------------------------------------------------------------- 2D strips


@dataclass(frozen=True)
class StripSet:
    """Infinitely long strips along x, given as (y_lo, y_hi, weight) rows.

    Closed forms: Theta = Im F with F(ζ) = (1/π) Σ w [log(ζ - hi) - log(ζ - lo)],
    ζ = y + i z.
    """

    strips: tuple

    def _derivs(self, y, z, order):
        zeta = np.asarray(y, float) + 1j * np.asarray(z, float)
        out = 0
        for lo, hi, w in self.strips:
            if order == 0:
                out = out + w * (np.log(zeta - hi) - np.log(zeta - lo))
            else:
                k = order
                f = (-1) ** (k - 1) * np.prod(range(1, k))
                out = out + w * f * ((zeta - hi) ** (-k) - (zeta - lo) ** (-k))
        return out / np.pi

    def potential(self, y, z):
        return self._derivs(y, z, 0).imag

    def gradient(self, y, z):
        """(dTheta/dy, dTheta/dz)."""
        f1 = self._derivs(y, z, 1)
        return np.stack([f1.imag, f1.real], -1)

    def hessian(self, y, z):
        f2 = self._derivs(y, z, 2)
        return np.stack([np.stack([f2.imag, f2.real], -1),
                         np.stack([f2.real, -f2.imag], -1)], -2)

    def grad_sq(self, y, z):
        return np.abs(self._derivs(y, z, 1)) ** 2

    def laplacian_grad_sq(self, y, z):
        """Laplacian of |grad Theta|², equal to 4 |F''|²."""
        return 4 * np.abs(self._derivs(y, z, 2)) ** 2

    def d_grad_sq_dz(self, y, z):
        f1, f2 = self._derivs(y, z, 1), self._derivs(y, z, 2)
        # d/dz |F'|² = 2 Re(conj(F') * i F'')
        return 2 * np.real(np.conj(f1) * 1j * f2)


def linear_rf_strips(w_g: float, w_rf: float) -> StripSet:
    a, b = w_g / 2, w_g / 2 + w_rf
    return StripSet(((a, b, 1.0), (-b, -a, 1.0)))


@dataclass(frozen=True)
class LinearOptimum:
    w_g: float
    w_rf: float
    curvature: float  # Laplacian of |grad Theta|² at the null (µm⁻⁴)


def optimal_linear_widths(h: float, grid_step: float | None = 0.01,
                          span=(0.1, 3.0)) -> LinearOptimum:
    """RF rail widths of a symmetric five-wire trap that maximize the
    pseudopotential curvature with the RF null held at height ``h``.

    Rails at |y| in [a, b] put the null at sqrt(a b), so b = h² / a and the
    search is over w_g = 2a alone.  ``grid_step`` (units of h) scans w_g on
    a grid; None maximizes continuously.
    """
    if not h > 0:
        raise ValueError("h must be positive")

    def curv(w_g):
        a = w_g / 2
        return float(linear_rf_strips(w_g, h * h / a - a).laplacian_grad_sq(0.0, h))

    lo, hi = span[0] * h, min(span[1], 1.999) * h  # w_g < 2h keeps b > a
    if grid_step is None:
        from scipy.optimize import minimize_scalar
        r = minimize_scalar(lambda w: -curv(w), bounds=(lo, hi), method="bounded",
                            options={"xatol": 1e-10 * h})
        w_g = float(r.x)
    else:
        k0, k1 = int(np.ceil(span[0] / grid_step - 1e-9)), int(np.floor(hi / h / grid_step + 1e-9))
        grid = np.arange(k0, k1 + 1) * grid_step * h
        w_g = float(grid[np.argmax([curv(w) for w in grid])])
    a = w_g / 2
    return LinearOptimum(w_g, h * h / a - a, curv(w_g))


# ---------------------------------------------------------------- export


def export_grid_csv(path, layout, points, ctx: PhysicalContext | None = None,
                    electrode: str | None = None) -> None:
    """Write x,y,z,Theta (electrode given) or x,y,z,phi_pp,laplacian rows."""
    p = check_points(points, layout)
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        if electrode is not None:
            th = basis_potential(layout, electrode, p)
            w.writerow(["x", "y", "z", "theta"])
            for row, t in zip(p, th):
                w.writerow([*map(repr, row), repr(float(t))])
        else:
            pp = pseudopotential(layout, ctx or PhysicalContext(), p, hessian=False)
            w.writerow(["x", "y", "z", "phi_pp_meV", "laplacian_meV_um2"])
            for row, a, b in zip(p, pp.phi, pp.laplacian):
                w.writerow([*map(repr, row), repr(float(a)), repr(float(b))])
