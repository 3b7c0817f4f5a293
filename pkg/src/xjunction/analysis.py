"""Transport paths through a layout and their pseudopotential profiles."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import constants, optimize

from .fields import pseudopotential, secular_frequencies
from .geometry import ARM_AXES, ElectrodeLayout
from .physics import PhysicalContext

log = logging.getLogger(__name__)

Z_TOL = 1e-4


class PathError(RuntimeError):
    pass


@dataclass
class PathSample:
    s: float  # axial coordinate along the arm (µm)
    position: np.ndarray
    phi: float  # meV
    laplacian: float  # meV/µm²
    frequencies: np.ndarray | None = None  # MHz, (axial, r1, r2)
    axes: np.ndarray | None = None


@dataclass
class PathResult:
    samples: list
    diagnostics: list = field(default_factory=list)

    def __len__(self):
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)

    def __getitem__(self, i):
        return self.samples[i]

    @property
    def s(self):
        return np.array([p.s for p in self.samples])

    @property
    def positions(self):
        return np.array([p.position for p in self.samples]).reshape(-1, 3)

    @property
    def heights(self):
        return self.positions[:, 2]

    @property
    def phi(self):
        return np.array([p.phi for p in self.samples])

    @property
    def laplacian(self):
        return np.array([p.laplacian for p in self.samples])

    @property
    def complete(self) -> bool:
        return not self.diagnostics


def _axis(arm: str):
    ex, ey = ARM_AXES[arm]
    return np.array([ex, ey, 0.0])


def _point(arm, s, z):
    return _axis(arm) * s + np.array([0.0, 0.0, z])


def _axial_values(axial_range, step):
    lo, hi = axial_range
    if step <= 0:
        raise ValueError("step must be positive")
    if hi < lo:
        return np.zeros(0)
    n = int(np.floor((hi - lo) / step + 1e-9)) + 1
    return lo + step * np.arange(n)


def _phi(layout, ctx, p):
    return pseudopotential(layout, ctx, p, hessian=False)


def _signed_s(arm, s):
    """Map a signed axial coordinate onto (arm, distance) pairs.

    Negative coordinates run along the opposite arm.
    """
    opposite = {"R": "L", "L": "R", "U": "D", "D": "U"}
    return (arm, s) if s >= 0 else (opposite[arm], -s)


def _sample(layout, ctx, arm, s, z, modes=False):
    a, d = _signed_s(arm, s)
    p = _point(a, d, z)
    pp = pseudopotential(layout, ctx, p, hessian=modes)
    f = axes = None
    if modes:
        m = secular_frequencies(pp.hessian[0], ctx)
        axes = m.axes
        f = m.frequencies
    return PathSample(float(s), p, float(pp.phi[0]), float(pp.laplacian[0]), f, axes)


def _minimize_z(layout, ctx, p_of_z, lo, hi, guess=None):
    f = lambda z: float(_phi(layout, ctx, p_of_z(z)).phi[0])
    zs = np.linspace(lo, hi, 41)
    vals = np.array([f(z) for z in zs])
    i = int(np.argmin(vals))
    if guess is not None:
        # prefer the local minimum nearest the warm start
        mins = [j for j in range(1, len(zs) - 1) if vals[j] <= vals[j - 1] and vals[j] <= vals[j + 1]]
        if mins:
            i = min(mins, key=lambda j: (abs(zs[j] - guess), vals[j]))
    if i == 0 or i == len(zs) - 1:
        return None
    r = optimize.minimize_scalar(f, bracket=(zs[i - 1], zs[i], zs[i + 1]), method="brent",
                                 tol=1e-10)
    if not r.success and not np.isfinite(r.x):
        return None
    return float(r.x)


def path_min_pp(layout: ElectrodeLayout, ctx: PhysicalContext, axial_range, step: float,
                arm: str = "R", h: float | None = None, modes: bool = False) -> PathResult:
    """Ion height minimizing phi_PP at each axial position of an arm.

    The search runs on the vertical line above the arm axis within
    [0.2 h, 3 h], warm-started from the previous sample.
    """
    h = h or layout.params.get("h", 50.0)
    lo, hi = 0.2 * h, 3 * h
    out, diag, prev = [], [], None
    svals = _axial_values(axial_range, step)
    for s in svals:
        a, d = _signed_s(arm, s)
        z = _minimize_z(layout, ctx, lambda z: _point(a, d, z), lo, hi, prev)
        if z is None:
            raise PathError(f"no bracketed pseudopotential minimum at s={s:g} µm in [{lo:g}, {hi:g}]")
        if prev is not None and abs(z - prev) > 2 * step:
            diag.append(f"height jump {z - prev:+.3g} µm at s={s:g}")
            log.warning(diag[-1])
        out.append(_sample(layout, ctx, arm, s, z, modes))
        prev = z
    return PathResult(out, diag)


def path_fixed_height(layout: ElectrodeLayout, ctx: PhysicalContext, h: float, axial_range,
                      step: float, arm: str = "R", modes: bool = False) -> PathResult:
    return PathResult([_sample(layout, ctx, arm, s, h, modes)
                       for s in _axial_values(axial_range, step)])


def path_const_confinement(layout: ElectrodeLayout, ctx: PhysicalContext, target: float,
                           axial_range, step: float, arm: str = "R", h: float | None = None,
                           modes: bool = False) -> PathResult:
    """Heights where the pseudopotential Laplacian equals ``target`` (meV/µm²).

    Takes the root nearest the previous sample; stops with a diagnostic
    where the target cannot be reached.
    """
    h = h or layout.params.get("h", 50.0)
    lo, hi = 0.2 * h, 3 * h
    svals = _axial_values(axial_range, step)
    out, diag, prev = [], [], None
    for s in svals:
        a, d = _signed_s(arm, s)
        g = lambda z: float(_phi(layout, ctx, _point(a, d, z)).laplacian[0]) - target
        zs = np.linspace(lo, hi, 57)
        vals = np.array([g(z) for z in zs])
        brackets = [j for j in range(len(zs) - 1) if np.sign(vals[j]) != np.sign(vals[j + 1])]
        if not brackets:
            diag.append(f"confinement {target:g} meV/µm² unreachable at s={s:g} µm")
            log.warning(diag[-1])
            break
        ref = prev if prev is not None else h
        j = min(brackets, key=lambda j: abs(0.5 * (zs[j] + zs[j + 1]) - ref))
        z = optimize.brentq(g, zs[j], zs[j + 1], xtol=1e-10, rtol=1e-14)
        if prev is not None and abs(z - prev) > 2 * step:
            diag.append(f"height jump {z - prev:+.3g} µm at s={s:g}")
            log.warning(diag[-1])
        out.append(_sample(layout, ctx, arm, s, z, modes))
        prev = z
    return PathResult(out, diag)


# ---------------------------------------------------------------- profiles


@dataclass
class BarrierProfile:
    peak_positions: np.ndarray
    peak_heights: np.ndarray
    null_positions: np.ndarray  # interior local minima
    null_values: np.ndarray


def _parabolic(x, y, i):
    """Vertex of the parabola through samples i-1, i, i+1."""
    x0, x1, x2 = x[i - 1:i + 2]
    y0, y1, y2 = y[i - 1:i + 2]
    den = (x0 - x1) * (x0 - x2) * (x1 - x2)
    A = (x2 * (y1 - y0) + x1 * (y0 - y2) + x0 * (y2 - y1)) / den
    B = (x2 ** 2 * (y0 - y1) + x1 ** 2 * (y2 - y0) + x0 ** 2 * (y1 - y2)) / den
    C = (x1 * x2 * (x1 - x2) * y0 + x2 * x0 * (x2 - x0) * y1 + x0 * x1 * (x0 - x1) * y2) / den
    if A == 0:
        return x1, y1
    xv = -B / (2 * A)
    xv = min(max(xv, x0), x2)
    return xv, A * xv ** 2 + B * xv + C


def barrier_profile(path) -> BarrierProfile:
    """Local maxima and interior minima of phi_PP along a path."""
    if len(path) < 3:
        raise ValueError("barrier profile needs at least 3 samples")
    s = np.array([p.s for p in path], float)
    y = np.array([p.phi for p in path], float)
    peaks, nulls = [], []
    for i in range(1, len(s) - 1):
        if y[i] > y[i - 1] and y[i] >= y[i + 1]:
            peaks.append(_parabolic(s, y, i))
        elif y[i] < y[i - 1] and y[i] <= y[i + 1]:
            nulls.append(_parabolic(s, y, i))
    pk = np.array(peaks).reshape(-1, 2)
    nl = np.array(nulls).reshape(-1, 2)
    return BarrierProfile(pk[:, 0], np.maximum(pk[:, 1], 0), nl[:, 0], np.maximum(nl[:, 1], 0))


class BudgetError(ValueError):
    pass


def radial_budget(laplacian: float, f_axial_mhz: float, ctx: PhysicalContext) -> float:
    """Radial frequency (MHz) when the total confinement left after an axial
    mode is shared equally by the two radial modes."""
    k_axial = float(ctx.frequency_to_curvature(f_axial_mhz))
    rest = laplacian - k_axial
    if rest < -1e-15 * max(1.0, laplacian):
        raise BudgetError(
            f"confinement {laplacian:g} meV/µm² cannot support {f_axial_mhz:g} MHz axial")
    return float(ctx.curvature_to_frequency(max(rest, 0) / 2)) if rest > 0 else 0.0


# ---------------------------------------------------------------- micromotion


@dataclass
class EmmEstimate:
    amplitude: float  # µm
    direction: np.ndarray
    field: float  # V/m along the direction


def emm_from_field(e_rf, ctx: PhysicalContext) -> EmmEstimate:
    """Driven-motion amplitude Q E / (m Omega²) for an RF field (V/m)."""
    e = np.atleast_1d(np.asarray(e_rf, dtype=float))
    mag = float(np.linalg.norm(e))
    d = e / mag if mag > 0 else np.zeros_like(e)
    amp = ctx.charge * mag / (ctx.mass * ctx.omega_rf ** 2) * 1e6
    return EmmEstimate(amp, d, mag)


def emm_from_phi(phi_mev: float, ctx: PhysicalContext) -> float:
    """sqrt(4 Q phi / (m Omega²)) in µm for a pseudopotential in meV."""
    energy = phi_mev * 1e-3 * constants.e
    return float(np.sqrt(4 * energy / (ctx.mass * ctx.omega_rf ** 2)) * 1e6)


def emm_estimate(layout: ElectrodeLayout, ctx: PhysicalContext, point,
                 omega0: float | None = None) -> EmmEstimate:
    """EMM along the principal pseudopotential direction carrying most RF field.

    ``omega0`` (rad/s), if given, applies the exact driven-oscillator factor
    1 / (1 - omega0² / Omega²).
    """
    from .fields import rf_field

    pp = pseudopotential(layout, ctx, point)
    m = secular_frequencies(pp.hessian[0], ctx)
    e = rf_field(layout, point, hessian=False).gradient[0] * ctx.v_rf * 1e6
    proj = m.axes.T @ e
    k = int(np.argmax(np.abs(proj)))
    est = emm_from_field(proj[k], ctx)
    amp = est.amplitude
    if omega0 is not None:
        if omega0 >= ctx.omega_rf:
            raise ValueError("omega0 must be well below the RF frequency")
        amp /= 1 - (omega0 / ctx.omega_rf) ** 2
    return EmmEstimate(amp, m.axes[:, k] * np.sign(proj[k]), abs(float(proj[k])))


# ---------------------------------------------------------------- export


PATH_COLUMNS = ["x", "y", "z", "phi_pp_meV", "laplacian_meV_um2",
                "f_axial_MHz", "f_r1_MHz", "f_r2_MHz"]


def path_modes(path, arm: str = "R"):
    """Split each sample's modes into (axial, r1, r2) using the arm direction."""
    ax = _axis(arm)
    out = []
    for p in path:
        if p.frequencies is None:
            out.append((np.nan, np.nan, np.nan))
            continue
        k = int(np.argmax(np.abs(p.axes.T @ ax)))
        rest = [p.frequencies[j] for j in range(3) if j != k]
        out.append((p.frequencies[k], max(rest), min(rest)))
    return np.array(out).reshape(-1, 3)


def write_path_csv(path_obj, fname, arm: str = "R") -> None:
    fr = path_modes(path_obj, arm)
    with open(fname, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(PATH_COLUMNS)
        for p, fq in zip(path_obj, fr):
            w.writerow([f"{v:.10g}" for v in (*p.position, p.phi, p.laplacian, *fq)])
