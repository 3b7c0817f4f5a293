"""Transport waveforms, static wells and radial-mode tilt.

The optimizer only sees a lookup table of per-volt fields and curvatures
of every control electrode at the path points, plus the pseudopotential
gradient and curvature there.  Units: fields in V/m, curvatures of the
ion's potential energy in meV/µm².
"""
from __future__ import annotations

import csv
import re
from dataclasses import dataclass, field

import numpy as np

from . import qp as qpmod
from .fields import basis_field, composite_static_field, pseudopotential, secular_frequencies
from .geometry import ElectrodeLayout
from .physics import PhysicalContext

AXES = {"x": 0, "y": 1, "z": 2}
_MIDDLE = re.compile(r"^(c|C|[RULD]\d+)$")
_OUTER = re.compile(r"^O.*[tw]$")


class WaveformError(RuntimeError):
    pass


def middle_electrodes(layout: ElectrodeLayout) -> list[str]:
    """Segmented middle control electrodes (centre plus arm segments)."""
    return [n for n in layout.control_names if _MIDDLE.match(n)]


def outer_electrodes(layout: ElectrodeLayout) -> list[str]:
    return [n for n in layout.control_names if _OUTER.match(n)]


@dataclass
class FieldTable:
    """Per-volt fields and curvatures at the path points.

    Attributes
    ----------
    E : (N, J, 3) field of electrode j at 1 V, V/m
    H : (N, J, 3, 3) curvature of the ion energy per volt, meV/µm²
    E_pp : (N, 3) pseudopotential force divided by the charge, V/m
    H_pp : (N, 3, 3) pseudopotential curvature, meV/µm²
    """

    names: list
    positions: np.ndarray
    E: np.ndarray
    H: np.ndarray
    E_pp: np.ndarray
    H_pp: np.ndarray
    centroids: np.ndarray

    def __len__(self):
        return len(self.positions)

    def totals(self, voltages):
        """Total field and curvature per step for (N, J) voltages."""
        v = np.asarray(voltages, dtype=float).reshape(len(self), len(self.names))
        E = self.E_pp + np.einsum("njk,nj->nk", self.E, v)
        H = self.H_pp + np.einsum("njab,nj->nab", self.H, v)
        return E, H

    def subset(self, rows) -> "FieldTable":
        return FieldTable(self.names, self.positions[rows], self.E[rows], self.H[rows],
                          self.E_pp[rows], self.H_pp[rows], self.centroids)


def build_field_table(layout: ElectrodeLayout, ctx: PhysicalContext, positions,
                      electrodes=None) -> FieldTable:
    names = list(electrodes) if electrodes is not None else middle_electrodes(layout)
    if not names:
        raise WaveformError("no control electrodes selected")
    p = np.atleast_2d(np.asarray(positions, dtype=float))
    N, J = len(p), len(names)
    E = np.zeros((N, J, 3))
    H = np.zeros((N, J, 3, 3))
    for j, n in enumerate(names):
        s = basis_field(layout, n, p)
        E[:, j] = -s.gradient * 1e6
        H[:, j] = s.hessian * ctx.energy_per_volt
    pp = pseudopotential(layout, ctx, p)
    charge_e = ctx.energy_per_volt / 1e3
    E_pp = -pp.gradient * 1e3 / charge_e
    cent = np.array([layout[n].centroid for n in names])
    return FieldTable(names, p, E, H, E_pp, pp.hessian, cent)


@dataclass(frozen=True)
class WaveformWeights:
    smooth1: float = 1.0
    smooth2: float = 1.0
    locality: float = 0.1
    residual: float = 1e3
    ridge: float = 0.01  # added to the locality scale so the cost stays strictly convex
    norm: float = 0.0  # uniform penalty on every voltage


# minimum-norm voltages for isolated wells
STATIC_WEIGHTS = WaveformWeights(smooth1=0.0, smooth2=0.0, locality=0.0, residual=0.0, norm=1.0)


@dataclass
class TransportRequest:
    """Positions to visit and the well each one must hold.

    ``f_axial`` is in MHz (scalar or one value per step) and ``axis`` names
    the trap axis ("x" or "y").
    """

    positions: np.ndarray
    f_axial: object = 1.5
    axis: str = "y"
    radial_floor: float = 3.0
    bounds: tuple = (-10.0, 10.0)
    weights: WaveformWeights = field(default_factory=WaveformWeights)
    electrodes: tuple | None = None
    length_scale: float = 50.0

    def __post_init__(self):
        self.positions = np.atleast_2d(np.asarray(self.positions, dtype=float))
        if self.axis not in ("x", "y"):
            raise ValueError("axis must be 'x' or 'y'")
        f = np.broadcast_to(np.asarray(self.f_axial, dtype=float), (len(self.positions),))
        if np.any(f <= 0):
            raise ValueError("axial frequency must be positive")
        lo, hi = self.bounds
        if lo > hi:
            raise ValueError("voltage bounds reversed")
        if len(self.positions) > 1:
            jumps = np.linalg.norm(np.diff(self.positions, axis=0), axis=1)
            if jumps.max() > 10 * max(np.median(jumps), 1e-12):
                raise ValueError("path is not continuous")

    @classmethod
    def from_path(cls, path, **kw) -> "TransportRequest":
        return cls(path.positions, **kw)

    def targets(self, ctx: PhysicalContext) -> np.ndarray:
        f = np.broadcast_to(np.asarray(self.f_axial, dtype=float), (len(self.positions),))
        return ctx.frequency_to_curvature(f)


@dataclass
class StepDiagnostics:
    field: np.ndarray  # V/m
    hessian: np.ndarray  # meV/µm²
    frequencies: np.ndarray  # MHz, (axial, r1, r2) with r1 ≥ r2
    axial_alignment: float  # |cos| between the axial mode and the trap axis

    @property
    def residual_field(self) -> float:
        return float(np.linalg.norm(self.field))


@dataclass
class Waveform:
    names: list
    voltages: np.ndarray  # (N, J)
    positions: np.ndarray
    diagnostics: list
    residuals: dict = field(default_factory=dict)
    solver: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.voltages)

    def as_dicts(self) -> list[dict]:
        return [dict(zip(self.names, v)) for v in self.voltages]

    @property
    def frequencies(self) -> np.ndarray:
        return np.array([d.frequencies for d in self.diagnostics])

    @property
    def voltage_range(self) -> tuple[float, float]:
        return float(self.voltages.min()), float(self.voltages.max())


def _transverse(axis):
    a = AXES[axis]
    b, c = [k for k in range(3) if k != a]
    return a, b, c


def _modes(H, ctx, a):
    m = secular_frequencies(H, ctx)
    k = int(np.argmax(np.abs(m.axes[a])))
    rest = sorted((m.frequencies[j] for j in range(3) if j != k), reverse=True)
    return np.array([m.frequencies[k], *rest]), float(abs(m.axes[a, k]))


def _diagnose(E, H, ctx, axis):
    a = AXES[axis]
    out = []
    for e, h in zip(E, H):
        f, align = _modes(h, ctx, a)
        out.append(StepDiagnostics(e, h, f, align))
    return out


def _constraints(request: TransportRequest, table: FieldTable, ctx: PhysicalContext):
    """Stacked equality and inequality rows with row labels (class, step)."""
    N, J = len(table), len(table.names)
    a, b, c = _transverse(request.axis)
    target = request.targets(ctx)
    eq_rows, eq_rhs, eq_lab = [], [], []
    in_rows, in_rhs, in_lab = [], [], []

    def row(i, coeffs):
        r = np.zeros(N * J)
        r[i * J:(i + 1) * J] = coeffs
        return r

    for i in range(N):
        for k in range(3):
            eq_rows.append(row(i, table.E[i, :, k]))
            eq_rhs.append(-table.E_pp[i, k])
            eq_lab.append(("field", i))
        for p, q_ in ((a, b), (a, c)):
            eq_rows.append(row(i, table.H[i, :, p, q_]))
            eq_rhs.append(-table.H_pp[i, p, q_])
            eq_lab.append(("alignment", i))
        eq_rows.append(row(i, table.H[i, :, a, a]))
        eq_rhs.append(target[i] - table.H_pp[i, a, a])
        eq_lab.append(("axial", i))
        for t in (b, c):
            in_rows.append(row(i, -table.H[i, :, t, t]))
            in_rhs.append(table.H_pp[i, t, t] - request.radial_floor * target[i])
            in_lab.append(("radial_floor", i))
    return (np.array(eq_rows), np.array(eq_rhs), eq_lab,
            np.array(in_rows).reshape(-1, N * J), np.array(in_rhs), in_lab)


def _cost(request: TransportRequest, table: FieldTable):
    N, J = len(table), len(table.names)
    w = request.weights
    P = np.zeros((N * J, N * J))
    q = np.zeros(N * J)
    for order, wt in ((1, w.smooth1), (2, w.smooth2)):
        if wt and N > order:
            Dm = np.diff(np.eye(N), n=order, axis=0)
            P += 2 * wt * np.kron(Dm.T @ Dm, np.eye(J))
    d = np.linalg.norm(table.positions[:, None, :2] - table.centroids[None], axis=-1)
    loc = (d / request.length_scale) ** 2 + w.ridge
    P += 2 * np.diag(w.locality * loc.reshape(-1) + w.norm)
    if w.residual:
        # fields measured against the strongest per-volt field at each step
        scale = np.linalg.norm(table.E, axis=-1).max(axis=1)
        scale = np.where(scale > 0, scale, 1.0)
        for i in range(N):
            Ei = table.E[i].T / scale[i]  # (3, J)
            sl = slice(i * J, (i + 1) * J)
            P[sl, sl] += 2 * w.residual * Ei.T @ Ei
            q[sl] += 2 * w.residual * Ei.T @ (table.E_pp[i] / scale[i])
    return 0.5 * (P + P.T), q


# per-class tolerance on the right-hand side of a row with no control authority
_RHS_TOL = {"field": 1e-6, "alignment": 1e-9, "axial": 1e-9, "radial_floor": 1e-9}


def _prune(A, b, labels, inequality=False):
    """Drop rows the electrodes cannot influence, checking they already hold."""
    if not len(A):
        return A, b, labels
    mag = np.abs(A).max(axis=1)
    keep = np.ones(len(A), bool)
    for cls_ in set(l[0] for l in labels):
        rows = np.array([l[0] == cls_ for l in labels])
        ref = mag[rows].max()
        dead = rows & (mag <= 1e-10 * ref)
        bad = dead & ((b < -_RHS_TOL[cls_]) if inequality else (np.abs(b) > _RHS_TOL[cls_]))
        if bad.any():
            i = int(np.flatnonzero(bad)[0])
            raise WaveformError(
                f"infeasible: first violated constraint class '{cls_}' at step {labels[i][1]}")
        keep &= ~dead
    return A[keep], b[keep], [l for l, k in zip(labels, keep) if k]


def _row_scale(A, b):
    s = np.abs(A).max(axis=1) if len(A) else np.zeros(0)
    s = np.where(s > 0, s, 1.0)
    return A / s[:, None], b / s


def generate(request: TransportRequest, table: FieldTable, ctx: PhysicalContext,
             settings: qpmod.QpSettings = qpmod.QpSettings()) -> Waveform:
    """Solve one QP over all steps jointly."""
    if len(table) != len(request.positions):
        raise WaveformError("field table and request have different step counts")
    if request.electrodes is not None and list(request.electrodes) != list(table.names):
        raise WaveformError("field table electrodes differ from the request")
    N, J = len(table), len(table.names)
    Aeq, beq, eq_lab, Ain, bin_, in_lab = _constraints(request, table, ctx)
    Aeq, beq, eq_lab = _prune(Aeq, beq, eq_lab)
    Ain, bin_, in_lab = _prune(Ain, bin_, in_lab, inequality=True)
    Aeq_s, beq_s = _row_scale(Aeq, beq)
    Ain_s, bin_s = _row_scale(Ain, bin_)
    P, q = _cost(request, table)
    lo, hi = request.bounds
    prob = qpmod.QuadraticProgram(P, q, Aeq_s, beq_s, Ain_s, bin_s, lo, hi)
    sol = qpmod.solve(prob, settings)
    if sol.status == qpmod.INFEASIBLE:
        labels = eq_lab + in_lab + [("bounds", k // J) for k in range(N * J)]
        cert = np.abs(sol.certificate)
        k = int(np.argmax(cert))
        cls_, step = labels[k]
        raise WaveformError(f"infeasible: first violated constraint class '{cls_}' at step {step}")
    if sol.status != qpmod.OPTIMAL:
        raise WaveformError(f"QP did not converge ({sol.status}, residuals {sol.residuals})")
    v = sol.v.reshape(N, J)
    E, H = table.totals(v)
    wf = Waveform(list(table.names), v, table.positions.copy(), _diagnose(E, H, ctx, request.axis),
                  solver={"status": sol.status, "iterations": sol.iterations,
                          "polished": sol.polished})
    wf.residuals = constraint_residuals(request, table, ctx, v)
    return wf


def constraint_residuals(request, table, ctx, voltages) -> dict:
    """Worst per-step violation of each constraint class."""
    E, H = table.totals(voltages)
    a, b, c = _transverse(request.axis)
    target = request.targets(ctx)
    floor = request.radial_floor * target
    lo, hi = request.bounds
    v = np.asarray(voltages)
    return {
        "field": float(np.abs(E).max()),
        "alignment": float(max(np.abs(H[:, a, b]).max(), np.abs(H[:, a, c]).max())),
        "axial": float(np.abs(H[:, a, a] - target).max()),
        "radial_floor": float(min((H[:, b, b] - floor).min(), (H[:, c, c] - floor).min())),
        "bounds": float(max((v - hi).max(), (lo - v).max(), 0.0)),
    }


def residuals_ok(res: dict) -> bool:
    return (res["field"] < 1e-3 and res["alignment"] < 1e-6 and res["axial"] < 1e-6
            and res["radial_floor"] > -1e-8 and res["bounds"] <= 1e-9)


def static_wells(layout: ElectrodeLayout, ctx: PhysicalContext, positions, f_axial=1.5,
                 axis="x", electrodes=None, radial_floor: float = 0.0, bounds=(-10.0, 10.0),
                 weights: WaveformWeights = STATIC_WEIGHTS) -> Waveform:
    """Independent single-position wells at every point.

    By default each well uses the minimum-norm voltages meeting the field,
    alignment and axial constraints.
    """
    p = np.atleast_2d(np.asarray(positions, dtype=float))
    table = build_field_table(layout, ctx, p, electrodes)
    rows, diags, res = [], [], []
    for i in range(len(p)):
        req = TransportRequest(p[i:i + 1], f_axial, axis, radial_floor, bounds, weights,
                               tuple(table.names))
        wf = generate(req, table.subset([i]), ctx)
        rows.append(wf.voltages[0])
        diags.extend(wf.diagnostics)
        res.append(wf.residuals)
    worst = {k: (min if k == "radial_floor" else max)(r[k] for r in res) for k in res[0]}
    return Waveform(list(table.names), np.array(rows), p, diags, worst)


@dataclass
class StepReport:
    field: float  # |E_total| in V/m
    frequencies: np.ndarray  # (axial, r1, r2) MHz
    axial_alignment: float
    unstable: bool


def verify(waveform: Waveform, layout: ElectrodeLayout, ctx: PhysicalContext, axis: str = "y",
           positions=None) -> list[StepReport]:
    """Rebuild the total potential from the layout and report each step."""
    p = waveform.positions if positions is None else np.atleast_2d(positions)
    pp = pseudopotential(layout, ctx, p)
    charge_e = ctx.energy_per_volt / 1e3
    out = []
    for i, v in enumerate(waveform.voltages):
        st = composite_static_field(layout, dict(zip(waveform.names, v)), p[i])
        E = -st.gradient[0] * 1e6 - pp.gradient[i] * 1e3 / charge_e
        H = st.hessian[0] * ctx.energy_per_volt + pp.hessian[i]
        f, align = _modes(H, ctx, AXES[axis])
        out.append(StepReport(float(np.linalg.norm(E)), f, align, bool(np.isnan(f).any())))
    return out


# ---------------------------------------------------------------- tilt


@dataclass
class TiltResult:
    voltages: dict
    splitting_mhz: float
    frequencies: np.ndarray  # radial modes, high then low (MHz)
    angles_deg: np.ndarray  # angle of each radial mode axis to z
    curvature_split: float  # meV/µm²
    degenerate_mhz: float
    iterations: int


def rf_amplitude_for_radial(layout: ElectrodeLayout, ctx: PhysicalContext, point,
                            f_radial_mhz: float) -> PhysicalContext:
    """Context whose RF amplitude gives the requested mean radial frequency at
    a point of a linear trap (the pseudopotential scales with V_RF²)."""
    pp = pseudopotential(layout, ctx, point)
    lam = np.linalg.eigvalsh(pp.hessian[0][1:, 1:])
    f_now = float(ctx.curvature_to_frequency(lam.mean()))
    return PhysicalContext(ctx.mass, ctx.charge, ctx.v_rf * f_radial_mhz / f_now, ctx.omega_rf)


def _significant(A, b, tol=1e-9):
    keep = np.abs(A).max(axis=1) > tol * max(np.abs(A).max(), 1e-300)
    return A[keep], b[keep]


def _tilt_rows(table, angle):
    """Angle-lock and splitting rows acting on the radial (y, z) block."""
    c2, s2 = np.cos(2 * angle), np.sin(2 * angle)
    D = table.H[0, :, 2, 2] - table.H[0, :, 1, 1]
    B = 2 * table.H[0, :, 1, 2]
    Dp = table.H_pp[0, 2, 2] - table.H_pp[0, 1, 1]
    Bp = 2 * table.H_pp[0, 1, 2]
    lock = (D * s2 - B * c2, -(Dp * s2 - Bp * c2))
    split = (D * c2 + B * s2, Dp * c2 + Bp * s2)
    return lock, split


def optimize_radial_tilt(layout: ElectrodeLayout, ctx: PhysicalContext, position, angle_deg: float,
                         bounds=(-10.0, 10.0), electrodes=None, rel_tol: float = 1e-6,
                         max_iter: int = 200) -> TiltResult:
    """Largest radial splitting with the stiffer radial axis at ``angle_deg``
    from z, zero static force and bounded voltages.

    Bisection on the curvature splitting; each step is a feasibility QP.
    """
    names = list(electrodes) if electrodes is not None else outer_electrodes(layout)
    table = build_field_table(layout, ctx, position, names)
    J = len(names)
    (lk, lk0), (sp, sp0) = _tilt_rows(table, np.deg2rad(angle_deg))
    Aeq = np.vstack([table.E[0].T, lk])
    beq = np.concatenate([-table.E_pp[0], [lk0]])
    Aeq, beq = _significant(Aeq, beq)
    Aeq, beq = _row_scale(Aeq, beq)
    lo, hi = bounds
    ridge = np.eye(J) * 1e-6

    def feasible(t):
        A_in, b_in = _row_scale(-sp[None], np.array([sp0 - t]))
        sol = qpmod.solve(qpmod.QuadraticProgram(ridge, np.zeros(J), Aeq, beq, A_in, b_in, lo, hi))
        ok = sol.status == qpmod.OPTIMAL and sp @ sol.v + sp0 >= t * (1 - 1e-9) - 1e-12
        return ok, sol

    if lo == hi:
        # no freedom: report the state the fixed voltages produce
        return _tilt_result(table, ctx, names, np.full(J, float(lo)), 0)
    ok0, best = feasible(sp0 if sp0 > 0 else 0.0)
    if not ok0:
        raise WaveformError(f"tilt angle {angle_deg:g} deg cannot be held within the bounds")
    t_lo = max(sp0, 0.0)
    t_hi = sp0 + np.abs(sp).sum() * max(abs(lo), abs(hi))
    it = 0
    while t_hi - t_lo > rel_tol * max(t_hi, 1e-12) and it < max_iter:
        it += 1
        mid = 0.5 * (t_lo + t_hi)
        ok, sol = feasible(mid)
        if ok:
            t_lo, best = mid, sol
        else:
            t_hi = mid
    return _tilt_result(table, ctx, names, best.v, it)


def _tilt_result(table, ctx, names, v, iterations) -> TiltResult:
    _, H = table.totals(v)
    lam, vec = np.linalg.eigh(H[0][1:, 1:])
    order = [1, 0]
    f = ctx.curvature_to_frequency(lam[order])
    ang = np.degrees(np.arccos(np.clip(np.abs(vec[1, order]), 0, 1)))
    pp_lam = np.linalg.eigvalsh(table.H_pp[0][1:, 1:])
    return TiltResult(dict(zip(names, np.asarray(v).tolist())), float(f[0] - f[1]), f, ang,
                      float(lam[1] - lam[0]), float(ctx.curvature_to_frequency(pp_lam.mean())),
                      iterations)


# ---------------------------------------------------------------- export


def write_waveform_csv(waveform: Waveform, fname) -> None:
    with open(fname, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["step", *waveform.names])
        for i, v in enumerate(waveform.voltages):
            w.writerow([i, *(f"{x:.10g}" for x in v)])


def write_diagnostics_csv(waveform: Waveform, fname) -> None:
    with open(fname, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["step", "x", "y", "z", "f_axial", "f_r1", "f_r2", "residual_field"])
        for i, (p, d) in enumerate(zip(waveform.positions, waveform.diagnostics)):
            w.writerow([i, *(f"{x:.10g}" for x in (*p, *d.frequencies, d.residual_field))])
