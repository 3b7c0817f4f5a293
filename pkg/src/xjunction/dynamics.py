"""Ion motion in the full time-dependent trap field.

    m r'' = Q [E_st(r) + E_RF(r) cos(Omega t)]

Positions are in µm, time in µs, so velocities come out in m/s.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy import constants as ct

from .fields import _edge_sample, _edges
from .geometry import ElectrodeLayout
from .physics import PhysicalContext
from .qp import solve_equality_ls
from .waveform import build_field_table


class DynamicsError(RuntimeError):
    pass


def _accel_per_field(ctx: PhysicalContext) -> float:
    """µm/µs² of acceleration per V/m of field."""
    return ctx.charge / ctx.mass * 1e-6


def _omega_us(ctx: PhysicalContext) -> float:
    return ctx.omega_rf * 1e-6


class LayoutFields:
    """Static and RF fields of an electrode layout.

    Parameters
    ----------
    layout : ElectrodeLayout
    ctx : PhysicalContext
    voltages : mapping of control electrode name to volts
    """

    def __init__(self, layout: ElectrodeLayout, ctx: PhysicalContext, voltages=None):
        voltages = dict(voltages or {})
        self.h = float(layout.params.get("h", 50.0))
        self._static = _edges(layout, list(voltages), [float(v) for v in voltages.values()])
        rf = layout.rf_names
        self._rf = _edges(layout, rf, [ctx.v_rf] * len(rf))

    def static_field(self, r) -> np.ndarray:
        if len(self._static[2]) == 0:
            return np.zeros(3)
        return -_edge_sample(np.atleast_2d(r), self._static, hessian=False).gradient[0] * 1e6

    def rf_field(self, r) -> np.ndarray:
        return -_edge_sample(np.atleast_2d(r), self._rf, hessian=False).gradient[0] * 1e6


@dataclass
class IdealQuadrupole:
    """Uniform RF field plus a harmonic static well.

    ``curvature`` is the static energy curvature in meV/µm² about ``center``;
    ``e_rf`` the RF field amplitude in V/m.
    """

    ctx: PhysicalContext
    curvature: np.ndarray
    e_rf: np.ndarray
    center: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 50.0]))
    h: float = 50.0

    def __post_init__(self):
        self.curvature = np.asarray(self.curvature, dtype=float)
        if self.curvature.ndim == 1:
            self.curvature = np.diag(self.curvature)
        self.e_rf = np.asarray(self.e_rf, dtype=float)
        self.center = np.asarray(self.center, dtype=float)

    @classmethod
    def from_frequencies(cls, ctx, f_mhz, e_rf, center=(0.0, 0.0, 50.0)) -> "IdealQuadrupole":
        return cls(ctx, np.diag(ctx.frequency_to_curvature(f_mhz)), e_rf, np.asarray(center))

    def static_field(self, r) -> np.ndarray:
        charge_e = self.ctx.energy_per_volt / 1e3
        return -self.curvature @ (np.asarray(r) - self.center) * 1e3 / charge_e

    def rf_field(self, r) -> np.ndarray:
        return self.e_rf

    def energy(self, r, v) -> float:
        """Total energy in meV for the static well (RF ignored)."""
        d = np.asarray(r) - self.center
        kinetic = 0.5 * self.ctx.mass * float(np.dot(v, v)) / (1e-3 * ct.e)
        return kinetic + 0.5 * float(d @ self.curvature @ d)

    def exact_emm(self, axis: int = None) -> float:
        """Steady-state driven amplitude Q E / (m (Omega² - omega0²)) in µm."""
        w0 = 2 * np.pi * self.ctx.curvature_to_frequency(np.diag(self.curvature)) * 1e6
        W = self.ctx.omega_rf
        amp = self.ctx.charge * self.e_rf / (self.ctx.mass * (W ** 2 - np.nan_to_num(w0) ** 2)) * 1e6
        return float(abs(amp[axis])) if axis is not None else float(np.linalg.norm(amp))


@dataclass(frozen=True)
class TrajectoryConfig:
    position: tuple | None = None  # µm, defaults to the target point
    velocity: tuple = (0.0, 0.0, 0.0)  # m/s
    duration_us: float = 1.5
    step_fraction: float = 1 / 200  # of the RF period
    decimation: int = 1
    rf: bool = True

    def __post_init__(self):
        if self.step_fraction > 1 / 50:
            raise ValueError("integrator step must not exceed 1/50 of the RF period")
        if self.duration_us <= 0 or self.decimation < 1:
            raise ValueError("duration and decimation must be positive")


@dataclass
class Trajectory:
    t: np.ndarray  # µs
    r: np.ndarray  # µm
    v: np.ndarray  # m/s
    dt: float
    omega_rf: float  # rad/µs
    escaped: bool = False

    def __len__(self):
        return len(self.t)


def integrate(model, ctx: PhysicalContext, config: TrajectoryConfig = TrajectoryConfig(),
              target=None) -> Trajectory:
    """Fixed-step RK4 of the 6D state under the time-dependent field."""
    if config.position is None and target is None:
        raise ValueError("need an initial position or a target point")
    r0 = np.asarray(config.position if config.position is not None else target, dtype=float)
    if r0[2] <= 0:
        raise ValueError("initial point must lie above the electrode plane")
    W = _omega_us(ctx)
    dt = 2 * np.pi / W * config.step_fraction
    n = int(round(config.duration_us / dt))
    k = _accel_per_field(ctx)
    rf_on = 1.0 if config.rf else 0.0
    h = getattr(model, "h", 50.0)

    def acc(t, r):
        e = model.static_field(r)
        if rf_on:
            e = e + model.rf_field(r) * np.cos(W * t)
        return k * e

    y_r, y_v = r0.copy(), np.asarray(config.velocity, dtype=float).copy()
    keep = n // config.decimation + 1
    ts = np.zeros(keep)
    rs = np.zeros((keep, 3))
    vs = np.zeros((keep, 3))
    rs[0], vs[0] = y_r, y_v
    j = 1
    escaped = False
    for i in range(n):
        t = i * dt
        k1v = acc(t, y_r)
        k1r = y_v
        k2v = acc(t + dt / 2, y_r + dt / 2 * k1r)
        k2r = y_v + dt / 2 * k1v
        k3v = acc(t + dt / 2, y_r + dt / 2 * k2r)
        k3r = y_v + dt / 2 * k2v
        k4v = acc(t + dt, y_r + dt * k3r)
        k4r = y_v + dt * k3v
        y_r = y_r + dt / 6 * (k1r + 2 * k2r + 2 * k3r + k4r)
        y_v = y_v + dt / 6 * (k1v + 2 * k2v + 2 * k3v + k4v)
        if y_r[2] <= 0.1 * h or np.linalg.norm(y_r) > 1e3 * h or not np.all(np.isfinite(y_r)):
            escaped = True
            if j < keep:
                ts[j], rs[j], vs[j] = t + dt, y_r, y_v
                j += 1
            break
        if (i + 1) % config.decimation == 0 and j < keep:
            ts[j], rs[j], vs[j] = t + dt, y_r, y_v
            j += 1
    return Trajectory(ts[:j], rs[:j], vs[:j], dt * config.decimation, W, escaped)


def micromotion_start(model, ctx: PhysicalContext, point) -> np.ndarray:
    """Point displaced onto the driven orbit, which keeps secular motion small."""
    a = _accel_per_field(ctx) * model.rf_field(point) / _omega_us(ctx) ** 2
    return np.asarray(point, dtype=float) - a


# ---------------------------------------------------------------- analysis


@dataclass
class EmmResult:
    amplitude: float  # µm, magnitude of the vector amplitude
    components: np.ndarray  # complex amplitude per axis, µm
    phase: float  # rad, of the dominant component
    steady: bool
    periods: int


def _steady_window(traj: Trajectory, discard: float, min_periods: int):
    T = 2 * np.pi / traj.omega_rf
    per = T / traj.dt
    if abs(per - round(per)) > 1e-6:
        raise DynamicsError("sample spacing does not divide the RF period")
    per = int(round(per))
    start = int(np.ceil(discard * (len(traj) - 1)))
    periods = (len(traj) - 1 - start) // per
    if periods < min_periods:
        raise DynamicsError(f"only {periods} RF periods of steady state, need {min_periods}")
    end = len(traj) - 1
    return end - periods * per, end, periods, per


def _demod(t, x, omega):
    w = np.sin(np.pi * np.arange(len(t)) / len(t)) ** 2
    ph = np.exp(-1j * omega * t)
    return 2 * np.einsum("n,n,nk->k", w, ph, x) / w.sum()


def extract_emm(traj: Trajectory, discard: float = 0.25, min_periods: int = 20) -> EmmResult:
    """Amplitude of the RF-frequency component by synchronous demodulation.

    The steady segment spans an integer number of RF periods and is
    tapered with a Hann window to suppress leakage from secular motion.
    """
    s, e, periods, per = _steady_window(traj, discard, min_periods)
    t, x = traj.t[s:e], traj.r[s:e]
    c = _demod(t, x - x.mean(axis=0), traj.omega_rf)
    k = int(np.argmax(np.abs(c)))
    amp = float(np.linalg.norm(np.abs(c)))
    half = (periods // 2) * per
    steady = True
    if periods >= 2 * 10:
        a1 = np.linalg.norm(np.abs(_demod(t[:half], x[:half] - x[:half].mean(0), traj.omega_rf)))
        a2 = np.linalg.norm(np.abs(_demod(t[half:2 * half], x[half:2 * half] - x[half:2 * half].mean(0),
                                          traj.omega_rf)))
        steady = abs(a1 - a2) <= 0.05 * max(a1, a2, 1e-300) or max(a1, a2) < 1e-9
    return EmmResult(amp, c, float(np.angle(c[k])), steady, periods)


def mean_position(traj: Trajectory, discard: float = 0.25) -> np.ndarray:
    """Hann-weighted time average of the steady segment."""
    s, e, _, _ = _steady_window(traj, discard, 1)
    w = np.sin(np.pi * np.arange(e - s) / (e - s)) ** 2
    return w @ traj.r[s:e] / w.sum()


def spectrum_peaks(traj: Trajectory, count: int = 3, discard: float = 0.25) -> np.ndarray:
    """Strongest spectral lines (MHz) of the steady motion below half the drive."""
    s, e, _, _ = _steady_window(traj, discard, 1)
    x = traj.r[s:e] - traj.r[s:e].mean(axis=0)
    w = np.hanning(len(x))[:, None]
    spec = np.abs(np.fft.rfft(x * w, axis=0)).sum(axis=1)
    f = np.fft.rfftfreq(len(x), traj.dt)  # MHz
    band = f < traj.omega_rf / (2 * np.pi) / 2
    idx = [i for i in range(1, len(f) - 1) if band[i] and spec[i] >= spec[i - 1] and spec[i] > spec[i + 1]]
    idx = sorted(idx, key=lambda i: -spec[i])[:count]
    return np.sort(f[idx])


# ---------------------------------------------------------------- compensation


@dataclass
class Compensation:
    voltages: dict
    axes: np.ndarray  # pseudopotential principal axes (columns), ascending curvature
    frequencies: np.ndarray  # achieved along those axes, MHz
    residual_field: float  # V/m
    max_voltage: float


def compensate_and_confine(layout: ElectrodeLayout, ctx: PhysicalContext, point, target_mhz,
                           electrodes=None) -> Compensation:
    """Minimum-norm static voltages that cancel the time-averaged force at
    ``point`` and set the curvature along the pseudopotential principal axes.

    Targets are matched to the axes in order of pseudopotential curvature.
    The static potential is harmonic, so only two curvatures are free; the
    stiffest axis takes what the Laplacian leaves.
    """
    names = list(electrodes) if electrodes is not None else layout.control_names
    table = build_field_table(layout, ctx, point, names)
    lam, U = np.linalg.eigh(table.H_pp[0])
    k = np.sort(ctx.frequency_to_curvature(np.asarray(target_mhz, dtype=float)))
    if np.sum(k[:2]) >= np.trace(table.H_pp[0]):
        raise DynamicsError("targets exceed the available pseudopotential confinement")
    Hr = np.einsum("ai,jab,bk->jik", U, table.H[0], U)  # per-volt curvature in the PP frame
    Hp = U.T @ table.H_pp[0] @ U
    rows = [table.E[0, :, c] for c in range(3)]
    rhs = list(-table.E_pp[0])
    for i, j in ((0, 1), (0, 2), (1, 2)):
        rows.append(Hr[:, i, j])
        rhs.append(-Hp[i, j])
    for i in range(2):
        rows.append(Hr[:, i, i])
        rhs.append(k[i] - Hp[i, i])
    C, d = np.array(rows), np.array(rhs)
    s = np.abs(C).max(axis=1)
    v = solve_equality_ls(np.eye(len(names)), np.zeros(len(names)), C / s[:, None], d / s)
    E, H = table.totals(v)
    f = ctx.curvature_to_frequency(np.diag(U.T @ H[0] @ U))
    return Compensation(dict(zip(names, v.tolist())), U, f, float(np.linalg.norm(E[0])),
                        float(np.abs(v).max()))


def write_trajectory_csv(traj: Trajectory, fname, every: int = 1) -> None:
    with open(fname, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["t_us", "x", "y", "z", "vx", "vy", "vz"])
        for i in range(0, len(traj), every):
            w.writerow([f"{x:.10g}" for x in (traj.t[i], *traj.r[i], *traj.v[i])])
