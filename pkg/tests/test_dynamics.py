import csv

import numpy as np
import pytest

from xjunction import dynamics as dy
from xjunction.analysis import path_min_pp


@pytest.fixture(scope="module")
def ideal(ctx):
    return dy.IdealQuadrupole.from_frequencies(ctx, [1.5, 4.0, 6.0], [3.2e4, 0.0, 0.0])


def synthetic(ctx, amp, periods=40, per=200, growth=0.0, secular=0.0):
    W = ctx.omega_rf * 1e-6
    dt = 2 * np.pi / W / per
    t = np.arange(periods * per + 1) * dt
    x = amp * (1 + growth * t / t[-1]) * np.cos(W * t + 0.3) + secular * np.cos(2 * np.pi * 1.5 * t)
    r = np.c_[x, np.zeros_like(t), np.full_like(t, 50.0)]
    return dy.Trajectory(t, r, np.zeros_like(r), dt, W)


def test_demodulation_recovers_pure_tone(ctx):
    e = dy.extract_emm(synthetic(ctx, 1.7))
    assert e.amplitude == pytest.approx(1.7, rel=1e-12)
    assert e.phase == pytest.approx(0.3, abs=1e-12)
    assert e.steady


def test_demodulation_rejects_secular_leakage(ctx):
    e = dy.extract_emm(synthetic(ctx, 1.0, periods=80, secular=3.0))
    assert e.amplitude == pytest.approx(1.0, rel=1e-3)


def test_growing_motion_flagged(ctx):
    assert not dy.extract_emm(synthetic(ctx, 1.0, growth=1.0)).steady


def test_short_trajectory_rejected(ctx):
    with pytest.raises(dy.DynamicsError):
        dy.extract_emm(synthetic(ctx, 1.0, periods=10))


def test_step_limit_enforced():
    with pytest.raises(ValueError):
        dy.TrajectoryConfig(step_fraction=1 / 40)


def test_ideal_emm_matches_driven_oscillator(ideal, ctx):
    tr = dy.integrate(ideal, ctx, dy.TrajectoryConfig(duration_us=1.5), target=ideal.center)
    e = dy.extract_emm(tr)
    assert e.amplitude == pytest.approx(ideal.exact_emm(), rel=1e-3)
    assert np.all(np.isfinite(tr.r)) and not tr.escaped


def test_rk4_order(ideal, ctx):
    ends = [dy.integrate(ideal, ctx, dy.TrajectoryConfig(duration_us=0.2, step_fraction=f),
                         target=ideal.center + [1.0, 0.5, 0.0]).r[-1]
            for f in (1 / 50, 1 / 100, 1 / 200)]
    order = np.log2(np.linalg.norm(ends[0] - ends[1]) / np.linalg.norm(ends[1] - ends[2]))
    assert order >= 3.8


def test_energy_conserved_without_rf(ctx):
    m = dy.IdealQuadrupole.from_frequencies(ctx, [1.5, 4.0, 6.0], [0, 0, 0])
    cfg = dy.TrajectoryConfig(position=(1.0, 0.5, 50.3), duration_us=100 / 1.5, rf=False,
                              step_fraction=1 / 50, decimation=50)
    tr = dy.integrate(m, ctx, cfg)
    E = np.array([m.energy(r, v) for r, v in zip(tr.r, tr.v)])
    assert np.ptp(E) / E[0] < 1e-6


def test_escape_flagged(ctx):
    m = dy.IdealQuadrupole.from_frequencies(ctx, [1.5, 1.5, 1.5], [0, 0, 0])
    cfg = dy.TrajectoryConfig(position=(0.0, 0.0, 50.0), velocity=(0.0, 0.0, -2e4),
                              duration_us=0.1, rf=False)
    tr = dy.integrate(m, ctx, cfg)
    assert tr.escaped and tr.r[-1, 2] <= 5.0


def test_spectrum_finds_secular_lines(ctx):
    m = dy.IdealQuadrupole.from_frequencies(ctx, [1.5, 2.5, 3.5], [0, 0, 0])
    cfg = dy.TrajectoryConfig(position=(0.3, 0.2, 50.1), duration_us=8.0, rf=False,
                              step_fraction=1 / 50, decimation=10)
    peaks = dy.spectrum_peaks(dy.integrate(m, ctx, cfg), count=3, discard=0.0)
    assert np.allclose(peaks, [1.5, 2.5, 3.5], atol=0.15)


def test_compensation_meets_targets(segmented, ctx):
    pt = np.array([15.0, 0.0, 43.52])
    c = dy.compensate_and_confine(segmented, ctx, pt, [6.51, 4.03, 1.5])
    assert c.residual_field < 1e-6
    assert np.allclose(c.frequencies[:2], [1.5, 4.03], rtol=1e-9)
    # the stiff axis takes what the harmonic static potential leaves
    assert c.frequencies[2] > 4.03
    with pytest.raises(dy.DynamicsError):
        dy.compensate_and_confine(segmented, ctx, pt, [20.0, 19.0, 18.0])


def test_time_averaged_position_in_compensated_well(segmented, ctx):
    # a point on the arm where the pseudopotential is small
    z = path_min_pp(segmented, ctx, (150, 150), 1.0).positions[0]
    c = dy.compensate_and_confine(segmented, ctx, z, [1.5, 4.2, 10.0])
    model = dy.LayoutFields(segmented, ctx, c.voltages)
    tr = dy.integrate(model, ctx, dy.TrajectoryConfig(duration_us=4.0, step_fraction=1 / 100),
                      target=dy.micromotion_start(model, ctx, z))
    assert np.linalg.norm(dy.mean_position(tr, 0.0) - z) < 0.02


def test_trajectory_csv(ideal, ctx, tmp_path):
    tr = dy.integrate(ideal, ctx, dy.TrajectoryConfig(duration_us=0.05), target=ideal.center)
    dy.write_trajectory_csv(tr, tmp_path / "t.csv", every=10)
    rows = list(csv.reader(open(tmp_path / "t.csv")))
    assert rows[0] == ["t_us", "x", "y", "z", "vx", "vy", "vz"]
    assert len(rows) == 1 + (len(tr) + 9) // 10
