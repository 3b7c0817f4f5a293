import csv

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import constants

from xjunction import analysis as an
from xjunction.geometry import JunctionParams, build_junction, build_naive_junction
from xjunction.physics import PhysicalContext
from xjunction.rfopt import (CostBreakdown, OptimizerConfig, axis_points, cost_from_profile,
                             dimensionless_pp, evaluate_cost, optimize_junction, random_start,
                             run_seed)

# ---------------------------------------------------------------- analysis


def test_emm_from_field_closed_form(ctx):
    e = 3.2e4
    a = ctx.charge * e / (ctx.mass * ctx.omega_rf ** 2) * 1e6
    assert an.emm_from_field(e, ctx).amplitude == pytest.approx(a, rel=1e-12)


@given(st.floats(1e2, 1e6))
def test_emm_phi_identity(e):
    ctx = PhysicalContext()
    phi = (ctx.charge * e) ** 2 / (4 * ctx.mass * ctx.omega_rf ** 2) / (1e-3 * constants.e)  # meV
    assert an.emm_from_phi(phi, ctx) == pytest.approx(an.emm_from_field(e, ctx).amplitude,
                                                      rel=1e-10)


def test_radial_budget(ctx):
    k_ax = float(ctx.frequency_to_curvature(1.5))
    f = an.radial_budget(1.0, 1.5, ctx)
    assert float(ctx.frequency_to_curvature(f)) == pytest.approx((1.0 - k_ax) / 2, rel=1e-12)
    with pytest.raises(an.BudgetError):
        an.radial_budget(0.01, 1.5, ctx)


def test_barrier_profile_synthetic():
    s = np.linspace(0, 100, 201)
    phi = np.exp(-((s - 20) / 8) ** 2) * 10 + np.exp(-((s - 80) / 8) ** 2) * 4
    path = an.PathResult([an.PathSample(x, np.array([x, 0, 50]), y, 0.0) for x, y in zip(s, phi)])
    b = an.barrier_profile(path)
    assert np.allclose(b.peak_positions, [20, 80], atol=0.05)
    assert np.allclose(b.peak_heights, [10, 4], rtol=1e-3)
    assert len(b.null_positions) == 1 and 45 < b.null_positions[0] < 55


def test_paths_on_linear_trap(linear, ctx):
    mp = an.path_min_pp(linear, ctx, (-100, 100), 50.0)
    # finite arm ends leave a residual of order 1e-5 meV along the null
    assert mp.complete and np.allclose(mp.phi, 0, atol=1e-4)
    assert np.ptp(mp.heights) < 0.02
    assert np.allclose(mp.heights, mp.heights[::-1], atol=1e-9)
    fh = an.path_fixed_height(linear, ctx, 50.0, (0, 100), 50.0, modes=True)
    fr = an.path_modes(fh)
    assert fr.shape == (3, 3) and np.all(fr[:, 1] >= fr[:, 2])


def test_empty_range_and_unreachable_target(linear, ctx, tmp_path):
    empty = an.path_fixed_height(linear, ctx, 50.0, (10, 0), 5.0)
    assert len(empty) == 0
    f = tmp_path / "p.csv"
    an.write_path_csv(empty, f)
    assert f.read_text().strip() == ",".join(an.PATH_COLUMNS)
    cc = an.path_const_confinement(linear, ctx, 1e3, (0, 10), 5.0)
    assert len(cc) == 0 and cc.diagnostics
    with pytest.raises(ValueError):
        an.path_fixed_height(linear, ctx, 50.0, (0, 10), 0.0)


def test_negative_axial_coordinates_follow_opposite_arm(junction, ctx):
    p = an.path_fixed_height(junction, ctx, 50.0, (-20, 20), 20.0, arm="U")
    assert np.allclose(p.positions[:, 1], [-20, 0, 20])


def test_path_csv_columns(junction, ctx, tmp_path):
    p = an.path_fixed_height(junction, ctx, 50.0, (0, 20), 10.0, modes=True)
    f = tmp_path / "p.csv"
    an.write_path_csv(p, f)
    rows = list(csv.reader(open(f)))
    assert rows[0] == an.PATH_COLUMNS and len(rows) == 4


def test_emm_estimate_with_drive_correction(junction, ctx):
    p = [15.0, 0.0, 43.52]
    a = an.emm_estimate(junction, ctx, p)
    w0 = 2 * np.pi * 6.51e6
    b = an.emm_estimate(junction, ctx, p, omega0=w0)
    assert b.amplitude == pytest.approx(a.amplitude / (1 - (w0 / ctx.omega_rf) ** 2))
    with pytest.raises(ValueError):
        an.emm_estimate(junction, ctx, p, omega0=2 * ctx.omega_rf)


# ---------------------------------------------------------------- rf optimizer


def test_cost_terms_vanish_for_flat_profiles():
    c = cost_from_profile(np.zeros(11), np.full(11, 0.3), 0.1, (1.0, 1.0))
    assert c.f1 == pytest.approx(0, abs=1e-30) and c.f2 == 0


def test_dimensionless_cost_is_scale_free():
    cfg = OptimizerConfig()
    costs = []
    for h in (50.0, 80.0):
        lay = build_junction(JunctionParams.reference(h, arm_lengths=(30 * h,) * 4), controls=False)
        phi, d, lap = dimensionless_pp(lay, h, axis_points(h, cfg))
        costs.append(cost_from_profile(d, lap, cfg.dx, (1, 1)).total)
    assert costs[0] == pytest.approx(costs[1], rel=1e-9)


def test_reference_geometry_beats_naive_junction():
    cfg = OptimizerConfig()
    ref = evaluate_cost(JunctionParams.reference(50.0, arm_lengths=(1500.0,) * 4))
    naive = build_naive_junction(50.0, 1500.0)
    _, d, lap = dimensionless_pp(naive, 50.0, axis_points(50.0, cfg))
    assert ref.f2 < cost_from_profile(d, lap, cfg.dx, (1, 1)).f2 / 5


def test_unbuildable_geometry_costs_infinity():
    p = JunctionParams(50.0, 40, 10, 10, 60, 20, 60, 100, 200, arm_lengths=(1500.0,) * 4)
    assert np.isinf(evaluate_cost(p).total)


def test_random_start_respects_bounds():
    cfg = OptimizerConfig()
    x = random_start(np.random.default_rng(3), 50.0, cfg)
    assert np.all((x >= cfg.lower) & (x <= cfg.upper))


def test_seed_run_is_deterministic():
    cfg = OptimizerConfig(max_evaluations=40)
    a = run_seed(7, (1.0, 1.0), 50.0, cfg)
    b = run_seed(7, (1.0, 1.0), 50.0, cfg)
    assert a == b and a.evaluations <= 41
    assert a.f_cost == pytest.approx(CostBreakdown(a.f1, a.f2, 1, 1).total)


def test_optimizer_report_and_validation():
    rep = optimize_junction(OptimizerConfig(seeds=(0, 1), max_evaluations=30))
    assert [s.seed for s in rep.seeds] == [0, 1]
    assert rep.best.f_cost == min(s.f_cost for s in rep.seeds)
    assert "f1=" in rep.table() and rep.spread()[rep.seeds.index(rep.best)] == 0
    with pytest.raises(ValueError):
        optimize_junction(OptimizerConfig(seeds=(0,)), weights=(-1.0, 1.0))
    with pytest.raises(ValueError):
        optimize_junction(OptimizerConfig(seeds=(0,), lower=1.0, upper=0.5))
