import csv

import numpy as np
import pytest

from xjunction import waveform as wv
from xjunction.analysis import path_min_pp


@pytest.fixture(scope="module")
def arm_points(segmented, ctx):
    return path_min_pp(segmented, ctx, (300, 400), 10.0, arm="U").positions


@pytest.fixture(scope="module")
def short_transport(segmented, ctx):
    y = np.linspace(420, 300, 13)
    pos = np.c_[np.zeros_like(y), y, np.full_like(y, 50.0)]
    names = tuple(wv.middle_electrodes(segmented))
    table = wv.build_field_table(segmented, ctx, pos, names)
    req = wv.TransportRequest(pos, 1.5, "y", electrodes=names)
    return req, table, wv.generate(req, table, ctx)


def test_field_table_matches_layout(segmented, ctx):
    from xjunction.fields import basis_field, pseudopotential
    p = np.array([[10.0, 40.0, 48.0]])
    t = wv.build_field_table(segmented, ctx, p, ["U2", "OU+w"])
    g = basis_field(segmented, "U2", p).gradient[0]
    assert np.allclose(t.E[0, 0], -g * 1e6)
    pp = pseudopotential(segmented, ctx, p)
    assert np.allclose(t.H_pp[0], pp.hessian[0])


def test_static_wells_meet_constraints(segmented, ctx, arm_points):
    wf = wv.static_wells(segmented, ctx, arm_points, 1.5, axis="y")
    assert wv.residuals_ok(wf.residuals)
    assert np.allclose(wf.frequencies[:, 0], 1.5, rtol=1e-6)
    assert np.all(np.abs(wf.voltages) <= 10 + 1e-9)


def test_transport_constraints_hold(short_transport, ctx):
    req, table, wf = short_transport
    assert wf.solver["status"] == "optimal"
    assert wv.residuals_ok(wf.residuals)
    fr = wf.frequencies
    assert np.allclose(fr[:, 0], 1.5, rtol=1e-3)
    assert np.all(fr[:, 2] >= np.sqrt(3) * 1.5 * (1 - 1e-6))


def test_transport_independently_verified(short_transport, segmented, ctx):
    req, table, wf = short_transport
    rep = wv.verify(wf, segmented, ctx, "y")
    assert max(r.field for r in rep) < 1e-3
    assert all(abs(r.frequencies[0] - 1.5) < 1.5e-3 for r in rep)
    assert not any(r.unstable for r in rep)


def test_transport_is_smoother_than_independent_wells(short_transport, segmented, ctx):
    req, table, wf = short_transport
    wells = wv.static_wells(segmented, ctx, req.positions, 1.5, "y", list(req.electrodes),
                            radial_floor=3.0, weights=wv.WaveformWeights(0, 0, 0.1, 0, 0.01))
    rough = lambda v: np.abs(np.diff(v, 2, axis=0)).sum()
    assert rough(wf.voltages) <= rough(wells.voltages) + 1e-9


def test_infeasible_bounds_name_constraint_class(segmented, ctx):
    p = np.array([[0.0, 350.0, 50.0], [0.0, 345.0, 50.0]])
    names = tuple(wv.middle_electrodes(segmented))
    table = wv.build_field_table(segmented, ctx, p, names)
    req = wv.TransportRequest(p, 1.5, "y", bounds=(-1e-3, 1e-3), electrodes=names)
    with pytest.raises(wv.WaveformError, match=r"infeasible: first violated constraint class '\w+'"):
        wv.generate(req, table, ctx)


@pytest.mark.parametrize("kw", [dict(axis="z"), dict(f_axial=-1.0), dict(bounds=(1.0, -1.0))])
def test_request_validation(kw):
    with pytest.raises(ValueError):
        wv.TransportRequest(np.array([[0.0, 0.0, 50.0]]), **kw)


def test_discontinuous_path_rejected():
    p = np.array([[0, 0, 50], [0, 5, 50], [0, 10, 50], [0, 500, 50]], float)
    with pytest.raises(ValueError):
        wv.TransportRequest(p)


def test_csv_writers(short_transport, tmp_path):
    _, _, wf = short_transport
    wv.write_waveform_csv(wf, tmp_path / "w.csv")
    wv.write_diagnostics_csv(wf, tmp_path / "d.csv")
    w = list(csv.reader(open(tmp_path / "w.csv")))
    d = list(csv.reader(open(tmp_path / "d.csv")))
    assert w[0][1:] == wf.names and len(w) == len(wf) + 1
    assert d[0][:5] == ["step", "x", "y", "z", "f_axial"] and len(d) == len(wf) + 1


# ---------------------------------------------------------------- tilt


@pytest.fixture(scope="module")
def tilt_setup(linear_segmented, ctx):
    pt = path_min_pp(linear_segmented, ctx, (0, 0), 1.0).positions[0]
    return pt, wv.rf_amplitude_for_radial(linear_segmented, ctx, pt, 6.06)


def test_rf_rescale_hits_target(linear_segmented, tilt_setup):
    from xjunction.fields import pseudopotential
    pt, c2 = tilt_setup
    lam = np.linalg.eigvalsh(pseudopotential(linear_segmented, c2, pt).hessian[0][1:, 1:])
    assert float(c2.curvature_to_frequency(lam.mean())) == pytest.approx(6.06, rel=1e-9)


def test_tilt_splitting_grows_with_voltage_range(linear_segmented, tilt_setup):
    pt, c2 = tilt_setup
    split = [wv.optimize_radial_tilt(linear_segmented, c2, pt, 20.0, (-v, v)).splitting_mhz
             for v in (0.0, 5.0, 10.0)]
    assert split[0] < 1e-3
    assert split[0] < split[1] < split[2]


def test_tilt_angles_and_force(linear_segmented, tilt_setup):
    pt, c2 = tilt_setup
    r = wv.optimize_radial_tilt(linear_segmented, c2, pt, 20.0, (-10, 10))
    assert np.allclose(r.angles_deg, [20.0, 70.0], atol=1e-3)
    assert max(abs(v) for v in r.voltages.values()) <= 10 + 1e-8
    t = wv.build_field_table(linear_segmented, c2, pt, list(r.voltages))
    E, _ = t.totals(np.array(list(r.voltages.values()))[None])
    assert np.abs(E).max() < 1e-3
