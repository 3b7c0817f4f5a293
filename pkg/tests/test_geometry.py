import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from xjunction.geometry import (REFERENCE_RATIOS, Electrode, ElectrodeLayout, GeometryError,
                                JunctionParams, SegmentationPlan, SplineBoundary, build_junction,
                                build_linear_fivewire, build_naive_junction, linear_widths,
                                make_polygon, segment_controls, signed_area)
from xjunction.waveform import middle_electrodes, outer_electrodes

D4 = {
    "rot90": np.array([[0.0, -1.0], [1.0, 0.0]]),
    "mirror_x": np.array([[-1.0, 0.0], [0.0, 1.0]]),
    "mirror_diag": np.array([[0.0, 1.0], [1.0, 0.0]]),
}


def canonical(layout, role=None):
    pts = np.vstack([p for e in layout.electrodes if role is None or e.role.value == role
                     for p in e.polygons])
    pts = np.round(pts, 9) + 0.0
    return pts[np.lexsort(pts.T[::-1])]


@pytest.fixture(scope="module")
def symmetric():
    return build_junction(JunctionParams.reference(50.0, arm_lengths=(750.0,) * 4))


@pytest.mark.parametrize("gen", sorted(D4))
def test_junction_d4_invariance(symmetric, gen):
    for role in ("rf", "control"):
        a = canonical(symmetric, role)
        M = D4[gen]
        moved = ElectrodeLayout(tuple(
            Electrode(e.name, e.role, tuple(p @ M.T for p in e.polygons))
            for e in symmetric.electrodes))
        b = canonical(moved, role)
        assert a.shape == b.shape
        assert np.abs(a - b).max() <= 1e-10


def test_junction_layout_is_valid(junction, segmented):
    junction.validate()
    segmented.validate()
    assert junction.rf_names == ["RF"]


def test_linear_widths():
    assert linear_widths(50.0) == pytest.approx((41.5, 99.5))
    with pytest.raises(GeometryError):
        linear_widths(-1.0)


def test_polygon_orientation_and_validation():
    cw = [[0, 0], [0, 1], [1, 1], [1, 0]]
    assert signed_area(make_polygon(cw)) == pytest.approx(1.0)
    with pytest.raises(GeometryError):
        make_polygon([[0, 0], [1, 1], [1, 0], [0, 1]])  # bow tie
    with pytest.raises(GeometryError):
        make_polygon([[0, 0], [1, 0]])


def test_spline_is_clamped_and_symmetric():
    p = JunctionParams.reference(50.0)
    for ctrl in (p.inner_controls(), p.outer_controls()):
        s = SplineBoundary(ctrl).sample(101)
        assert np.allclose(s[0], ctrl[0]) and np.allclose(s[-1], ctrl[-1])
        # reflection about y = x maps the curve onto itself reversed
        assert np.allclose(s[::-1, ::-1], s, atol=1e-9)


@pytest.mark.parametrize("field,value", [("d_out", 1.0), ("y_i3", 10.0), ("x_o2", -1.0)])
def test_invalid_parameters_rejected(field, value):
    kw = dict(zip(["d_in", "x_i2", "y_i2", "y_i3", "d_out", "x_o2", "y_o2", "y_o3"],
                  np.array(REFERENCE_RATIOS) * 50.0))
    kw[field] = value
    with pytest.raises(GeometryError):
        build_junction(JunctionParams(50.0, **kw))


def test_arms_too_short_rejected():
    with pytest.raises(GeometryError):
        build_junction(JunctionParams.reference(50.0, arm_lengths=(100.0,) * 4))


@settings(max_examples=15, deadline=None)
@given(st.lists(st.floats(0.9, 1.1), min_size=8, max_size=8))
def test_perturbed_geometry_builds_disjoint_electrodes(scale):
    p = JunctionParams.from_vector(np.array(REFERENCE_RATIOS) * 50.0 * np.array(scale), 50.0,
                                   arm_lengths=(750.0,) * 4)
    try:
        lay = build_junction(p)
    except GeometryError:
        return
    lay.validate()


def test_layout_json_roundtrip(tmp_path, segmented):
    f = tmp_path / "lay.json"
    segmented.to_json(f)
    back = ElectrodeLayout.from_json(f)
    assert back.names == segmented.names
    for a, b in zip(back.electrodes, segmented.electrodes):
        assert a.role == b.role
        assert all(np.array_equal(x, y) for x, y in zip(a.polygons, b.polygons))
    assert json.loads(f.read_text())["params"]["kind"] == "junction"


def test_params_dict_roundtrip():
    p = JunctionParams.reference(50.0, arm_lengths=(750.0, 750.0, 750.0, 2700.0))
    assert JunctionParams.from_dict(p.to_dict()) == p


def test_segmentation_counts(segmented):
    mid = middle_electrodes(segmented)
    assert len(mid) == 1 + 9 + 9 + 9 + 20
    assert "c" in mid and "D20" in mid and "R10" not in mid
    assert len(outer_electrodes(segmented)) == 16


def test_segments_tile_without_overlap(segmented):
    from shapely.ops import unary_union
    shapes = [segmented[n].shape for n in segmented.control_names]
    assert unary_union(shapes).area == pytest.approx(sum(s.area for s in shapes), rel=1e-9)


def test_identity_plan_returns_same_layout(junction):
    assert segment_controls(junction, SegmentationPlan.none()) is junction


def test_naive_and_linear_layouts():
    n = build_naive_junction(50.0, 750.0)
    n.validate()
    lin = build_linear_fivewire(50.0)
    assert lin.params["w_g"] == pytest.approx(41.5)
    with pytest.raises(GeometryError):
        build_linear_fivewire(50.0, 100.0)
