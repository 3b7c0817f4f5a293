"""Planar electrode layouts: linear five-wire traps, spline junctions,
crossed-strip junctions, control segmentation and outline offsetting."""
from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field, replace, asdict
from functools import cached_property
from typing import Iterable, Mapping, Sequence

import numpy as np
import shapely
import shapely.affinity
from scipy.interpolate import BSpline
from shapely.geometry import LineString, MultiPolygon, Polygon as ShapelyPolygon, box
from shapely.ops import unary_union

from .kernels import fan_triangles, polygon_edges

#: Table-2 coefficients of the optimal linear RF geometry
WG_PER_H = 0.83
WRF_PER_H = 1.99

#: quadrant -> (x sign, y sign, arm along x, arm along y)
QUADRANTS = {1: (1, 1, "R", "U"), 2: (-1, 1, "L", "U"),
             3: (-1, -1, "L", "D"), 4: (1, -1, "R", "D")}
ARM_AXES = {"R": (1.0, 0.0), "U": (0.0, 1.0), "L": (-1.0, 0.0), "D": (0.0, -1.0)}
ARMS = ("R", "U", "L", "D")


class GeometryError(ValueError):
    pass


class Role(str, enum.Enum):
    RF = "rf"
    CONTROL = "control"
    GROUND = "ground"


def signed_area(vertices) -> float:
    v = np.asarray(vertices, dtype=float)
    x, y = v[:, 0], v[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def make_polygon(vertices) -> np.ndarray:
    """Return a validated counter-clockwise vertex array without duplicates."""
    v = np.asarray(vertices, dtype=float)
    if v.ndim != 2 or v.shape[1] != 2:
        raise GeometryError("polygon vertices must be an (n, 2) array")
    if len(v) > 1 and np.allclose(v[0], v[-1]):
        v = v[:-1]
    keep = np.ones(len(v), bool)
    keep[1:] = np.any(np.abs(np.diff(v, axis=0)) > 1e-12, axis=1)
    v = v[keep]
    if len(v) < 3:
        raise GeometryError("polygon needs at least 3 vertices")
    a = signed_area(v)
    if a == 0:
        raise GeometryError("polygon has zero area")
    if a < 0:
        v = v[::-1]
    if not ShapelyPolygon(v).is_valid:
        raise GeometryError("polygon is self-intersecting")
    return np.ascontiguousarray(v)


@dataclass(frozen=True, eq=False)
class Electrode:
    name: str
    role: Role
    polygons: tuple

    def __post_init__(self):
        object.__setattr__(self, "role", Role(self.role))
        object.__setattr__(self, "polygons",
                           tuple(make_polygon(p) for p in self.polygons))

    @cached_property
    def shape(self):
        return unary_union([ShapelyPolygon(p) for p in self.polygons])

    @cached_property
    def edges(self):
        return polygon_edges(self.polygons, [1.0] * len(self.polygons))

    @cached_property
    def triangles(self):
        return fan_triangles(self.polygons, [1.0] * len(self.polygons))

    @property
    def area(self) -> float:
        return sum(signed_area(p) for p in self.polygons)

    @property
    def centroid(self) -> np.ndarray:
        c = self.shape.centroid
        return np.array([c.x, c.y])


@dataclass(frozen=True, eq=False)
class ElectrodeLayout:
    """Named electrodes tiling the plane z = 0.

    Whatever is not covered by a listed electrode is the implicit ground
    plane, so the basis functions always form a partition of unity.
    """

    electrodes: tuple
    params: Mapping = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "electrodes", tuple(self.electrodes))
        names = [e.name for e in self.electrodes]
        if len(set(names)) != len(names):
            raise GeometryError("duplicate electrode names")

    @cached_property
    def _by_name(self):
        return {e.name: e for e in self.electrodes}

    def __getitem__(self, name: str) -> Electrode:
        try:
            return self._by_name[name]
        except KeyError:
            raise KeyError(f"unknown electrode {name!r}") from None

    def __contains__(self, name) -> bool:
        return name in self._by_name

    @property
    def names(self) -> list[str]:
        return [e.name for e in self.electrodes]

    def names_with_role(self, role: Role) -> list[str]:
        return [e.name for e in self.electrodes if e.role == Role(role)]

    @property
    def rf_names(self) -> list[str]:
        return self.names_with_role(Role.RF)

    @property
    def control_names(self) -> list[str]:
        return self.names_with_role(Role.CONTROL)

    @cached_property
    def rf_polygons(self) -> tuple:
        return tuple(p for e in self.electrodes if e.role == Role.RF for p in e.polygons)

    def replace_electrodes(self, electrodes, **params) -> "ElectrodeLayout":
        return ElectrodeLayout(tuple(electrodes), {**self.params, **params})

    def validate(self, tol: float = 1e-6) -> None:
        """Check polygon simplicity and pairwise disjoint interiors."""
        shapes = [(e.name, e.shape) for e in self.electrodes]
        for name, s in shapes:
            if not s.is_valid:
                raise GeometryError(f"electrode {name} is not a valid region")
        tree = shapely.STRtree([s for _, s in shapes])
        for i, (name, s) in enumerate(shapes):
            for j in tree.query(s):
                if j <= i:
                    continue
                overlap = s.intersection(shapes[j][1]).area
                if overlap > tol:
                    raise GeometryError(
                        f"electrodes {name} and {shapes[j][0]} overlap by {overlap:g} µm²")

    def to_dict(self) -> dict:
        return {
            "electrodes": [
                {"name": e.name, "role": e.role.value,
                 "polygons": [p.tolist() for p in e.polygons]}
                for e in self.electrodes
            ],
            "params": dict(self.params),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ElectrodeLayout":
        return cls(tuple(Electrode(e["name"], e["role"], tuple(np.asarray(p) for p in e["polygons"]))
                         for e in d["electrodes"]), d.get("params", {}))

    def to_json(self, path) -> None:
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=1)

    @classmethod
    def from_json(cls, path) -> "ElectrodeLayout":
        with open(path) as f:
            return cls.from_dict(json.load(f))


def _shape_polygons(geom) -> list[np.ndarray]:
    """Exterior rings of a shapely (multi)polygon, holes rejected."""
    if geom.is_empty:
        return []
    geoms = geom.geoms if hasattr(geom, "geoms") else [geom]
    out = []
    for g in geoms:
        if g.geom_type != "Polygon" or g.area < 1e-9:
            continue
        if len(g.interiors):
            raise GeometryError("region with holes cannot be represented")
        out.append(np.asarray(g.exterior.coords)[:-1])
    return out


def _electrode_from_shape(name, role, geom) -> Electrode | None:
    polys = _shape_polygons(geom)
    return Electrode(name, role, tuple(polys)) if polys else None


# ---------------------------------------------------------------- linear


def linear_widths(h: float) -> tuple[float, float]:
    """(w_g, w_RF) of the optimal linear RF geometry for ion height ``h``."""
    if not h > 0:
        raise GeometryError(f"ion height must be positive, got {h}")
    return WG_PER_H * h, WRF_PER_H * h


def build_linear_fivewire(h: float, arm_half_length: float | None = None,
                          outer_width: float | None = None) -> ElectrodeLayout:
    """Five-wire linear trap along x, centred on the origin.

    RF rails of width w_RF sit at |y| in [w_g/2, w_g/2 + w_RF]; the middle
    strip and two outer strips are control electrodes.
    """
    w_g, w_rf = linear_widths(h)
    if arm_half_length is None:
        arm_half_length = 20 * h
    if arm_half_length < 10 * h:
        raise GeometryError("arm_half_length must be at least 10 h")
    if outer_width is None:
        outer_width = DEFAULT_OUTER_EXTENT
    L, a, b = arm_half_length, w_g / 2, w_g / 2 + w_rf
    rect = lambda x0, y0, x1, y1: np.array([[x0, y0], [x1, y0], [x1, y1], [x0, y1]])
    els = [
        Electrode("RF", Role.RF, (rect(-L, a, L, b), rect(-L, -b, L, -a))),
        Electrode("M", Role.CONTROL, (rect(-L, -a, L, a),)),
        Electrode("O+", Role.CONTROL, (rect(-L, b, L, b + outer_width),)),
        Electrode("O-", Role.CONTROL, (rect(-L, -b - outer_width, L, -b),)),
    ]
    return ElectrodeLayout(tuple(els), {"kind": "linear", "h": h, "w_g": w_g,
                                        "w_rf": w_rf, "arm_half_length": L})


# ---------------------------------------------------------------- junction


PARAM_NAMES = ("d_in", "x_i2", "y_i2", "y_i3", "d_out", "x_o2", "y_o2", "y_o3")
REFERENCE_RATIOS = (0.07460, 0.29428, 0.54857, 2.46382, 1.03774, 1.78611, 2.43434, 4.98629)


@dataclass(frozen=True)
class JunctionParams:
    """Spline control variables of one junction quadrant (µm).

    ``arm_lengths`` are for the R, U, L, D arms measured from the centre.
    """

    h: float
    d_in: float
    x_i2: float
    y_i2: float
    y_i3: float
    d_out: float
    x_o2: float
    y_o2: float
    y_o3: float
    w_g: float | None = None
    w_rf: float | None = None
    arm_lengths: tuple = (None, None, None, None)

    def __post_init__(self):
        if not self.h > 0:
            raise GeometryError("h must be positive")
        wg, wrf = linear_widths(self.h)
        if self.w_g is None:
            object.__setattr__(self, "w_g", wg)
        if self.w_rf is None:
            object.__setattr__(self, "w_rf", wrf)
        arms = tuple(30 * self.h if a is None else float(a) for a in self.arm_lengths)
        if len(arms) != 4:
            raise GeometryError("arm_lengths needs 4 entries (R, U, L, D)")
        object.__setattr__(self, "arm_lengths", arms)

    @classmethod
    def reference(cls, h: float = 50.0, **kw) -> "JunctionParams":
        return cls(h, *(r * h for r in REFERENCE_RATIOS), **kw)

    @classmethod
    def from_vector(cls, x, h: float, **kw) -> "JunctionParams":
        return cls(h, *map(float, x), **kw)

    def vector(self) -> np.ndarray:
        return np.array([getattr(self, n) for n in PARAM_NAMES])

    def to_dict(self) -> dict:
        return asdict(self) | {"arm_lengths": list(self.arm_lengths)}

    @classmethod
    def from_dict(cls, d) -> "JunctionParams":
        d = dict(d)
        d["arm_lengths"] = tuple(d.get("arm_lengths", (None,) * 4))
        return cls(**d)

    def with_arms(self, *lengths) -> "JunctionParams":
        return replace(self, arm_lengths=tuple(lengths))

    def inner_controls(self) -> np.ndarray:
        a = self.w_g / 2
        return np.array([[self.y_i3, a], [self.y_i2, self.x_i2], [self.d_in, self.d_in],
                         [self.x_i2, self.y_i2], [a, self.y_i3]])

    def outer_controls(self) -> np.ndarray:
        b = self.w_g / 2 + self.w_rf
        return np.array([[self.y_o3, b], [self.y_o2, self.x_o2], [self.d_out, self.d_out],
                         [self.x_o2, self.y_o2], [b, self.y_o3]])

    def check(self) -> None:
        v = self.vector()
        if np.any(v <= 0) or np.any(np.asarray(self.arm_lengths) <= 0):
            raise GeometryError("all lengths must be positive")
        if self.d_out <= self.d_in:
            raise GeometryError("outer spline must enclose the inner one (d_out > d_in)")
        b = self.w_g / 2 + self.w_rf
        if max(self.y_i3, self.y_o3, b) >= min(self.arm_lengths):
            raise GeometryError("spline endpoints exceed the arm length")
        if self.y_i3 <= self.w_g / 2 or self.y_o3 <= b:
            raise GeometryError("spline endpoints must lie beyond the arm edges")


@dataclass(frozen=True)
class SplineBoundary:
    """Clamped uniform cubic B-spline through 5 control points."""

    controls: np.ndarray
    samples: int = 21

    @cached_property
    def spline(self) -> BSpline:
        n, k = len(self.controls), 3
        inner = np.linspace(0, 1, n - k + 1)
        knots = np.concatenate([[0] * k, inner, [1] * k])
        return BSpline(knots, np.asarray(self.controls, float), k)

    def sample(self, n: int | None = None) -> np.ndarray:
        u = np.linspace(0.0, 1.0, self.samples if n is None else n)
        return self.spline(u)


def _quadrant_rf(p: JunctionParams, lx: float, ly: float, samples: int) -> np.ndarray:
    """RF polygon of the first quadrant with arm lengths lx (x) and ly (y)."""
    a, b = p.w_g / 2, p.w_g / 2 + p.w_rf
    inner = SplineBoundary(p.inner_controls(), samples).sample()
    outer = SplineBoundary(p.outer_controls(), samples).sample()
    return np.concatenate([
        inner,
        [[a, ly], [b, ly]],
        outer[::-1],
        [[lx, b], [lx, a]],
    ])


def _quadrant_middle(p: JunctionParams, lx, ly, samples) -> np.ndarray:
    """Boundary of the middle channel region in the first quadrant."""
    a = p.w_g / 2
    inner = SplineBoundary(p.inner_controls(), samples).sample()
    return np.concatenate([[[0, 0], [lx, 0], [lx, a]], inner, [[a, ly], [0, ly]]])


def _reflect(poly, sx, sy):
    return np.asarray(poly) * np.array([sx, sy])


def build_junction(params: JunctionParams, samples: int = 21,
                   controls: bool = True) -> ElectrodeLayout:
    """X-junction with spline-shaped RF electrodes and D4-symmetric arms.

    Returns RF electrode ``RF`` (four polygons), the middle channel ``M`` and
    the four outer regions ``O1``..``O4`` (one per quadrant, bounded by the
    arm lengths).  Only RF polygons are built when ``controls`` is False.
    """
    params.check()
    arm = dict(zip(ARMS, params.arm_lengths))
    rf, mid, outer = [], [], []
    for q, (sx, sy, ax, ay) in QUADRANTS.items():
        lx, ly = arm[ax], arm[ay]
        poly = _quadrant_rf(params, lx, ly, samples)
        ring = ShapelyPolygon(poly)
        if not ring.is_valid:
            raise GeometryError(f"RF boundary of quadrant {q} self-intersects")
        rf.append(_reflect(poly, sx, sy))
        if controls:
            m = _quadrant_middle(params, lx, ly, samples)
            if not ShapelyPolygon(m).is_valid:
                raise GeometryError(f"inner spline of quadrant {q} leaves the middle channel")
            mid.append(_reflect(m, sx, sy))
            region = box(0, 0, lx, ly).difference(ring).difference(ShapelyPolygon(m))
            region = region.buffer(0)
            outer.append([_reflect(o, sx, sy) for o in _shape_polygons(region)])
    els = [Electrode("RF", Role.RF, tuple(rf))]
    if controls:
        mid_shape = unary_union([ShapelyPolygon(make_polygon(m)).buffer(0) for m in mid])
        els.append(Electrode("M", Role.CONTROL, tuple(_shape_polygons(mid_shape))))
        for q, polys in zip(QUADRANTS, outer):
            els.append(Electrode(f"O{q}", Role.CONTROL, tuple(polys)))
    return ElectrodeLayout(tuple(els), {"kind": "junction", "h": params.h, "w_g": params.w_g,
                                        "w_rf": params.w_rf, "junction": params.to_dict()})


def build_naive_junction(h: float, arm_half_length: float | None = None) -> ElectrodeLayout:
    """Two crossed five-wire traps; RF strips clipped by the middle channels."""
    w_g, w_rf = linear_widths(h)
    if arm_half_length is None:
        arm_half_length = 20 * h
    if arm_half_length < 10 * h:
        raise GeometryError("arm_half_length must be at least 10 h")
    L, a, b = arm_half_length, w_g / 2, w_g / 2 + w_rf
    strips = unary_union([box(-L, a, L, b), box(-L, -b, L, -a),
                          box(a, -L, b, L), box(-b, -L, -a, L)])
    channel = unary_union([box(-L, -a, L, a), box(-a, -L, a, L)])
    rf = strips.difference(channel)
    rf_polys = _shape_polygons(rf)
    outer = box(-L, -L, L, L).difference(rf).difference(channel)
    els = [Electrode("RF", Role.RF, tuple(rf_polys)),
           Electrode("M", Role.CONTROL, tuple(_shape_polygons(channel)))]
    for i, poly in enumerate(sorted(_shape_polygons(outer),
                                    key=lambda p: _quadrant_of(p.mean(axis=0)))):
        els.append(Electrode(f"O{i + 1}", Role.CONTROL, (poly,)))
    return ElectrodeLayout(tuple(els), {"kind": "naive", "h": h, "w_g": w_g, "w_rf": w_rf,
                                        "arm_half_length": L})


def _quadrant_of(pt) -> int:
    x, y = pt
    if x >= 0:
        return 1 if y >= 0 else 4
    return 2 if y >= 0 else 3


# ---------------------------------------------------------------- segmentation

OUTER_THIN = 49.75
OUTER_WIDE = 580.0
ELECTRODE_GAP = 5.0
DEFAULT_OUTER_EXTENT = OUTER_THIN + OUTER_WIDE + 2.5 * ELECTRODE_GAP


@dataclass(frozen=True)
class SegmentationPlan:
    """Cut plan for middle and outer control electrodes (nominal sizes, µm).

    Gaps are closed by giving each control electrode half of every
    control-control gap and the whole of every RF-control gap, so the RF
    geometry stays untouched.
    """

    segments: Mapping = field(default_factory=lambda: {"R": 9, "U": 9, "L": 9, "D": 20})
    segment_length: float = 75.0
    inner_length: float = 40.0
    center_size: float = 30.0
    gap: float = ELECTRODE_GAP
    outer_thin: float = OUTER_THIN
    outer_wide: float = OUTER_WIDE
    split_outer: bool = True

    @classmethod
    def none(cls) -> "SegmentationPlan":
        return cls(segments={}, split_outer=False)

    @property
    def is_identity(self) -> bool:
        return not any(self.segments.values()) and not self.split_outer

    def cuts(self, n: int, kind: str) -> list[tuple[float, float]]:
        """Axial intervals of the n segments of one arm (centre excluded)."""
        g = self.gap
        if kind == "linear":
            start = (self.segment_length + g) / 2
            lengths = [self.segment_length + g] * n
        else:
            start = (self.center_size + g) / 2
            lengths = ([self.inner_length + g] + [self.segment_length + g] * (n - 1))[:n]
        out, s = [], start
        for ln in lengths:
            out.append((s, s + ln))
            s += ln
        return out

    @property
    def thin_width(self) -> float:
        return self.outer_thin + 1.5 * self.gap

    @property
    def wide_width(self) -> float:
        return self.outer_wide + self.gap


def _arm_cell(arm: str, s0: float, s1: float, wedge: bool, span: float) -> ShapelyPolygon:
    ex, ey = ARM_AXES[arm]
    nx, ny = -ey, ex
    if wedge:
        st = [(s0, -s0), (s1, -s1), (s1, s1), (s0, s0)]
    else:
        st = [(s0, -span), (s1, -span), (s1, span), (s0, span)]
    return ShapelyPolygon([(s * ex + t * nx, s * ey + t * ny) for s, t in st])


def segment_controls(layout: ElectrodeLayout, plan: SegmentationPlan) -> ElectrodeLayout:
    """Cut middle and outer control regions into individually driven segments.

    Middle segments are named by arm and index from the centre (``R1``,
    ``U3``, ...); the junction centre square is ``c`` and the linear-trap
    centre segment is ``C``.  Outer regions split into a thin and a wide
    piece per arm and side, e.g. ``OR+t`` / ``OR+w``.
    """
    if plan.is_identity:
        return layout
    kind = layout.params.get("kind")
    if kind not in ("linear", "junction", "naive"):
        raise GeometryError(f"cannot segment layout of kind {kind!r}")
    rf = unary_union([ShapelyPolygon(p) for p in layout.rf_polygons])
    keep = [e for e in layout.electrodes if e.name != "M" and not e.name.startswith("O")]
    new: list[Electrode] = []
    mid = layout["M"].shape
    span = 1e6

    if kind == "linear":
        L = layout.params["arm_half_length"]
        c0 = (plan.segment_length + plan.gap) / 2
        new.append(_electrode_from_shape("C", Role.CONTROL, mid.intersection(box(-c0, -span, c0, span))))
        arms = {"R": plan.segments.get("R", 0), "L": plan.segments.get("L", 0)}
        for arm, n in arms.items():
            for i, (s0, s1) in enumerate(plan.cuts(n, "linear"), 1):
                if s1 > L:
                    raise GeometryError(f"segment {arm}{i} ends at {s1:g} beyond arm length {L:g}")
                e = _electrode_from_shape(f"{arm}{i}", Role.CONTROL,
                                          mid.intersection(_arm_cell(arm, s0, s1, False, span)))
                new.append(e)
    else:
        arm_len = _arm_lengths(layout)
        c0 = (plan.center_size + plan.gap) / 2
        new.append(_electrode_from_shape("c", Role.CONTROL, mid.intersection(box(-c0, -c0, c0, c0))))
        for arm in ARMS:
            n = plan.segments.get(arm, 0)
            for i, (s0, s1) in enumerate(plan.cuts(n, kind), 1):
                if s1 > arm_len[arm]:
                    raise GeometryError(
                        f"segment {arm}{i} ends at {s1:g} beyond arm length {arm_len[arm]:g}")
                e = _electrode_from_shape(f"{arm}{i}", Role.CONTROL,
                                          mid.intersection(_arm_cell(arm, s0, s1, True, span)))
                if e is None:
                    raise GeometryError(f"segment {arm}{i} is empty")
                new.append(e)

    outers = [e for e in layout.electrodes if e.name.startswith("O")]
    if plan.split_outer:
        thin_zone = rf.buffer(plan.thin_width, join_style="mitre", mitre_limit=10)
        wide_zone = rf.buffer(plan.thin_width + plan.wide_width, join_style="mitre", mitre_limit=10)
        for e in outers:
            region = e.shape
            if kind == "linear":
                side = "+" if e.centroid[1] > 0 else "-"
                pieces = {f"O{side}": region}
            else:
                q = int(e.name[1:])
                sx, sy, ax, ay = QUADRANTS[q]
                xside = box(0, 0, span, span).intersection(
                    ShapelyPolygon([(0, 0), (span, 0), (span, span)]))
                xside = shapely.affinity.scale(xside, sx, sy, origin=(0, 0))
                pieces = {f"O{ax}{'+' if sy > 0 else '-'}": region.intersection(xside),
                          f"O{ay}{'+' if sx > 0 else '-'}": region.difference(xside)}
            for base, reg in pieces.items():
                t = _electrode_from_shape(base + "t", Role.CONTROL, reg.intersection(thin_zone))
                w = _electrode_from_shape(base + "w", Role.CONTROL,
                                          reg.intersection(wide_zone).difference(thin_zone))
                new.extend(x for x in (t, w) if x is not None)
    else:
        new.extend(outers)
    return layout.replace_electrodes(keep + [e for e in new if e is not None],
                                     segmented=True, plan=_plan_dict(plan))


def _plan_dict(plan: SegmentationPlan) -> dict:
    d = asdict(plan)
    d["segments"] = dict(plan.segments)
    return d


def _arm_lengths(layout: ElectrodeLayout) -> dict:
    if layout.params.get("kind") == "junction":
        return dict(zip(ARMS, layout.params["junction"]["arm_lengths"]))
    L = layout.params["arm_half_length"]
    return {a: L for a in ARMS}


# ---------------------------------------------------------------- offsets


def offset_gap(outline, gap: float, closed: bool | None = None) -> np.ndarray:
    """Shift every segment of a polyline sideways by ``gap`` and re-join.

    Segments move along their right-hand normal (outwards for a
    counter-clockwise closed outline); neighbouring shifted segments are
    re-joined at the intersection of their supporting lines.
    """
    pts = np.asarray(outline, dtype=float)
    if gap < 0:
        raise GeometryError("gap must be non-negative")
    if closed is None:
        closed = len(pts) > 2 and np.allclose(pts[0], pts[-1])
    if closed and np.allclose(pts[0], pts[-1]):
        pts = pts[:-1]
    if gap == 0:
        return pts.copy()
    seg_a = pts if closed else pts[:-1]
    seg_b = np.roll(pts, -1, axis=0) if closed else pts[1:]
    d = seg_b - seg_a
    d /= np.linalg.norm(d, axis=1)[:, None]
    normal = np.stack([d[:, 1], -d[:, 0]], axis=1)
    a2 = seg_a + gap * normal
    n = len(seg_a)
    out = []
    idx = range(n) if closed else range(1, n)
    if not closed:
        out.append(a2[0])
    for i in idx:
        j = (i - 1) % n
        # join shifted segment j with shifted segment i
        p, r = a2[j], d[j]
        q, s = a2[i], d[i]
        den = r[0] * s[1] - r[1] * s[0]
        if abs(den) < 1e-12:
            out.append(q)
        else:
            t = ((q - p)[0] * s[1] - (q - p)[1] * s[0]) / den
            out.append(p + t * r)
    if not closed:
        out.append(seg_b[-1] + gap * normal[-1])
    res = np.array(out)
    line = LineString(np.vstack([res, res[:1]]) if closed else res)
    if not line.is_simple:
        raise GeometryError("offset outline self-intersects")
    return res
