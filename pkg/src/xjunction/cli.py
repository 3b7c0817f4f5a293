"""Command-line front end.

Every command reads a JSON run configuration (``--config``), merges it over
the defaults below, writes the effective configuration next to its outputs
and exits with 0 on success, 1 when a result check fails, 2 on a
configuration error and 3 when a waveform QP is infeasible.
"""
from __future__ import annotations

import argparse
import copy
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import analysis, dynamics, rfopt, waveform
from .geometry import (GeometryError, JunctionParams, ElectrodeLayout, SegmentationPlan,
                       build_junction, build_linear_fivewire, build_naive_junction,
                       segment_controls)
from .physics import PhysicalContext

log = logging.getLogger("xjunction")

EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_INFEASIBLE = 0, 1, 2, 3

DEFAULTS = {
    "out": "out",
    "seeds": list(range(16)),
    "threads": 1,
    "ctx": PhysicalContext().to_dict(),
    "geometry": {
        "kind": "auto",  # junction | naive | linear | file; auto picks linear for tilt
        "h": 50.0,
        "ratios": None,  # 8 spline variables in units of h, defaults to the reference optimum
        "arm_lengths": [750.0, 750.0, 750.0, 2700.0],
        "arm_half_length": None,  # linear and naive layouts
        "segment": True,
        "segments": None,
        "samples": 21,
        "file": None,
    },
    "optimizer": {
        "weights": [1.0, 1.0],
        "n_points": 101,
        "x_max": 10.0,
        "lower": 0.02,
        "upper": 6.0,
        "arm_length": 30.0,
        "max_evaluations": 2000,
        "fatol": 1e-8,
        "xatol": 1e-4,
    },
    "analysis": {
        "strategy": "fixed-height",  # min-pp | fixed-height | const-confinement
        "arm": "R",
        "axial_range": [0.0, 500.0],
        "step": 5.0,
        "height": 50.0,
        "target": 1.0,
        "modes": True,
    },
    "waveform": {
        "mode": "transport",  # transport | static
        "start": [0.0, 500.0, 50.0],
        "end": [0.0, -95.0, 50.0],
        "steps": 61,
        "points": None,  # explicit positions override start/end and the static path
        "f_axial": 1.5,
        "axis": "y",
        "radial_floor": None,  # 3 for transport, 0 for static wells
        "bounds": [-10.0, 10.0],
        "electrodes": None,  # middle | outer | all | list; middle for transport, all for static
        "weights": None,
        "static_path": {"strategy": "min-pp", "arm": "U", "axial_range": [0.0, 500.0],
                        "step": 5.0},
    },
    "dynamics": {
        "point": None,  # defaults to the pseudopotential maximum of a constant-confinement path
        "confinement": 1.0,
        "search_range": [0.0, 100.0],
        "search_step": 1.0,
        "arm": "R",
        "targets": [6.51, 4.03, 1.5],
        "electrodes": "all",
        "duration_us": 1.5,
        "step_fraction": 0.005,
        "decimation": 1,
        "start": "micromotion",  # micromotion | point
        "emm_band": [0.0, 0.08],
    },
    "tilt": {
        "point": None,  # defaults to the RF null above the trap centre
        "angle_deg": 20.0,
        "bounds": [-10.0, 10.0],
        "f_radial": 6.06,  # rescale the RF amplitude to this mean radial frequency; null keeps it
        "electrodes": "outer",
    },
}

WEIGHT_KEYS = ("smooth1", "smooth2", "locality", "residual", "ridge", "norm")
STRATEGIES = ("min-pp", "fixed-height", "const-confinement")


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------- configuration


def _merge(base: dict, user: dict, where: str = "") -> dict:
    out = copy.deepcopy(base)
    for k, v in user.items():
        key = f"{where}{k}"
        if k not in base:
            raise ConfigError(f"unknown configuration key '{key}'")
        b = base[k]
        if isinstance(b, dict) and k not in ("ctx",):
            if not isinstance(v, dict):
                raise ConfigError(f"'{key}' must be an object")
            out[k] = _merge(b, v, key + ".")
        elif isinstance(b, dict):
            unknown = set(v) - set(b)
            if unknown:
                raise ConfigError(f"unknown configuration key '{key}.{sorted(unknown)[0]}'")
            out[k] = {**b, **v}
        else:
            if b is not None and v is not None:
                if isinstance(b, bool) != isinstance(v, bool):
                    raise ConfigError(f"'{key}' has the wrong type")
                if isinstance(b, (int, float)) and not isinstance(v, (int, float)):
                    raise ConfigError(f"'{key}' must be a number")
                if isinstance(b, (list, str)) and not isinstance(v, type(b)):
                    raise ConfigError(f"'{key}' must be a {type(b).__name__}")
            out[k] = v
    return out


def _check(cfg: dict) -> None:
    g, o, a, w, d, t = (cfg[k] for k in ("geometry", "optimizer", "analysis", "waveform",
                                         "dynamics", "tilt"))
    if g["kind"] not in ("auto", "junction", "naive", "linear", "file"):
        raise ConfigError(f"unknown geometry kind '{g['kind']}'")
    if g["kind"] == "file" and not g["file"]:
        raise ConfigError("geometry.kind 'file' needs geometry.file")
    if g["ratios"] is not None and len(g["ratios"]) != 8:
        raise ConfigError("geometry.ratios needs 8 values")
    if len(g["arm_lengths"]) != 4:
        raise ConfigError("geometry.arm_lengths needs 4 values (R, U, L, D)")
    if len(o["weights"]) != 2 or any(x < 0 for x in o["weights"]):
        raise ConfigError("optimizer.weights must be two non-negative numbers")
    if not 0 < o["lower"] < o["upper"]:
        raise ConfigError("optimizer bounds must satisfy 0 < lower < upper")
    if cfg["threads"] < 1 or not cfg["seeds"]:
        raise ConfigError("threads must be positive and seeds non-empty")
    for blk, name in ((a, "analysis"), (w["static_path"], "waveform.static_path")):
        if blk["strategy"] not in STRATEGIES:
            raise ConfigError(f"unknown path strategy '{blk['strategy']}' in {name}")
        if blk["step"] <= 0:
            raise ConfigError(f"{name}.step must be positive")
    if w["mode"] not in ("transport", "static"):
        raise ConfigError(f"unknown waveform mode '{w['mode']}'")
    if w["weights"] is not None:
        unknown = set(w["weights"]) - set(WEIGHT_KEYS)
        if unknown:
            raise ConfigError(f"unknown configuration key 'waveform.weights.{sorted(unknown)[0]}'")
    if w["steps"] < 1:
        raise ConfigError("waveform.steps must be positive")
    for blk, name in ((w, "waveform"), (t, "tilt")):
        if blk["bounds"][0] > blk["bounds"][1]:
            raise ConfigError(f"{name}.bounds are reversed")
    if d["start"] not in ("micromotion", "point"):
        raise ConfigError("dynamics.start must be 'micromotion' or 'point'")
    if d["step_fraction"] > 1 / 50:
        raise ConfigError("dynamics.step_fraction must not exceed 1/50")
    if len(d["targets"]) != 3:
        raise ConfigError("dynamics.targets needs 3 frequencies")


def load_config(path=None, overrides: dict | None = None) -> dict:
    user = {}
    if path is not None:
        try:
            with open(path) as f:
                user = json.load(f)
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot read config {path}: {e}") from e
        if not isinstance(user, dict):
            raise ConfigError("config root must be an object")
    cfg = _merge(DEFAULTS, user)
    cfg = _merge(cfg, overrides or {})
    _check(cfg)
    return cfg


# ---------------------------------------------------------------- builders


def make_ctx(cfg) -> PhysicalContext:
    try:
        return PhysicalContext.from_dict(cfg["ctx"])
    except ValueError as e:
        raise ConfigError(str(e)) from e


def make_layout(cfg, command: str = "") -> ElectrodeLayout:
    g = cfg["geometry"]
    kind = g["kind"]
    if kind == "auto":
        kind = "linear" if command == "tilt" else "junction"
    h = float(g["h"])
    if kind == "file":
        return ElectrodeLayout.from_json(g["file"])
    if kind == "junction":
        ratios = g["ratios"] or rfopt.REFERENCE_RATIOS
        layout = build_junction(JunctionParams(h, *(r * h for r in ratios),
                                               arm_lengths=tuple(g["arm_lengths"])),
                                samples=g["samples"])
        plan = SegmentationPlan(segments=g["segments"]) if g["segments"] else SegmentationPlan()
    elif kind == "naive":
        layout = build_naive_junction(h, g["arm_half_length"])
        plan = SegmentationPlan(segments=g["segments"]) if g["segments"] else SegmentationPlan()
    else:
        layout = build_linear_fivewire(h, g["arm_half_length"])
        plan = SegmentationPlan(segments=g["segments"] or {"R": 9, "L": 9})
    return segment_controls(layout, plan) if g["segment"] else layout


def _electrodes(spec, layout, default):
    spec = default if spec is None else spec
    if isinstance(spec, list):
        return spec
    if spec == "middle":
        return waveform.middle_electrodes(layout)
    if spec == "outer":
        return waveform.outer_electrodes(layout)
    if spec == "all":
        return layout.control_names
    raise ConfigError(f"unknown electrode set '{spec}'")


def run_path(layout, ctx, blk, h, modes=False):
    rng, step, arm = tuple(blk["axial_range"]), blk["step"], blk["arm"]
    if blk["strategy"] == "min-pp":
        return analysis.path_min_pp(layout, ctx, rng, step, arm, h, modes=modes)
    if blk["strategy"] == "fixed-height":
        return analysis.path_fixed_height(layout, ctx, blk.get("height", h), rng, step, arm,
                                          modes=modes)
    return analysis.path_const_confinement(layout, ctx, blk.get("target", 1.0), rng, step, arm,
                                           h, modes=modes)


def _dump(obj, path) -> None:
    with open(path, "w") as f:
        json.dump(obj, f, indent=1, default=lambda o: o.tolist() if hasattr(o, "tolist") else str(o))
        f.write("\n")


# ---------------------------------------------------------------- commands


def cmd_optimize(cfg, out: Path) -> int:
    o = cfg["optimizer"]
    oc = rfopt.OptimizerConfig(seeds=tuple(cfg["seeds"]), workers=cfg["threads"],
                               samples=cfg["geometry"]["samples"],
                               **{k: v for k, v in o.items() if k != "weights"})
    h = cfg["geometry"]["h"]
    try:
        rep = rfopt.optimize_junction(oc, tuple(o["weights"]), h)
    except rfopt.OptimizationError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CHECK
    rep.to_json(out / "optimize_report.json")
    best = rep.best
    _dump({"h": h, "ratios": [best.params[n] / h for n in rfopt.PARAM_NAMES]},
          out / "best_params.json")
    layout = build_junction(rep.best_params(tuple(cfg["geometry"]["arm_lengths"])),
                            samples=cfg["geometry"]["samples"])
    layout.to_json(out / "best_geometry.json")
    print(rep.table())
    return EXIT_OK


def cmd_analyze(cfg, out: Path) -> int:
    a = cfg["analysis"]
    layout, ctx = make_layout(cfg, "analyze"), make_ctx(cfg)
    path = run_path(layout, ctx, a, cfg["geometry"]["h"], modes=a["modes"])
    name = f"path_{a['strategy']}_{a['arm']}"
    analysis.write_path_csv(path, out / f"{name}.csv", a["arm"])
    summary = {"strategy": a["strategy"], "samples": len(path), "diagnostics": path.diagnostics}
    if len(path):
        summary.update(min_laplacian=float(path.laplacian.min()),
                       max_phi=float(path.phi.max()),
                       max_phi_position=path.positions[int(np.argmax(path.phi))].tolist(),
                       max_height=float(path.heights.max()),
                       min_height=float(path.heights.min()))
    if len(path) >= 3:
        b = analysis.barrier_profile(path)
        summary.update(barrier_peaks=b.peak_positions.tolist(),
                       barrier_heights=b.peak_heights.tolist(),
                       barrier_nulls=b.null_positions.tolist())
    _dump(summary, out / f"{name}.json")
    for k, v in summary.items():
        print(f"{k}: {v}")
    return EXIT_OK


def _waveform_positions(cfg, layout, ctx):
    w = cfg["waveform"]
    if w["points"] is not None:
        return np.atleast_2d(np.asarray(w["points"], dtype=float))
    if w["mode"] == "static":
        return run_path(layout, ctx, w["static_path"], cfg["geometry"]["h"]).positions
    return np.linspace(w["start"], w["end"], w["steps"])


def cmd_waveform(cfg, out: Path) -> int:
    w = cfg["waveform"]
    layout, ctx = make_layout(cfg, "waveform"), make_ctx(cfg)
    pos = _waveform_positions(cfg, layout, ctx)
    static = w["mode"] == "static" or len(pos) == 1
    names = _electrodes(w["electrodes"], layout, "all" if static else "middle")
    base = waveform.STATIC_WEIGHTS if static else waveform.WaveformWeights()
    weights = waveform.WaveformWeights(**{**base.__dict__, **(w["weights"] or {})})
    floor = w["radial_floor"] if w["radial_floor"] is not None else (0.0 if static else 3.0)
    try:
        if static:
            wf = waveform.static_wells(layout, ctx, pos, w["f_axial"], w["axis"], names, floor,
                                       tuple(w["bounds"]), weights)
        else:
            req = waveform.TransportRequest(pos, w["f_axial"], w["axis"], floor,
                                            tuple(w["bounds"]), weights, tuple(names))
            table = waveform.build_field_table(layout, ctx, pos, names)
            wf = waveform.generate(req, table, ctx)
    except waveform.WaveformError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INFEASIBLE if "infeasible" in str(e) else EXIT_CHECK
    stem = "static_wells" if static else "waveform"
    waveform.write_waveform_csv(wf, out / f"{stem}.csv")
    waveform.write_diagnostics_csv(wf, out / f"{stem}_diagnostics.csv")
    ok = waveform.residuals_ok(wf.residuals)
    fr = wf.frequencies
    summary = {"steps": len(wf), "voltage_range": wf.voltage_range, "residuals": wf.residuals,
               "residuals_ok": ok, "f_axial_range": [float(fr[:, 0].min()), float(fr[:, 0].max())],
               "min_radial": float(np.nanmin(fr[:, 1:])), "solver": wf.solver}
    _dump(summary, out / f"{stem}.json")
    for k, v in summary.items():
        print(f"{k}: {v}")
    return EXIT_OK if ok else EXIT_CHECK


def max_pp_point(layout, ctx, d, h) -> np.ndarray:
    blk = {"strategy": "const-confinement", "arm": d["arm"], "axial_range": d["search_range"],
           "step": d["search_step"], "target": d["confinement"]}
    path = run_path(layout, ctx, blk, h)
    if not len(path):
        raise ConfigError("constant-confinement path is empty; no simulation point")
    return path.positions[int(np.argmax(path.phi))]


def cmd_simulate(cfg, out: Path) -> int:
    d = cfg["dynamics"]
    layout, ctx = make_layout(cfg, "simulate"), make_ctx(cfg)
    pt = (np.asarray(d["point"], dtype=float) if d["point"] is not None
          else max_pp_point(layout, ctx, d, cfg["geometry"]["h"]))
    names = _electrodes(d["electrodes"], layout, "all")
    comp = dynamics.compensate_and_confine(layout, ctx, pt, d["targets"], names)
    model = dynamics.LayoutFields(layout, ctx, comp.voltages)
    start = dynamics.micromotion_start(model, ctx, pt) if d["start"] == "micromotion" else pt
    tc = dynamics.TrajectoryConfig(tuple(start), duration_us=d["duration_us"],
                                   step_fraction=d["step_fraction"])
    traj = dynamics.integrate(model, ctx, tc)
    dynamics.write_trajectory_csv(traj, out / "trajectory.csv", d["decimation"])
    phi = float(analysis.pseudopotential(layout, ctx, pt[None], hessian=False).phi[0])
    estimate = analysis.emm_from_phi(phi, ctx)
    summary = {"point": pt.tolist(), "phi_pp": phi, "escaped": traj.escaped,
               "voltages": comp.voltages, "max_voltage": comp.max_voltage,
               "frequencies": comp.frequencies.tolist(), "estimate_um": estimate}
    ok = not traj.escaped
    if ok:
        emm = dynamics.extract_emm(traj)
        excess = emm.amplitude / estimate - 1
        lo, hi = d["emm_band"]
        ok = emm.steady and lo <= excess <= hi
        summary.update(emm_um=emm.amplitude, excess=excess, steady=emm.steady,
                       mean_offset=(dynamics.mean_position(traj) - pt).tolist(),
                       spectrum_mhz=dynamics.spectrum_peaks(traj).tolist())
    summary["within_band"] = ok
    _dump(summary, out / "simulate.json")
    for k in ("point", "phi_pp", "max_voltage", "estimate_um", "emm_um", "excess", "within_band"):
        if k in summary:
            print(f"{k}: {summary[k]}")
    return EXIT_OK if ok else EXIT_CHECK


def cmd_tilt(cfg, out: Path) -> int:
    t = cfg["tilt"]
    layout, ctx = make_layout(cfg, "tilt"), make_ctx(cfg)
    if t["point"] is not None:
        pt = np.asarray(t["point"], dtype=float)
    else:
        h = cfg["geometry"]["h"]
        pt = analysis.path_min_pp(layout, ctx, (0.0, 0.0), 1.0, "R", h).positions[0]
    if t["f_radial"] is not None:
        ctx = waveform.rf_amplitude_for_radial(layout, ctx, pt, t["f_radial"])
    names = _electrodes(t["electrodes"], layout, "outer")
    try:
        res = waveform.optimize_radial_tilt(layout, ctx, pt, t["angle_deg"], tuple(t["bounds"]),
                                            names)
    except waveform.WaveformError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INFEASIBLE
    summary = {"point": pt.tolist(), "v_rf": ctx.v_rf, "splitting_mhz": res.splitting_mhz,
               "frequencies": res.frequencies.tolist(), "angles_deg": res.angles_deg.tolist(),
               "degenerate_mhz": res.degenerate_mhz, "voltages": res.voltages}
    _dump(summary, out / "tilt.json")
    for k in ("point", "v_rf", "splitting_mhz", "frequencies", "angles_deg"):
        print(f"{k}: {summary[k]}")
    return EXIT_OK


def cmd_export_geometry(cfg, out: Path) -> int:
    layout = make_layout(cfg, "export-geometry")
    layout.to_json(out / "layout.json")
    with open(out / "layout_vertices.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["electrode", "role", "polygon", "vertex", "x", "y"])
        for e in layout.electrodes:
            for k, poly in enumerate(e.polygons):
                for i, (x, y) in enumerate(poly):
                    w.writerow([e.name, e.role.value, k, i, f"{x:.10g}", f"{y:.10g}"])
    print(f"{len(layout.electrodes)} electrodes written to {out}")
    return EXIT_OK


COMMANDS = {
    "optimize": cmd_optimize,
    "analyze": cmd_analyze,
    "waveform": cmd_waveform,
    "simulate": cmd_simulate,
    "export-geometry": cmd_export_geometry,
    "tilt": cmd_tilt,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="xjunction", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", help="JSON run configuration")
        s.add_argument("--out", help="output directory")
        s.add_argument("--seeds", type=int, help="run seeds 0..N-1")
        s.add_argument("--threads", type=int, help="worker processes")
        s.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    overrides = {}
    if args.out is not None:
        overrides["out"] = args.out
    if args.seeds is not None:
        overrides["seeds"] = list(range(args.seeds))
    if args.threads is not None:
        overrides["threads"] = args.threads
    try:
        cfg = load_config(args.config, overrides)
        out = Path(cfg["out"])
        out.mkdir(parents=True, exist_ok=True)
        _dump(cfg, out / f"{args.command}_config.json")
        return COMMANDS[args.command](cfg, out)
    except (ConfigError, GeometryError, KeyError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
