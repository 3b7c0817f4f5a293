"""Bi-objective RF electrode shape optimization of the spline junction.

The cost is evaluated in units normalized by the ion height h:

    f1 = Var(laplacian of phi')            over the evaluation points
    f2 = sum_i |d phi'/dx (x_i)| dx

with phi' = |grad Theta_RF|² on the axis (x_i, 0, h), x_i = 0 .. 10 h.
"""
from __future__ import annotations

import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import optimize

from .fields import pp_from_rf, rf_field
from .geometry import (PARAM_NAMES, REFERENCE_RATIOS, GeometryError, JunctionParams,
                       build_junction)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class OptimizerConfig:
    seeds: tuple = tuple(range(16))
    n_points: int = 101
    x_max: float = 10.0  # in units of h
    lower: float = 0.02  # parameter bounds in units of h
    upper: float = 6.0
    arm_length: float = 30.0  # in units of h
    max_evaluations: int = 2000
    fatol: float = 1e-8
    xatol: float = 1e-4  # in units of h
    samples: int = 21
    workers: int = 1

    @property
    def dx(self) -> float:
        return self.x_max / (self.n_points - 1)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["seeds"] = list(self.seeds)
        return d


@dataclass
class CostBreakdown:
    f1: float
    f2: float
    w1: float
    w2: float

    @property
    def total(self) -> float:
        return self.w1 * self.f1 + self.w2 * self.f2


def dimensionless_pp(layout, h: float, points):
    """phi' = |grad Theta_RF|² in h-normalized units, with its axial
    derivative and Laplacian.  Independent of the ion and the drive."""
    rf = rf_field(layout, points)
    pp = pp_from_rf(rf, 1.0)
    return pp.phi * h ** 2, pp.gradient[:, 0] * h ** 3, pp.laplacian * h ** 4


def axis_points(h: float, config: OptimizerConfig = OptimizerConfig()) -> np.ndarray:
    x = np.linspace(0, config.x_max * h, config.n_points)
    return np.c_[x, np.zeros_like(x), np.full_like(x, h)]


def cost_from_profile(dphidx, lap, dx, weights) -> CostBreakdown:
    w1, w2 = weights
    return CostBreakdown(float(np.var(lap)), float(np.sum(np.abs(dphidx)) * dx), w1, w2)


def evaluate_cost(params: JunctionParams, weights=(1.0, 1.0),
                  config: OptimizerConfig = OptimizerConfig()) -> CostBreakdown:
    """Cost of a junction geometry; unbuildable geometry costs infinity."""
    w1, w2 = weights
    try:
        layout = build_junction(params, samples=config.samples, controls=False)
    except GeometryError:
        return CostBreakdown(np.inf, np.inf, w1, w2)
    _, dphidx, lap = dimensionless_pp(layout, params.h, axis_points(params.h, config))
    return cost_from_profile(dphidx, lap, config.dx, weights)


def _params(x_scaled, h, config):
    arms = (config.arm_length * h,) * 4
    return JunctionParams.from_vector(np.asarray(x_scaled) * h, h, arm_lengths=arms)


def random_start(rng: np.random.Generator, h: float, config: OptimizerConfig,
                 max_tries: int = 10000) -> np.ndarray:
    """Uniform start inside the bounds, rejecting unbuildable geometries."""
    for _ in range(max_tries):
        x = rng.uniform(config.lower, config.upper, len(PARAM_NAMES))
        try:
            build_junction(_params(x, h, config), samples=config.samples, controls=False)
        except GeometryError:
            continue
        return x
    raise GeometryError("no valid starting geometry found within the bounds")


@dataclass
class SeedResult:
    seed: int
    params: dict
    f1: float
    f2: float
    f_cost: float
    evaluations: int
    start: list = field(default_factory=list)

    def junction(self, h: float, arm_lengths=None) -> JunctionParams:
        p = JunctionParams(h, *(self.params[n] for n in PARAM_NAMES))
        return p.with_arms(*arm_lengths) if arm_lengths is not None else p


def run_seed(seed: int, weights, h: float, config: OptimizerConfig) -> SeedResult:
    rng = np.random.default_rng(seed)
    x0 = random_start(rng, h, config)
    nfev = 0

    def fun(x):
        nonlocal nfev
        nfev += 1
        c = evaluate_cost(_params(x, h, config), weights, config)
        return c.total

    bounds = [(config.lower, config.upper)] * len(x0)
    res = optimize.minimize(
        fun, x0, method="Nelder-Mead", bounds=bounds,
        options={"maxfev": config.max_evaluations, "fatol": config.fatol,
                 "xatol": config.xatol, "adaptive": False},
    )
    c = evaluate_cost(_params(res.x, h, config), weights, config)
    return SeedResult(seed, dict(zip(PARAM_NAMES, (res.x * h).tolist())), c.f1, c.f2,
                      c.total, nfev, (x0 * h).tolist())


class OptimizationError(RuntimeError):
    pass


@dataclass
class OptimizationReport:
    h: float
    weights: tuple
    seeds: list
    config: dict

    @property
    def best(self) -> SeedResult:
        ok = [s for s in self.seeds if np.isfinite(s.f_cost)]
        return min(ok, key=lambda s: (s.f_cost, s.seed))

    def best_params(self, arm_lengths=None) -> JunctionParams:
        return self.best.junction(self.h, arm_lengths)

    def spread(self) -> list[float]:
        """Parameter-space distance (units of h) of every seed to the best."""
        b = np.array([self.best.params[n] for n in PARAM_NAMES])
        return [float(np.linalg.norm(np.array([s.params[n] for n in PARAM_NAMES]) - b) / self.h)
                for s in self.seeds]

    def to_dict(self) -> dict:
        return {"h": self.h, "weights": list(self.weights), "config": self.config,
                "best_seed": self.best.seed,
                "seeds": [asdict(s) for s in self.seeds]}

    def to_json(self, path) -> None:
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=1)

    def table(self) -> str:
        """Parameter summary of the best seed, one variable per line."""
        b = self.best
        lines = [f"{'variable':<8} {'ratio to h':>11} {'value (um)':>11}"]
        for n in PARAM_NAMES:
            lines.append(f"{n:<8} {b.params[n] / self.h:11.5f} {b.params[n]:11.2f}")
        lines.append(f"f1={b.f1:.6g} f2={b.f2:.6g} cost={b.f_cost:.6g} (seed {b.seed})")
        return "\n".join(lines)


def optimize_junction(config: OptimizerConfig = OptimizerConfig(), weights=(1.0, 1.0),
                      h: float = 50.0) -> OptimizationReport:
    """Multi-start Nelder-Mead over the 8 spline variables."""
    if config.lower <= 0 or config.upper <= config.lower:
        raise ValueError("parameter bounds must satisfy 0 < lower < upper")
    if any(w < 0 for w in weights):
        raise ValueError("weights must be non-negative")
    seeds = list(config.seeds)
    if config.workers > 1:
        with ProcessPoolExecutor(config.workers) as ex:
            results = list(ex.map(run_seed, seeds, [weights] * len(seeds),
                                  [h] * len(seeds), [config] * len(seeds)))
    else:
        results = [run_seed(s, weights, h, config) for s in seeds]
    results.sort(key=lambda r: r.seed)
    if not any(np.isfinite(r.f_cost) for r in results):
        raise OptimizationError("every seed ended on an invalid geometry")
    for r in results:
        log.info("seed %d: cost %.6g after %d evaluations", r.seed, r.f_cost, r.evaluations)
    return OptimizationReport(h, tuple(weights), results, config.to_dict())


def reference_params(h: float = 50.0, **kw) -> JunctionParams:
    return JunctionParams(h, *(r * h for r in REFERENCE_RATIOS), **kw)
