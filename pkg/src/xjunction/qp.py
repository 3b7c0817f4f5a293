"""Small dense convex quadratic programs.

Solves

    minimize    ½ vᵀPv + qᵀv
    subject to  A_eq v = b_eq,  A_ineq v ≤ b_ineq,  lo ≤ v ≤ hi

by operator splitting (ADMM) on the stacked form l ≤ A v ≤ u, with Ruiz
equilibration, over-relaxation, adaptive step size, infeasibility
certificates and a final active-set polish.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
DUAL_INFEASIBLE = "dual_infeasible"
MAX_ITER = "max_iter"


class QpError(ValueError):
    pass


def _mat(a, n):
    if a is None:
        return np.zeros((0, n))
    a = np.atleast_2d(np.asarray(a, dtype=float))
    if a.size == 0:
        return np.zeros((0, n))
    return a


def _vec(b, m):
    if b is None:
        return np.zeros(m)
    return np.asarray(b, dtype=float).reshape(-1)


@dataclass
class QuadraticProgram:
    P: np.ndarray
    q: np.ndarray
    A_eq: np.ndarray = None
    b_eq: np.ndarray = None
    A_ineq: np.ndarray = None
    b_ineq: np.ndarray = None
    lo: np.ndarray = None
    hi: np.ndarray = None

    def __post_init__(self):
        self.P = np.atleast_2d(np.asarray(self.P, dtype=float))
        self.q = np.asarray(self.q, dtype=float).reshape(-1)
        n = len(self.q)
        if self.P.shape != (n, n):
            raise QpError(f"P has shape {self.P.shape}, expected {(n, n)}")
        if not np.allclose(self.P, self.P.T, rtol=0, atol=1e-12 * max(1.0, np.abs(self.P).max())):
            raise QpError("P is not symmetric")
        self.A_eq = _mat(self.A_eq, n)
        self.b_eq = _vec(self.b_eq, len(self.A_eq))
        self.A_ineq = _mat(self.A_ineq, n)
        self.b_ineq = _vec(self.b_ineq, len(self.A_ineq))
        self.lo = np.full(n, -np.inf) if self.lo is None else np.broadcast_to(
            np.asarray(self.lo, dtype=float), (n,)).copy()
        self.hi = np.full(n, np.inf) if self.hi is None else np.broadcast_to(
            np.asarray(self.hi, dtype=float), (n,)).copy()
        for name, a, b in (("eq", self.A_eq, self.b_eq), ("ineq", self.A_ineq, self.b_ineq)):
            if a.shape[1] != n or len(b) != len(a):
                raise QpError(f"{name} constraints have inconsistent dimensions")
        if np.any(self.lo > self.hi):
            raise QpError("lower bound exceeds upper bound")

    @property
    def n(self) -> int:
        return len(self.q)

    def stacked(self):
        """Constraint matrix and bounds in the form l ≤ A v ≤ u.

        Rows are equalities, inequalities, then one bound row per variable.
        """
        A = np.vstack([self.A_eq, self.A_ineq, np.eye(self.n)])
        l = np.concatenate([self.b_eq, np.full(len(self.b_ineq), -np.inf), self.lo])
        u = np.concatenate([self.b_eq, self.b_ineq, self.hi])
        return A, l, u

    def objective(self, v) -> float:
        return float(0.5 * v @ self.P @ v + self.q @ v)

    def to_json(self, path) -> None:
        def enc(a):
            return [[None if not np.isfinite(x) else x for x in r] for r in np.atleast_2d(a).tolist()]
        d = {k: enc(getattr(self, k)) for k in ("P", "q", "A_eq", "b_eq", "A_ineq", "b_ineq", "lo", "hi")}
        with open(path, "w") as f:
            json.dump(d, f)


@dataclass(frozen=True)
class QpSettings:
    eps_abs: float = 1e-8
    eps_rel: float = 1e-8
    eps_infeasible: float = 1e-6
    max_iter: int = 20000
    rho: float = 0.1
    sigma: float = 1e-6
    alpha: float = 1.6
    scaling_iters: int = 10
    adapt_interval: int = 25
    check_interval: int = 5
    polish: bool = True
    polish_interval: int = 100
    polish_trigger: float = 1e-4  # relative residual at which early polishing starts


@dataclass
class QpSolution:
    v: np.ndarray
    status: str
    iterations: int
    residuals: dict = field(default_factory=dict)
    y: np.ndarray = None
    polished: bool = False
    certificate: np.ndarray = None  # stacked-row direction proving infeasibility

    @property
    def ok(self) -> bool:
        return self.status == OPTIMAL


def _ruiz(P, Ac, q, iters):
    """Equilibrate P and the general constraint rows.

    Box rows are left out and later scaled by 1/D so they stay identity.
    """
    n, m = P.shape[0], Ac.shape[0]
    D = np.ones(n)
    E = np.ones(m)
    Ps, As = P.copy(), Ac.copy()
    for _ in range(iters):
        cn = np.abs(Ps).max(axis=0)
        if m:
            cn = np.maximum(cn, np.abs(As).max(axis=0))
        rn = np.abs(As).max(axis=1) if m else np.zeros(0)
        dn = 1.0 / np.sqrt(np.clip(cn, 1e-4, 1e4))
        en = 1.0 / np.sqrt(np.clip(rn, 1e-4, 1e4))
        Ps = dn[:, None] * Ps * dn[None, :]
        As = en[:, None] * As * dn[None, :]
        D *= dn
        E *= en
    qs = D * q
    scale = max(np.abs(Ps).max(axis=0).mean() if n else 0.0, np.abs(qs).max(initial=0.0))
    c = 1.0 / np.clip(scale, 1e-4, 1e4)
    return Ps * c, As, qs * c, D, E, c


class _Stack:
    """Rows [Ac; I] without forming the identity block."""

    def __init__(self, Ac, n):
        self.Ac, self.n, self.mc = Ac, n, len(Ac)

    def mv(self, x):
        return np.concatenate([self.Ac @ x, x])

    def rmv(self, y):
        return self.Ac.T @ y[:self.mc] + y[self.mc:]

    def dense(self):
        return np.vstack([self.Ac, np.eye(self.n)])


def _split(qp):
    Ac = np.vstack([qp.A_eq, qp.A_ineq])
    l = np.concatenate([qp.b_eq, np.full(len(qp.b_ineq), -np.inf), qp.lo])
    u = np.concatenate([qp.b_eq, qp.b_ineq, qp.hi])
    return _Stack(Ac, qp.n), l, u


def _residuals(qp, A, l, u, v, y):
    Av = A.mv(v)
    z = np.clip(Av, l, u)
    Pv = qp.P @ v
    Aty = A.rmv(y)
    rp = float(np.abs(Av - z).max(initial=0.0))
    rd = float(np.abs(Pv + qp.q + Aty).max(initial=0.0))
    gap = float(abs(v @ Pv + qp.q @ v + _support(l, u, y)))
    return {"primal": rp, "dual": rd, "gap": gap,
            "scale_primal": max(np.abs(Av).max(initial=0.0), np.abs(z).max(initial=0.0)),
            "scale_dual": max(np.abs(Pv).max(initial=0.0), np.abs(Aty).max(initial=0.0),
                              np.abs(qp.q).max(initial=0.0))}


def _support(l, u, y):
    yp, ym = np.maximum(y, 0), np.minimum(y, 0)
    with np.errstate(invalid="ignore"):
        s = np.where(yp > 0, u * yp, 0.0).sum() + np.where(ym < 0, l * ym, 0.0).sum()
    return s if np.isfinite(s) else 0.0


def _converged(r, s, factor=1.0):
    return (r["primal"] <= factor * (s.eps_abs + s.eps_rel * r["scale_primal"])
            and r["dual"] <= factor * (s.eps_abs + s.eps_rel * r["scale_dual"]))


def _polish(qp, A, l, u, v, y, delta=1e-10, refine=5):
    """Solve the KKT system of the active set guessed from the ADMM iterate."""
    z = A.mv(v)
    eq = l == u
    with np.errstate(invalid="ignore"):
        low = eq | ((z - l) < -y) | ((y < 0) & np.isclose(z, l))
        upp = ~low & (((u - z) < y) | ((y > 0) & np.isclose(z, u)))
    act = low | upp
    mc = A.mc
    Aa = np.vstack([A.Ac[act[:mc]], np.eye(A.n)[act[mc:]]])
    ba = np.where(low, l, u)[act]
    n, k = qp.n, int(act.sum())
    K = np.block([[qp.P + delta * np.eye(n), Aa.T], [Aa, -delta * np.eye(k)]])
    Kt = np.block([[qp.P, Aa.T], [Aa, np.zeros((k, k))]])
    rhs = np.concatenate([-qp.q, ba])
    try:
        lu = linalg.lu_factor(K, check_finite=False)
    except (linalg.LinAlgError, ValueError):
        return None
    sol = linalg.lu_solve(lu, rhs)
    for _ in range(refine):
        sol = sol + linalg.lu_solve(lu, rhs - Kt @ sol)
    if not np.all(np.isfinite(sol)):
        return None
    vv = sol[:n]
    yy = np.zeros(len(l))
    yy[act] = sol[n:]
    # multipliers must carry the sign of their bound
    yy[low & ~eq] = np.minimum(yy[low & ~eq], 0)
    yy[upp] = np.maximum(yy[upp], 0)
    return vv, yy


def solve(qp: QuadraticProgram, settings: QpSettings = QpSettings()) -> QpSolution:
    """Solve a convex QP; never raises on infeasibility, check ``status``."""
    s = settings
    A, l, u = _split(qp)
    n, m, mc = qp.n, len(l), A.mc
    Ps, Asc, qs, D, Ec, c = _ruiz(qp.P, A.Ac, qp.q, s.scaling_iters)
    E = np.concatenate([Ec, 1.0 / D])
    As = _Stack(Asc, n)
    ls, us = l * E, u * E
    eq = ls == us
    rho_vec = np.where(eq, 1e3 * s.rho, s.rho)
    rho_vec[np.isinf(ls) & np.isinf(us)] = 1e-6

    def factor(rv):
        K = Ps + s.sigma * np.eye(n) + Asc.T @ (rv[:mc, None] * Asc) + np.diag(rv[mc:])
        return linalg.cho_factor(K, check_finite=False)

    def try_polish(v, yu):
        pol = _polish(qp, A, l, u, v, yu)
        if pol is None:
            return None
        pr = _residuals(qp, A, l, u, *pol)
        return (pol, pr) if _converged(pr, s) else None

    cf = factor(rho_vec)
    x = np.zeros(n)
    z = np.zeros(m)
    y = np.zeros(m)
    rho = s.rho
    status = MAX_ITER
    it = 0
    best = None
    cert = None
    polished = None
    last_polish = -np.inf
    for it in range(1, s.max_iter + 1):
        x_prev, y_prev = x, y
        xt = linalg.cho_solve(cf, s.sigma * x - qs + As.rmv(rho_vec * z - y), check_finite=False)
        zt = As.mv(xt)
        x = s.alpha * xt + (1 - s.alpha) * x
        zr = s.alpha * zt + (1 - s.alpha) * z
        z_new = np.clip(zr + y / rho_vec, ls, us)
        y = y + rho_vec * (zr - z_new)
        z = z_new
        if it % s.check_interval and it != s.max_iter:
            continue
        v = D * x
        yu = E * y / c
        r = _residuals(qp, A, l, u, v, yu)
        if best is None or max(r["primal"], r["dual"]) < max(best[2]["primal"], best[2]["dual"]):
            best = (v, yu, r)
        if _converged(r, s):
            status = OPTIMAL
            break
        if s.polish and m and it - last_polish >= s.polish_interval \
                and _converged(r, s, s.polish_trigger / s.eps_rel):
            last_polish = it
            polished = try_polish(v, yu)
            if polished is not None:
                status = OPTIMAL
                break
        dy = E * (y - y_prev)
        ndy = np.abs(dy).max(initial=0.0)
        if ndy > 0 and np.abs(A.rmv(dy)).max(initial=0.0) <= s.eps_infeasible * ndy \
                and _support(l, u, dy) < -s.eps_infeasible * ndy:
            status = INFEASIBLE
            cert = dy / ndy
            break
        dx = D * (x - x_prev)
        ndx = np.abs(dx).max(initial=0.0)
        if ndx > 0 and np.abs(qp.P @ dx).max() <= s.eps_infeasible * ndx \
                and qp.q @ dx < -s.eps_infeasible * ndx:
            Adx = A.mv(dx)
            tol = s.eps_infeasible * ndx
            ok = np.where(np.isfinite(u), Adx <= tol, True) & np.where(np.isfinite(l), Adx >= -tol, True)
            if ok.all():
                status = DUAL_INFEASIBLE
                break
        if it % s.adapt_interval == 0:
            rp_n = r["primal"] / max(r["scale_primal"], 1e-30)
            rd_n = r["dual"] / max(r["scale_dual"], 1e-30)
            if rp_n > 0 and rd_n > 0:
                new = float(np.clip(rho * np.sqrt(rp_n / rd_n), 1e-6, 1e6))
                if new > 5 * rho or new < 0.2 * rho:
                    rho_vec *= new / rho
                    rho = new
                    cf = factor(rho_vec)
    if polished is not None:
        (v, yu), r = polished
        return QpSolution(v, OPTIMAL, it, r, yu, True)
    v, yu, r = (D * x, E * y / c, None) if status != MAX_ITER else best
    r = _residuals(qp, A, l, u, v, yu)
    sol = QpSolution(v, status, it, r, yu, certificate=cert)
    if s.polish and status in (OPTIMAL, MAX_ITER) and m:
        pol = _polish(qp, A, l, u, v, yu)
        if pol is not None:
            pr = _residuals(qp, A, l, u, *pol)
            if max(pr["primal"], pr["dual"]) <= max(r["primal"], r["dual"], 1e-12) \
                    or (status == MAX_ITER and _converged(pr, s)):
                sol = QpSolution(pol[0], OPTIMAL if _converged(pr, s) else status,
                                 it, pr, pol[1], True)
    if sol.status == MAX_ITER and _converged(sol.residuals, s):
        sol.status = OPTIMAL
    return sol


def kkt_residuals(qp: QuadraticProgram, sol: QpSolution) -> dict:
    """Stationarity, feasibility, sign and complementarity residuals."""
    A, l, u = qp.stacked()
    v, y = sol.v, sol.y
    Av = A @ v
    eq = l == u
    lower = np.where(np.isfinite(l), l - Av, -np.inf)
    upper = np.where(np.isfinite(u), Av - u, -np.inf)
    viol = float(max(np.max(lower, initial=0.0), np.max(upper, initial=0.0), 0.0))
    sign = float(max(np.max(-y[~eq & ~np.isfinite(l)], initial=0.0),
                     np.max(y[~eq & ~np.isfinite(u)], initial=0.0)))
    with np.errstate(invalid="ignore"):
        slack = np.where(y > 0, np.where(np.isfinite(u), u - Av, np.inf),
                         np.where(y < 0, np.where(np.isfinite(l), Av - l, np.inf), 0.0))
        comp = np.where(eq, 0.0, np.abs(y) * slack)
    return {"stationarity": float(np.abs(qp.P @ v + qp.q + A.T @ y).max(initial=0.0)),
            "feasibility": viol, "sign": sign,
            "complementarity": float(np.nan_to_num(comp, posinf=np.inf).max(initial=0.0))}


class RankError(QpError):
    pass


def dependent_rows(C, tol=1e-10) -> list[int]:
    """Indices of rows of C that are linear combinations of earlier rows."""
    C = np.atleast_2d(np.asarray(C, dtype=float))
    out = []
    basis = np.zeros((0, C.shape[1]))
    scale = max(np.abs(C).max(initial=0.0), 1e-300)
    for i, row in enumerate(C):
        trial = np.vstack([basis, row])
        if np.linalg.matrix_rank(trial, tol=tol * scale * np.sqrt(C.shape[1])) == len(trial):
            basis = trial
        else:
            out.append(i)
    return out


def solve_equality_ls(A, b, C=None, d=None, rcond=1e-12) -> np.ndarray:
    """Least squares min ‖Av − b‖² subject to Cv = d.

    The null-space method is used; where the objective leaves directions
    undetermined, the minimum-norm solution is returned.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    b = np.asarray(b, dtype=float).reshape(-1)
    n = A.shape[1]
    if C is None or np.size(C) == 0:
        return np.linalg.lstsq(A, b, rcond=rcond)[0]
    C = np.atleast_2d(np.asarray(C, dtype=float))
    d = np.asarray(d, dtype=float).reshape(-1)
    if C.shape[1] != n or len(d) != len(C) or len(b) != len(A):
        raise QpError("inconsistent dimensions")
    dep = dependent_rows(C)
    if dep or len(C) > n:
        raise RankError(f"constraint rows {dep} are linearly dependent on earlier rows")
    vp = np.linalg.lstsq(C, d, rcond=rcond)[0]
    N = linalg.null_space(C)
    if N.shape[1] == 0:
        return vp
    w = np.linalg.lstsq(A @ N, b - A @ vp, rcond=rcond)[0]
    v = vp + N @ w
    # remove any component along directions A does not see (minimum norm)
    Z = linalg.null_space(A @ N)
    if Z.shape[1]:
        NZ = N @ Z
        v = v - NZ @ (NZ.T @ v)
    return v
