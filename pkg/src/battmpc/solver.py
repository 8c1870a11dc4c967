"""Operator-splitting solver for the canonical convex programs.

Implements an ADMM iteration on the split min f(x) + g(z) with Ax = z,
g the indicator of the box [l, u]. The problem is Ruiz-equilibrated and
cost-scaled before iterating; termination uses unscaled residuals with the
mixed absolute/relative criterion. A converged-enough iterate triggers an
active-set refinement ("polish"): the KKT system restricted to rows with
nonzero multipliers is solved with a small proximal anchor at the current
iterate, and the refined point is accepted only if its unscaled residuals
meet the tolerances.

Two engines share these semantics: a dense general-purpose path for any
program, and a structured path (see _kernels) used when the program's
layout matches the arbitrage family exactly. Both are deterministic for
identical inputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from . import _kernels
from .mpc import CanonicalProgram

STATUS_SOLVED = "solved"
STATUS_MAX_ITERATIONS = "max_iterations"
STATUS_PRIMAL_INFEASIBLE = "primal_infeasible"

_RHO_MIN = 1e-6
_RHO_MAX = 1e6
_EQ_RHO_FACTOR = 1e3
_INFEAS_TOL = 1e-4


@dataclass(frozen=True)
class SolverSettings:
    """Termination tolerances and iteration controls."""

    eps_abs: float = 1e-6
    eps_rel: float = 1e-6
    max_iter: int = 20000
    rho: float = 0.1
    adaptive_rho: bool = True
    alpha: float = 1.6
    sigma: float = 1e-6
    polish: bool = True
    polish_delta: float = 1e-8
    check_every: int = 25
    scaling_iters: int = 10

    def __post_init__(self) -> None:
        if not (self.eps_abs > 0 and self.eps_rel > 0):
            raise ValueError("tolerances must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if not 1.0 <= self.alpha < 2.0:
            raise ValueError("alpha must be in [1, 2)")
        if self.rho <= 0 or self.sigma <= 0:
            raise ValueError("rho and sigma must be positive")
        if self.check_every < 1:
            raise ValueError("check_every must be >= 1")


@dataclass(frozen=True)
class ResidualReport:
    """Unscaled max-norm residuals at solver exit."""

    primal: float
    dual: float


@dataclass(frozen=True)
class SolveResult:
    x: np.ndarray
    y: np.ndarray
    status: str
    iterations: int
    objective: float
    residuals: ResidualReport


@dataclass(frozen=True)
class KktReport:
    """Diagnostic residuals of a primal/dual pair."""

    constraint_violation: float
    stationarity: float
    complementary_slackness: float


def _check_program(program: CanonicalProgram, sigma: float):
    q = np.asarray(program.lin, dtype=np.float64)
    n = q.shape[0]
    quad = np.asarray(program.quad, dtype=np.float64)
    a_mat = np.asarray(program.a_mat, dtype=np.float64)
    lower = np.asarray(program.lower, dtype=np.float64)
    upper = np.asarray(program.upper, dtype=np.float64)
    if quad.shape != (n, n):
        raise ValueError(f"Q shape {quad.shape} does not match {n} variables")
    if a_mat.ndim != 2 or a_mat.shape[1] != n:
        raise ValueError(f"A shape {a_mat.shape} does not match {n} variables")
    m = a_mat.shape[0]
    if lower.shape != (m,) or upper.shape != (m,):
        raise ValueError("bound vectors must match the constraint row count")
    if np.any(lower > upper):
        raise ValueError("lower bound exceeds upper bound")
    if not np.array_equal(quad, quad.T):
        raise ValueError("Q must be symmetric")
    try:
        np.linalg.cholesky(quad + sigma * np.eye(n))
    except np.linalg.LinAlgError:
        raise ValueError("Q is not positive semidefinite") from None
    return quad, q, a_mat, lower, upper


def solve(program: CanonicalProgram, settings: SolverSettings | None = None) -> SolveResult:
    """Solve min 1/2 x'Qx + q'x subject to l <= Ax <= u.

    Dispatches to the structured engine when the program carries a layout
    whose constraint matrix matches the arbitrage family bit-for-bit, and
    to the dense engine otherwise. Results are deterministic for identical
    (program, settings).
    """
    settings = settings if settings is not None else SolverSettings()
    quad, q, a_mat, lower, upper = _check_program(program, settings.sigma)
    if _structured_eligible(program, quad, q, a_mat):
        result = _solve_structured(program, quad, q, lower, upper, settings)
        if result is not None:
            return result
    return _solve_dense(quad, q, a_mat, lower, upper, settings)


def _structured_eligible(
    program: CanonicalProgram, quad: np.ndarray, q: np.ndarray, a_mat: np.ndarray
) -> bool:
    lay = program.layout
    if lay is None:
        return False
    t = lay.horizon
    if t < 1 or lay.kappa <= 0 or lay.dt <= 0:
        return False
    if q.shape[0] != 2 * t or a_mat.shape != (5 * t + 1, 2 * t):
        return False
    dq = np.diag(quad)
    if np.count_nonzero(quad - np.diag(dq)) != 0:
        return False
    if np.any(dq[t:] != 0.0) or np.any(dq[:t] < 0.0):
        return False
    return np.array_equal(a_mat, _family_matrix(t, lay.kappa, lay.dt))


def _family_matrix(t: int, kappa: float, dt: float) -> np.ndarray:
    a_mat = np.zeros((5 * t + 1, 2 * t))
    for i in range(t):
        a_mat[i, : i + 1] = -kappa
    r = np.arange(t)
    a_mat[t + r, r] = -1.0
    a_mat[t + r, t + r] = 1.0
    a_mat[2 * t + r, r] = 1.0
    a_mat[2 * t + r, t + r] = 1.0
    a_mat[3 * t, t:] = dt
    a_mat[3 * t + 1 + r, r] = 1.0
    a_mat[4 * t + 1 + r, t + r] = 1.0
    return a_mat


def objective_value(program: CanonicalProgram, x: np.ndarray) -> float:
    """Canonical minimization objective at x."""
    quad = np.asarray(program.quad, dtype=np.float64)
    q = np.asarray(program.lin, dtype=np.float64)
    return float(0.5 * x @ quad @ x + q @ x)


def kkt_residuals(program: CanonicalProgram, x: np.ndarray, y: np.ndarray) -> KktReport:
    """Max-norm KKT diagnostics for a candidate primal/dual pair."""
    quad = np.asarray(program.quad, dtype=np.float64)
    q = np.asarray(program.lin, dtype=np.float64)
    a_mat = np.asarray(program.a_mat, dtype=np.float64)
    lower = np.asarray(program.lower, dtype=np.float64)
    upper = np.asarray(program.upper, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape[0] != q.shape[0] or y.shape[0] != a_mat.shape[0]:
        raise ValueError("x or y dimension does not match the program")
    ax = a_mat @ x
    viol = np.maximum.reduce(
        [np.zeros_like(ax), np.where(np.isfinite(lower), lower - ax, 0.0),
         np.where(np.isfinite(upper), ax - upper, 0.0)]
    )
    stationarity = float(np.abs(quad @ x + q + a_mat.T @ y).max(initial=0.0))
    comp = 0.0
    for i in range(ax.shape[0]):
        if y[i] > 0.0:
            term = math.inf if not np.isfinite(upper[i]) else y[i] * max(upper[i] - ax[i], 0.0)
        elif y[i] < 0.0:
            term = math.inf if not np.isfinite(lower[i]) else -y[i] * max(ax[i] - lower[i], 0.0)
        else:
            term = 0.0
        comp = max(comp, term)
    return KktReport(
        constraint_violation=float(viol.max(initial=0.0)),
        stationarity=stationarity,
        complementary_slackness=comp,
    )


def dump_program(program: CanonicalProgram, path) -> None:
    """Write a plain-text dump for offline inspection.

    Format: one dimension header line "m n"; one line per constraint-matrix
    nonzero "i j value" in row-major order; one bound line per row
    "b i lower upper"; then cost lines "c j value" for linear-cost nonzeros
    and "h i j value" for quadratic nonzeros. Infinities print as inf/-inf.
    """
    a_mat = np.asarray(program.a_mat, dtype=np.float64)
    m, n = a_mat.shape
    lines = [f"{m} {n}"]
    for i in range(m):
        for j in range(n):
            if a_mat[i, j] != 0.0:
                lines.append(f"{i} {j} {float(a_mat[i, j])!r}")
    lower = np.asarray(program.lower, dtype=np.float64)
    upper = np.asarray(program.upper, dtype=np.float64)
    for i in range(m):
        lines.append(f"b {i} {float(lower[i])!r} {float(upper[i])!r}")
    q = np.asarray(program.lin, dtype=np.float64)
    for j in range(n):
        if q[j] != 0.0:
            lines.append(f"c {j} {float(q[j])!r}")
    quad = np.asarray(program.quad, dtype=np.float64)
    for i in range(n):
        for j in range(n):
            if quad[i, j] != 0.0:
                lines.append(f"h {i} {j} {float(quad[i, j])!r}")
    text = "\n".join(lines) + "\n"
    if hasattr(path, "write"):
        path.write(text)
    else:
        with open(path, "w", encoding="utf-8") as handle:
            handle.write(text)


def _ruiz_dense(quad, a_mat, iters):
    n = quad.shape[0]
    m = a_mat.shape[0]
    d = np.ones(n)
    e = np.ones(m)
    qs, a_s = quad.copy(), a_mat.copy()
    for _ in range(iters):
        cn = np.maximum(
            np.abs(qs).max(axis=0, initial=0.0), np.abs(a_s).max(axis=0, initial=0.0)
        )
        rn = np.abs(a_s).max(axis=1, initial=0.0)
        cn[cn < 1e-10] = 1.0
        rn[rn < 1e-10] = 1.0
        dd = 1.0 / np.sqrt(cn)
        ee = 1.0 / np.sqrt(rn)
        qs *= dd[:, None] * dd[None, :]
        a_s *= ee[:, None] * dd[None, :]
        d *= dd
        e *= ee
    return qs, a_s, d, e


def _certify_infeasible(dy, a_st, lower, upper, e, d, c):
    """Primal infeasibility test on a scaled dual step dy.

    Checks the standard certificate conditions on the unscaled step: the
    mapped direction A'dy vanishes relative to the step size while the
    support function of the bounds is strictly negative. Any infinite bound
    carrying an active component invalidates the certificate.
    """
    dyu = dy * e / c
    ninf = float(np.abs(dyu).max(initial=0.0))
    if ninf <= 1e-10:
        return False
    atn = float((np.abs(a_st @ dy) / (d * c)).max(initial=0.0))
    if atn > _INFEAS_TOL * ninf:
        return False
    pos = dyu > 0.0
    neg = dyu < 0.0
    if np.any(pos & ~np.isfinite(upper)) or np.any(neg & ~np.isfinite(lower)):
        return False
    sup = float(np.dot(upper[pos], dyu[pos]) + np.dot(lower[neg], dyu[neg]))
    return sup <= -_INFEAS_TOL * ninf


def _solve_dense(quad, q, a_mat, lower, upper, settings: SolverSettings) -> SolveResult:
    n = q.shape[0]
    m = a_mat.shape[0]
    qs, a_s, d, e = _ruiz_dense(quad, a_mat, settings.scaling_iters)
    q_scaled = d * q
    c = 1.0 / max(np.abs(qs).max(initial=0.0), np.abs(q_scaled).max(initial=0.0), 1e-6)
    qs = qs * c
    q_scaled = q_scaled * c
    ls = np.where(np.isfinite(lower), e * lower, lower)
    us = np.where(np.isfinite(upper), e * upper, upper)
    eq_rows = (us - ls) < 1e-12
    rho = np.full(m, settings.rho)
    rho[eq_rows] = settings.rho * _EQ_RHO_FACTOR
    rho_inv = 1.0 / rho
    a_st = np.ascontiguousarray(a_s.T)
    sigma = settings.sigma
    alpha = settings.alpha
    dc = d * c

    def factor(rho_vec):
        return sla.cho_factor(
            qs + sigma * np.eye(n) + (a_st * rho_vec) @ a_s, lower=True, check_finite=False
        )

    fac = factor(rho)
    x = np.zeros(n)
    z = np.zeros(m)
    y = np.zeros(m)
    ylast = np.zeros(m)

    def residuals(xv, zv, yv):
        ax = a_s @ xv
        rp = float((np.abs(ax - zv) / e).max(initial=0.0))
        rd = float((np.abs(qs @ xv + q_scaled + a_st @ yv) / dc).max(initial=0.0))
        sp = max(
            float((np.abs(ax) / e).max(initial=0.0)),
            float((np.abs(zv) / e).max(initial=0.0)),
        )
        sd = max(
            float((np.abs(qs @ xv) / dc).max(initial=0.0)),
            float((np.abs(a_st @ yv) / dc).max(initial=0.0)),
            float((np.abs(q_scaled) / dc).max(initial=0.0)),
        )
        return rp, rd, sp, sd

    def try_polish(xv, yv):
        low_act = yv < 0
        up_act = yv > 0
        act = low_act | up_act
        k = int(act.sum())
        a_act = a_s[act]
        b = np.where(low_act[act], ls[act], us[act])
        delta = settings.polish_delta
        kkt = np.zeros((n + k, n + k))
        kkt[:n, :n] = qs
        kkt[:n, :n][np.diag_indices(n)] += delta
        kkt[:n, n:] = a_act.T
        kkt[n:, :n] = a_act
        kkt[n:, n:] = -delta * np.eye(k)
        rhs = np.concatenate([-q_scaled + delta * xv, b - delta * yv[act]])
        try:
            lu = sla.lu_factor(kkt, check_finite=False)
        except (ValueError, sla.LinAlgError):
            return None
        sol = sla.lu_solve(lu, rhs, check_finite=False)
        for _ in range(2):
            sol = sol + sla.lu_solve(lu, rhs - kkt @ sol, check_finite=False)
        xp = sol[:n]
        yp = np.zeros(m)
        yp[act] = sol[n:]
        zp = np.clip(a_s @ xp, ls, us)
        return xp, zp, yp

    status = STATUS_MAX_ITERATIONS
    it = 0
    prev_fp = None
    last_fp = None
    next_adapt = 4 * settings.check_every
    for it in range(1, settings.max_iter + 1):
        x_t = sla.cho_solve(fac, sigma * x - q_scaled + a_st @ (rho * z - y), check_finite=False)
        z_t = a_s @ x_t
        x = alpha * x_t + (1.0 - alpha) * x
        zc = alpha * z_t + (1.0 - alpha) * z + rho_inv * y
        z_new = np.clip(zc, ls, us)
        y = rho * (zc - z_new)
        z = z_new
        if it % settings.check_every != 0:
            continue
        rp, rd, sp, sd = residuals(x, z, y)
        eps_pri = settings.eps_abs + settings.eps_rel * sp
        eps_dua = settings.eps_abs + settings.eps_rel * sd
        if rp <= eps_pri and rd <= eps_dua:
            status = STATUS_SOLVED
            break
        dy = y - ylast
        ylast = y.copy()
        if _certify_infeasible(dy, a_st, lower, upper, e, d, c):
            status = STATUS_PRIMAL_INFEASIBLE
            break
        if settings.polish:
            fp = np.sign(y).tobytes()
            stable = fp == prev_fp
            prev_fp = fp
            if rp <= 1e3 * eps_pri and rd <= 1e4 * eps_dua and stable and fp != last_fp:
                last_fp = fp
                pol = try_polish(x, y)
                if pol is not None:
                    rp2, rd2, sp2, sd2 = residuals(*pol)
                    if (
                        rp2 <= settings.eps_abs + settings.eps_rel * sp2
                        and rd2 <= settings.eps_abs + settings.eps_rel * sd2
                    ):
                        x, z, y = pol
                        status = STATUS_SOLVED
                        break
        if settings.adaptive_rho and it >= next_adapt:
            next_adapt = 2 * it
            r_rel = (rp / max(sp, 1e-12)) / max(rd / max(sd, 1e-12), 1e-12)
            scale = min(max(math.sqrt(r_rel), 0.1), 10.0)
            if scale > 5.0 or scale < 0.2:
                rho = np.clip(rho * scale, _RHO_MIN, _RHO_MAX)
                rho_inv = 1.0 / rho
                fac = factor(rho)
    rp, rd, _, _ = residuals(x, z, y)
    x_out = d * x
    y_out = e * y / c
    obj = float(0.5 * x_out @ quad @ x_out + q @ x_out)
    if status == STATUS_PRIMAL_INFEASIBLE:
        obj = float("nan")
    return SolveResult(
        x=x_out,
        y=y_out,
        status=status,
        iterations=it,
        objective=obj,
        residuals=ResidualReport(primal=rp, dual=rd),
    )


def _solve_structured(
    program: CanonicalProgram, quad, q, lower, upper, settings: SolverSettings
) -> SolveResult | None:
    """Structured engine; returns None to fall back to the dense path."""
    lay = program.layout
    t = lay.horizon
    kappa = lay.kappa
    dt = lay.dt
    n = 2 * t
    m = 5 * t + 1
    qdiag = np.ascontiguousarray(np.diag(quad)[:t])
    d, e = _kernels.ruiz_structured(t, kappa, dt, qdiag, settings.scaling_iters)
    q_raw = d * q
    qmax = float((d[:t] ** 2 * qdiag).max(initial=0.0))
    c = 1.0 / max(qmax, float(np.abs(q_raw).max(initial=0.0)), 1e-6)
    q_scaled = c * q_raw
    ls = np.where(np.isfinite(lower), e * lower, lower)
    us = np.where(np.isfinite(upper), e * upper, upper)
    eq_rows = (us - ls) < 1e-12
    rho = np.full(m, settings.rho)
    rho[eq_rows] = settings.rho * _EQ_RHO_FACTOR
    m_red = np.empty((t, t))
    du = np.empty(t)
    a_sm = np.empty(t)
    d3 = np.empty(t)
    w = np.empty(t)
    beta = _kernels.factor_structured(
        t, kappa, dt, qdiag, c, settings.sigma, d, e, rho, m_red, du, a_sm, d3, w
    )
    if beta <= 0.0:
        return None
    beta_arr = np.array([beta])
    x = np.zeros(n)
    z = np.zeros(m)
    y = np.zeros(m)
    prev_sign = np.full(m, 127, dtype=np.int8)
    last_sign = np.full(m, 127, dtype=np.int8)
    res_out = np.zeros(4)
    it = 0
    next_adapt = 4 * settings.check_every
    status = STATUS_MAX_ITERATIONS
    a_s_cache = None
    dc = d * c

    def residuals(xv, zv, yv):
        av = np.empty(m)
        atv = np.empty(n)
        _kernels.ax_structured(t, kappa, dt, d, e, xv, av)
        _kernels.aty_structured(t, kappa, dt, d, e, yv, atv)
        qx = np.zeros(n)
        qx[:t] = c * d[:t] ** 2 * qdiag * xv[:t]
        rp = float((np.abs(av - zv) / e).max(initial=0.0))
        rd = float((np.abs(qx + q_scaled + atv) / dc).max(initial=0.0))
        sp = max(
            float((np.abs(av) / e).max(initial=0.0)),
            float((np.abs(zv) / e).max(initial=0.0)),
        )
        sd = max(
            float((np.abs(qx) / dc).max(initial=0.0)),
            float((np.abs(atv) / dc).max(initial=0.0)),
            float((np.abs(q_scaled) / dc).max(initial=0.0)),
        )
        return rp, rd, sp, sd

    while True:
        event, it, next_adapt = _kernels.admm_structured(
            t, kappa, dt, qdiag, c, settings.sigma, settings.alpha, d, e,
            q_scaled, ls, us, rho, m_red, du, a_sm, d3, w, beta_arr, x, z, y,
            settings.eps_abs, settings.eps_rel, settings.max_iter,
            settings.check_every, it, next_adapt, prev_sign, last_sign,
            res_out, settings.polish, settings.adaptive_rho,
        )
        if event == 0:
            status = STATUS_SOLVED
            break
        if event == 1:
            break
        if event == 4:
            status = STATUS_PRIMAL_INFEASIBLE
            break
        # event 2: polish attempt on the current active set
        if a_s_cache is None:
            a_s_cache = _family_matrix(t, kappa, dt) * e[:, None] * d[None, :]
        low_act = y < 0
        up_act = y > 0
        act = low_act | up_act
        k = int(act.sum())
        a_act = a_s_cache[act]
        b = np.where(low_act[act], ls[act], us[act])
        delta = settings.polish_delta
        qs_diag = np.zeros(n)
        qs_diag[:t] = c * d[:t] ** 2 * qdiag
        kkt = np.zeros((n + k, n + k))
        kkt[:n, :n][np.diag_indices(n)] = qs_diag + delta
        kkt[:n, n:] = a_act.T
        kkt[n:, :n] = a_act
        kkt[n:, n:] = -delta * np.eye(k)
        rhs = np.concatenate([-q_scaled + delta * x, b - delta * y[act]])
        try:
            lu = sla.lu_factor(kkt, check_finite=False)
            sol = sla.lu_solve(lu, rhs, check_finite=False)
            for _ in range(2):
                sol = sol + sla.lu_solve(lu, rhs - kkt @ sol, check_finite=False)
            xp = sol[:n]
            yp = np.zeros(m)
            yp[act] = sol[n:]
            avp = np.empty(m)
            _kernels.ax_structured(t, kappa, dt, d, e, xp, avp)
            zp = np.clip(avp, ls, us)
            rp2, rd2, sp2, sd2 = residuals(xp, zp, yp)
            if (
                rp2 <= settings.eps_abs + settings.eps_rel * sp2
                and rd2 <= settings.eps_abs + settings.eps_rel * sd2
            ):
                x, z, y = xp, zp, yp
                status = STATUS_SOLVED
                break
        except (ValueError, sla.LinAlgError):
            pass
    rp, rd, _, _ = residuals(x, z, y)
    x_out = d * x
    y_out = e * y / c
    obj = float(0.5 * x_out @ quad @ x_out + q @ x_out)
    if status == STATUS_PRIMAL_INFEASIBLE:
        obj = float("nan")
    return SolveResult(
        x=x_out,
        y=y_out,
        status=status,
        iterations=it,
        objective=obj,
        residuals=ResidualReport(primal=rp, dual=rd),
    )
