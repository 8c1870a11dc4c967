"""Compiled kernels for the structured arbitrage program family.

These exploit the fixed sparsity of programs built by the mpc module, with
variable layout [P_1..P_T, u_1..u_T] and row layout [0,T) SOC accumulation,
[T,2T) epigraph u-P, [2T,3T) epigraph u+P, {3T} throughput, [3T+1,4T+1)
P boxes, [4T+1,5T+1) u boxes. All matrix-vector products run in O(T) via
prefix and suffix sums, and the iteration matrix is reduced to a dense T x T
Cholesky factor by eliminating the u block (diagonal plus a rank-one
throughput coupling, inverted by Sherman-Morrison).

Everything is compiled with fastmath disabled so results are deterministic
and independent of vectorization choices.
"""

from __future__ import annotations

import numpy as np
from numba import njit

NB = dict(cache=True, fastmath=False)


@njit(**NB)
def ruiz_structured(T, kappa, dt, qdiag, iters):
    """Equilibration scalings (d for columns, e for rows) of the KKT matrix."""
    n = 2 * T
    m = 5 * T + 1
    d = np.ones(n)
    e = np.ones(m)
    for _ in range(iters):
        sfx = np.empty(T)
        run = 0.0
        for i in range(T - 1, -1, -1):
            if e[i] > run:
                run = e[i]
            sfx[i] = run
        cn = np.empty(n)
        for j in range(T):
            v = d[j] * d[j] * qdiag[j]
            for t2 in (
                kappa * d[j] * sfx[j],
                e[T + j] * d[j],
                e[2 * T + j] * d[j],
                e[3 * T + 1 + j] * d[j],
            ):
                if t2 > v:
                    v = t2
            cn[j] = v
        for j in range(T):
            v = e[T + j] * d[T + j]
            for t2 in (
                e[2 * T + j] * d[T + j],
                dt * e[3 * T] * d[T + j],
                e[4 * T + 1 + j] * d[T + j],
            ):
                if t2 > v:
                    v = t2
            cn[T + j] = v
        rn = np.empty(m)
        pmax = 0.0
        for i in range(T):
            if d[i] > pmax:
                pmax = d[i]
            rn[i] = kappa * e[i] * pmax
        for i in range(T):
            dm = d[i] if d[i] > d[T + i] else d[T + i]
            rn[T + i] = e[T + i] * dm
            rn[2 * T + i] = e[2 * T + i] * dm
        um = 0.0
        for j in range(T):
            if d[T + j] > um:
                um = d[T + j]
        rn[3 * T] = dt * e[3 * T] * um
        for i in range(T):
            rn[3 * T + 1 + i] = e[3 * T + 1 + i] * d[i]
            rn[4 * T + 1 + i] = e[4 * T + 1 + i] * d[T + i]
        for j in range(n):
            v = cn[j]
            if v < 1e-10:
                v = 1.0
            d[j] /= np.sqrt(v)
        for i in range(m):
            v = rn[i]
            if v < 1e-10:
                v = 1.0
            e[i] /= np.sqrt(v)
    return d, e


@njit(**NB)
def factor_structured(T, kappa, dt, qdiag, c, sigma, d, e, rho, Mred, du, a_sm, d3, w):
    """Build and Cholesky-factor the u-eliminated iteration matrix.

    Returns the Sherman-Morrison denominator beta, or -1.0 when the
    factorization fails (non-positive pivot).
    """
    S1 = np.empty(T)
    run = 0.0
    for i in range(T - 1, -1, -1):
        run += rho[i] * e[i] * e[i]
        S1[i] = run
    kk = kappa * kappa
    for i in range(T):
        for j in range(i + 1):
            v = kk * d[i] * d[j] * S1[i]
            Mred[i, j] = v
            Mred[j, i] = v
    for i in range(T):
        eu1 = rho[T + i] * e[T + i] * e[T + i]
        eu2 = rho[2 * T + i] * e[2 * T + i] * e[2 * T + i]
        du[i] = sigma + d[T + i] * d[T + i] * (
            eu1 + eu2 + rho[4 * T + 1 + i] * e[4 * T + 1 + i] * e[4 * T + 1 + i]
        )
        w[i] = np.sqrt(rho[3 * T]) * e[3 * T] * dt * d[T + i]
        d3[i] = d[i] * d[T + i] * (eu2 - eu1)
        Mred[i, i] += c * d[i] * d[i] * qdiag[i] + sigma + d[i] * d[i] * (
            eu1 + eu2 + rho[3 * T + 1 + i] * e[3 * T + 1 + i] * e[3 * T + 1 + i]
        )
    beta = 1.0
    for i in range(T):
        a_sm[i] = w[i] / du[i]
        beta += w[i] * a_sm[i]
    for i in range(T):
        Mred[i, i] -= d3[i] * d3[i] / du[i]
    for i in range(T):
        gi = d3[i] * a_sm[i]
        for j in range(T):
            Mred[i, j] += gi * d3[j] * a_sm[j] / beta
    for j in range(T):
        s = Mred[j, j]
        for k in range(j):
            s -= Mred[j, k] * Mred[j, k]
        if s <= 0.0:
            return -1.0
        Mred[j, j] = np.sqrt(s)
        for i in range(j + 1, T):
            s2 = Mred[i, j]
            for k in range(j):
                s2 -= Mred[i, k] * Mred[j, k]
            Mred[i, j] = s2 / Mred[j, j]
    return beta


@njit(**NB)
def kkt_solve_structured(T, Mred, du, a_sm, d3, beta, rhs, out, tmp):
    """Solve the reduced 2T x 2T system for [P block; u block] given rhs."""
    s = 0.0
    for i in range(T):
        s += a_sm[i] * rhs[T + i]
    s /= beta
    for i in range(T):
        tmp[i] = rhs[T + i] / du[i] - a_sm[i] * s
    for i in range(T):
        out[i] = rhs[i] - d3[i] * tmp[i]
    for i in range(T):
        s2 = out[i]
        for k in range(i):
            s2 -= Mred[i, k] * out[k]
        out[i] = s2 / Mred[i, i]
    for i in range(T - 1, -1, -1):
        s2 = out[i]
        for k in range(i + 1, T):
            s2 -= Mred[k, i] * out[k]
        out[i] = s2 / Mred[i, i]
    s = 0.0
    for i in range(T):
        tmp[i] = rhs[T + i] - d3[i] * out[i]
        s += a_sm[i] * tmp[i]
    s /= beta
    for i in range(T):
        out[T + i] = tmp[i] / du[i] - a_sm[i] * s


@njit(**NB)
def ax_structured(T, kappa, dt, d, e, x, out):
    """Scaled constraint map: out = E A D x in O(T)."""
    cs = 0.0
    for i in range(T):
        cs += d[i] * x[i]
        out[i] = -kappa * e[i] * cs
    su = 0.0
    for i in range(T):
        pv = d[i] * x[i]
        uv = d[T + i] * x[T + i]
        out[T + i] = e[T + i] * (uv - pv)
        out[2 * T + i] = e[2 * T + i] * (uv + pv)
        su += uv
        out[3 * T + 1 + i] = e[3 * T + 1 + i] * pv
        out[4 * T + 1 + i] = e[4 * T + 1 + i] * uv
    out[3 * T] = e[3 * T] * dt * su


@njit(**NB)
def aty_structured(T, kappa, dt, d, e, v, out):
    """Scaled adjoint map: out = D A' E v in O(T)."""
    run = 0.0
    thr = dt * e[3 * T] * v[3 * T]
    for j in range(T - 1, -1, -1):
        run += e[j] * v[j]
        e1 = e[T + j] * v[T + j]
        e2 = e[2 * T + j] * v[2 * T + j]
        out[j] = d[j] * (-kappa * run - e1 + e2 + e[3 * T + 1 + j] * v[3 * T + 1 + j])
        out[T + j] = d[T + j] * (e1 + e2 + thr + e[4 * T + 1 + j] * v[4 * T + 1 + j])


@njit(**NB)
def admm_structured(T, kappa, dt, qdiag, c, sigma, alpha, d, e, qs, ls, us,
                    rho, Mred, du, a_sm, d3, w, beta_arr, x, z, y,
                    eps_abs, eps_rel, max_iter, check_every, it0, next_adapt0,
                    prev_sign, last_sign, res_out, polish_on, adapt_on):
    """Iterate in scaled space until an event occurs.

    Events: 0 converged, 1 iteration cap, 2 polish gate reached (caller
    attempts the active-set refinement), 4 primal infeasibility certified.
    Returns (event, iteration, next_adapt); res_out carries the unscaled
    [rp, rd, eps_pri, eps_dua] from the last residual check.
    """
    n = 2 * T
    m = 5 * T + 1
    xt = np.empty(n)
    zt = np.empty(m)
    rhs = np.empty(n)
    tmp = np.empty(n)
    av = np.empty(m)
    atv = np.empty(n)
    dy = np.empty(m)
    ylast = y.copy()
    beta = beta_arr[0]
    it = it0
    next_adapt = next_adapt0
    event = 1
    while it < max_iter:
        it += 1
        for i in range(m):
            av[i] = rho[i] * z[i] - y[i]
        aty_structured(T, kappa, dt, d, e, av, atv)
        for j in range(n):
            rhs[j] = sigma * x[j] - qs[j] + atv[j]
        kkt_solve_structured(T, Mred, du, a_sm, d3, beta, rhs, xt, tmp)
        ax_structured(T, kappa, dt, d, e, xt, zt)
        for j in range(n):
            x[j] = alpha * xt[j] + (1.0 - alpha) * x[j]
        for i in range(m):
            zc = alpha * zt[i] + (1.0 - alpha) * z[i] + y[i] / rho[i]
            znew = zc
            if znew < ls[i]:
                znew = ls[i]
            elif znew > us[i]:
                znew = us[i]
            y[i] = rho[i] * (zc - znew)
            z[i] = znew
        if it % check_every != 0:
            continue
        ax_structured(T, kappa, dt, d, e, x, av)
        rp = 0.0
        sp = 0.0
        for i in range(m):
            v = abs(av[i] - z[i]) / e[i]
            if v > rp:
                rp = v
            v = abs(av[i]) / e[i]
            if v > sp:
                sp = v
            v = abs(z[i]) / e[i]
            if v > sp:
                sp = v
        aty_structured(T, kappa, dt, d, e, y, atv)
        rd = 0.0
        sd = 0.0
        for j in range(n):
            qxj = 0.0
            if j < T:
                qxj = c * d[j] * d[j] * qdiag[j] * x[j]
            dcj = d[j] * c
            v = abs(qxj + qs[j] + atv[j]) / dcj
            if v > rd:
                rd = v
            v = abs(qxj) / dcj
            if v > sd:
                sd = v
            v = abs(atv[j]) / dcj
            if v > sd:
                sd = v
            v = abs(qs[j]) / dcj
            if v > sd:
                sd = v
        eps_pri = eps_abs + eps_rel * sp
        eps_dua = eps_abs + eps_rel * sd
        res_out[0] = rp
        res_out[1] = rd
        res_out[2] = eps_pri
        res_out[3] = eps_dua
        if rp <= eps_pri and rd <= eps_dua:
            event = 0
            break
        # primal infeasibility certificate on the unscaled dual step
        ninf = 0.0
        for i in range(m):
            dy[i] = y[i] - ylast[i]
            ylast[i] = y[i]
            v = abs(dy[i]) * e[i] / c
            if v > ninf:
                ninf = v
        if ninf > 1e-10:
            aty_structured(T, kappa, dt, d, e, dy, atv)
            atn = 0.0
            for j in range(n):
                v = abs(atv[j]) / (d[j] * c)
                if v > atn:
                    atn = v
            sup = 0.0
            ok = True
            for i in range(m):
                dyu = dy[i] * e[i] / c
                if dyu > 0.0:
                    ub = us[i] / e[i]
                    if ub > 1e29:
                        ok = False
                        break
                    sup += ub * dyu
                elif dyu < 0.0:
                    lb = ls[i] / e[i]
                    if lb < -1e29:
                        ok = False
                        break
                    sup += lb * dyu
            if ok and atn <= 1e-4 * ninf and sup <= -1e-4 * ninf:
                event = 4
                break
        # polish gate: dual sign pattern stable across two consecutive
        # checks and different from the last attempted pattern
        if polish_on:
            gate = rp <= 1e3 * eps_pri and rd <= 1e4 * eps_dua
            same_prev = True
            same_last = True
            for i in range(m):
                sg = np.int8(0)
                if y[i] > 0.0:
                    sg = np.int8(1)
                elif y[i] < 0.0:
                    sg = np.int8(-1)
                if sg != prev_sign[i]:
                    same_prev = False
                if sg != last_sign[i]:
                    same_last = False
                prev_sign[i] = sg
            if gate and same_prev and not same_last:
                for i in range(m):
                    last_sign[i] = prev_sign[i]
                event = 2
                break
        # penalty rebalancing with geometric cooldown: adapt at most once
        # per doubling of the iteration count so late-stage oscillation
        # cannot stall convergence
        if adapt_on and it >= next_adapt:
            next_adapt = 2 * it
            num = rp / (sp if sp > 1e-12 else 1e-12)
            den = rd / (sd if sd > 1e-12 else 1e-12)
            if den < 1e-12:
                den = 1e-12
            scale = np.sqrt(num / den)
            if scale > 10.0:
                scale = 10.0
            elif scale < 0.1:
                scale = 0.1
            if scale > 5.0 or scale < 0.2:
                for i in range(m):
                    v = rho[i] * scale
                    if v < 1e-6:
                        v = 1e-6
                    elif v > 1e6:
                        v = 1e6
                    rho[i] = v
                b = factor_structured(
                    T, kappa, dt, qdiag, c, sigma, d, e, rho, Mred, du, a_sm, d3, w
                )
                if b > 0.0:
                    beta = b
                    beta_arr[0] = b
    return event, it, next_adapt
