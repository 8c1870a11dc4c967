"""Dispatch-planning programs: encode an arbitrage instance as a convex
program and extract executable plans from solver output.

Variables are laid out as [P_1..P_T, u_1..u_T] where P is signed dispatch
power and u is the absolute-power epigraph auxiliary (u_n >= |P_n|). SOC
variables are eliminated by substituting the recursion into cumulative-sum
rows, which halves the variable count.

Constraint rows, in order:
    rows 0..T-1      SOC bounds via lower-triangular accumulation
    rows T..2T-1     u_n - P_n >= 0
    rows 2T..3T-1    u_n + P_n >= 0
    row 3T           throughput: sum(u_n) * dt <= (T/48) * e_nom
    rows 3T+1..4T    power boxes
    rows 4T+1..5T    auxiliary boxes
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .discount import DiscountSpec, GammaVector
from .domain import BatteryParams, soc_step, validate_params

PLAN_SOLVED = "solved"
PLAN_MAX_ITERATIONS = "max_iterations"
PLAN_INFEASIBLE = "infeasible"


@dataclass(frozen=True)
class MpcInstance:
    """One dispatch-planning problem at a single decision time."""

    prices: np.ndarray
    gamma: GammaVector
    spec: DiscountSpec
    params: BatteryParams
    soc0: float
    horizon: int


@dataclass(frozen=True)
class ProgramLayout:
    """Variable and row layout of a canonical program built here.

    Carries the structural constants (horizon, kappa, dt) that let the
    solver recognize the arbitrage family and use its structured path.
    """

    horizon: int
    kappa: float
    dt: float

    @property
    def n_vars(self) -> int:
        return 2 * self.horizon

    @property
    def n_rows(self) -> int:
        return 5 * self.horizon + 1

    @property
    def power(self) -> slice:
        return slice(0, self.horizon)

    @property
    def aux(self) -> slice:
        return slice(self.horizon, 2 * self.horizon)

    @property
    def soc_rows(self) -> slice:
        return slice(0, self.horizon)

    @property
    def epi_lower_rows(self) -> slice:
        return slice(self.horizon, 2 * self.horizon)

    @property
    def epi_upper_rows(self) -> slice:
        return slice(2 * self.horizon, 3 * self.horizon)

    @property
    def throughput_row(self) -> int:
        return 3 * self.horizon

    @property
    def power_box_rows(self) -> slice:
        return slice(3 * self.horizon + 1, 4 * self.horizon + 1)

    @property
    def aux_box_rows(self) -> slice:
        return slice(4 * self.horizon + 1, 5 * self.horizon + 1)


@dataclass(frozen=True)
class CanonicalProgram:
    """Convex program min 1/2 x'Qx + q'x subject to l <= Ax <= u."""

    quad: np.ndarray
    lin: np.ndarray
    a_mat: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    layout: ProgramLayout | None = field(default=None)


@dataclass(frozen=True)
class MpcPlan:
    """Executable dispatch plan extracted from a solve."""

    powers: np.ndarray
    soc_path: np.ndarray
    objective: float
    status: str


def validate_instance(instance: MpcInstance) -> list[str]:
    violations = validate_params(instance.params)
    prices = np.asarray(instance.prices, dtype=np.float64)
    if prices.ndim != 1 or prices.shape[0] != instance.horizon:
        violations.append("prices: length must equal horizon")
    if not np.all(np.isfinite(prices)):
        violations.append("prices: must be finite")
    if instance.gamma.horizon != instance.horizon:
        violations.append("gamma: length must equal horizon")
    if instance.horizon < 1:
        violations.append("horizon: must be >= 1")
    p = instance.params
    # executed SOC can land a rounding error outside its box when a clamped
    # move targets the boundary exactly; tolerate that, reject real breaches
    if not p.soc_lower - 1e-9 <= instance.soc0 <= p.soc_upper + 1e-9:
        violations.append("soc0: outside SOC bounds")
    return violations


def _require_valid(instance: MpcInstance) -> None:
    violations = validate_instance(instance)
    if violations:
        raise ValueError("invalid mpc instance: " + "; ".join(violations))


def build_standard(instance: MpcInstance) -> CanonicalProgram:
    """Encode the plain arbitrage objective max sum(c_n P_n).

    Requires a "none" discount spec; the discounted builder covers the
    general case and reduces bit-for-bit to this one when the spec is
    (none, lambda=0).
    """
    if instance.spec.scheme != "none":
        raise ValueError("build_standard requires scheme 'none'")
    return _build(instance)


def build_discounted(instance: MpcInstance) -> CanonicalProgram:
    """Encode max sum(c_n g_n P_n) - lambda * R(P).

    R is sum(u_n / g_n) for s=1 (linear in the epigraph auxiliaries) and
    sum((P_n / g_n)^2) for s=2 (diagonal quadratic on the power segment,
    stored as Q = 2*lambda*diag(1/g^2) under the 1/2 x'Qx convention).
    """
    return _build(instance)


def _build(instance: MpcInstance) -> CanonicalProgram:
    _require_valid(instance)
    t = instance.horizon
    params = instance.params
    prices = np.asarray(instance.prices, dtype=np.float64)
    gamma = instance.gamma.as_array()
    lam = instance.spec.lam
    s = instance.spec.s
    kappa = params.kappa

    n = 2 * t
    m = 5 * t + 1
    quad = np.zeros((n, n))
    lin = np.zeros(n)
    lin[:t] = -prices * gamma
    if lam > 0.0:
        if s == 1:
            lin[t:] = lam / gamma
        else:
            quad[np.arange(t), np.arange(t)] = 2.0 * lam / gamma**2

    a_mat = np.zeros((m, n))
    lower = np.empty(m)
    upper = np.empty(m)

    for i in range(t):
        a_mat[i, : i + 1] = -kappa
    lower[:t] = params.soc_lower - instance.soc0
    upper[:t] = params.soc_upper - instance.soc0

    rows = np.arange(t)
    a_mat[t + rows, t + rows] = 1.0
    a_mat[t + rows, rows] = -1.0
    lower[t : 2 * t] = 0.0
    upper[t : 2 * t] = np.inf

    a_mat[2 * t + rows, t + rows] = 1.0
    a_mat[2 * t + rows, rows] = 1.0
    lower[2 * t : 3 * t] = 0.0
    upper[2 * t : 3 * t] = np.inf

    a_mat[3 * t, t:] = params.dt
    lower[3 * t] = -np.inf
    upper[3 * t] = (t / 48.0) * params.e_nom

    a_mat[3 * t + 1 + rows, rows] = 1.0
    lower[3 * t + 1 : 4 * t + 1] = params.p_lower
    upper[3 * t + 1 : 4 * t + 1] = params.p_upper

    u_cap = max(params.p_upper, -params.p_lower)
    a_mat[4 * t + 1 + rows, t + rows] = 1.0
    lower[4 * t + 1 : 5 * t + 1] = 0.0
    upper[4 * t + 1 : 5 * t + 1] = u_cap

    layout = ProgramLayout(horizon=t, kappa=kappa, dt=params.dt)
    return CanonicalProgram(
        quad=quad, lin=lin, a_mat=a_mat, lower=lower, upper=upper, layout=layout
    )


def plan_objective(instance: MpcInstance, powers: np.ndarray) -> float:
    """Objective of a power schedule, recomputed from the model definition.

    Maximization convention: forecast revenue minus the regularization
    penalty. The penalty uses |P| directly rather than the epigraph
    auxiliaries, so the value is independent of solver slack.
    """
    prices = np.asarray(instance.prices, dtype=np.float64)
    gamma = instance.gamma.as_array()
    lam = instance.spec.lam
    revenue = float(np.dot(prices * gamma, powers))
    if lam == 0.0:
        return revenue
    if instance.spec.s == 1:
        penalty = float(np.sum(np.abs(powers) / gamma))
    else:
        penalty = float(np.sum((powers / gamma) ** 2))
    return revenue - lam * penalty


def extract_plan(instance: MpcInstance, result) -> MpcPlan:
    """Turn a solver result into an executable plan.

    The objective is recomputed from the instance definition rather than
    trusting the solver's reported value; SOC is reconstructed by chaining
    the domain update rule.
    """
    t = instance.horizon
    if result.status == "primal_infeasible":
        return MpcPlan(
            powers=np.empty(0),
            soc_path=np.empty(0),
            objective=float("nan"),
            status=PLAN_INFEASIBLE,
        )
    x = np.asarray(result.x, dtype=np.float64)
    if x.shape[0] != 2 * t:
        raise ValueError(f"solution has {x.shape[0]} variables, layout expects {2 * t}")
    powers = x[:t].copy()
    soc_path = np.empty(t)
    soc = instance.soc0
    for i in range(t):
        soc = soc_step(soc, powers[i], instance.params)
        soc_path[i] = soc
    status = PLAN_SOLVED if result.status == "solved" else PLAN_MAX_ITERATIONS
    return MpcPlan(
        powers=powers,
        soc_path=soc_path,
        objective=plan_objective(instance, powers),
        status=status,
    )
