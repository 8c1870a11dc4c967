"""Operator-splitting solver on canonical box-constrained programs."""

from __future__ import annotations

import io

import numpy as np
import pytest
from hypothesis import given, settings as hyp_settings
from hypothesis import strategies as st

from battmpc.mpc import CanonicalProgram
from battmpc.solver import (
    STATUS_MAX_ITERATIONS,
    STATUS_PRIMAL_INFEASIBLE,
    STATUS_SOLVED,
    SolverSettings,
    dump_program,
    kkt_residuals,
    objective_value,
    solve,
)


def box_program(lin, lower, upper, quad_diag=None):
    lin = np.asarray(lin, dtype=np.float64)
    n = lin.shape[0]
    quad = np.zeros((n, n)) if quad_diag is None else np.diag(np.asarray(quad_diag, dtype=np.float64))
    return CanonicalProgram(
        quad=quad,
        lin=lin,
        a_mat=np.eye(n),
        lower=np.asarray(lower, dtype=np.float64),
        upper=np.asarray(upper, dtype=np.float64),
    )


class TestBasics:
    def test_box_lp(self):
        result = solve(box_program([-1.0], [-1.0], [1.0]))
        assert result.status == STATUS_SOLVED
        assert result.x[0] == pytest.approx(1.0, abs=1e-6)
        assert result.objective == pytest.approx(-1.0, abs=1e-6)

    def test_box_qp(self):
        result = solve(box_program([-1.0], [-2.0], [2.0], quad_diag=[1.0]))
        assert result.status == STATUS_SOLVED
        assert result.x[0] == pytest.approx(1.0, abs=1e-6)
        assert result.objective == pytest.approx(-0.5, abs=1e-6)

    def test_equality_row(self):
        # min x1 + x2 s.t. x1 + x2 = 1, 0 <= xi <= 1
        prog = CanonicalProgram(
            quad=np.zeros((2, 2)),
            lin=np.array([1.0, 1.0]),
            a_mat=np.array([[1.0, 1.0], [1.0, 0.0], [0.0, 1.0]]),
            lower=np.array([1.0, 0.0, 0.0]),
            upper=np.array([1.0, 1.0, 1.0]),
        )
        result = solve(prog)
        assert result.status == STATUS_SOLVED
        assert result.x[0] + result.x[1] == pytest.approx(1.0, abs=1e-6)
        assert result.objective == pytest.approx(1.0, abs=1e-6)

    def test_determinism_bitwise(self):
        rng = np.random.default_rng(3)
        prog = CanonicalProgram(
            quad=np.zeros((4, 4)),
            lin=rng.normal(size=4),
            a_mat=rng.normal(size=(6, 4)),
            lower=np.full(6, -2.0),
            upper=np.full(6, 2.0),
        )
        a = solve(prog)
        b = solve(prog)
        assert np.array_equal(a.x, b.x)
        assert np.array_equal(a.y, b.y)
        assert a.objective == b.objective
        assert a.iterations == b.iterations
        assert a.status == b.status

    def test_max_iterations_status(self):
        result = solve(box_program([-1.0], [-1.0], [1.0]), SolverSettings(max_iter=1))
        assert result.status == STATUS_MAX_ITERATIONS

    def test_objective_matches_recompute(self):
        rng = np.random.default_rng(9)
        diag = rng.uniform(0.5, 2.0, 5)
        prog = box_program(rng.normal(size=5), np.full(5, -1.5), np.full(5, 1.5), quad_diag=diag)
        result = solve(prog)
        assert result.status == STATUS_SOLVED
        assert result.objective == pytest.approx(
            objective_value(prog, result.x), rel=1e-9, abs=1e-12
        )

    def test_infeasible_certificate(self):
        prog = CanonicalProgram(
            quad=np.zeros((1, 1)),
            lin=np.array([0.0]),
            a_mat=np.array([[1.0], [1.0]]),
            lower=np.array([1.0, -np.inf]),
            upper=np.array([np.inf, -1.0]),
        )
        result = solve(prog)
        assert result.status == STATUS_PRIMAL_INFEASIBLE

    def test_scaling_robustness(self):
        base = box_program([-1.0, 2.0], [-1.0, -1.0], [1.0, 1.0])
        scaled = box_program([-1e3, 2e3], [-1e3, -1e3], [1e3, 1e3])
        res_base = solve(base)
        res_scaled = solve(scaled)
        assert res_base.status == STATUS_SOLVED
        assert res_scaled.status == STATUS_SOLVED
        assert res_scaled.objective == pytest.approx(1e6 * res_base.objective, rel=1e-6)
        assert res_scaled.x == pytest.approx(1e3 * res_base.x, rel=1e-6)
        infeas = CanonicalProgram(
            quad=np.zeros((1, 1)),
            lin=np.array([0.0]),
            a_mat=np.array([[1e3], [1e3]]),
            lower=np.array([1e3, -np.inf]),
            upper=np.array([np.inf, -1e3]),
        )
        assert solve(infeas).status == STATUS_PRIMAL_INFEASIBLE


class TestRandomizedOracle:
    def test_box_lp_vertex_oracle(self):
        rng = np.random.default_rng(42)
        for _ in range(100):
            n = int(rng.integers(1, 7))
            q = rng.normal(size=n)
            q[np.abs(q) < 0.05] = 0.1  # keep optima unique
            lo = rng.uniform(-3.0, 0.0, n)
            hi = lo + rng.uniform(0.5, 3.0, n)
            result = solve(box_program(q, lo, hi))
            assert result.status == STATUS_SOLVED
            x_star = np.where(q > 0, lo, hi)
            obj_star = float(q @ x_star)
            assert result.objective == pytest.approx(obj_star, rel=1e-6, abs=1e-6)
            assert result.x == pytest.approx(x_star, abs=1e-5)

    def test_box_qp_clipped_oracle(self):
        rng = np.random.default_rng(43)
        for _ in range(100):
            n = int(rng.integers(1, 7))
            d = rng.uniform(0.2, 3.0, n)
            q = rng.normal(size=n) * 2.0
            lo = rng.uniform(-2.0, 0.0, n)
            hi = lo + rng.uniform(0.5, 3.0, n)
            tight = SolverSettings(eps_abs=1e-9, eps_rel=1e-9)
            result = solve(box_program(q, lo, hi, quad_diag=d), tight)
            assert result.status == STATUS_SOLVED
            x_star = np.clip(-q / d, lo, hi)
            obj_star = float(0.5 * (d * x_star * x_star).sum() + q @ x_star)
            assert result.objective == pytest.approx(obj_star, rel=1e-7, abs=1e-7)
            assert result.x == pytest.approx(x_star, abs=1e-6)

    @hyp_settings(max_examples=40, deadline=None)
    @given(
        st.integers(min_value=1, max_value=4),
        st.integers(min_value=0, max_value=2**31 - 1),
    )
    def test_feasibility_invariant(self, n, seed):
        rng = np.random.default_rng(seed)
        q = rng.normal(size=n)
        lo = rng.uniform(-4.0, 0.0, n)
        hi = lo + rng.uniform(0.1, 4.0, n)
        prog = box_program(q, lo, hi)
        result = solve(prog)
        assert result.status == STATUS_SOLVED
        scale = 1.0 + float(np.max(np.abs(np.concatenate([lo, hi]))))
        report = kkt_residuals(prog, result.x, result.y)
        assert report.constraint_violation <= 1e-5 * scale
        midpoint = 0.5 * (lo + hi)
        assert result.objective <= float(q @ midpoint) + 1e-6 * scale


class TestKktResiduals:
    def test_optimal_pair_near_zero(self):
        prog = box_program([-1.0], [-1.0], [1.0])
        report = kkt_residuals(prog, np.array([1.0]), np.array([1.0]))
        assert report.constraint_violation <= 1e-12
        assert report.stationarity <= 1e-12
        assert report.complementary_slackness <= 1e-12

    def test_primal_perturbation_detected(self):
        prog = box_program([-1.0], [-1.0], [1.0])
        report = kkt_residuals(prog, np.array([0.9]), np.array([1.0]))
        assert report.complementary_slackness >= 0.05

    def test_dual_perturbation_detected(self):
        prog = box_program([-1.0], [-1.0], [1.0])
        report = kkt_residuals(prog, np.array([1.0]), np.array([1.1]))
        assert report.stationarity >= 0.05

    def test_violation_perturbation_detected(self):
        prog = box_program([-1.0], [-1.0], [1.0])
        report = kkt_residuals(prog, np.array([1.1]), np.array([1.0]))
        assert report.constraint_violation >= 0.05

    def test_zero_program_zero_residuals(self):
        prog = box_program([0.0, 0.0], [-1.0, -1.0], [1.0, 1.0])
        report = kkt_residuals(prog, np.zeros(2), np.zeros(2))
        assert report.constraint_violation == 0.0
        assert report.stationarity == 0.0
        assert report.complementary_slackness == 0.0

    def test_solved_pair_satisfies_kkt(self):
        rng = np.random.default_rng(17)
        prog = CanonicalProgram(
            quad=np.zeros((3, 3)),
            lin=rng.normal(size=3),
            a_mat=rng.normal(size=(5, 3)),
            lower=np.full(5, -1.0),
            upper=np.full(5, 1.0),
        )
        result = solve(prog)
        assert result.status == STATUS_SOLVED
        report = kkt_residuals(prog, result.x, result.y)
        assert report.constraint_violation <= 1e-5
        assert report.stationarity <= 1e-4
        assert report.complementary_slackness <= 1e-4

    def test_dimension_mismatch(self):
        prog = box_program([1.0], [-1.0], [1.0])
        with pytest.raises(ValueError):
            kkt_residuals(prog, np.zeros(2), np.zeros(1))
        with pytest.raises(ValueError):
            kkt_residuals(prog, np.zeros(1), np.zeros(3))


class TestDumpProgram:
    def test_round_trip(self):
        prog = CanonicalProgram(
            quad=np.diag([2.0, 0.0]),
            lin=np.array([-1.5, 0.0]),
            a_mat=np.array([[1.0, 0.5], [0.0, -2.0]]),
            lower=np.array([-np.inf, 0.0]),
            upper=np.array([1.0, 3.0]),
        )
        buf = io.StringIO()
        dump_program(prog, buf)
        lines = buf.getvalue().strip().splitlines()
        m, n = (int(v) for v in lines[0].split())
        assert (m, n) == (2, 2)
        a_mat = np.zeros((m, n))
        lower = np.full(m, np.nan)
        upper = np.full(m, np.nan)
        lin = np.zeros(n)
        quad = np.zeros((n, n))
        for line in lines[1:]:
            parts = line.split()
            if parts[0] == "b":
                i = int(parts[1])
                lower[i] = float(parts[2])
                upper[i] = float(parts[3])
            elif parts[0] == "c":
                lin[int(parts[1])] = float(parts[2])
            elif parts[0] == "h":
                quad[int(parts[1]), int(parts[2])] = float(parts[3])
            else:
                a_mat[int(parts[0]), int(parts[1])] = float(parts[2])
        assert np.array_equal(a_mat, prog.a_mat)
        assert np.array_equal(lower, prog.lower)
        assert np.array_equal(upper, prog.upper)
        assert np.array_equal(lin, prog.lin)
        assert np.array_equal(quad, prog.quad)

    def test_writes_file(self, tmp_path):
        prog = box_program([1.0], [0.0], [1.0])
        path = tmp_path / "program.txt"
        dump_program(prog, path)
        text = path.read_text(encoding="utf-8")
        assert text.splitlines()[0] == "1 1"


class TestValidation:
    def test_non_symmetric_quad(self):
        prog = CanonicalProgram(
            quad=np.array([[1.0, 0.5], [0.0, 1.0]]),
            lin=np.zeros(2),
            a_mat=np.eye(2),
            lower=np.zeros(2),
            upper=np.ones(2),
        )
        with pytest.raises(ValueError, match="symmetric"):
            solve(prog)

    def test_indefinite_quad(self):
        prog = box_program([0.0, 0.0], [0.0, 0.0], [1.0, 1.0], quad_diag=[-1.0, -1.0])
        with pytest.raises(ValueError, match="positive semidefinite"):
            solve(prog)

    def test_shape_mismatches(self):
        with pytest.raises(ValueError):
            solve(
                CanonicalProgram(
                    quad=np.zeros((2, 2)),
                    lin=np.zeros(3),
                    a_mat=np.eye(3),
                    lower=np.zeros(3),
                    upper=np.ones(3),
                )
            )
        with pytest.raises(ValueError):
            solve(
                CanonicalProgram(
                    quad=np.zeros((2, 2)),
                    lin=np.zeros(2),
                    a_mat=np.eye(2),
                    lower=np.zeros(3),
                    upper=np.ones(3),
                )
            )

    def test_crossed_bounds(self):
        with pytest.raises(ValueError, match="lower bound exceeds"):
            solve(box_program([1.0], [2.0], [1.0]))
