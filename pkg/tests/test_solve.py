"""Nonlinear solvers, Jacobian machinery and theta time stepping."""

import numpy as np
import pytest
import scipy.sparse as sp

from dgmono import (SolverConfig, TimeLoopConfig, build_dg_nodes,
                    build_structured_quad, hybrid_newton, picard,
                    run_transient, solve_linear, theta_step)
from dgmono import ProblemSpec, StabilizationParams
from dgmono.solve import (SolveTrace, color_columns, fd_jacobian,
                          jacobian_pattern)
from dgmono.stabilization import StabilizedProblem

from .test_stabilization import make_problem


class TestConfig:
    def test_solver_validation(self):
        with pytest.raises(ValueError):
            SolverConfig(tol=1e-2, switch_tol=1e-4)
        with pytest.raises(ValueError):
            SolverConfig(max_iter=0)
        with pytest.raises(ValueError):
            SolverConfig(omega=0.0)

    def test_loop_validation(self):
        with pytest.raises(ValueError):
            TimeLoopConfig(theta=1.5)
        with pytest.raises(ValueError):
            TimeLoopConfig(dt=0.0)


class TestLinearSolve:
    def test_direct(self):
        rng = np.random.default_rng(0)
        A = sp.csc_matrix(rng.standard_normal((6, 6)) + 6 * np.eye(6))
        b = rng.standard_normal(6)
        x = solve_linear(A, b)
        assert np.allclose(A @ x, b, atol=1e-12)

    def test_singular_raises(self):
        A = sp.csc_matrix(np.zeros((3, 3)))
        with pytest.raises(RuntimeError):
            solve_linear(A, np.ones(3))


class TestPicard:
    def test_linear_problem_converges_immediately(self):
        prob = make_problem(4, enabled=False)
        u, trace = picard(prob, cfg=SolverConfig(tol=1e-12, max_iter=10))
        assert trace.converged
        assert trace.iterations <= 3
        assert np.abs(prob.residual_steady(u)).max() < 1e-10

    def test_stabilized_converges_with_dmp(self):
        # Picard limit-cycles on this layer problem (the h^4-scaled smoothing
        # is effectively nonsmooth); the hybrid solver must converge and the
        # converged state must satisfy the DMP and a clean operator audit
        prob = make_problem(6, mu=1e-4)
        u, trace = hybrid_newton(prob, cfg=SolverConfig(tol=1e-6,
                                                        max_iter=200),
                                 bounds=(0.0, 1.0))
        assert trace.converged
        assert u.min() >= -1e-8 and u.max() <= 1.0 + 1e-8
        assert prob.audit(u) == []

    def test_stall_window_stops_early(self):
        # sharp-layer with h^4-scaled smoothing: Picard limit-cycles above
        # tight tolerances, the stall guard must stop it well before the cap
        from dgmono import get_case
        case = get_case("sharp-layer", sigma=1e-2, tau=1e-4, gamma=1e-2)
        mesh = build_structured_quad(10, 10)
        prob = StabilizedProblem(mesh, build_dg_nodes(mesh), case.spec,
                                 case.params)
        u, trace = picard(prob, cfg=SolverConfig(tol=1e-12, max_iter=400),
                          stall_window=5)
        assert not trace.converged
        assert trace.iterations < 400

    def test_trace_csv(self, tmp_path):
        prob = make_problem(3)
        _, trace = picard(prob, cfg=SolverConfig(tol=1e-6, max_iter=50),
                          bounds=(0.0, 1.0))
        path = tmp_path / "trace.csv"
        trace.to_csv(path)
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "iteration,residual,osc,alpha_active,step_length"
        assert len(lines) == trace.iterations + 1


class TestJacobian:
    def test_coloring_valid(self):
        prob = make_problem(4)
        P = jacobian_pattern(prob)
        colors, n_colors = color_columns(P)
        assert n_colors >= 1
        Pc = P.tocsc()
        for c in range(n_colors):
            cols = np.flatnonzero(colors == c)
            seen = set()
            for j in cols:
                rows = set(Pc.indices[Pc.indptr[j]:Pc.indptr[j + 1]].tolist())
                assert not (rows & seen)
                seen |= rows

    def test_fd_jacobian_quadratic_map(self):
        n = 8
        rng = np.random.default_rng(1)
        A = rng.standard_normal((n, n))

        def residual(v):
            return A @ v + v**2

        u = rng.standard_normal(n)
        P = sp.csc_matrix(np.ones((n, n)))
        colors, nc = color_columns(P)
        J = fd_jacobian(residual, u, residual(u), P, colors, nc).toarray()
        exact = A + np.diag(2 * u)
        assert np.allclose(J, exact, atol=1e-6)

    def test_pattern_covers_residual_coupling(self):
        prob = make_problem(3)
        P = jacobian_pattern(prob).toarray()
        rng = np.random.default_rng(2)
        u = rng.standard_normal(prob.nodes.n_nodes)
        T0 = prob.residual_steady(u)
        for j in rng.integers(prob.nodes.n_nodes, size=6):
            up = u.copy()
            up[j] += 1e-6
            dT = prob.residual_steady(up) - T0
            touched = np.flatnonzero(np.abs(dT) > 1e-12)
            assert np.all(P[touched, j] > 0)


class TestHybridNewton:
    def test_requires_smoothed(self):
        prob = make_problem(3, mode="raw")
        with pytest.raises(ValueError):
            hybrid_newton(prob)

    def test_converges_quadratically_near_solution(self):
        prob = make_problem(6, mu=1e-4)
        cfg = SolverConfig(tol=1e-10, max_iter=100)
        u, trace = hybrid_newton(prob, cfg=cfg, bounds=(0.0, 1.0))
        assert trace.converged
        ref = np.linalg.norm(prob.rhs(prob.operators(u)[1]))
        assert np.linalg.norm(prob.residual_steady(u)) <= 1e-10 * ref


class TestThetaStep:
    def test_zero_velocity_zero_source_is_identity(self):
        mesh = build_structured_quad(4, 4)
        nodes = build_dg_nodes(mesh)
        spec = ProblemSpec(beta=lambda x, y: (np.zeros_like(x),
                                              np.zeros_like(y)), mu=0.0)
        prob = StabilizedProblem(mesh, nodes, spec, StabilizationParams())
        u0 = np.sin(3 * nodes.coords[:, 0]) + nodes.coords[:, 1]
        u1, trace = theta_step(prob, u0, dt=0.1, theta=0.5,
                               cfg=SolverConfig(tol=1e-12, max_iter=20))
        assert trace.converged
        assert np.allclose(u1, u0, atol=1e-10)

    def test_single_step_equals_run_transient(self):
        prob = make_problem(4, mu=0.0)
        u0 = np.where(prob.nodes.coords[:, 0] < 0.5, 1.0, 0.0)
        cfg = SolverConfig(tol=1e-10, max_iter=100)
        u_a, _ = theta_step(prob, u0, dt=0.01, theta=0.5, cfg=cfg)
        loop = TimeLoopConfig(theta=0.5, dt=0.01, n_steps=1, solver=cfg)
        u_b, traces = run_transient(prob, u0, loop)
        assert len(traces) == 1
        assert np.array_equal(u_a, u_b)

    def test_cfl_enforcement(self):
        prob = make_problem(4, mu=0.0)
        u0 = np.where(prob.nodes.coords[:, 0] < 0.5, 1.0, 0.0)
        limit = prob.cfl_bound(u0, theta=0.0)
        assert np.isfinite(limit) and limit > 0
        with pytest.raises(ValueError, match="CFL"):
            theta_step(prob, u0, dt=10 * limit, theta=0.0,
                       cfg=SolverConfig(tol=1e-8, max_iter=50),
                       enforce_cfl=True)
        # theta = 1 is unconditionally admissible
        theta_step(prob, u0, dt=10 * limit, theta=1.0,
                   cfg=SolverConfig(tol=1e-8, max_iter=100),
                   enforce_cfl=True)

    def test_forward_euler_led_at_extrema(self):
        # local extremum diminishing: at detector-certified extrema of the
        # stage state, the update has the contracting sign
        prob = make_problem(6, mu=0.0, mode="raw")
        x = prob.nodes.coords[:, 0]
        u0 = np.clip(1.0 - 3 * np.abs(x - 0.4), 0.0, 1.0)
        dt = 0.9 * prob.cfl_bound(u0, theta=0.0)
        u1, trace = theta_step(prob, u0, dt=dt, theta=0.0,
                               cfg=SolverConfig(tol=1e-12, max_iter=200),
                               enforce_cfl=True)
        assert trace.converged
        al = prob.alpha(u0)
        checked = 0
        tol = 1e-10 * max(1.0, np.abs(u1 - u0).max())
        for a in np.flatnonzero(al >= 1.0):
            nb = prob.nodes.neighbors(a)
            vals = [u0[nb].max(), u0[nb].min()]
            bv = prob.trace.value_of(prob.nodes, a) if prob.trace else None
            if bv is not None:
                vals = [max(vals[0], bv), min(vals[1], bv)]
            if u0[a] >= vals[0]:       # discrete maximum
                assert u1[a] - u0[a] <= tol
                checked += 1
            elif u0[a] <= vals[1]:     # discrete minimum
                assert u1[a] - u0[a] >= -tol
                checked += 1
        assert checked > 0

    def test_unknown_method(self):
        prob = make_problem(3)
        with pytest.raises(ValueError, match="method"):
            theta_step(prob, np.zeros(prob.nodes.n_nodes), 0.1, 0.5,
                       method="bogus")
