import io
import time

import numpy as np
import pytest
import scipy.sparse as sp

from oracles import jacobi_eigenvalues, parse_sdpa, sdpa_min_objective, write_sdpa
from sosupo.sdp import SdpProblem, SolverSettings, check_residuals, export_sdpa, read_sdpa, sdpa_text, solve_sdp


def lambda_max_problem(A):
    """min lambda s.t. X = lambda I - A is PSD, written as X_pq - lambda delta_pq = -A_pq."""
    n = len(A)
    rows, ii, jj, vals, b, af = [], [], [], [], [], []
    r = 0
    for p in range(n):
        for q in range(p, n):
            rows.append(r)
            ii.append(p)
            jj.append(q)
            vals.append(1.0 if p == q else 0.5)
            b.append(-A[p, q])
            af.append(-1.0 if p == q else 0.0)
            r += 1
    return SdpProblem((n,), b, [(rows, ii, jj, vals)], [([], [], [])], sp.csr_matrix(np.array(af)[:, None]), [1.0])


def trace_one_problem():
    return SdpProblem((2,), [1.0], [([0, 0], [0, 1], [0, 1], [1, 1])], [([], [], [])], None, [])


def test_jacobi_oracle_self_check(rng):
    A = rng.standard_normal((5, 5))
    A = A + A.T
    assert np.allclose(jacobi_eigenvalues(A), np.linalg.eigvalsh(A), atol=1e-12)


def test_diag_example():
    P = lambda_max_problem(np.diag([1.0, 2.0]))
    sol = solve_sdp(P)
    assert sol.status == "optimal"
    assert abs(sol.free_values[0] - 2.0) <= 1e-8
    rep = check_residuals(P, sol)
    assert rep.gap <= 1e-8 and rep.ok


def test_random_eigenvalues_against_jacobi(rng):
    for _ in range(5):
        A = rng.standard_normal((5, 5))
        A = A + A.T
        sol = solve_sdp(lambda_max_problem(A))
        assert abs(sol.free_values[0] - jacobi_eigenvalues(A)[-1]) <= 1e-6


def test_trace_one_feasibility():
    sol = solve_sdp(trace_one_problem())
    X = sol.primal_blocks[0]
    assert sol.ok
    assert abs(np.trace(X) - 1) <= 1e-8
    assert np.linalg.eigvalsh(X).min() >= -1e-8


def test_optimal_status_invariant(rng):
    settings = SolverSettings()
    A = rng.standard_normal((4, 4))
    sol = solve_sdp(lambda_max_problem(A + A.T), settings)
    assert sol.status == "optimal"
    assert sol.gap <= settings.gap_tol and sol.pinf <= settings.feas_tol and sol.dinf <= settings.feas_tol
    assert sol.primal_objective >= sol.dual_objective - 1e-10 - 1e-8 * abs(sol.dual_objective)


def test_corrupted_block_flags_pinf():
    P = lambda_max_problem(np.diag([1.0, 2.0]))
    sol = solve_sdp(P)
    sol.primal_blocks[0][0, 1] += 1e-3
    sol.primal_blocks[0][1, 0] += 1e-3
    assert "pinf" in check_residuals(P, sol).flags


def test_empty_problem():
    E = SdpProblem((), [], [], [], None, [])
    sol = solve_sdp(E)
    rep = check_residuals(E, sol)
    assert rep.pinf == 0 and rep.dinf == 0 and rep.gap == 0


def test_determinism(rng):
    A = rng.standard_normal((5, 5))
    P = lambda_max_problem(A + A.T)
    s1, s2 = solve_sdp(P), solve_sdp(P)
    assert s1.iterations == s2.iterations
    assert abs(s1.primal_objective - s2.primal_objective) <= 1e-12


def test_primal_infeasible_detected():
    # X PSD 1x1 with X = -1
    P = SdpProblem((1,), [-1.0], [([0], [0], [0], [1.0])], [([0], [0], [1.0])], None, [])
    assert solve_sdp(P).status in ("primal_infeasible", "iteration_limit", "numerical_failure")


def test_settings_validation():
    with pytest.raises(ValueError):
        SolverSettings(gap_tol=0)


class TestSdpa:
    def test_feasibility_file_header(self):
        text = sdpa_text(trace_one_problem())
        body = [ln for ln in text.splitlines() if not ln.startswith(("*", '"'))]
        assert body[0].split()[0] == "1" and body[1].split()[0] == "1"
        # two header lines, block sizes, c vector, then one line per stored entry
        assert len(body) == 4 + len(parse_sdpa(text)[3])

    def test_round_trip_byte_identical(self, rng):
        A = rng.standard_normal((4, 4))
        text = sdpa_text(lambda_max_problem(A + A.T))
        assert sdpa_text(read_sdpa(text)) == text
        buf = io.StringIO()
        export_sdpa(read_sdpa(text), buf)
        assert buf.getvalue() == text

    def test_independent_parser_round_trip(self):
        text = sdpa_text(lambda_max_problem(np.diag([1.0, 2.0])))
        parsed = parse_sdpa(text)
        body = "".join(ln + "\n" for ln in text.splitlines() if not ln.startswith(("*", '"')))
        assert write_sdpa(*parsed) == body

    def test_external_solve_reproduces_lambda(self):
        text = sdpa_text(lambda_max_problem(np.diag([1.0, 2.0])))
        # our optimum is minus the SDPA primal optimum
        assert abs(-sdpa_min_objective(*parse_sdpa(text)) - 2.0) <= 1e-5

    def test_file_destination(self, tmp_path):
        P = lambda_max_problem(np.diag([3.0, 1.0]))
        path = tmp_path / "p.dat-s"
        export_sdpa(P, str(path))
        assert path.read_text() == sdpa_text(P)
        sol = solve_sdp(read_sdpa(str(path)))
        assert abs(sol.free_values[0] - 3.0) <= 1e-7


def test_speed_5x5(rng):
    A = rng.standard_normal((5, 5))
    t = time.perf_counter()
    solve_sdp(lambda_max_problem(A + A.T))
    assert time.perf_counter() - t < 1.0
