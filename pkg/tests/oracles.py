"""Independent reference implementations used only by the tests.

None of these import the package's numerical kernels.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.integrate import solve_ivp


def jacobi_eigenvalues(A, tol=1e-14, max_sweeps=100):
    """Cyclic Jacobi rotations on a symmetric matrix; returns sorted eigenvalues."""
    A = np.array(A, dtype=float)
    n = len(A)
    for _ in range(max_sweeps):
        off = math.sqrt(sum(A[i, j] ** 2 for i in range(n) for j in range(n) if i != j))
        if off < tol:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                if abs(A[p, q]) < 1e-300:
                    continue
                theta = (A[q, q] - A[p, p]) / (2 * A[p, q])
                t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1))
                c = 1 / math.sqrt(t * t + 1)
                s = t * c
                J = np.eye(n)
                J[p, p] = J[q, q] = c
                J[p, q] = s
                J[q, p] = -s
                A = J.T @ A @ J
    return np.sort(np.diag(A))


def naive_eval(terms: dict, x) -> float:
    """Sum of coefficient times product of powers, term by term."""
    total = 0.0
    for mono, c in terms.items():
        v = c
        for xi, e in zip(x, mono):
            for _ in range(e):
                v *= xi
        total += v
    return total


def parse_sdpa(text: str):
    """Minimal SDPA sparse reader: returns (m, block_sizes, c, entries).

    ``entries`` maps (matno, blk, i, j) to value.  Comments (lines starting
    with ``*`` or ``"``) are skipped.
    """
    lines = [ln.strip() for ln in text.splitlines()]
    lines = [ln for ln in lines if ln and ln[0] not in '*"']
    m = int(lines[0].split()[0])
    nblocks = int(lines[1].split()[0])
    sizes = [int(float(x)) for x in lines[2].replace(",", " ").replace("{", " ").replace("}", " ").split()[:nblocks]]
    c = [float(x) for x in lines[3].replace(",", " ").replace("{", " ").replace("}", " ").split()[:m]]
    entries = {}
    for ln in lines[4:]:
        mat, blk, i, j, v = ln.split()[:5]
        entries[(int(mat), int(blk), int(i), int(j))] = float(v)
    return m, sizes, c, entries


def write_sdpa(m, sizes, c, entries) -> str:
    """Canonical writer for the tuple produced by :func:`parse_sdpa`."""
    def num(v):
        return str(int(v)) if float(v).is_integer() else repr(float(v))

    out = [str(m), str(len(sizes)), " ".join(str(s) for s in sizes), " ".join(num(v) for v in c)]
    for key in sorted(entries):
        out.append(" ".join(str(k) for k in key) + " " + num(entries[key]))
    return "\n".join(out) + "\n"


def sdpa_min_objective(m, sizes, c, entries):
    """Optimal value of ``min c.x  s.t.  sum_k x_k F_k - F_0 >= 0`` (SDPA primal) via cvxpy.

    Negative block sizes denote diagonal (LP) blocks.
    """
    import cvxpy as cp

    x = cp.Variable(m)
    cons = []
    for b, size in enumerate(sizes, start=1):
        n = abs(size)
        F = [np.zeros((n, n)) for _ in range(m + 1)]
        for (mat, blk, i, j), v in entries.items():
            if blk != b:
                continue
            F[mat][i - 1, j - 1] = v
            F[mat][j - 1, i - 1] = v
        expr = sum(x[k - 1] * F[k] for k in range(1, m + 1)) - F[0]
        if size < 0:
            cons.append(cp.diag(expr) >= 0)
        else:
            cons.append((expr + expr.T) / 2 >> 0)
    prob = cp.Problem(cp.Minimize(np.array(c) @ x), cons)
    prob.solve(solver=cp.CLARABEL)
    return float(prob.value)


def fd_flow_jacobian(rhs, a0, T, h=1e-6, rtol=1e-12, atol=1e-13):
    """Central differences of the flow map, one column per coordinate."""
    a0 = np.asarray(a0, dtype=float)
    n = len(a0)
    J = np.zeros((n, n))
    for j in range(n):
        e = np.zeros(n)
        e[j] = h
        ends = []
        for sgn in (1, -1):
            sol = solve_ivp(rhs, (0, T), a0 + sgn * e, method="DOP853", rtol=rtol, atol=atol)
            ends.append(sol.y[:, -1])
        J[:, j] = (ends[0] - ends[1]) / (2 * h)
    return J


def vdp_lienard(mu):
    def rhs(t, z):
        x, y = z[0], z[1]
        out = [mu * (x - x**3 / 3 - y), x / mu]
        if len(z) > 2:
            out.append(x * x)
        return out
    return rhs


def poincare_period(rhs, z0, n_returns=6, rtol=1e-11, atol=1e-12, settle=200.0):
    """Mean return time to the section y = 0 (upward crossings) after a transient."""
    sol = solve_ivp(rhs, (0, settle), z0, method="DOP853", rtol=rtol, atol=atol)
    z = sol.y[:, -1]

    def ev(t, y):
        return y[1]

    ev.direction = 1
    sol = solve_ivp(rhs, (0, 10 * n_returns), z, method="DOP853", rtol=rtol, atol=atol, events=ev)
    te = sol.t_events[0]
    return float(np.mean(np.diff(te)))


def cycle_average_x2(mu=1.0, rtol=1e-12, atol=1e-13):
    """Average of x^2 over exactly one cycle between two section crossings."""
    rhs = vdp_lienard(mu)
    sol = solve_ivp(rhs, (0, 200), [2.0, 0.0, 0.0], method="DOP853", rtol=rtol, atol=atol)
    z = [sol.y[0, -1], sol.y[1, -1], 0.0]

    def ev(t, y):
        return y[1]

    ev.direction = 1
    sol = solve_ivp(rhs, (0, 30), z, method="DOP853", rtol=rtol, atol=atol, events=ev)
    te, ye = sol.t_events[0], sol.y_events[0]
    return float((ye[2][2] - ye[1][2]) / (te[2] - te[1])), float(te[2] - te[1])
