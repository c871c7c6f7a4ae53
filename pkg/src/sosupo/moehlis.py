"""Coefficient generator for the nine-mode sinusoidal shear flow model.

Coefficients follow the defining formulas of Moehlis, Faisst & Eckhardt
(New J. Phys. 6, 56, 2004) for a domain of size ``Lx x 2 x Lz``.  The
equations have the form

    da_i/dt = lambda_1 delta_{1i} / Re - lambda_i a_i / Re + N_ijk a_j a_k

and :func:`check_invariants` guards the transcription: the quadratic part
must conserve energy exactly, the laminar state ``e_1`` must be a fixed point
and the two half-period shift symmetries must hold.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

GENERATOR_VERSION = "1"

# sign patterns of the streamwise (T1) and spanwise (T2) half-period shifts
T1_SIGNS = (1, 1, 1, -1, -1, -1, -1, -1, 1)
T2_SIGNS = (1, -1, -1, 1, 1, -1, -1, -1, 1)


@dataclass(frozen=True)
class ModelCoefficients:
    lambda_decay: np.ndarray  # (9,)
    N: np.ndarray  # (9, 9, 9), N[i, j, k] with j <= k (upper storage)
    alpha: float
    beta: float
    gamma: float

    @property
    def n(self) -> int:
        return 9

    def quadratic(self, a) -> np.ndarray:
        a = np.asarray(a, dtype=float)
        return np.einsum("ijk,j,k->i", self.N, a, a)


def wavenumbers(Lx: float = 4 * math.pi, Lz: float = 2 * math.pi) -> tuple[float, float, float]:
    return 2 * math.pi / Lx, math.pi / 2, 2 * math.pi / Lz


def generate(Lx: float = 4 * math.pi, Lz: float = 2 * math.pi) -> ModelCoefficients:
    """Build lambda_i and N_ijk (mode indices are 0-based internally)."""
    al, be, ga = wavenumbers(Lx, Lz)
    k_ag = math.sqrt(al**2 + ga**2)
    k_bg = math.sqrt(be**2 + ga**2)
    k_abg = math.sqrt(al**2 + be**2 + ga**2)
    s6 = math.sqrt(6.0)
    s32 = math.sqrt(1.5)

    lam = np.array([
        be**2,
        4 * be**2 / 3 + ga**2,
        be**2 + ga**2,
        (3 * al**2 + 4 * be**2) / 3,
        al**2 + be**2,
        (3 * al**2 + 4 * be**2 + 3 * ga**2) / 3,
        al**2 + be**2 + ga**2,
        al**2 + be**2 + ga**2,
        9 * be**2,
    ])

    N = np.zeros((9, 9, 9))

    def add(i, j, k, c):
        j, k = min(j, k), max(j, k)
        N[i - 1, j - 1, k - 1] += c

    # mode 1
    add(1, 6, 8, -s32 * be * ga / k_abg)
    add(1, 2, 3, s32 * be * ga / k_bg)
    # mode 2
    add(2, 4, 6, 5 * math.sqrt(2) * ga**2 / (3 * math.sqrt(3) * k_ag))
    add(2, 5, 7, -ga**2 / (s6 * k_ag))
    add(2, 5, 8, -al * be * ga / (s6 * k_ag * k_abg))
    add(2, 1, 3, -s32 * be * ga / k_bg)
    add(2, 3, 9, -s32 * be * ga / k_bg)
    # mode 3
    add(3, 4, 7, 2 * al * be * ga / (s6 * k_ag * k_bg))
    add(3, 5, 6, 2 * al * be * ga / (s6 * k_ag * k_bg))
    add(3, 4, 8, (be**2 * (3 * al**2 + ga**2) - 3 * ga**2 * (al**2 + ga**2)) / (s6 * k_ag * k_bg * k_abg))
    # mode 4
    add(4, 1, 5, -al / s6)
    add(4, 2, 6, -10 * al**2 / (3 * s6 * k_ag))
    add(4, 3, 7, -s32 * al * be * ga / (k_ag * k_bg))
    add(4, 3, 8, -s32 * al**2 * be**2 / (k_ag * k_bg * k_abg))
    add(4, 5, 9, -al / s6)
    # mode 5
    add(5, 1, 4, al / s6)
    add(5, 2, 7, al**2 / (s6 * k_ag))
    add(5, 2, 8, -al * be * ga / (s6 * k_ag * k_abg))
    add(5, 4, 9, al / s6)
    add(5, 3, 6, 2 * al * be * ga / (s6 * k_ag * k_bg))
    # mode 6
    add(6, 1, 7, al / s6)
    add(6, 1, 8, s32 * be * ga / k_abg)
    add(6, 2, 4, 10 * (al**2 - ga**2) / (3 * s6 * k_ag))
    add(6, 3, 5, -2 * math.sqrt(2.0 / 3.0) * al * be * ga / (k_ag * k_bg))
    add(6, 7, 9, al / s6)
    add(6, 8, 9, s32 * be * ga / k_abg)
    # mode 7
    add(7, 1, 6, -al / s6)
    add(7, 6, 9, -al / s6)
    add(7, 2, 5, (ga**2 - al**2) / (s6 * k_ag))
    add(7, 3, 4, al * be * ga / (s6 * k_ag * k_bg))
    # mode 8
    add(8, 2, 5, 2 * al * be * ga / (s6 * k_ag * k_abg))
    add(8, 3, 4, ga**2 * (3 * al**2 - be**2 + 3 * ga**2) / (s6 * k_ag * k_bg * k_abg))
    # mode 9
    add(9, 2, 3, s32 * be * ga / k_bg)
    add(9, 6, 8, -s32 * be * ga / k_abg)

    return ModelCoefficients(lam, N, al, be, ga)


def energy_cubic_coefficients(c: ModelCoefficients) -> dict[tuple[int, int, int], float]:
    """Coefficients of the cubic form ``sum_i a_i N_ijk a_j a_k``, keyed by sorted index triples."""
    out: dict[tuple[int, int, int], float] = {}
    nz = np.argwhere(c.N != 0)
    for i, j, k in nz:
        key = tuple(sorted((int(i), int(j), int(k))))
        out[key] = out.get(key, 0.0) + float(c.N[i, j, k])
    return out


def check_invariants(c: ModelCoefficients, tol: float = 1e-12) -> None:
    """Raise ``ValueError`` on any violated structural property."""
    lam = c.lambda_decay
    if not np.all(lam > 0):
        raise ValueError("decay rates must be positive")
    if not (np.all(lam >= lam[0] - tol) and np.all(lam <= lam[8] + tol)):
        raise ValueError("decay rates must satisfy lambda_1 <= lambda_i <= lambda_9")
    worst = max((abs(v) for v in energy_cubic_coefficients(c).values()), default=0.0)
    if worst > tol:
        raise ValueError(f"quadratic terms do not conserve energy (cubic coefficient {worst:.3e})")
    if abs(c.N[0, 0, 0]) > 0:
        raise ValueError("N_111 must vanish")
    e1 = np.zeros(9)
    e1[0] = 1.0
    if np.max(np.abs(c.quadratic(e1))) > tol:
        raise ValueError("laminar state is not a fixed point")
    rng = np.random.default_rng(0)
    for signs in (np.array(T1_SIGNS), np.array(T2_SIGNS)):
        for _ in range(20):
            a = rng.standard_normal(9)
            r = np.max(np.abs(c.quadratic(signs * a) - signs * c.quadratic(a)))
            if r > 1e-10:
                raise ValueError(f"symmetry {signs.tolist()} violated (residual {r:.3e})")
