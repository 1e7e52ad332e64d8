"""Large-coalition capacity formula and finite-c convergence studies."""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize
from scipy.stats import norm, qmc

from .channel import Params
from .errors import DomainError
from .gammamap import GammaMap
from .payoff import asymptotic_payoff_u, mutual_information
from .solver import solve_minimax
from .strategy import interleaving_strategy

MODES = ("interleaving-uniform", "solver")
GOLDEN = (1 + 5**0.5) / 2


def asymptotic_capacity(params: Params) -> float:
    """``(q - 1) / (2 c**2 ln q)`` in q-ary symbols per segment."""
    c, q = params.c, params.q
    return (q - 1) / (2 * c * c * math.log(q))


def capacity_vs_q(c: int, q_list) -> list[tuple[int, float]]:
    """``(q, capacity)`` rows; raises if the column is not strictly increasing."""
    q_list = sorted(q_list)
    if not q_list:
        raise DomainError("q_list must be nonempty")
    rows = [(q, asymptotic_capacity(Params(c, q, cap=math.inf))) for q in q_list]
    values = [v for _, v in rows]
    if any(b <= a for a, b in zip(values, values[1:])):
        raise ArithmeticError(f"capacity not strictly increasing in q: {rows}")
    return rows


@dataclass(frozen=True)
class ConvergenceRow:
    c: int
    q: int
    mode: str
    finite_value: float
    scaled: float
    limit: int
    gap: float


def _row(c: int, q: int, mode: str, solver_tol: float) -> ConvergenceRow:
    params = Params(c, q)
    if mode == "interleaving-uniform":
        finite = mutual_information(interleaving_strategy(params), np.full(q, 1.0 / q)).value / c
    else:
        finite = solve_minimax(params, tol=solver_tol).value
    scaled = finite * 2 * c * c * math.log(q)
    return ConvergenceRow(c, q, mode, finite, scaled, q - 1, abs(scaled - (q - 1)))


def convergence_study(q: int, c_list, mode: str = "interleaving-uniform",
                      solver_tol: float = 1e-6, threads: int = 1) -> list[ConvergenceRow]:
    """Finite-c values scaled by ``2 c**2 ln q`` next to the limit ``q - 1``.

    ``interleaving-uniform`` evaluates ``I/c`` for the interleaving attack at the
    uniform bias (cheap); ``solver`` runs :func:`solve_minimax` per row.
    Rows come back in ``c_list`` order whatever the thread count.
    """
    if mode not in MODES:
        raise DomainError(f"mode must be one of {MODES}, got {mode!r}")
    c_list = list(c_list)
    if threads <= 1:
        return [_row(c, q, mode, solver_tol) for c in c_list]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda c: _row(c, q, mode, solver_tol), c_list))


def gaps_shrinking(rows: list[ConvergenceRow]) -> bool:
    return all(b.gap < a.gap for a, b in zip(rows, rows[1:]))


def write_convergence_csv(rows: list[ConvergenceRow], fh) -> None:
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(["c", "q", "mode", "finite_value", "scaled", "limit", "gap"])
    for r in rows:
        writer.writerow([r.c, r.q, r.mode, f"{r.finite_value:.17g}", f"{r.scaled:.17g}",
                         r.limit, f"{r.gap:.17g}"])


def sphere_orthant_points(q: int, n: int, seed: int = 0) -> np.ndarray:
    """Quasi-uniform points on ``{u >= 0, |u| = 1}``.

    Evenly spaced angles for ``q = 2``, a golden-ratio (Fibonacci) lattice for
    ``q = 3``, scrambled Sobol normals folded into the orthant otherwise.
    """
    k = np.arange(n) + 0.5
    if q == 2:
        angle = k / n * (np.pi / 2)
        return np.stack([np.cos(angle), np.sin(angle)], axis=1)
    if q == 3:
        # z uniform in [0, 1] and azimuth uniform in [0, pi/2] is area-uniform
        z = k / n
        phi = np.mod(k * GOLDEN, 1.0) * (np.pi / 2)
        r = np.sqrt(1.0 - z * z)
        return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)
    sobol = qmc.Sobol(d=q, scramble=True, seed=seed)
    draws = sobol.random(n)
    gauss = np.abs(norm.ppf(np.clip(draws, 1e-12, 1 - 1e-12)))
    return gauss / np.linalg.norm(gauss, axis=1, keepdims=True)


def _to_orthant(z: np.ndarray) -> np.ndarray:
    u = np.abs(z)
    return u / np.linalg.norm(u)


def max_payoff_on_sphere(g: GammaMap, n_points: int | None = None, refine: bool = True,
                         seed: int = 0):
    """Grid maximum of the large-c payoff over the sphere orthant, then local refinement.

    Returns ``(u_best, T_best)``.
    """
    q = g.q
    if n_points is None:
        n_points = {2: 2_000, 3: 10_000}.get(q, 100_000)
    pts = sphere_orthant_points(q, n_points, seed)
    vals = asymptotic_payoff_u(g, pts)
    best = int(np.argmax(vals))
    u_best, t_best = pts[best], float(vals[best])
    if refine:
        res = minimize(lambda z: -asymptotic_payoff_u(g, _to_orthant(z)), u_best,
                       method="Nelder-Mead", options={"xatol": 1e-10, "fatol": 1e-13})
        if -res.fun > t_best:
            u_best, t_best = _to_orthant(res.x), float(-res.fun)
    return u_best, t_best
