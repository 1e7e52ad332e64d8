"""Finite-c fingerprinting games.

The payoff ``I(theta, p)`` is convex in the attack ``theta`` and the
watermarker's mixed move (a bias distribution ``F``) enters linearly, so

    max_F min_theta E_F I  ==  min_theta max_p I

and both sides can be bracketed:

* upper bound: ``max_p I(theta*, p)`` for a candidate attack (lattice scan plus
  pattern search over the simplex);
* lower bound: ``min_theta E_F* I`` for a candidate bias distribution, certified
  by the Frank-Wolfe linearization gap of the attacker's best response.

The solvers grow a finite bias support with worst-case biases (double
oracle) and solve the restricted game on that support as an exponential-cone
program.  Values in :class:`GameSolution` include the ``1/c`` factor.
"""

from __future__ import annotations

import csv
import itertools
import json
import logging
import math
from dataclasses import dataclass, field

import cvxpy as cp
import numpy as np
from scipy import sparse
from scipy.optimize import minimize_scalar

from .channel import Params, channel_matrix, check_bias, enumerate_tallies
from .errors import (DimensionError, DomainError, NonConvergenceError, NumericalError,
                     SupportCapError)
from .payoff import gradient_rows, mi_rows
from .strategy import Strategy, interleaving_strategy

log = logging.getLogger(__name__)

INNER_TOL = 1e-9
OUTER_TOL = 1e-6
INNER_MAX_ITER = 100_000
OUTER_MAX_ROUNDS = 500
SUPPORT_CAP = 64
LAMBDA_CUTOFF = 1e-14
PRUNE_WEIGHT = 1e-8


def default_grid_resolution(q: int) -> int:
    if q <= 3:
        return 32
    if q <= 5:
        return 16
    return 8


@dataclass(frozen=True)
class BiasDistribution:
    """Finitely supported distribution over bias vectors."""

    support: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        support = check_bias(np.atleast_2d(np.asarray(self.support, dtype=float)))
        weights = np.asarray(self.weights, dtype=float).ravel()
        if len(weights) != len(support):
            raise DimensionError("support and weights differ in length")
        if np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-12:
            raise DomainError(f"weights must be a probability vector, got {weights}")
        object.__setattr__(self, "support", support)
        object.__setattr__(self, "weights", weights)

    @classmethod
    def point(cls, p) -> "BiasDistribution":
        return cls(np.atleast_2d(p), np.ones(1))

    def to_dict(self) -> dict:
        return {"support": self.support.tolist(), "weights": self.weights.tolist()}


@dataclass
class GameSolution:
    value: float
    strategy: Strategy
    bias: np.ndarray | BiasDistribution
    upper: float
    lower: float
    certificate: dict
    trace: list = field(default_factory=list)
    converged: bool = True

    @property
    def params(self) -> Params:
        return self.strategy.params

    def to_dict(self) -> dict:
        if isinstance(self.bias, BiasDistribution):
            bias = self.bias.to_dict()
        else:
            bias = {"support": [np.asarray(self.bias).tolist()], "weights": [1.0]}
        return {
            "c": self.params.c,
            "q": self.params.q,
            "value": self.value,
            "bounds": {"upper": self.upper, "lower": self.lower},
            "converged": self.converged,
            "certificate": self.certificate,
            "strategy": self.strategy.to_dict(),
            "bias": bias,
            "iterations": [dict(zip(("round", "upper", "lower", "gap"), row)) for row in self.trace],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    def write_trace_csv(self, fh) -> None:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["round", "upper", "lower", "gap"])
        for rnd, upper, lower, gap in self.trace:
            writer.writerow([rnd, f"{upper:.17g}", f"{lower:.17g}", f"{gap:.17g}"])


def _as_mixture(params: Params, bias):
    if isinstance(bias, BiasDistribution):
        support, weights = bias.support, bias.weights
    else:
        support, weights = np.atleast_2d(check_bias(bias)), np.ones(1)
    if support.shape[1] != params.q:
        raise DimensionError(f"bias has {support.shape[1]} components, expected q={params.q}")
    return support, weights


def _lmo(grad: np.ndarray, allowed: np.ndarray) -> np.ndarray:
    # per tally: all mass on the smallest-gradient allowed symbol, ties split equally
    masked = np.where(allowed, grad, np.inf)
    low = masked.min(axis=1, keepdims=True)
    ties = allowed & (masked <= low + 1e-15 * np.maximum(1.0, np.abs(low)))
    return ties / ties.sum(axis=1, keepdims=True)


def frank_wolfe_gap(theta, grad, allowed) -> float:
    vertex = _lmo(grad, allowed)
    inner = np.where(allowed, theta * grad, 0.0).sum() - np.where(allowed, vertex * grad, 0.0).sum()
    return float(max(inner, 0.0))


def _alternating_step(theta, lam, weights, allowed):
    # exact minimization over theta of the relative-entropy upper bound
    # sum_i w_i sum_sigma Lambda_i,sigma KL(theta_sigma || tau_i), tau_i held fixed
    tau = lam @ theta
    mass = weights[:, None] * lam
    total = mass.sum(axis=0)
    share = mass / np.where(total > 0, total, 1.0)
    logt = np.log(np.where(tau > 0, tau, 1.0))
    expo = np.where(allowed, share.T @ logt, -np.inf)
    expo -= expo.max(axis=1, keepdims=True)
    new = np.exp(expo)
    new /= new.sum(axis=1, keepdims=True)
    return np.where(total[:, None] > 0, new, theta)


def _line_search_step(theta, direction, lam, weights, q):
    def f(t):
        return float(weights @ mi_rows(theta + t * direction, lam, q))
    res = minimize_scalar(f, bounds=(0.0, 1.0), method="bounded", options={"xatol": 1e-12})
    return theta + res.x * direction


def best_response_theta(bias, init: Strategy | Params, tol: float = INNER_TOL,
                        max_iter: int = INNER_MAX_ITER, method: str = "alternating",
                        callback=None):
    """Attacker's best response to a bias or a bias distribution.

    Minimizes ``E_F I(theta, p)`` over the Marking-constrained product of
    simplices.  Every accepted step lowers the payoff.  The iteration stops
    once the Frank-Wolfe linearization gap, an upper bound on the
    suboptimality, is at most ``tol``.

    Args:
        bias: a bias vector or a :class:`BiasDistribution`.
        init: starting strategy, or ``Params`` to start from interleaving.
        tol: required linearization gap (q-ary units, without the 1/c factor).
        method: ``"alternating"`` (closed-form relative-entropy minimization,
            linear convergence) or ``"frank-wolfe"`` (conditional gradient with
            exact line search, sublinear).
        callback: called as ``callback(iteration, payoff, gap)``.

    Returns:
        ``(strategy, gap)``.

    Raises:
        NonConvergenceError: gap still above ``tol`` after ``max_iter``
            iterations; ``partial`` holds ``(strategy, gap)``.
    """
    if tol <= 0:
        raise DomainError("tol must be positive")
    if method not in ("alternating", "frank-wolfe"):
        raise DomainError(f"unknown method {method!r}")
    if isinstance(init, Params):
        init = interleaving_strategy(init)
    params = init.params
    q = params.q
    support, weights = _as_mixture(params, bias)
    lam = channel_matrix(params, support)
    allowed = init.allowed
    theta = np.array(init.theta)

    value = float(weights @ mi_rows(theta, lam, q))
    gap = frank_wolfe_gap(theta, gradient_rows(theta, lam, weights, q), allowed)
    if callback:
        callback(0, value, gap)
    for it in range(1, max_iter + 1):
        if gap <= tol:
            return Strategy(params, theta), gap
        if method == "alternating":
            candidate = _alternating_step(theta, lam, weights, allowed)
        else:
            grad = gradient_rows(theta, lam, weights, q)
            candidate = _line_search_step(theta, _lmo(grad, allowed) - theta, lam, weights, q)
        new_value = float(weights @ mi_rows(candidate, lam, q))
        if new_value > value + 1e-15 and method == "alternating":
            # rounding can stall the closed-form step near the optimum; try one exact line search
            grad = gradient_rows(theta, lam, weights, q)
            candidate = _line_search_step(theta, _lmo(grad, allowed) - theta, lam, weights, q)
            new_value = float(weights @ mi_rows(candidate, lam, q))
        if new_value > value + 1e-15:
            log.debug("best response stalled at iteration %d (gap %.3g)", it, gap)
            break
        theta, value = candidate, new_value
        gap = frank_wolfe_gap(theta, gradient_rows(theta, lam, weights, q), allowed)
        if callback:
            callback(it, value, gap)
    if gap <= tol:
        return Strategy(params, theta), gap
    raise NonConvergenceError(
        f"best response gap {gap:.3g} > tol {tol:.3g}", partial=(Strategy(params, theta), gap)
    )


def _simplex_grid(q: int, resolution: int) -> np.ndarray:
    return enumerate_tallies(Params(resolution, q, cap=10**7)) / resolution


def _pattern_search(theta, params, p, value, step, refine_tol):
    q = params.q
    pairs = [(a, b) for a in range(q) for b in range(q) if a != b]
    while step >= refine_tol:
        moves = []
        for a, b in pairs:
            size = min(step, p[b])
            if size <= 0:
                continue
            cand = p.copy()
            cand[a] += size
            cand[b] -= size
            if cand[b] < 0:
                cand[b] = 0.0
            cand /= cand.sum()
            moves.append(cand)
        if not moves:
            break
        moves = np.array(moves)
        vals = mi_rows(theta, channel_matrix(params, moves), q)
        best = int(np.argmax(vals))
        if vals[best] > value:
            p, value = moves[best], float(vals[best])
        else:
            step /= 2
    return p, value


def worst_case_p(s: Strategy, grid_resolution: int | None = None, refine_tol: float = 1e-9,
                 starts: int = 4):
    """Bias maximizing ``I(s, p)``: lattice scan, then pattern search from the best cells.

    The lattice holds every composition of ``grid_resolution`` into ``q`` parts
    (so vertices and edges are included).  Refinement moves mass between pairs
    of symbols, halving the step until it drops below ``refine_tol``.  Global
    optimality is not guaranteed.

    Returns:
        ``(p, value)`` with ``value`` in q-ary units (no 1/c factor).
    """
    params = s.params
    res = grid_resolution or default_grid_resolution(params.q)
    if res < 2:
        raise DomainError("grid_resolution must be >= 2")
    grid = _simplex_grid(params.q, res)
    vals = mi_rows(s.theta, channel_matrix(params, grid), params.q)
    order = np.argsort(-vals, kind="stable")
    picked = []
    for idx in order:
        if len(picked) >= starts:
            break
        if all(np.abs(grid[idx] - grid[j]).max() > 1.5 / res for j in picked):
            picked.append(idx)
    best_p, best_v = grid[order[0]].copy(), float(vals[order[0]])
    for idx in picked:
        p, v = _pattern_search(s.theta, params, grid[idx].copy(), float(vals[idx]), 1.0 / res, refine_tol)
        if v > best_v:
            best_p, best_v = p, v
    return best_p, best_v


def seed_biases(q: int) -> np.ndarray:
    """Vertices, edge midpoints and the centre of the simplex."""
    pts = list(np.eye(q))
    if q >= 3:
        for a in range(q):
            for b in range(a + 1, q):
                mid = np.zeros(q)
                mid[[a, b]] = 0.5
                pts.append(mid)
    pts.append(np.full(q, 1.0 / q))
    return np.array(pts)


def _relabelings(p: np.ndarray) -> list:
    # the game is invariant under relabelling the alphabet, so every permutation
    # of a worst-case bias is worst-case for the relabelled attack as well
    out = []
    for perm in itertools.permutations(range(len(p))):
        pt = p[list(perm)]
        if all(np.abs(pt - o).max() > 1e-12 for o in out):
            out.append(pt)
    return out


def _solve_restricted(params: Params, support: np.ndarray):
    """Restricted game ``min_theta max_i I(theta, p_i)``.

    Returns ``(value, theta, weights)``; the weights are the constraint duals,
    i.e. the watermarker's equilibrium mixture over ``support``.
    """
    q = params.q
    tallies = enumerate_tallies(params)
    allowed = tallies > 0
    lam = channel_matrix(params, support)
    if np.all(allowed.sum(axis=1) == 1):
        theta = allowed.astype(float)
        vals = mi_rows(theta, lam, q)
        weights = np.zeros(len(support))
        weights[int(np.argmax(vals))] = 1.0
        return float(vals.max()), theta, weights

    rows, ys = np.nonzero(allowed)
    m, k = len(rows), len(support)
    x = cp.Variable(m, nonneg=True)
    # explicit marginals keep every exponential cone down to two variables
    tau = cp.Variable(k * q, nonneg=True)
    t = cp.Variable()
    weight = lam[:, rows]  # (k, m): Lambda of the tally owning each free entry
    block = sparse.csr_matrix((np.ones(m), (rows, np.arange(m))), shape=(len(tallies), m))
    point, entry = np.nonzero(weight > 0)
    marginal = sparse.csr_matrix((weight[point, entry], (point * q + ys[entry], entry)),
                                 shape=(k * q, m))
    point, entry = np.nonzero(weight > LAMBDA_CUTOFF)
    n_terms = len(entry)
    pick_x = sparse.csr_matrix((np.ones(n_terms), (np.arange(n_terms), entry)), shape=(n_terms, m))
    pick_tau = sparse.csr_matrix((np.ones(n_terms), (np.arange(n_terms), point * q + ys[entry])),
                                 shape=(n_terms, k * q))
    live = np.unique(point)
    slot = np.searchsorted(live, point)
    collect = sparse.csr_matrix((weight[point, entry] / math.log(q), (slot, np.arange(n_terms))),
                                shape=(len(live), n_terms))
    info = collect @ cp.rel_entr(pick_x @ x, pick_tau @ tau)
    payoff_con = info <= t
    constraints = [block @ x == 1, tau == marginal @ x, payoff_con]
    problem = cp.Problem(cp.Minimize(t), constraints)
    for solver in ("CLARABEL", "SCS"):
        try:
            problem.solve(solver=solver)
        except cp.error.SolverError:
            continue
        if problem.status in ("optimal", "optimal_inaccurate") and x.value is not None:
            break
    else:
        raise NumericalError(f"restricted game failed (status {problem.status})")
    theta = np.zeros(tallies.shape)
    theta[rows, ys] = np.maximum(x.value, 0.0)
    theta = np.where(allowed, np.maximum(theta, 1e-300), 0.0)
    theta /= theta.sum(axis=1, keepdims=True)
    weights = np.zeros(k)
    weights[live] = np.maximum(np.asarray(payoff_con.dual_value, dtype=float).reshape(-1), 0.0)
    if weights.sum() <= 0:
        weights[int(np.argmax(mi_rows(theta, lam, q)))] = 1.0
    weights /= weights.sum()
    return float(problem.value), theta, weights


@dataclass
class _Bracket:
    upper: float = math.inf
    upper_theta: np.ndarray | None = None
    upper_p: np.ndarray | None = None
    lower: float = -math.inf
    lower_theta: np.ndarray | None = None
    lower_support: np.ndarray | None = None
    lower_weights: np.ndarray | None = None
    inner_gap: float = math.nan
    improvement: float = math.nan
    rounds: int = 0
    trace: list = field(default_factory=list)

    @property
    def gap(self) -> float:
        return self.upper - self.lower


def _double_oracle(params: Params, tol: float, inner_tol: float, grid_resolution, refine_tol,
                   starts, max_rounds, support_cap, stop_on):
    if tol <= 0 or inner_tol <= 0:
        raise DomainError("tolerances must be positive")
    c = params.c
    seeds = seed_biases(params.q)
    support = seeds.copy()
    bracket = _Bracket()
    prev_value = None
    for rnd in range(1, max_rounds + 1):
        value, theta_r, weights = _solve_restricted(params, support)
        # lower bound: certified best response to the restricted equilibrium mixture
        live = weights > 0
        mixture = BiasDistribution(support[live], weights[live] / weights[live].sum())
        try:
            br, br_gap = best_response_theta(mixture, Strategy(params, theta_r), tol=inner_tol)
        except NonConvergenceError as exc:
            # the bound below subtracts the achieved gap, so it stays certified
            br, br_gap = exc.partial
        lam_live = channel_matrix(params, mixture.support)
        lower = (float(mixture.weights @ mi_rows(br.theta, lam_live, params.q)) - br_gap) / c
        if lower > bracket.lower:
            bracket.lower, bracket.lower_theta = lower, br.theta
            bracket.lower_support, bracket.lower_weights = mixture.support, mixture.weights
            bracket.inner_gap = br_gap
        # upper bound: worst-case bias against the restricted equilibrium attack
        p_new, worst = worst_case_p(Strategy(params, theta_r), grid_resolution, refine_tol, starts)
        if worst / c < bracket.upper:
            bracket.upper, bracket.upper_theta, bracket.upper_p = worst / c, theta_r, p_new
        bracket.improvement = math.inf if prev_value is None else (value - prev_value) / c
        prev_value = value
        bracket.rounds = rnd
        bracket.trace.append((rnd, bracket.upper, bracket.lower, bracket.gap))
        log.debug("round %d: restricted %.12g upper %.12g lower %.12g support %d",
                  rnd, value / c, bracket.upper, bracket.lower, len(support))

        certified = bracket.gap <= tol
        if stop_on == "gap" and certified:
            return bracket, True
        if stop_on == "improvement" and certified and bracket.improvement < tol:
            return bracket, True

        fresh = [pt for pt in _relabelings(p_new)
                 if np.abs(support - pt).max(axis=1).min() > 1e-12]
        if not fresh:
            if certified:
                return bracket, True
            log.debug("oracle returned a known bias; cannot expand support")
            return bracket, False
        support = np.vstack([support] + fresh)
        if len(support) > support_cap:
            n_seed = len(seeds)
            extra_w = np.append(weights[n_seed:], np.ones(len(fresh)))  # keep the new points
            # drop points the current equilibrium mixture (almost) ignores
            keep = np.concatenate([np.ones(n_seed, bool), extra_w > PRUNE_WEIGHT])
            support = support[keep]
            if len(support) > support_cap:
                raise SupportCapError(
                    f"bias support exceeded cap {support_cap} with gap {bracket.gap:.3g}",
                    partial=bracket,
                )
    return bracket, False


def _minimax_solution(params, bracket, converged):
    return GameSolution(
        value=bracket.upper,
        strategy=Strategy(params, bracket.upper_theta),
        bias=bracket.upper_p,
        upper=bracket.upper,
        lower=bracket.lower,
        certificate={
            "gap": bracket.gap,
            "inner_gap": bracket.inner_gap,
            "improvement": bracket.improvement,
            "iterations": bracket.rounds,
        },
        trace=bracket.trace,
        converged=converged,
    )


def _maximin_solution(params, bracket, converged):
    return GameSolution(
        value=bracket.lower,
        strategy=Strategy(params, bracket.lower_theta),
        bias=BiasDistribution(bracket.lower_support, bracket.lower_weights),
        upper=bracket.upper,
        lower=bracket.lower,
        certificate={
            "gap": bracket.gap,
            "inner_gap": bracket.inner_gap,
            "improvement": bracket.improvement,
            "iterations": bracket.rounds,
        },
        trace=bracket.trace,
        converged=converged,
    )


def solve_minimax(params: Params, tol: float = OUTER_TOL, inner_tol: float = INNER_TOL,
                  grid_resolution: int | None = None, refine_tol: float = 1e-9, starts: int = 4,
                  max_rounds: int = OUTER_MAX_ROUNDS, support_cap: int = SUPPORT_CAP) -> GameSolution:
    """``min_theta max_p I(theta, p) / c``, returned from the attacker's side.

    ``value`` is the upper bound ``max_p I(theta*, p)/c`` of the returned
    strategy; ``lower`` is the certified best-response value against the
    discovered bias mixture, and the loop runs until ``upper - lower <= tol``.

    Raises:
        NonConvergenceError: round cap reached; ``partial`` is the best
            :class:`GameSolution` so far.
    """
    try:
        bracket, ok = _double_oracle(params, tol, inner_tol, grid_resolution, refine_tol, starts,
                                     max_rounds, support_cap, stop_on="gap")
    except SupportCapError as exc:
        raise SupportCapError(str(exc), partial=_minimax_solution(params, exc.partial, False))
    sol = _minimax_solution(params, bracket, ok)
    if not ok:
        raise NonConvergenceError(f"minimax gap {bracket.gap:.3g} > tol {tol:.3g}", partial=sol)
    return sol


def solve_maximin(params: Params, tol: float = OUTER_TOL, inner_tol: float = INNER_TOL,
                  grid_resolution: int | None = None, refine_tol: float = 1e-9, starts: int = 4,
                  max_rounds: int = OUTER_MAX_ROUNDS, support_cap: int = SUPPORT_CAP) -> GameSolution:
    """``max_F min_theta E_F I(theta, p) / c``, returned from the watermarker's side.

    Double oracle over a finite bias support; stops when adding the newest
    worst-case bias raises the restricted value by less than ``tol`` (and the
    bracket is within ``tol``).  ``value`` is the certified lower bound of the
    returned :class:`BiasDistribution`.

    Raises:
        SupportCapError: support grew past ``support_cap``.
        NonConvergenceError: round cap reached.
    """
    try:
        bracket, ok = _double_oracle(params, tol, inner_tol, grid_resolution, refine_tol, starts,
                                     max_rounds, support_cap, stop_on="improvement")
    except SupportCapError as exc:
        raise SupportCapError(str(exc), partial=_maximin_solution(params, exc.partial, False))
    sol = _maximin_solution(params, bracket, ok)
    if not ok:
        raise NonConvergenceError(f"maximin gap {bracket.gap:.3g} > tol {tol:.3g}", partial=sol)
    return sol


def duality_gap(a: GameSolution, b: GameSolution) -> float:
    if a.params != b.params:
        raise DimensionError(f"solutions are for different games: {a.params} vs {b.params}")
    return abs(a.value - b.value)
