"""Finite-c collusion strategies and Marking Assumption checks."""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass

import numpy as np

from .channel import Params, enumerate_tallies, tally_index
from .errors import DimensionError

STRATEGY_ATOL = 1e-12


@dataclass(frozen=True, eq=False)
class Strategy:
    """Per-tally output distributions ``theta[i, y] = P[Y=y | tally i]``.

    Row ``i`` refers to the ``i``-th tally of :func:`enumerate_tallies`.
    The constructor only checks shapes; use :func:`validate_strategy` for the
    probability and Marking constraints.
    """

    params: Params
    theta: np.ndarray

    def __post_init__(self):
        theta = np.array(self.theta, dtype=float)
        shape = (self.params.n_tallies, self.params.q)
        if theta.shape != shape:
            raise DimensionError(f"theta has shape {theta.shape}, expected {shape}")
        theta.setflags(write=False)
        object.__setattr__(self, "theta", theta)

    @property
    def tallies(self) -> np.ndarray:
        return enumerate_tallies(self.params)

    @property
    def allowed(self) -> np.ndarray:
        """Boolean mask of the entries the Marking Assumption leaves free to be nonzero."""
        return self.tallies > 0

    def to_dict(self) -> dict:
        return {
            "c": self.params.c,
            "q": self.params.q,
            "theta": [
                {"sigma": sigma.tolist(), "dist": row.tolist()}
                for sigma, row in zip(self.tallies, self.theta)
            ],
        }

    @classmethod
    def from_dict(cls, data: dict, cap: int | None = None) -> "Strategy":
        params = Params(data["c"], data["q"]) if cap is None else Params(data["c"], data["q"], cap)
        entries = data["theta"]
        tallies = enumerate_tallies(params)
        if len(entries) != len(tallies):
            raise DimensionError(f"expected {len(tallies)} tallies, file has {len(entries)}")
        for i, (entry, sigma) in enumerate(zip(entries, tallies)):
            if list(entry["sigma"]) != sigma.tolist():
                raise DimensionError(
                    f"tally {i} is {entry['sigma']}, canonical order requires {sigma.tolist()}"
                )
        return cls(params, np.array([entry["dist"] for entry in entries], dtype=float))

    def to_json(self) -> str:
        # repr-based float output round-trips every double exactly
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "Strategy":
        return cls.from_dict(json.loads(text))

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_json())
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "Strategy":
        with open(path) as fh:
            return cls.from_json(fh.read())


@dataclass(frozen=True)
class Violation:
    kind: str  # "normalization", "range", "marking-zero" or "marking-one"
    tally_index: int
    sigma: tuple
    symbol: int | None
    magnitude: float


def validate_strategy(s: Strategy, atol: float = STRATEGY_ATOL) -> list[Violation]:
    """Every violated strategy constraint; an empty list means ``s`` is valid."""
    report = []
    c = s.params.c
    for i, (sigma, row) in enumerate(zip(s.tallies, s.theta)):
        key = tuple(int(v) for v in sigma)
        total = row.sum()
        if abs(total - 1.0) > atol:
            report.append(Violation("normalization", i, key, None, float(total - 1.0)))
        for y, value in enumerate(row):
            if not (-atol <= value <= 1.0 + atol):
                report.append(Violation("range", i, key, y, float(value)))
            if sigma[y] == 0 and abs(value) > atol:
                report.append(Violation("marking-zero", i, key, y, float(value)))
            if sigma[y] == c and abs(value - 1.0) > atol:
                report.append(Violation("marking-one", i, key, y, float(1.0 - value)))
    return report


def interleaving_strategy(params: Params) -> Strategy:
    """Output the symbol of a uniformly chosen colluder: ``theta[y|sigma] = sigma_y / c``."""
    return Strategy(params, enumerate_tallies(params) / params.c)


def random_strategy(params: Params, seed=None) -> Strategy:
    """Flat-Dirichlet draw on each tally's Marking-allowed sub-simplex."""
    rng = np.random.default_rng(seed)
    tallies = enumerate_tallies(params)
    draws = np.where(tallies > 0, rng.standard_exponential(tallies.shape), 0.0)
    return Strategy(params, draws / draws.sum(axis=1, keepdims=True))


def forced_strategy(params: Params) -> Strategy:
    """The single feasible strategy for ``c == 1`` (one-hot tallies)."""
    if params.c != 1:
        raise DimensionError("only c=1 has a unique feasible strategy")
    return interleaving_strategy(params)


def symmetrize(s: Strategy) -> Strategy:
    """Average ``s`` over all simultaneous relabellings of the alphabet."""
    q = s.params.q
    acc = np.zeros_like(s.theta)
    perms = list(itertools.permutations(range(q)))
    for perm in perms:
        perm = np.array(perm)
        # relabel symbol a -> perm[a] in both the tally and the output
        moved = np.empty_like(s.tallies)
        moved[:, perm] = s.tallies
        rows = tally_index(s.params, moved)
        out = np.empty_like(s.theta)
        out[:, perm] = s.theta
        acc[rows] += out
    return Strategy(s.params, acc / len(perms))
