"""Coalition tallies and the multinomial collusion channel.

A coalition of ``c`` users receives, in one segment, a tally ``sigma`` of how
many of them got each of the ``q`` alphabet symbols.  Given the segment bias
``p`` the tally is multinomial.  Tallies are always stored in lexicographic
order; the row index of a tally in :func:`enumerate_tallies` is the canonical
index used by strategies, solvers and file formats.

Conventions used throughout the package: ``0**0 == 1`` and ``0*log(0) == 0``.
"""

from __future__ import annotations

import functools
import itertools
import math
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, DomainError, SizeError

DEFAULT_TALLY_CAP = 10**6
SIMPLEX_ATOL = 1e-12


@dataclass(frozen=True)
class Params:
    """Coalition size ``c`` and alphabet size ``q``."""

    c: int
    q: int
    cap: int = DEFAULT_TALLY_CAP

    def __post_init__(self):
        if int(self.c) != self.c or self.c < 1:
            raise DomainError(f"coalition size c must be a positive integer, got {self.c!r}")
        if int(self.q) != self.q or self.q < 2:
            raise DomainError(f"alphabet size q must be an integer >= 2, got {self.q!r}")
        object.__setattr__(self, "c", int(self.c))
        object.__setattr__(self, "q", int(self.q))
        n = self.n_tallies
        if n > self.cap:
            raise SizeError(
                f"c={self.c}, q={self.q} has {n} tallies, above the cap of {self.cap}"
            )

    @property
    def n_tallies(self) -> int:
        return math.comb(self.c + self.q - 1, self.q - 1)

    def __eq__(self, other):
        # the cap is a resource limit, not part of the problem identity
        if not isinstance(other, Params):
            return NotImplemented
        return (self.c, self.q) == (other.c, other.q)

    def __hash__(self):
        return hash((self.c, self.q))


@functools.lru_cache(maxsize=64)
def _tallies(c: int, q: int) -> np.ndarray:
    # stars and bars: bar positions in lexicographic order give compositions
    # in lexicographic order of (sigma_0, sigma_1, ...)
    rows = []
    for bars in itertools.combinations(range(c + q - 1), q - 1):
        prev = -1
        row = []
        for b in bars:
            row.append(b - prev - 1)
            prev = b
        row.append(c + q - 2 - prev)
        rows.append(row)
    out = np.array(rows, dtype=np.int64).reshape(-1, q)
    out.setflags(write=False)
    return out


def enumerate_tallies(params: Params) -> np.ndarray:
    """All tallies of ``c`` colluders over ``q`` symbols, lexicographically ordered.

    Returns a read-only ``(n_tallies, q)`` integer array.
    """
    return _tallies(params.c, params.q)


@functools.lru_cache(maxsize=64)
def _tally_keys(c: int, q: int) -> np.ndarray:
    weights = (c + 1) ** np.arange(q - 1, -1, -1, dtype=np.int64)
    keys = _tallies(c, q) @ weights
    keys.setflags(write=False)
    return keys


def tally_index(params: Params, sigma) -> np.ndarray | int:
    """Canonical index of one tally or of an array of tallies (last axis = q)."""
    sigma = np.asarray(sigma, dtype=np.int64)
    if sigma.shape[-1] != params.q:
        raise DimensionError(f"tally length {sigma.shape[-1]} != q={params.q}")
    if np.any(sigma < 0) or np.any(sigma.sum(axis=-1) != params.c):
        raise DomainError(f"not a tally of c={params.c}: {sigma.tolist()}")
    weights = (params.c + 1) ** np.arange(params.q - 1, -1, -1, dtype=np.int64)
    idx = np.searchsorted(_tally_keys(params.c, params.q), sigma @ weights)
    return int(idx) if idx.ndim == 0 else idx


@functools.lru_cache(maxsize=16)
def _log_factorials(n: int) -> np.ndarray:
    table = np.zeros(n + 1)
    table[1:] = np.cumsum(np.log(np.arange(1, n + 1)))
    table.setflags(write=False)
    return table


def check_bias(p, q: int | None = None, atol: float = SIMPLEX_ATOL) -> np.ndarray:
    """Validate a bias vector (or a stack of them) and return it as a float array."""
    p = np.asarray(p, dtype=float)
    if p.ndim == 0 or p.shape[-1] < 2:
        raise DimensionError("a bias vector needs at least two components")
    if q is not None and p.shape[-1] != q:
        raise DimensionError(f"bias has {p.shape[-1]} components, expected q={q}")
    if not np.all(np.isfinite(p)) or np.any(p < 0):
        raise DomainError(f"bias components must be finite and nonnegative: {p}")
    if np.any(np.abs(p.sum(axis=-1) - 1.0) > atol):
        raise DomainError(f"bias components must sum to 1 (got {p.sum(axis=-1)})")
    return p


def _log_powers(p: np.ndarray, tallies: np.ndarray) -> np.ndarray:
    # sum_a sigma_a log p_a with 0**0 = 1; -inf where p_a = 0 < sigma_a
    with np.errstate(divide="ignore", invalid="ignore"):
        logp = np.log(p)
        terms = np.where(tallies > 0, tallies * logp[..., None, :], 0.0)
    return terms.sum(axis=-1)


def channel_matrix(params: Params, p) -> np.ndarray:
    """Tally probabilities for one bias (shape ``(n,)``) or a stack (``(k, n)``)."""
    p = check_bias(p, params.q)
    tallies = enumerate_tallies(params)
    lf = _log_factorials(params.c)
    log_coef = lf[params.c] - lf[tallies].sum(axis=1)
    return np.exp(log_coef + _log_powers(p, tallies))


def multinomial_prob(p, sigma) -> float:
    """Probability of tally ``sigma`` when each colluder draws from ``p``."""
    p = check_bias(p)
    sigma = np.asarray(sigma, dtype=np.int64)
    if sigma.shape != p.shape:
        raise DimensionError(f"tally shape {sigma.shape} != bias shape {p.shape}")
    if np.any(sigma < 0):
        raise DomainError(f"tally entries must be nonnegative: {sigma.tolist()}")
    c = int(sigma.sum())
    lf = _log_factorials(c)
    log_coef = lf[c] - lf[sigma].sum()
    return float(np.exp(log_coef + _log_powers(p, sigma[None, :])[0]))


def covariance(p) -> np.ndarray:
    """Per-colluder covariance of the tally: ``diag(p) - p p^T``."""
    p = check_bias(p)
    return np.diag(p) - np.outer(p, p)
