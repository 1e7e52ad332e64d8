"""Monte-Carlo layer: code generation, collusion and empirical information."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .channel import Params, check_bias, tally_index
from .errors import DimensionError, DomainError, SizeError
from .payoff import mutual_information
from .solver import BiasDistribution
from .strategy import Strategy

BIAS_KINDS = ("uniform-simplex", "dirichlet", "arcsine", "finite-support")
DEFAULT_KAPPA = 0.5
MAX_CELLS = 10**8


@dataclass(frozen=True)
class BiasFamily:
    """Distribution the watermarker draws per-segment biases from."""

    kind: str
    q: int
    kappa: float = DEFAULT_KAPPA
    distribution: BiasDistribution | None = None

    def __post_init__(self):
        if self.kind not in BIAS_KINDS:
            raise DomainError(f"unknown bias family {self.kind!r}; choose from {BIAS_KINDS}")
        if self.q < 2:
            raise DomainError("q must be >= 2")
        if self.kind == "dirichlet" and not self.kappa > 0:
            raise DomainError(f"Dirichlet parameter must be positive, got {self.kappa}")
        if self.kind == "arcsine" and self.q != 2:
            raise DomainError("the arcsine family is only defined for q = 2")
        if self.kind == "finite-support":
            if self.distribution is None:
                raise DomainError("finite-support family needs a distribution")
            if self.distribution.support.shape[1] != self.q:
                raise DimensionError("distribution support does not match q")

    @classmethod
    def point(cls, p) -> "BiasFamily":
        p = check_bias(p)
        return cls("finite-support", len(p), distribution=BiasDistribution.point(p))


def sample_biases(f: BiasFamily, size: int, rng=None) -> np.ndarray:
    """``size`` independent draws from ``f``, shape ``(size, q)``."""
    rng = np.random.default_rng(rng)
    if f.kind == "uniform-simplex":
        return rng.dirichlet(np.ones(f.q), size)
    if f.kind == "dirichlet":
        return rng.dirichlet(np.full(f.q, f.kappa), size)
    if f.kind == "arcsine":
        x = rng.beta(0.5, 0.5, size)
        return np.stack([x, 1.0 - x], axis=1)
    dist = f.distribution
    idx = rng.choice(len(dist.weights), size=size, p=dist.weights)
    return dist.support[idx].copy()


def sample_bias(f: BiasFamily, rng=None) -> np.ndarray:
    return sample_biases(f, 1, rng)[0]


@dataclass(frozen=True, eq=False)
class CodeMatrix:
    """``n x m`` matrix of symbols plus the bias used for every column."""

    symbols: np.ndarray
    biases: np.ndarray
    q: int

    @property
    def n(self) -> int:
        return self.symbols.shape[0]

    @property
    def m(self) -> int:
        return self.symbols.shape[1]

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(f"{self.q} 0 {self.n} {self.m}\n")
            for row in self.biases:
                fh.write(" ".join(f"{v:.17g}" for v in row) + "\n")
            for row in self.symbols:
                fh.write(" ".join(str(int(v)) for v in row) + "\n")

    @classmethod
    def load(cls, path) -> "CodeMatrix":
        with open(path) as fh:
            q, _, n, m = (int(v) for v in fh.readline().split())
            biases = np.array([[float(v) for v in fh.readline().split()] for _ in range(m)])
            symbols = np.array([[int(v) for v in fh.readline().split()] for _ in range(n)],
                               dtype=np.int64)
        if biases.shape != (m, q) or symbols.shape != (n, m):
            raise DimensionError("code file dimensions do not match its header")
        return cls(symbols.reshape(n, m), biases, q)


def _draw_categorical(probs: np.ndarray, uniforms: np.ndarray) -> np.ndarray:
    # inverse CDF that can never land on a zero-probability symbol
    cdf = np.cumsum(probs, axis=-1)
    cdf /= cdf[..., -1:]
    last = probs.shape[-1] - 1 - np.argmax((probs > 0)[..., ::-1], axis=-1)
    cdf = np.where(np.arange(probs.shape[-1]) >= last[..., None], 1.0, cdf)
    return (uniforms[..., None] >= cdf).sum(axis=-1)


def generate_code(n: int, m: int, f: BiasFamily, rng=None, max_cells: int = MAX_CELLS) -> CodeMatrix:
    """Two-step code generation: one bias per column, then i.i.d. symbols per user."""
    if n < 1 or m < 1:
        raise DomainError("n and m must be positive")
    if n * m * f.q > max_cells:
        raise SizeError(f"{n} x {m} code over q={f.q} exceeds the cell cap {max_cells}")
    rng = np.random.default_rng(rng)
    biases = sample_biases(f, m, rng)
    symbols = _draw_categorical(np.broadcast_to(biases, (n, m, f.q)), rng.random((n, m)))
    return CodeMatrix(symbols.astype(np.int64), biases, f.q)


def _column_tallies(code: CodeMatrix, coalition) -> np.ndarray:
    rows = code.symbols[np.asarray(coalition)]
    return np.stack([(rows == a).sum(axis=0) for a in range(code.q)], axis=1)


def collude(code: CodeMatrix, coalition, s: Strategy, rng=None) -> np.ndarray:
    """Forge one symbol per segment from the coalition's tallies using attack ``s``."""
    coalition = [int(i) for i in coalition]
    if len(coalition) != s.params.c:
        raise DimensionError(f"coalition has {len(coalition)} members, strategy expects c={s.params.c}")
    if len(set(coalition)) != len(coalition):
        raise DomainError("coalition members must be distinct")
    if min(coalition) < 0 or max(coalition) >= code.n:
        raise DomainError("coalition index out of range")
    if s.params.q != code.q:
        raise DimensionError("strategy and code use different alphabets")
    rng = np.random.default_rng(rng)
    rows = tally_index(s.params, _column_tallies(code, coalition))
    return _draw_categorical(s.theta[rows], rng.random(code.m)).astype(np.int64)


def verify_marking(code: CodeMatrix, coalition, y) -> tuple[bool, int | None]:
    """``(True, None)`` when every forged symbol was seen by some colluder in its segment,
    else ``(False, first_bad_segment)``."""
    y = np.asarray(y)
    if y.shape != (code.m,):
        raise DimensionError(f"forged word has shape {y.shape}, expected ({code.m},)")
    seen = (code.symbols[np.asarray(coalition)] == y[None, :]).any(axis=0)
    if seen.all():
        return True, None
    return False, int(np.argmin(seen))


def sample_tallies(params: Params, p, size: int, rng=None) -> np.ndarray:
    rng = np.random.default_rng(rng)
    return rng.multinomial(params.c, check_bias(p, params.q), size=size)


def _entropy_mm(counts: np.ndarray, axis) -> np.ndarray:
    # Miller-Madow corrected plug-in entropy (nats) along the given axes
    total = counts.sum(axis=axis)
    with np.errstate(divide="ignore", invalid="ignore"):
        frac = counts / np.expand_dims(total, axis)
        plug = -np.where(counts > 0, frac * np.log(frac), 0.0).sum(axis=axis)
    bins = (counts > 0).sum(axis=axis)
    return plug + (bins - 1) / (2.0 * total)


def _mi_from_tables(tables: np.ndarray, q: int) -> np.ndarray:
    # tables: (..., n_tallies, q) joint counts
    h_joint = _entropy_mm(tables, axis=(-2, -1))
    h_sigma = _entropy_mm(tables.sum(axis=-1), axis=-1)
    h_y = _entropy_mm(tables.sum(axis=-2), axis=-1)
    return (h_sigma + h_y - h_joint) / math.log(q)


def empirical_mutual_information(s: Strategy, p, samples: int, rng=None, bootstrap: int = 200):
    """Plug-in estimate of ``I(Y; Sigma | p)`` with Miller-Madow correction.

    The standard error is the spread over ``bootstrap`` nonparametric resamples.

    Returns:
        ``(estimate, stderr)`` in q-ary symbols.
    """
    if samples < 1000:
        raise DomainError("need at least 1000 samples")
    rng = np.random.default_rng(rng)
    params = s.params
    tallies = sample_tallies(params, p, samples, rng)
    rows = tally_index(params, tallies)
    ys = _draw_categorical(s.theta[rows], rng.random(samples))
    table = np.zeros((params.n_tallies, params.q))
    np.add.at(table, (rows, ys), 1.0)
    estimate = float(_mi_from_tables(table, params.q))
    flat = table.ravel() / samples
    boot = rng.multinomial(samples, flat, size=bootstrap).reshape((bootstrap,) + table.shape)
    stderr = float(np.std(_mi_from_tables(boot.astype(float), params.q), ddof=1))
    return estimate, stderr


@dataclass(frozen=True)
class SimulationResult:
    samples: int
    estimate: float
    stderr: float
    exact: float

    @property
    def z_score(self) -> float:
        diff = self.estimate - self.exact
        if self.stderr == 0:
            return 0.0 if diff == 0 else math.copysign(math.inf, diff)
        return diff / self.stderr


def simulate_information(s: Strategy, p, samples: int, rng=None, bootstrap: int = 200) -> SimulationResult:
    est, se = empirical_mutual_information(s, p, samples, rng, bootstrap)
    return SimulationResult(samples, est, se, mutual_information(s, p).value)


def write_simulation_csv(results: list[SimulationResult], fh) -> None:
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(["samples", "estimate", "stderr", "exact", "z_score"])
    for r in results:
        writer.writerow([r.samples, f"{r.estimate:.17g}", f"{r.stderr:.17g}",
                         f"{r.exact:.17g}", f"{r.z_score:.17g}"])
