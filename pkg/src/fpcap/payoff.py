"""Mutual-information payoff for finite coalitions and its large-c coefficient.

Information is measured in q-ary symbols (base-q logarithms), so one segment
carries at most one unit.  The asymptotic coefficient ``T`` satisfies
``I(Y; Sigma | p) = T(p) / (2 c ln q) + O(c**-1.5)`` for smooth attacks.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass

import numpy as np

from .channel import channel_matrix, check_bias, covariance
from .errors import DimensionError, DomainError, SingularityError
from .gammamap import GammaMap
from .strategy import Strategy

UNIT_TOL = 1e-9
RADIAL_TOL = 1e-6
GRADIENT_FLOOR = -1e12


class NonRadialWarning(UserWarning):
    """A map's derivative has a radial component; the full payoff form was used."""


@dataclass(frozen=True)
class PayoffReport:
    value: float
    tau: np.ndarray
    breakdown: np.ndarray | None = None


def _check_dims(s: Strategy, p) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    if p.shape[-1] != s.params.q:
        raise DimensionError(f"bias has {p.shape[-1]} components, strategy has q={s.params.q}")
    return check_bias(p)


def mi_rows(theta: np.ndarray, lam: np.ndarray, q: int) -> np.ndarray:
    """Mutual information (q-ary units) for each row of a channel matrix stack.

    ``theta`` is ``(n, q)``; ``lam`` is ``(k, n)`` (or ``(n,)``).  No validation.
    """
    lam = np.atleast_2d(lam)
    joint = lam[:, :, None] * theta[None, :, :]
    tau = joint.sum(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.log(theta[None, :, :]) - np.log(tau[:, None, :])
        terms = np.where(joint > 0, joint * ratio, 0.0)
    return terms.sum(axis=(1, 2)) / math.log(q)


def marginal_tau(s: Strategy, p) -> np.ndarray:
    """Distribution of the forged symbol given the bias."""
    p = _check_dims(s, p)
    return channel_matrix(s.params, p) @ s.theta


def mutual_information(s: Strategy, p) -> PayoffReport:
    """``I(Y; Sigma | P=p)`` by exact summation over all tallies."""
    p = _check_dims(s, p)
    if p.ndim != 1:
        raise DimensionError("mutual_information takes a single bias vector")
    lam = channel_matrix(s.params, p)
    joint = lam[:, None] * s.theta
    tau = joint.sum(axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.log(s.theta) - np.log(tau)[None, :]
        terms = np.where(joint > 0, joint * ratio, 0.0) / math.log(s.params.q)
    per_tally = terms.sum(axis=1)
    return PayoffReport(float(per_tally.sum()), tau, per_tally)


def gradient_rows(theta: np.ndarray, lam: np.ndarray, weights: np.ndarray, q: int,
                  floor: float = GRADIENT_FLOOR) -> np.ndarray:
    """Gradient of ``sum_i weights[i] * I(theta, p_i)`` with respect to ``theta``."""
    lam = np.atleast_2d(lam)
    tau = lam @ theta
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.log(theta[None, :, :]) - np.log(tau[:, None, :])
        ratio = np.where(np.isnan(ratio), 0.0, ratio)  # 0/0: theta and tau both vanish
        scaled = np.maximum(lam[:, :, None] * ratio / math.log(q), floor)
    per_point = np.where(lam[:, :, None] > 0, scaled, 0.0)
    return np.maximum(np.einsum("i,isy->sy", weights, per_point), floor)


def payoff_gradient_theta(s: Strategy, p, floor: float = GRADIENT_FLOOR) -> np.ndarray:
    """``dI/dtheta[sigma, y] = Lambda_sigma * log_q(theta[sigma, y] / tau_y)``.

    Normalization is not enforced (projection is the solver's job).  Entries
    whose logarithm diverges are capped at ``floor``.
    """
    p = _check_dims(s, p)
    return gradient_rows(s.theta, channel_matrix(s.params, p), np.ones(1), s.params.q, floor)


def _terms_with_limit(g: GammaMap, gval, numer, what: str):
    zero = gval <= 0
    if np.any(zero):
        if not g.boundary_terms_vanish:
            ys = sorted(set(np.nonzero(zero)[-1].tolist()))
            raise SingularityError(f"{what}: g_y = 0 for y in {ys} and the map has no limit convention")
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(zero, 0.0, numer / np.where(zero, 1.0, gval))


def asymptotic_payoff_p(g: GammaMap, p):
    """Large-c payoff coefficient in bias coordinates.

    ``T(p) = sum_y (1/g_y) [sum_a p_a (dg_y/dp_a)**2 - (sum_a p_a dg_y/dp_a)**2]``.
    Terms with ``g_y == 0`` are dropped when the map declares that they vanish
    (``boundary_terms_vanish``); otherwise they raise :class:`SingularityError`.
    Accepts one bias or a stack; returns a float or an array.
    """
    p = check_bias(p, g.q)
    jac = g.jacobian_p(p)
    gval = g.g(p)
    first = np.einsum("...a,...ya->...y", p, jac * jac)
    mean = np.einsum("...a,...ya->...y", p, jac)
    total = _terms_with_limit(g, gval, first - mean * mean, "asymptotic_payoff_p").sum(axis=-1)
    return float(total) if total.ndim == 0 else total


def _check_unit(u, q: int) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    if u.shape[-1] != q:
        raise DimensionError(f"u has {u.shape[-1]} components, expected q={q}")
    if np.any(np.abs(np.linalg.norm(u, axis=-1) - 1.0) > UNIT_TOL):
        raise DomainError("u must have unit Euclidean norm (within 1e-9)")
    if np.any(u < 0):
        raise DomainError("u must be componentwise nonnegative")
    # accepted points are projected exactly onto the sphere
    return u / np.linalg.norm(u, axis=-1, keepdims=True)


def asymptotic_payoff_u(g: GammaMap, u, radial_tol: float = RADIAL_TOL):
    """Large-c payoff coefficient on the unit sphere: ``sum_y |grad gamma_y|**2``.

    When a map's derivative is not tangential (``|u . grad gamma_y| > radial_tol``)
    the radial part is subtracted, ``sum_y |grad gamma_y|**2 - (u . grad gamma_y)**2``,
    and a :class:`NonRadialWarning` is issued.
    """
    u = _check_unit(u, g.q)
    jac = g.jacobian_u(u)
    total = (jac * jac).sum(axis=(-2, -1))
    radial = np.einsum("...ya,...a->...y", jac, u)
    if np.any(np.abs(radial) > radial_tol):
        warnings.warn("map is not radially extended; subtracting the radial part",
                      NonRadialWarning, stacklevel=2)
        total = total - (radial * radial).sum(axis=-1)
    return float(total) if total.ndim == 0 else total


def fisher_information_matrix(g: GammaMap, p) -> np.ndarray:
    """``F[a, b] = sum_y g_y (d ln g_y / dp_a)(d ln g_y / dp_b)`` at an interior bias."""
    p = check_bias(p, g.q)
    gval = g.g(p)
    if np.any(gval <= 0):
        ys = sorted(set(np.nonzero(gval <= 0)[-1].tolist()))
        raise SingularityError(f"fisher_information_matrix: g_y = 0 for y in {ys}")
    jac = g.jacobian_p(p)
    return np.einsum("...ya,...yb->...ab", jac / gval[..., :, None], jac)


def fisher_trace(g: GammaMap, p) -> float:
    """``Tr(K F)``; equals :func:`asymptotic_payoff_p` for any extension of ``g``."""
    return float(np.trace(covariance(p) @ fisher_information_matrix(g, p)))


def jacobian_spectrum(g: GammaMap, u) -> np.ndarray:
    """Eigenvalues of ``J^T J`` in descending order, ``J[y, a] = d gamma_y / du_a``."""
    u = _check_unit(u, g.q)
    jac = g.jacobian_u(u)
    gram = np.swapaxes(jac, -1, -2) @ jac
    return np.linalg.eigvalsh(gram)[..., ::-1]


def information_in_bits(value: float, q: int) -> float:
    return value * math.log2(q)


def payoff_sweep(s: Strategy, points, g: GammaMap | None = None) -> list[dict]:
    """Payoff rows for a list of biases: exact ``I``, ``T`` and ``|2c ln q I - T|``."""
    rows = []
    c, q = s.params.c, s.params.q
    for p in points:
        p = _check_dims(s, p)
        value = mutual_information(s, p).value
        if g is None:
            t_val = float("nan")
        else:
            t_val = asymptotic_payoff_p(g, p)
        rows.append({
            "q": q,
            "c": c,
            "p": p,
            "I_qary": value,
            "T": t_val,
            "gap": abs(2 * c * math.log(q) * value - t_val),
        })
    return rows


def fmt(x: float) -> str:
    return f"{x:.17g}"


def write_payoff_csv(rows: list[dict], fh) -> None:
    if not rows:
        return
    q = rows[0]["q"]
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(["q", "c"] + [f"p_{i + 1}" for i in range(q)] + ["I_qary", "T", "gap"])
    for row in rows:
        writer.writerow([row["q"], row["c"]] + [fmt(v) for v in row["p"]]
                        + [fmt(row["I_qary"]), fmt(row["T"]), fmt(row["gap"])])
