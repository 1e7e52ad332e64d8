"""Continuum attack maps in bias coordinates ``p`` and root coordinates ``u``.

A continuum attack assigns an output distribution ``g(p)`` to every bias on
the simplex.  With ``p = u**2`` and ``g = gamma**2`` the simplex becomes the
nonnegative orthant of the unit sphere, and ``gamma`` maps that orthant into
itself.  Off the sphere, ``gamma`` is extended radially (it depends only on
``u / |u|``), so ``u . grad gamma_y == 0``.  The matching extension in
``p``-coordinates is ``g(p) = g(p / sum(p))``.

Every method accepts a single point (shape ``(q,)``) or a stack of points
(shape ``(..., q)``).  Jacobians are returned with shape ``(..., q, q)`` and
index order ``[y, alpha]`` = d(output y)/d(input alpha).
"""

from __future__ import annotations

import numpy as np

from .channel import Params, tally_index
from .errors import DomainError, UnsupportedError
from .strategy import Strategy

DEFAULT_STEP = 1e-5


def _central_jacobian(f, x: np.ndarray, q: int, h: float) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    jac = np.empty(x.shape + (q,))
    for a in range(q):
        e = np.zeros(q)
        e[a] = h
        jac[..., :, a] = (f(x + e) - f(x - e)) / (2 * h)
    return jac


class GammaMap:
    """Base class for continuum attacks.

    Subclasses override either :meth:`gamma` (root-coordinate maps) or
    :meth:`g` (bias-coordinate maps); the other follows from ``g = gamma**2``.
    Jacobians default to central differences with step ``step``.

    Attributes:
        q: alphabet size.
        analytic: True when Jacobians are exact rather than finite differences.
        boundary_terms_vanish: asserts that ``g_y`` and its gradient term vanish
            together where ``g_y == 0``; lets the asymptotic payoff drop such
            terms instead of raising.
        approximate: True for maps that only interpolate a finite strategy.
    """

    analytic = False
    boundary_terms_vanish = False
    approximate = False

    def __init__(self, q: int, step: float = DEFAULT_STEP):
        if q < 2:
            raise DomainError(f"q must be >= 2, got {q}")
        self.q = q
        self.step = step

    def gamma(self, u):
        u = np.asarray(u, dtype=float)
        return np.sqrt(np.maximum(self.g(u * u), 0.0))

    def g(self, p):
        p = np.asarray(p, dtype=float)
        return self.gamma(np.sqrt(np.maximum(p, 0.0))) ** 2

    def jacobian_u(self, u):
        return _central_jacobian(self.gamma, u, self.q, self.step)

    def jacobian_p(self, p):
        return _central_jacobian(self.g, p, self.q, self.step)

    def radial_residual(self, u) -> np.ndarray:
        """``u . grad gamma_y`` for every output ``y``."""
        return np.einsum("...ya,...a->...y", self.jacobian_u(u), np.asarray(u, dtype=float))


class InterleavingMap(GammaMap):
    """The interleaving attack: ``gamma(u) = u/|u|`` and ``g(p) = p``.

    The bias-coordinate form keeps the linear extension ``g_y(p) = p_y``
    (the tally fraction, extended verbatim); the asymptotic payoff does not
    depend on the extension.
    """

    analytic = True
    boundary_terms_vanish = True

    def gamma(self, u):
        u = np.asarray(u, dtype=float)
        norm = np.linalg.norm(u, axis=-1, keepdims=True)
        if np.any(norm == 0):
            raise DomainError("the interleaving map is undefined at u = 0")
        return u / norm

    def jacobian_u(self, u):
        u = np.asarray(u, dtype=float)
        norm = np.linalg.norm(u, axis=-1)[..., None, None]
        if np.any(norm == 0):
            raise DomainError("the interleaving map is undefined at u = 0")
        eye = np.eye(self.q)
        return eye / norm - u[..., :, None] * u[..., None, :] / norm**3

    def g(self, p):
        return np.asarray(p, dtype=float).copy()

    def jacobian_p(self, p):
        p = np.asarray(p, dtype=float)
        return np.broadcast_to(np.eye(self.q), p.shape + (self.q,)).copy()


def interleaving_gamma(q: int) -> InterleavingMap:
    return InterleavingMap(q)


class PerturbedInterleavingMap(GammaMap):
    """Smooth Marking-respecting deformation of the interleaving attack.

    With ``v = u/|u|``, the unnormalized output is
    ``w_a = v_a * (1 + eps * sum_b A[a, b] v_b**2)`` and ``gamma = w/|w|``.
    The factor ``v_a`` keeps ``gamma_a = 0`` on the face ``u_a = 0``; for
    ``|A| <= 1`` and ``eps < 1`` all outputs stay nonnegative.
    """

    analytic = True
    boundary_terms_vanish = True

    def __init__(self, coeffs, eps: float):
        coeffs = np.asarray(coeffs, dtype=float)
        q = coeffs.shape[0]
        if coeffs.shape != (q, q):
            raise DomainError("coefficient matrix must be square")
        if not 0 <= eps * np.abs(coeffs).max() < 1:
            raise DomainError("perturbation too large to keep the map nonnegative")
        super().__init__(q)
        self.coeffs = coeffs
        self.eps = float(eps)

    def _parts(self, u):
        u = np.asarray(u, dtype=float)
        norm = np.linalg.norm(u, axis=-1, keepdims=True)
        if np.any(norm == 0):
            raise DomainError("the map is undefined at u = 0")
        v = u / norm
        factor = 1.0 + self.eps * np.einsum("ab,...b->...a", self.coeffs, v * v)
        w = v * factor
        wnorm = np.linalg.norm(w, axis=-1, keepdims=True)
        return u, norm, v, factor, w, wnorm

    def gamma(self, u):
        *_, w, wnorm = self._parts(u)
        return w / wnorm

    def jacobian_u(self, u):
        u, norm, v, factor, w, wnorm = self._parts(u)
        q = self.q
        eye = np.eye(q)
        gam = w / wnorm
        # dw/dv, then chain through the two normalizations
        dw_dv = eye * factor[..., :, None] + 2 * self.eps * v[..., :, None] * self.coeffs * v[..., None, :]
        dgam_dw = (eye - gam[..., :, None] * gam[..., None, :]) / wnorm[..., None]
        dv_du = (eye - v[..., :, None] * v[..., None, :]) / norm[..., None]
        return dgam_dw @ dw_dv @ dv_du

    def jacobian_p(self, p):
        # g = gamma(sqrt p)**2  =>  dg_y/dp_a = gamma_y J_ya / u_a  (interior only)
        p = np.asarray(p, dtype=float)
        u = np.sqrt(p)
        jac = self.jacobian_u(u)
        with np.errstate(divide="ignore", invalid="ignore"):
            return self.gamma(u)[..., :, None] * jac / u[..., None, :]


def random_marking_map(q: int, rng=None, magnitude: float = 0.1) -> PerturbedInterleavingMap:
    """Random member of the perturbed-interleaving family, coefficients in [-1, 1]."""
    rng = np.random.default_rng(rng)
    return PerturbedInterleavingMap(rng.uniform(-1.0, 1.0, size=(q, q)), magnitude)


class InterpolatedStrategyMap(GammaMap):
    """Piecewise-linear continuum proxy of a finite strategy.

    Values at lattice points ``sigma/c`` are exactly ``theta[.|sigma]``;
    in between, the map interpolates over the Freudenthal triangulation of the
    scaled simplex (written in cumulative coordinates, where the simplex is a
    union of whole Kuhn cells).  Derivatives are central differences, so
    results near cell boundaries are only diagnostic.
    """

    approximate = True

    def __init__(self, strategy: Strategy, step: float = DEFAULT_STEP):
        super().__init__(strategy.params.q, step)
        self.strategy = strategy
        self.params: Params = strategy.params

    def _interp_one(self, p: np.ndarray) -> np.ndarray:
        c, q = self.params.c, self.q
        p = np.clip(p, 0.0, None)
        total = p.sum()
        if total <= 0:
            raise DomainError("cannot evaluate at p = 0")
        cum = np.cumsum(c * p / total)[:-1]
        snapped = np.round(cum)
        cum = np.where(np.abs(cum - snapped) < 1e-12, snapped, cum)
        cum = np.clip(cum, 0.0, c)
        base = np.floor(cum)
        frac = cum - base
        # larger fractional part first; on ties the later coordinate moves first
        order = sorted(range(q - 1), key=lambda k: (-frac[k], -k))
        fsorted = np.concatenate(([1.0], frac[order], [0.0]))
        out = np.zeros(q)
        vertex = base.copy()
        for step in range(q):
            if step > 0:
                vertex[order[step - 1]] += 1
            weight = fsorted[step] - fsorted[step + 1]
            if weight <= 0:
                continue
            edges = np.concatenate(([0.0], vertex, [c]))
            sigma = np.diff(edges).astype(np.int64)
            out += weight * self.strategy.theta[tally_index(self.params, sigma)]
        return out

    def g(self, p):
        p = np.asarray(p, dtype=float)
        flat = p.reshape(-1, self.q)
        out = np.array([self._interp_one(row) for row in flat])
        return out.reshape(p.shape)


def strategy_to_gamma(s: Strategy, step: float = DEFAULT_STEP) -> InterpolatedStrategyMap:
    """Continuum proxy of a finite strategy, for diagnostics at ``c >= 4``."""
    if s.params.c < 4:
        raise UnsupportedError(f"interpolation needs c >= 4, got c={s.params.c}")
    return InterpolatedStrategyMap(s, step)


__all__ = [
    "GammaMap",
    "InterleavingMap",
    "InterpolatedStrategyMap",
    "PerturbedInterleavingMap",
    "interleaving_gamma",
    "random_marking_map",
    "strategy_to_gamma",
]
