import io
import math

import numpy as np
import pytest

from fpcap.channel import Params, channel_matrix, covariance, tally_index
from fpcap.errors import DimensionError, DomainError, SingularityError
from fpcap.gammamap import GammaMap, interleaving_gamma, random_marking_map
from fpcap.payoff import (NonRadialWarning, asymptotic_payoff_p, asymptotic_payoff_u,
                          fisher_information_matrix, fisher_trace, information_in_bits,
                          jacobian_spectrum, marginal_tau, mutual_information,
                          payoff_gradient_theta, payoff_sweep, write_payoff_csv)
from fpcap.strategy import Strategy, forced_strategy, interleaving_strategy, random_strategy


def unit_orthant(rng, q, n):
    u = np.abs(rng.standard_normal((n, q)))
    return u / np.linalg.norm(u, axis=1, keepdims=True)


class TestMarginal:
    def test_interleaving_passes_bias_through(self):
        rng = np.random.default_rng(0)
        for c, q in [(2, 2), (5, 3), (7, 4)]:
            s = interleaving_strategy(Params(c, q))
            for p in rng.dirichlet(np.ones(q), 10):
                assert np.max(np.abs(marginal_tau(s, p) - p)) < 1e-14

    def test_forced_and_vertex(self):
        p = np.array([0.2, 0.3, 0.5])
        assert np.allclose(marginal_tau(forced_strategy(Params(1, 3)), p), p, atol=1e-15)
        s = random_strategy(Params(4, 3), 1)
        assert np.allclose(marginal_tau(s, [1.0, 0.0, 0.0]), [1, 0, 0], atol=1e-15)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionError):
            marginal_tau(interleaving_strategy(Params(2, 3)), [0.5, 0.5])


class TestMutualInformation:
    def test_forced_binary_uniform(self):
        assert mutual_information(forced_strategy(Params(1, 2)), [0.5, 0.5]).value == pytest.approx(1.0, abs=1e-15)

    def test_interleaving_c2(self):
        report = mutual_information(interleaving_strategy(Params(2, 2)), [0.5, 0.5])
        assert report.value == pytest.approx(0.5, abs=1e-15)
        assert np.allclose(report.tau, [0.5, 0.5])
        assert report.breakdown.sum() == pytest.approx(report.value, abs=1e-15)

    def test_frozen_oracle_values(self):
        # mpmath enumeration oracle, 40-digit precision
        s = interleaving_strategy(Params(3, 2))
        assert mutual_information(s, [0.3, 0.7]).value == pytest.approx(0.30276452377636422391, abs=1e-14)
        s = forced_strategy(Params(1, 3))
        assert mutual_information(s, [0.2, 0.3, 0.5]).value == pytest.approx(0.93723056321612953328, abs=1e-14)
        s = interleaving_strategy(Params(20, 3))
        assert mutual_information(s, np.full(3, 1 / 3)).value == pytest.approx(0.047272921292378873676, abs=1e-13)

    def test_independent_output_is_zero(self):
        params = Params(4, 3)
        p = np.array([0.2, 0.3, 0.5])
        # rows equal to tau for every sigma break Marking, but the payoff itself does not need it
        tau = np.array([0.5, 0.5])
        theta = np.tile(tau, (Params(3, 2).n_tallies, 1))
        assert mutual_information(Strategy(Params(3, 2), theta), [0.4, 0.6]).value == pytest.approx(0.0, abs=1e-15)
        # a strategy that ignores sigma on a vertex bias carries nothing either
        assert mutual_information(random_strategy(params, 0), [0.0, 1.0, 0.0]).value == 0.0
        assert mutual_information(interleaving_strategy(params), p).value > 0

    def test_bounds(self):
        rng = np.random.default_rng(1)
        for seed in range(20):
            s = random_strategy(Params(4, 3), seed)
            value = mutual_information(s, rng.dirichlet(np.ones(3))).value
            assert 0.0 <= value <= 1.0

    def test_bits(self):
        assert information_in_bits(0.5, 4) == pytest.approx(1.0)


def test_convexity_in_theta():
    rng = np.random.default_rng(7)
    worst = -np.inf
    for case in range(100):
        c, q = [(2, 2), (3, 2), (3, 3), (5, 2), (4, 4)][case % 5]
        params = Params(c, q)
        s1 = random_strategy(params, rng.integers(2**32))
        s2 = random_strategy(params, rng.integers(2**32))
        p = rng.dirichlet(np.ones(q))
        i1, i2 = mutual_information(s1, p).value, mutual_information(s2, p).value
        for t in (0.25, 0.5, 0.75):
            mix = Strategy(params, t * s1.theta + (1 - t) * s2.theta)
            worst = max(worst, mutual_information(mix, p).value - (t * i1 + (1 - t) * i2))
    assert worst <= 1e-12


class TestGradient:
    def test_matches_finite_differences(self):
        rng = np.random.default_rng(3)
        h = 1e-7
        worst = 0.0
        for case in range(100):
            c, q = [(2, 2), (3, 2), (2, 3), (4, 3)][case % 4]
            params = Params(c, q)
            s = random_strategy(params, rng.integers(2**32))
            p = rng.dirichlet(np.ones(q))
            grad = payoff_gradient_theta(s, p)
            scale = np.abs(grad[s.allowed]).max()
            for i, y in zip(*np.nonzero(s.allowed)):
                up, down = np.array(s.theta), np.array(s.theta)
                up[i, y] += h
                down[i, y] -= h
                fd = (mutual_information(Strategy(params, up), p).value
                      - mutual_information(Strategy(params, down), p).value) / (2 * h)
                worst = max(worst, abs(fd - grad[i, y]) / scale)
        assert worst <= 1e-5

    def test_zero_at_interleaving_centre(self):
        params = Params(2, 2)
        grad = payoff_gradient_theta(interleaving_strategy(params), [0.5, 0.5])
        assert grad[tally_index(params, [1, 1]), 0] == 0.0

    def test_zero_blocks_without_mass(self):
        params = Params(3, 3)
        s = random_strategy(params, 4)
        p = np.array([0.5, 0.5, 0.0])
        grad = payoff_gradient_theta(s, p)
        dead = channel_matrix(params, p) == 0
        assert np.all(grad[dead] == 0.0)

    def test_floor_caps_divergent_entries(self):
        params = Params(2, 3)
        theta = np.array(interleaving_strategy(params).theta)
        i = tally_index(params, [1, 1, 0])
        theta[i] = [1.0, 0.0, 0.0]
        grad = payoff_gradient_theta(Strategy(params, theta), np.full(3, 1 / 3), floor=-50.0)
        assert grad[i, 1] == -50.0
        assert np.all(np.isfinite(grad))


class TestAsymptoticPayoff:
    @pytest.mark.parametrize("q", [2, 3, 4, 5])
    def test_interleaving_constant_in_p(self, q):
        p = np.random.default_rng(q).dirichlet(np.ones(q), 200)
        assert np.max(np.abs(asymptotic_payoff_p(interleaving_gamma(q), p) - (q - 1))) < 1e-10

    def test_examples(self):
        assert asymptotic_payoff_p(interleaving_gamma(2), [0.3, 0.7]) == pytest.approx(1.0, abs=1e-12)
        assert asymptotic_payoff_p(interleaving_gamma(3), [1.0, 0.0, 0.0]) == 0.0
        assert asymptotic_payoff_u(interleaving_gamma(2), [1.0, 0.0]) == pytest.approx(1.0, abs=1e-12)
        u = np.full(3, 1 / math.sqrt(3))
        assert asymptotic_payoff_u(interleaving_gamma(3), u) == pytest.approx(2.0, abs=1e-10)

    def test_change_of_variables(self):
        rng = np.random.default_rng(8)
        for q in (2, 3, 4):
            maps = [interleaving_gamma(q)] + [random_marking_map(q, rng) for _ in range(3)]
            u = unit_orthant(rng, q, 30) + 0.05
            u /= np.linalg.norm(u, axis=1, keepdims=True)
            for g in maps:
                t_u = asymptotic_payoff_u(g, u)
                t_p = asymptotic_payoff_p(g, u ** 2)
                assert np.max(np.abs(t_u - t_p)) < 1e-8

    def test_unit_norm_required(self):
        with pytest.raises(DomainError):
            asymptotic_payoff_u(interleaving_gamma(2), [0.6, 0.7])
        with pytest.raises(DomainError):
            asymptotic_payoff_u(interleaving_gamma(2), [-0.6, 0.8])

    def test_singularity_without_limit_convention(self):
        class NoFlag(GammaMap):
            def g(self, p):
                return np.asarray(p, dtype=float)

        with pytest.raises(SingularityError, match=r"\[1\]"):
            asymptotic_payoff_p(NoFlag(2), [1.0, 0.0])

    def test_non_radial_map_warns_and_subtracts(self):
        class Stretched(GammaMap):
            # gamma = u itself: correct on the sphere, but not direction-only
            def gamma(self, u):
                return np.asarray(u, dtype=float)

        u = np.array([0.6, 0.8])
        with pytest.warns(NonRadialWarning):
            value = asymptotic_payoff_u(Stretched(2), u)
        assert value == pytest.approx(1.0, abs=1e-8)


class TestFisher:
    def test_binary_centre(self):
        assert np.allclose(fisher_information_matrix(interleaving_gamma(2), [0.5, 0.5]),
                           [[2, 0], [0, 2]], atol=1e-15)

    def test_trace_identity(self):
        rng = np.random.default_rng(12)
        for q in (2, 3, 4):
            maps = [interleaving_gamma(q), random_marking_map(q, rng)]
            for p in rng.dirichlet(np.ones(q), 50):
                for g in maps:
                    assert abs(fisher_trace(g, p) - asymptotic_payoff_p(g, p)) < 1e-8
                    assert abs(np.trace(covariance(p) @ fisher_information_matrix(g, p))
                               - fisher_trace(g, p)) < 1e-15

    def test_psd(self):
        rng = np.random.default_rng(13)
        g = random_marking_map(3, rng)
        for p in rng.dirichlet(np.ones(3), 100):
            f = fisher_information_matrix(g, p)
            assert np.allclose(f, f.T, atol=1e-12)
            assert np.linalg.eigvalsh(f).min() >= -1e-9

    def test_boundary_singular(self):
        with pytest.raises(SingularityError):
            fisher_information_matrix(interleaving_gamma(3), [0.5, 0.5, 0.0])


class TestSpectrum:
    @pytest.mark.parametrize("q", [2, 3, 4, 5])
    def test_interleaving_projector(self, q):
        for u in unit_orthant(np.random.default_rng(q), q, 20):
            eig = jacobian_spectrum(interleaving_gamma(q), u)
            assert np.allclose(eig, [1.0] * (q - 1) + [0.0], atol=1e-12)

    def test_sum_equals_payoff(self):
        rng = np.random.default_rng(21)
        for q in (2, 3, 4):
            maps = [interleaving_gamma(q), random_marking_map(q, rng)]
            u = unit_orthant(rng, q, 100)
            for g in maps:
                eig = jacobian_spectrum(g, u)
                assert eig.min() >= -1e-9
                assert np.all(np.diff(eig, axis=-1) <= 1e-15)
                assert np.max(np.abs(eig.sum(axis=-1) - asymptotic_payoff_u(g, u))) < 1e-8


def test_leading_order_gap_shrinks():
    # |2 c ln q I - T| should decay at least like c**-0.5
    for q in (2, 3):
        p = np.full(q, 1 / q)
        gaps = []
        for c in (10, 20, 40, 80, 160):
            value = mutual_information(interleaving_strategy(Params(c, q)), p).value
            gaps.append(abs(2 * c * math.log(q) * value - (q - 1)))
        assert all(b < a for a, b in zip(gaps, gaps[1:]))
        scaled = [gap * math.sqrt(c) for gap, c in zip(gaps, (10, 20, 40, 80, 160))]
        assert all(b <= a for a, b in zip(scaled, scaled[1:]))


def test_sweep_csv():
    s = interleaving_strategy(Params(2, 2))
    rows = payoff_sweep(s, [[0.5, 0.5], [0.3, 0.7]], interleaving_gamma(2))
    assert rows[0]["I_qary"] == pytest.approx(0.5)
    assert rows[0]["gap"] == pytest.approx(abs(4 * math.log(2) * 0.5 - 1.0))
    buf = io.StringIO()
    write_payoff_csv(rows, buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "q,c,p_1,p_2,I_qary,T,gap"
    assert lines[1].startswith("2,2,0.5,0.5,0.5,1,")
