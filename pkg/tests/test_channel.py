import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fpcap.channel import (Params, channel_matrix, check_bias, covariance, enumerate_tallies,
                           multinomial_prob, tally_index)
from fpcap.errors import DimensionError, DomainError, SizeError


def brute_tallies(c, q):
    return sorted(s for s in itertools.product(range(c + 1), repeat=q) if sum(s) == c)


def test_enumerate_small_cases():
    assert enumerate_tallies(Params(2, 2)).tolist() == [[0, 2], [1, 1], [2, 0]]
    assert enumerate_tallies(Params(1, 3)).tolist() == [[0, 0, 1], [0, 1, 0], [1, 0, 0]]
    assert len(enumerate_tallies(Params(3, 3))) == 10


@pytest.mark.parametrize("c,q", [(1, 2), (4, 2), (3, 3), (5, 4), (2, 6), (7, 3)])
def test_enumeration_is_lexicographic_bijection(c, q):
    tallies = enumerate_tallies(Params(c, q))
    assert [tuple(t) for t in tallies] == brute_tallies(c, q)
    assert len(tallies) == math.comb(c + q - 1, q - 1) == Params(c, q).n_tallies


def test_tallies_are_read_only():
    tallies = enumerate_tallies(Params(2, 3))
    with pytest.raises(ValueError):
        tallies[0, 0] = 5


def test_cap_names_the_count():
    with pytest.raises(SizeError, match="5151"):
        Params(100, 3, cap=5000)
    assert Params(100, 3, cap=6000).n_tallies == 5151


@pytest.mark.parametrize("c,q", [(0, 2), (2, 1), (1.5, 2), (-1, 3)])
def test_params_domain(c, q):
    with pytest.raises(DomainError):
        Params(c, q)


def test_params_equality_ignores_cap():
    assert Params(3, 2) == Params(3, 2, cap=100)
    assert len({Params(3, 2), Params(3, 2, cap=100)}) == 1


def test_tally_index_roundtrip():
    params = Params(6, 4)
    tallies = enumerate_tallies(params)
    assert np.array_equal(tally_index(params, tallies), np.arange(len(tallies)))
    assert tally_index(params, [0, 0, 0, 6]) == 0
    with pytest.raises(DomainError):
        tally_index(params, [1, 1, 1, 1])
    with pytest.raises(DimensionError):
        tally_index(params, [6, 0])


def test_multinomial_examples():
    assert multinomial_prob([0.5, 0.5], [1, 1]) == pytest.approx(0.5, abs=1e-15)
    assert multinomial_prob([1.0, 0.0], [2, 0]) == 1.0
    # frozen oracle value: 3! (1/3)^3 = 2/9
    assert multinomial_prob([1 / 3, 1 / 3, 1 / 3], [1, 1, 1]) == pytest.approx(2 / 9, abs=1e-15)
    assert multinomial_prob([1.0, 0.0], [1, 1]) == 0.0


def test_multinomial_large_c_no_overflow():
    c = 500
    p = [0.3, 0.7]
    total = sum(multinomial_prob(p, [k, c - k]) for k in range(c + 1))
    assert total == pytest.approx(1.0, abs=1e-10)


def test_channel_normalization_random_points():
    rng = np.random.default_rng(11)
    for c, q in [(1, 2), (5, 2), (4, 3), (3, 5), (10, 3), (20, 2)]:
        p = rng.dirichlet(np.ones(q), 100)
        lam = channel_matrix(Params(c, q), p)
        assert lam.shape == (100, Params(c, q).n_tallies)
        assert np.max(np.abs(lam.sum(axis=1) - 1.0)) < 1e-10


def test_channel_matrix_matches_scalar():
    params = Params(4, 3)
    p = np.array([0.2, 0.5, 0.3])
    lam = channel_matrix(params, p)
    for sigma, value in zip(enumerate_tallies(params), lam):
        assert value == pytest.approx(multinomial_prob(p, sigma), rel=1e-13)


def test_channel_at_vertex():
    lam = channel_matrix(Params(3, 3), [0.0, 1.0, 0.0])
    assert lam[tally_index(Params(3, 3), [0, 3, 0])] == 1.0
    assert lam.sum() == 1.0


@settings(max_examples=50, deadline=None)
@given(c=st.integers(1, 12), q=st.integers(2, 5), seed=st.integers(0, 2**32 - 1))
def test_normalization_property(c, q, seed):
    p = np.random.default_rng(seed).dirichlet(np.full(q, 0.7))
    p /= p.sum()
    assert abs(channel_matrix(Params(c, q), p).sum() - 1.0) < 1e-10


def test_check_bias_errors():
    with pytest.raises(DomainError):
        check_bias([0.5, 0.6])
    with pytest.raises(DomainError):
        check_bias([1.2, -0.2])
    with pytest.raises(DimensionError):
        check_bias([1.0])
    with pytest.raises(DimensionError):
        check_bias([0.5, 0.5], q=3)
    check_bias([0.5, 0.5 + 5e-13])


def test_covariance_examples():
    assert np.array_equal(covariance([1.0, 0.0, 0.0]), np.zeros((3, 3)))
    assert np.allclose(covariance([0.5, 0.5]), [[0.25, -0.25], [-0.25, 0.25]], atol=1e-15)


def test_covariance_psd_singular():
    rng = np.random.default_rng(5)
    for q in (2, 3, 4, 6):
        for p in rng.dirichlet(np.ones(q), 25):
            k = covariance(p)
            assert np.allclose(k, k.T)
            assert np.max(np.abs(k.sum(axis=1))) < 1e-15
            assert np.linalg.eigvalsh(k).min() >= -1e-12
            assert np.linalg.norm(k @ np.ones(q)) < 1e-15


def test_covariance_matches_sampled_tallies():
    rng = np.random.default_rng(2024)
    c, p = 6, np.array([0.2, 0.3, 0.5])
    n = 100_000
    samples = rng.multinomial(c, p, size=n).astype(float)
    centered = samples - samples.mean(axis=0)
    products = centered[:, :, None] * centered[:, None, :]
    emp = products.mean(axis=0) / c
    se = products.std(axis=0) / math.sqrt(n) / c
    assert np.all(np.abs(emp - covariance(p)) <= 5 * se)
