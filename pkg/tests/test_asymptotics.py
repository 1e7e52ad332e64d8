import io
import math

import numpy as np
import pytest

from fpcap.asymptotics import (asymptotic_capacity, capacity_vs_q, convergence_study,
                               gaps_shrinking, max_payoff_on_sphere, sphere_orthant_points,
                               write_convergence_csv)
from fpcap.channel import Params
from fpcap.errors import DomainError
from fpcap.gammamap import interleaving_gamma, random_marking_map


class TestCapacity:
    def test_binary_formula(self):
        for c in (1, 2, 7, 50):
            assert asymptotic_capacity(Params(c, 2)) == pytest.approx(1 / (2 * c * c * math.log(2)), rel=1e-15)

    def test_frozen_values(self):
        # mpmath oracle
        assert asymptotic_capacity(Params(10, 2)) == pytest.approx(0.0072134752044448170368, rel=1e-14)
        assert asymptotic_capacity(Params(10, 3)) == pytest.approx(0.0091023922662683739361, rel=1e-14)

    def test_ratios(self):
        assert asymptotic_capacity(Params(5, 4)) / asymptotic_capacity(Params(5, 2)) == pytest.approx(1.5, rel=1e-14)
        assert asymptotic_capacity(Params(6, 3)) / asymptotic_capacity(Params(12, 3)) == pytest.approx(4.0, rel=1e-14)

    def test_monotone_exhaustive(self):
        c = np.arange(1, 1001)[:, None]
        q = np.arange(2, 17)[None, :]
        table = (q - 1) / (2.0 * c * c * np.log(q))
        ref = np.array([[asymptotic_capacity(Params(int(ci), int(qi), cap=math.inf))
                         for qi in (2, 9, 16)] for ci in (1, 500, 1000)])
        assert np.allclose(table[[0, 499, 999]][:, [0, 7, 14]], ref, rtol=1e-15)
        assert np.all(np.diff(table, axis=1) > 0)
        assert np.all(np.diff(table, axis=0) < 0)

    def test_capacity_vs_q(self):
        rows = capacity_vs_q(100, [2, 3, 4, 5])
        assert [q for q, _ in rows] == [2, 3, 4, 5]
        values = [v for _, v in rows]
        assert all(b > a for a, b in zip(values, values[1:]))
        with pytest.raises(DomainError):
            capacity_vs_q(100, [])


class TestConvergence:
    def test_binary_frozen(self):
        rows = convergence_study(2, [10, 20, 40, 80])
        # exact enumeration in mpmath (40 digits)
        expected = [1.0605354134560502085, 1.0269502144943694811, 1.0129472293127231031,
                    1.0063577700381439169]
        assert np.allclose([r.scaled for r in rows], expected, atol=1e-10, rtol=0)
        assert all(b.scaled < a.scaled for a, b in zip(rows, rows[1:]))
        assert gaps_shrinking(rows)

    def test_ternary(self):
        rows = convergence_study(3, [10, 20, 40])
        expected = [2.1995863339694780025, 2.0773844901219107291, 2.0354718959926193617]
        assert np.allclose([r.scaled for r in rows], expected, atol=1e-10, rtol=0)
        assert gaps_shrinking(rows)
        assert all(r.limit == 2 for r in rows)

    def test_quaternary_trend(self):
        rows = convergence_study(4, [5, 10, 20])
        assert gaps_shrinking(rows) and rows[0].limit == 3

    def test_threads_do_not_change_rows(self):
        assert convergence_study(3, [4, 8, 12], threads=3) == convergence_study(3, [4, 8, 12])

    def test_solver_mode(self):
        (row,) = convergence_study(2, [2], mode="solver", solver_tol=1e-5)
        assert row.finite_value == pytest.approx(0.25, abs=2e-5)

    def test_bad_mode(self):
        with pytest.raises(DomainError):
            convergence_study(2, [4], mode="magic")

    def test_csv(self):
        buf = io.StringIO()
        write_convergence_csv(convergence_study(2, [10]), buf)
        header, line = buf.getvalue().splitlines()
        assert header == "c,q,mode,finite_value,scaled,limit,gap"
        assert line.startswith("10,2,interleaving-uniform,")


@pytest.mark.parametrize("q,n", [(2, 50), (3, 300), (4, 256), (5, 128)])
def test_sphere_points(q, n):
    pts = sphere_orthant_points(q, n)
    assert pts.shape == (n, q)
    assert np.allclose(np.linalg.norm(pts, axis=1), 1.0, atol=1e-12)
    assert np.all(pts >= 0)


def test_sphere_max_interleaving():
    for q in (2, 3):
        _, best = max_payoff_on_sphere(interleaving_gamma(q), n_points=500)
        assert best == pytest.approx(q - 1, abs=1e-10)


def test_lower_bound_for_perturbed_maps():
    rng = np.random.default_rng(99)
    for q in (2, 3):
        for _ in range(5):
            _, best = max_payoff_on_sphere(random_marking_map(q, rng))
            assert best >= q - 1 - 1e-6
