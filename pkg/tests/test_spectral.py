import numpy as np
import pytest
import scipy.linalg as sla

from ctreach.errors import CtreachError
from ctreach.models import build_reachability_system
from ctreach.spectral import (
    perron_is_simple,
    perron_left_eigen,
    real_schur,
    reorder_dominant,
    reorder_selected,
    stability_margin,
)

from conftest import random_irreducible_ctmc

A_EX2 = np.array([[-4.0, 0, 2, 0], [0, -4, 1, 1], [1, 1, -2, 0], [0, 2, 0, -2]])
A_EX2_PERT = np.array([[-3.95, 0, 1.95, 0], [0, -4.05, 1.05, 1], [1, 1, -2, 0], [0, 2, 0, -2]])


def charpoly_roots(a: np.ndarray) -> np.ndarray:
    """Companion-style eigenvalue oracle: roots of the characteristic polynomial."""
    return np.sort_complex(np.roots(np.poly(a)))


def assert_factor_invariants(factors):
    scale = max(1.0, np.abs(factors.a).max())
    assert np.abs(factors.a - factors.u @ factors.n @ factors.u.T).max() <= 1e-8 * scale
    assert np.abs(factors.u.T @ factors.u - np.eye(factors.m)).max() <= 1e-10
    # below-block entries stored as exact zeros
    for s, w in zip(factors.block_starts, factors.block_sizes()):
        assert np.all(factors.n[s + w :, s : s + w] == 0.0)


class TestRealSchur:
    def test_example2_eigenvalues(self):
        factors = real_schur(A_EX2)
        assert_factor_invariants(factors)
        got = sorted(e.real for e in factors.eigs)
        expect = sorted([-5.2361, -0.7639, -4.4142, -1.5858])
        np.testing.assert_allclose(got, expect, atol=1e-4)

    def test_diagonal_matrix(self):
        a = np.diag([-3.0, -1.0, -2.0])
        factors = real_schur(a)
        assert_factor_invariants(factors)
        np.testing.assert_allclose(sorted(np.diag(factors.n)), [-3, -2, -1])

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_random_stable_vs_root_oracle(self, seed):
        rng = np.random.default_rng(seed)
        a = rng.normal(size=(8, 8)) - 4.0 * np.eye(8)
        factors = real_schur(a)
        assert_factor_invariants(factors)
        got = np.sort_complex(np.array(factors.eigs))
        np.testing.assert_allclose(got, charpoly_roots(a), atol=1e-8)

    def test_rejects_nonsquare_and_nonfinite(self):
        with pytest.raises(CtreachError):
            real_schur(np.ones((2, 3)))
        with pytest.raises(CtreachError):
            real_schur(np.array([[np.nan, 0], [0, 1.0]]))


class TestReorderDominant:
    def test_example2_top2(self):
        factors = real_schur(A_EX2)
        out, r_eff = reorder_dominant(factors, 2)
        assert r_eff == 2
        lead = sorted(e.real for e in out.eigs[:2])
        np.testing.assert_allclose(lead, [-1.5858, -0.7639], atol=1e-4)
        assert_factor_invariants(out)

    def test_full_order_identity(self):
        factors = real_schur(A_EX2)
        out, r_eff = reorder_dominant(factors, 4)
        assert r_eff == 4
        assert_factor_invariants(out)

    def test_eigen_multiset_preserved(self):
        rng = np.random.default_rng(5)
        a = rng.normal(size=(7, 7)) - 3.0 * np.eye(7)
        factors = real_schur(a)
        out, _ = reorder_dominant(factors, 3)
        before = np.sort_complex(np.array(factors.eigs))
        after = np.sort_complex(np.array(out.eigs))
        np.testing.assert_allclose(before, after, atol=1e-8)

    def test_complex_pair_never_split(self):
        # two complex pairs; any cut landing inside a pair must widen by one
        blocks = sla.block_diag(
            np.array([[-1.0, 2.0], [-2.0, -1.0]]),
            np.array([[-3.0, 1.0], [-1.0, -3.0]]),
            np.array([[-5.0]]),
        )
        rng = np.random.default_rng(0)
        q, _ = np.linalg.qr(rng.normal(size=(5, 5)))
        a = q @ blocks @ q.T
        factors = real_schur(a)
        out, r_eff = reorder_dominant(factors, 2)
        assert r_eff == 2  # dominant pair (-1 +- 2i) fits exactly
        out, r_eff = reorder_dominant(factors, 3)
        assert r_eff == 4  # cut falls inside the second pair
        assert_factor_invariants(out)


class TestReorderSelected:
    def test_ascending_real_within_cluster(self):
        factors = real_schur(A_EX2)
        out, r_eff = reorder_selected(factors, [complex(-5.2360679, 0), complex(-0.7639320, 0)])
        assert r_eff == 2
        assert out.eigs[0].real < out.eigs[1].real
        np.testing.assert_allclose(
            [out.eigs[0].real, out.eigs[1].real], [-5.23607, -0.76393], atol=1e-4
        )
        assert_factor_invariants(out)

    def test_unknown_eigenvalue_rejected(self):
        factors = real_schur(A_EX2)
        with pytest.raises(CtreachError):
            reorder_selected(factors, [complex(123.0, 0.0)])


class TestStabilityMargin:
    def test_minus_identity(self):
        assert stability_margin(-np.eye(3)) == pytest.approx(-1.0)

    def test_example2_perturbed(self):
        # eigenvalues of the perturbed matrix: {-5.2580, -4.3857, -1.5949, -0.7613}
        margin = stability_margin(A_EX2_PERT)
        assert margin == pytest.approx(-0.7613, abs=1e-3)
        assert margin == pytest.approx(charpoly_roots(A_EX2_PERT)[-1].real, abs=1e-8)

    @pytest.mark.parametrize("seed", [3, 4])
    def test_matches_root_oracle(self, seed):
        rng = np.random.default_rng(seed)
        model = random_irreducible_ctmc(rng, 9)
        system = build_reachability_system(model)
        margin = stability_margin(system.a)
        assert margin == pytest.approx(max(charpoly_roots(system.a).real), abs=1e-8)


class TestPerron:
    def test_example2_matches_published_m(self, example2):
        system = build_reachability_system(example2)
        data = perron_left_eigen(system.h, system.gamma_unif)
        assert data.rho_bar == pytest.approx(-0.7639, abs=1e-4)
        np.testing.assert_allclose(data.nu, [1.0, 2.0, 3.2361, 1.6180], atol=1e-4)
        assert perron_is_simple(system.h, system.gamma_unif, data)

    def test_periodic_two_state_closed_form(self):
        # H = [[0, 1], [0.5, 0]] is irreducible but periodic: the plain power
        # iteration oscillates, the shifted one converges.  Closed form:
        # rho = sqrt(0.5), nu proportional to (rho, 0.5).
        h = np.array([[0.0, 1.0], [0.5, 0.0]])
        gamma = 2.0
        data = perron_left_eigen(h, gamma)
        rho = 1.0 + data.rho_bar / gamma
        assert rho == pytest.approx(np.sqrt(0.5), abs=1e-10)
        expected = np.array([rho, 1.0])  # nu H = rho nu  =>  nu ~ (rho, 1)
        expected = expected / expected.min()
        np.testing.assert_allclose(data.nu, expected, atol=1e-9)

    def test_symmetric_h_left_equals_right(self):
        h = np.array([[0.1, 0.5, 0.2], [0.5, 0.0, 0.3], [0.2, 0.3, 0.1]])
        data = perron_left_eigen(h, 1.0)
        w, v = np.linalg.eigh(h)
        right = np.abs(v[:, -1])
        np.testing.assert_allclose(data.nu / data.nu.max(), right / right.max(), atol=1e-9)

    def test_residual_invariant(self, example2_perturbed):
        system = build_reachability_system(example2_perturbed)
        data = perron_left_eigen(system.h, system.gamma_unif)
        rho = data.rho(system.gamma_unif)
        resid = np.abs(data.nu @ system.h - rho * data.nu).max() / np.abs(data.nu).max()
        assert resid <= 1e-10
        assert data.nu.min() == pytest.approx(1.0)

    def test_min_normalisation_and_positivity(self):
        rng = np.random.default_rng(11)
        model = random_irreducible_ctmc(rng, 12)
        system = build_reachability_system(model)
        data = perron_left_eigen(system.h, system.gamma_unif)
        assert data.nu.min() == pytest.approx(1.0)
        assert np.all(data.nu > 0)
