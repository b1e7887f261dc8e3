import numpy as np
import pytest
import scipy.linalg as sla

from ctreach.errors import CtreachError
from ctreach.models import build_reachability_system
from ctreach.reduction import (
    LumpingPartition,
    initial_state,
    lumping_projection,
    mismatch,
    project,
    reduce_ctmc,
)
from ctreach.spectral import real_schur, reorder_dominant

from conftest import oracle_state_gap, random_irreducible_ctmc


class TestProject:
    def test_residual_and_orthogonality(self):
        rng = np.random.default_rng(2)
        a = rng.normal(size=(10, 10)) - 5.0 * np.eye(10)
        factors, r_eff = reorder_dominant(real_schur(a), 4)
        a_bar, p = project(factors, r_eff)
        assert np.abs(a @ p - p @ a_bar).max() <= 1e-9 * max(1.0, np.abs(a).max())
        assert np.abs(p.T @ p - np.eye(r_eff)).max() <= 1e-10

    def test_full_order_similarity(self):
        rng = np.random.default_rng(3)
        a = rng.normal(size=(6, 6)) - 4.0 * np.eye(6)
        factors = real_schur(a)
        a_bar, p = project(factors, 6)
        assert np.abs(a @ p - p @ a_bar).max() <= 1e-9 * max(1.0, np.abs(a).max())

    def test_splitting_a_block_rejected(self):
        blocks = sla.block_diag(
            np.array([[-1.0, 2.0], [-2.0, -1.0]]), np.array([[-3.0]])
        )
        rng = np.random.default_rng(1)
        q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
        factors = real_schur(q @ blocks @ q.T)
        bad_cut = 1 if factors.block_sizes()[0] == 2 else 2
        with pytest.raises(CtreachError):
            project(factors, bad_cut)


class TestInitialState:
    def test_example2_published_values(self, example2):
        system = build_reachability_system(example2)
        reduced = reduce_ctmc(system, horizon=1.0, eps_max=0.0)
        # magnitudes are convention-free; column signs are not
        np.testing.assert_allclose(
            np.sort(np.abs(reduced.x_bar0)), [0.4595, 1.9465], atol=1e-4
        )

    def test_square_orthogonal_projection(self):
        rng = np.random.default_rng(7)
        q, _ = np.linalg.qr(rng.normal(size=(5, 5)))
        x0 = rng.normal(size=5)
        got = initial_state(q, np.eye(5), x0)
        np.testing.assert_allclose(got, q.T @ x0, atol=1e-12)

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_normal_equations_orthogonality(self, seed):
        rng = np.random.default_rng(seed)
        p, _ = np.linalg.qr(rng.normal(size=(9, 4)))
        m_weight = np.diag(rng.uniform(1.0, 5.0, size=9))
        x0 = rng.normal(size=9)
        xbar0 = initial_state(p, m_weight, x0)
        resid = x0 - p @ xbar0
        assert np.abs(p.T @ (m_weight @ resid)).max() <= 1e-10


class TestMismatch:
    def test_exact_lumping_zero(self, example2):
        system = build_reachability_system(example2)
        reduced = reduce_ctmc(system, horizon=1.0, eps_max=0.0)
        assert reduced.r == 2
        assert np.linalg.norm(mismatch(system, reduced)) <= 1e-10

    def test_full_order_zero(self, example2_perturbed):
        system = build_reachability_system(example2_perturbed)
        reduced = reduce_ctmc(system, horizon=1.0, eps_max=0.0, r=system.m)
        assert np.linalg.norm(mismatch(system, reduced)) <= 1e-10

    def test_perturbed_r2_nonzero(self, example2_perturbed):
        system = build_reachability_system(example2_perturbed)
        reduced = reduce_ctmc(system, horizon=1.0, eps_max=0.0, r=2)
        gamma = mismatch(system, reduced)
        assert 0.05 <= np.linalg.norm(gamma) <= 0.5  # genuinely inexact reduction
        # envelope coefficient never exceeds the closed form xi*||Gamma||
        assert reduced.envelope.coeff <= reduced.envelope.coeff_gamma + 1e-12


class TestReduceCtmc:
    def test_exact_lumping_retrieved(self, example2):
        system = build_reachability_system(example2)
        reduced = reduce_ctmc(system, horizon=5.0, eps_max=0.0)
        assert reduced.r == 2
        assert reduced.envelope.coeff <= 1e-10

    def test_generic_model_needs_full_order_for_zero(self):
        rng = np.random.default_rng(12)
        model = random_irreducible_ctmc(rng, 6)
        system = build_reachability_system(model)
        reduced = reduce_ctmc(system, horizon=5.0, eps_max=0.0)
        assert reduced.r == system.m

    @pytest.mark.parametrize("seed", [0, 1])
    def test_all_orders_sound(self, seed):
        rng = np.random.default_rng(seed)
        model = random_irreducible_ctmc(rng, 7)
        system = build_reachability_system(model)
        for r in range(1, system.m + 1):
            reduced = reduce_ctmc(system, horizon=1.0, eps_max=0.0, r=r)
            kappa = reduced.envelope.kappa
            times = np.geomspace(1e-3, 20.0 / kappa, 30)
            gaps = oracle_state_gap(system, reduced, times)
            assert np.all(gaps <= reduced.envelope.eval(times) + 1e-9)

    def test_requested_order_respects_blocks(self):
        rng = np.random.default_rng(21)
        model = random_irreducible_ctmc(rng, 9)
        system = build_reachability_system(model)
        for r in range(1, system.m + 1):
            reduced = reduce_ctmc(system, horizon=1.0, eps_max=0.0, r=r)
            assert reduced.r >= r
            assert np.abs(reduced.p.T @ reduced.p - np.eye(reduced.r)).max() <= 1e-10

    def test_beta_bar_is_abar_xbar0(self, example2_perturbed):
        system = build_reachability_system(example2_perturbed)
        reduced = reduce_ctmc(system, horizon=1.0, eps_max=0.0, r=2)
        np.testing.assert_allclose(reduced.beta_bar, reduced.a_bar @ reduced.x_bar0)


class TestLumping:
    def test_fig1_partition_accepted(self):
        # the chain with Lam31 = 0, Lam42 = 1: classes {s1, s2}, {s3, s4}
        from ctreach.models import parse_model

        text = (
            "ctmc 5\ngood 4\n"
            "rate 0 2 2\nrate 0 4 2\n"
            "rate 1 2 1\nrate 1 3 1\nrate 1 4 2\n"
            "rate 2 1 1\nrate 3 1 1\n"
        )
        system = build_reachability_system(parse_model(text))
        lumped = lumping_projection(LumpingPartition(((0, 1), (2, 3))), system)
        # reduced chain: class {s1,s2} exits to {s3,s4} at rate 2 and good at 2
        np.testing.assert_allclose(lumped.a_bar, [[-4.0, 2.0], [1.0, -1.0]])
        np.testing.assert_allclose(lumped.beta_bar, [2.0, 0.0])
        # X(t) = P Xbar(t) exactly
        x0 = system.x0()
        xbar0 = np.linalg.solve(lumped.a_bar, lumped.beta_bar)
        for t in (0.5, 2.0, 10.0):
            lhs = sla.expm(system.a * t) @ x0
            rhs = lumped.p_lump @ (sla.expm(lumped.a_bar * t) @ xbar0)
            np.testing.assert_allclose(lhs, rhs, atol=1e-10)

    def test_singleton_partition_identity(self, example2):
        system = build_reachability_system(example2)
        part = LumpingPartition(tuple((i,) for i in range(system.m)))
        lumped = lumping_projection(part, system)
        np.testing.assert_allclose(lumped.a_bar, system.a)

    def test_perturbed_rejected(self, example2_perturbed):
        system = build_reachability_system(example2_perturbed)
        with pytest.raises(CtreachError) as err:
            lumping_projection(LumpingPartition(((0, 1), (2, 3))), system)
        assert err.value.code == "not-a-bisimulation"

    def test_reduce_finds_at_most_block_count(self, example2):
        system = build_reachability_system(example2)
        lumping_projection(LumpingPartition(((0, 1), (2, 3))), system)  # accepted
        reduced = reduce_ctmc(system, horizon=1.0, eps_max=0.0)
        assert reduced.r <= 2

    def test_invalid_partition(self, example2):
        system = build_reachability_system(example2)
        with pytest.raises(CtreachError):
            lumping_projection(LumpingPartition(((0, 1), (1, 2, 3))), system)
