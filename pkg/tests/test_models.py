import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from ctreach.errors import CtreachError, ModelFormatError
from ctreach.models import (
    Assumption1Result,
    Ctmc,
    ReachabilitySystem,
    build_reachability_system,
    build_switched_partition,
    check_assumption1,
    format_model,
    full_generator,
    parse_model,
    prune_reducible,
    uniformize,
)
from ctreach.spectral import perron_left_eigen

from conftest import EXAMPLE2_TEXT, oracle_reach, random_irreducible_ctmc

A_EXAMPLE2 = np.array(
    [[-4.0, 0, 2, 0], [0, -4, 1, 1], [1, 1, -2, 0], [0, 2, 0, -2]]
)


class TestParsing:
    def test_round_trip(self, example2):
        again = parse_model(format_model(example2))
        assert again.n_states == example2.n_states
        assert again.good == example2.good
        assert (again.rates != example2.rates).nnz == 0
        assert again.target_rows == example2.target_rows

    def test_duplicate_rates_summed(self):
        model = parse_model("ctmc 3\ngood 2\nrate 0 1 1.5\nrate 0 1 0.5\nrate 1 2 1\n")
        assert model.rates[0, 1] == 2.0

    def test_comments_and_blank_lines(self):
        model = parse_model("# hi\n\nctmc 2 # inline\ngood 1\nrate 0 1 3.0\n")
        assert model.rates[0, 1] == 3.0

    @pytest.mark.parametrize(
        "text,line",
        [
            ("ctmc 2\ngood 5\n", None),  # good out of range -> invalid-model
            ("rate 0 1 1\n", 1),
            ("ctmc 2\ngood 1\nrate 0 1 -2\n", 3),
            ("ctmc 2\ngood 1\nrate 0 3 1\n", 3),
            ("ctmc 2\ngood 1\nfrob 1\n", 3),
        ],
    )
    def test_errors_carry_line_numbers(self, text, line):
        with pytest.raises(CtreachError) as err:
            parse_model(text)
        if line is not None:
            assert isinstance(err.value, ModelFormatError)
            assert err.value.line == line

    def test_ctmdp_round_trip(self, example4):
        again = parse_model(format_model(example4))
        assert len(again.decisions) == 2
        for m1, m2 in zip(again.rates_per_decision, example4.rates_per_decision):
            assert (m1 != m2).nnz == 0


class TestBuildReachabilitySystem:
    def test_example2_partition(self, example2):
        system = build_reachability_system(example2)
        np.testing.assert_allclose(system.a, A_EXAMPLE2)
        np.testing.assert_allclose(system.beta, [2, 2, 0, 0])
        np.testing.assert_allclose(system.chi, np.zeros(4))

    def test_single_state_chain(self):
        model = parse_model("ctmc 2\ngood 1\nrate 0 1 1\n")
        system = build_reachability_system(model)
        np.testing.assert_allclose(system.a, [[-1.0]])
        np.testing.assert_allclose(system.beta, [1.0])
        # unbounded reachability from the only transient state is 1
        np.testing.assert_allclose(system.offset_d, [1.0])

    def test_rows_sum_to_zero(self):
        from ctreach.bench import build_tandem

        model = build_tandem(5, 4.0, 2.0, 2.0, 4.0, 0.1, 0.9)
        assert model.n_states == 65
        system = build_reachability_system(model)
        rows = system.a.sum(axis=1) + system.beta + system.chi
        assert np.abs(rows).max() <= 1e-12

    def test_trivial_problem(self):
        model = parse_model("ctmc 3\ngood 2\nrate 0 1 1\nrate 1 0 1\n")
        with pytest.raises(CtreachError) as err:
            build_reachability_system(model)
        assert err.value.code == "trivial-problem"

    def test_good_bad_made_absorbing(self):
        model = parse_model(
            "ctmc 3\ngood 2\nbad 1\nrate 0 1 1\nrate 0 2 1\nrate 1 0 5\nrate 2 0 7\n"
        )
        q = full_generator(model)
        assert q[1].sum() == 0 and q[2].sum() == 0
        system = build_reachability_system(model)
        assert system.a.shape == (1, 1)
        assert system.beta[0] == 1.0 and system.chi[0] == 1.0


class TestUniformize:
    def test_example2(self, example2):
        system = build_reachability_system(example2)
        h, gamma = uniformize(system)
        assert gamma == 4.0
        np.testing.assert_allclose(h.sum(axis=1), [0.5, 0.5, 1.0, 1.0])

    def test_single_state(self):
        model = parse_model("ctmc 2\ngood 1\nrate 0 1 1\n")
        system = build_reachability_system(model)
        h, gamma = uniformize(system)
        assert gamma == 1.0
        np.testing.assert_allclose(h, [[0.0]])

    @given(st.integers(min_value=0, max_value=10_000))
    @settings(max_examples=25, deadline=None)
    def test_h_substochastic(self, seed):
        rng = np.random.default_rng(seed)
        model = random_irreducible_ctmc(rng, int(rng.integers(3, 9)))
        system = build_reachability_system(model)
        assert system.h.min() >= 0.0
        assert system.h.sum(axis=1).max() <= 1.0 + 1e-12


class TestAssumption1:
    def test_example2_holds(self, example2):
        system = build_reachability_system(example2)
        assert check_assumption1(system) == Assumption1Result(True)

    def test_disconnected_fails(self):
        model = parse_model(
            "ctmc 6\ngood 4\nbad 5\n"
            "rate 0 1 1\nrate 1 0 1\nrate 1 4 1\n"
            "rate 2 3 1\nrate 3 2 1\nrate 3 5 1\n"
        )
        system = build_reachability_system(model)
        res = check_assumption1(system)
        assert not res.holds and res.reason == "not-strongly-connected"

    def test_no_exit_fails(self):
        # assembled by hand: beta = chi = 0 cannot come out of the builder
        a = np.array([[-1.0, 1.0], [1.0, -1.0]])
        system = ReachabilitySystem(
            a=a,
            beta=np.zeros(2),
            chi=np.zeros(2),
            c_s=np.eye(2),
            offset_d=np.zeros(2),
            gamma_unif=1.0,
            h=a / 1.0 + np.eye(2),
            state_order=(0, 1),
            target_rows=(0, 1),
        )
        res = check_assumption1(system)
        assert not res.holds and res.reason == "no-exit"

    def test_spectral_radius_below_one_under_assumption1(self, example2):
        system = build_reachability_system(example2)
        perron = perron_left_eigen(system.h, system.gamma_unif)
        assert 0.0 < perron.rho(system.gamma_unif) < 1.0


class TestPrune:
    def test_trap_state_removed_probabilities_unchanged(self):
        # state 2 is an absorbing trap with no path to good (state 3)
        text = "ctmc 4\ngood 3\nrate 0 1 1\nrate 0 2 0.5\nrate 1 0 1\nrate 1 3 2\n"
        model = parse_model(text)
        pruned, report = prune_reducible(model)
        assert frozenset({2}) in report.removed_bsccs
        assert pruned.bad is not None
        times = [0.3, 1.0, 4.0]
        orig = oracle_reach(model, times)
        new = oracle_reach(pruned, times)
        np.testing.assert_allclose(new[: orig.shape[0]], orig[: new.shape[0]], atol=1e-12)

    def test_irreducible_chain_untouched(self, example2):
        pruned, report = prune_reducible(example2)
        assert pruned is example2
        assert report.is_trivial
        assert report.kept_states == example2.transient_states

    def test_two_parallel_bsccs(self):
        # component {3,4} is a BSCC unrelated to good (5); 0 -> {1,2} -> good
        text = (
            "ctmc 6\ngood 5\n"
            "rate 0 1 1\nrate 1 2 1\nrate 2 1 1\nrate 2 5 1\n"
            "rate 0 3 1\nrate 3 4 1\nrate 4 3 1\n"
        )
        model = parse_model(text)
        pruned, report = prune_reducible(model)
        assert frozenset({3, 4}) in report.removed_bsccs
        times = [0.5, 2.0]
        np.testing.assert_allclose(
            oracle_reach(pruned, times)[0], oracle_reach(model, times)[0], atol=1e-12
        )

    def test_idempotent(self):
        text = "ctmc 4\ngood 3\nrate 0 1 1\nrate 0 2 0.5\nrate 1 0 1\nrate 1 3 2\n"
        pruned, _ = prune_reducible(parse_model(text))
        again, report = prune_reducible(pruned)
        assert report.is_trivial
        assert again is pruned

    def test_empty_problem(self):
        model = parse_model("ctmc 3\ngood 2\nrate 0 1 1\nrate 1 0 1\n")
        with pytest.raises(CtreachError) as err:
            prune_reducible(model)
        assert err.value.code == "empty-problem"

    def test_scc_order_is_topological(self):
        text = "ctmc 5\ngood 4\nrate 0 1 1\nrate 1 2 1\nrate 2 1 1\nrate 2 4 1\nrate 3 0 1\n"
        _, report = prune_reducible(parse_model(text))
        order = [set(s) for s in report.scc_order]
        assert order.index({3}) < order.index({0}) < order.index({1, 2})


class TestSwitchedPartition:
    def test_example4_partition(self, example4):
        parts = build_switched_partition(example4)
        a_d1 = np.array(
            [[-1, 1, 0, 0], [0.01, -3.01, 0.5, 0.5], [0, 0.01, -1.01, 0], [0, 0.01, 0.05, -1.06]]
        )
        a_d2 = np.array(
            [[-1.5, 0, 0.75, 0.75], [0.01, -3.01, 0.5, 0.5], [0, 0.01, -1.01, 0], [0, 0.01, 0.05, -1.06]]
        )
        np.testing.assert_allclose(parts[0][0], a_d1)
        np.testing.assert_allclose(parts[1][0], a_d2)
        np.testing.assert_allclose(parts[0][1], [0, 2, 1, 1])
        np.testing.assert_allclose(parts[1][1], [0, 2, 1, 1])

    def test_single_decision_matches_ctmc(self, example2):
        from ctreach.models import Ctmdp

        mdp = Ctmdp(
            n_states=example2.n_states,
            decisions=("only",),
            rates_per_decision=(example2.rates,),
            good=example2.good,
        )
        parts = build_switched_partition(mdp)
        system = build_reachability_system(example2)
        np.testing.assert_allclose(parts[0][0], system.a)

    def test_unstable_decision_rejected(self):
        # decision 0 has a closed pair {0,1} that never reaches good
        text = "ctmdp 3 1\ngood 2\nrate 0 0 1 1\nrate 0 1 0 1\n"
        with pytest.raises(CtreachError) as err:
            build_switched_partition(parse_model(text))
        assert err.value.code in ("assumption-violated", "trivial-problem")

    def test_tandem_ctmdp_decision_vectors(self):
        from ctreach.bench import build_tandem_ctmdp

        model = build_tandem_ctmdp(2, 3.0, 2.5, 2.5, 3.0)
        # 4 states with an active routing choice -> 2^4 decision vectors
        assert len(model.decisions) == 16
        assert model.n_states == 15


class TestValidation:
    def test_negative_rate(self):
        mat = sp.csr_matrix(np.array([[0.0, -1.0], [0.0, 0.0]]))
        with pytest.raises(CtreachError):
            Ctmc(n_states=2, rates=mat, good=1)

    def test_good_equals_bad(self):
        mat = sp.csr_matrix((2, 2))
        with pytest.raises(CtreachError):
            Ctmc(n_states=2, rates=mat, good=1, bad=1)

    def test_concurrent_reuse_is_pure(self, example2):
        s1 = build_reachability_system(example2)
        s2 = build_reachability_system(example2)
        np.testing.assert_array_equal(s1.a, s2.a)
        s1.a[0, 0]  # no mutation APIs exposed; dataclass is frozen
