import json

import numpy as np
import pytest

from gtdsaddle.exceptions import ConvergenceError, DimensionError, ProbabilityError
from gtdsaddle.mdp import (
    InducedChain,
    Mdp,
    PolicyTable,
    StateDistribution,
    bellman_apply,
    exact_value,
    induce_chain,
    stationary_distribution,
)

from oracles import kernel_by_loops, power_iteration, value_iteration


def cycle_mdp(n=4, gamma=0.5):
    P = np.zeros((n, 1, n))
    P[np.arange(n), 0, (np.arange(n) + 1) % n] = 1.0
    return Mdp(P, np.arange(n, dtype=float)[:, None], gamma)


class TestConstruction:
    def test_rejects_rows_not_summing_to_one(self):
        P = np.full((2, 1, 2), 0.6)
        with pytest.raises(ProbabilityError):
            Mdp(P, np.zeros((2, 1)), 0.9)

    def test_rejects_negative_probability(self):
        P = np.array([[[1.5, -0.5]], [[0.0, 1.0]]])
        with pytest.raises(ProbabilityError):
            Mdp(P, np.zeros((2, 1)), 0.9)

    @pytest.mark.parametrize("gamma", [-0.1, 1.0, 1.5])
    def test_rejects_bad_discount(self, gamma):
        with pytest.raises(ValueError):
            Mdp(np.ones((1, 1, 1)), np.zeros((1, 1)), gamma)

    def test_rejects_shape_mismatch(self):
        with pytest.raises(DimensionError):
            Mdp(np.ones((2, 1, 2)) / 2, np.zeros((3, 1)), 0.5)

    def test_tables_are_read_only(self):
        mdp = cycle_mdp()
        with pytest.raises(ValueError):
            mdp.transition[0, 0, 0] = 1.0

    def test_json_round_trip_uses_contract_field_names(self, chain_bundle):
        mdp = chain_bundle.mdp
        doc = json.loads(mdp.to_json())
        assert set(doc) == {"states", "actions", "transition", "reward", "gamma"}
        back = Mdp.from_json(mdp.to_json())
        np.testing.assert_array_equal(back.transition, mdp.transition)
        np.testing.assert_array_equal(back.reward, mdp.reward)
        assert back.gamma == mdp.gamma

    def test_json_rejects_inconsistent_declared_sizes(self):
        doc = cycle_mdp().to_dict()
        doc["states"] = 7
        with pytest.raises(DimensionError):
            Mdp.from_dict(doc)

    def test_policy_rows_must_be_distributions(self):
        with pytest.raises(ProbabilityError):
            PolicyTable([[0.5, 0.6]])

    def test_state_distribution_xi_max(self):
        xi = StateDistribution([0.2, 0.5, 0.3])
        assert xi.xi_max == 0.5


class TestInduceChain:
    def test_deterministic_policy_gives_permutation(self):
        mdp = cycle_mdp()
        chain = induce_chain(mdp, PolicyTable.uniform(4, 1))
        assert set(np.unique(chain.kernel)) == {0.0, 1.0}
        np.testing.assert_array_equal(chain.kernel.sum(axis=0), np.ones(4))

    def test_identical_actions_give_that_kernel(self, rng):
        K = rng.dirichlet(np.ones(3), size=3)
        P = np.stack([K, K], axis=1)
        mdp = Mdp(P, rng.normal(size=(3, 2)), 0.8)
        chain = induce_chain(mdp, PolicyTable.uniform(3, 2))
        np.testing.assert_allclose(chain.kernel, K, atol=1e-15)

    def test_chain_kernel_matches_enumeration(self, chain_bundle):
        mdp, pi = chain_bundle.mdp, chain_bundle.behavior
        chain = induce_chain(mdp, pi)
        np.testing.assert_allclose(chain.kernel, kernel_by_loops(mdp, pi), atol=1e-14)

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            induce_chain(cycle_mdp(), PolicyTable.uniform(3, 1))


class TestExactValue:
    def test_zero_discount_returns_reward(self, rng):
        P = rng.dirichlet(np.ones(4), size=(4, 2))
        R = rng.normal(size=(4, 2))
        mdp = Mdp(P, R, 0.0)
        pi = PolicyTable.uniform(4, 2)
        np.testing.assert_allclose(exact_value(mdp, pi), R.mean(axis=1), atol=1e-15)

    def test_single_state_geometric_series(self):
        mdp = Mdp(np.ones((1, 1, 1)), np.ones((1, 1)), 0.9)
        assert exact_value(mdp, PolicyTable.uniform(1, 1))[0] == pytest.approx(10.0, abs=1e-12)

    def test_chain_matches_value_iteration(self, chain_bundle):
        V = exact_value(chain_bundle.mdp, chain_bundle.target)
        np.testing.assert_allclose(V, value_iteration(chain_bundle.mdp, chain_bundle.target), atol=1e-6)

    def test_fixed_point_on_every_domain(self, bundle):
        V = exact_value(bundle.mdp, bundle.target)
        TV = bellman_apply(induce_chain(bundle.mdp, bundle.target), V, bundle.gamma)
        assert np.max(np.abs(TV - V)) <= 1e-9


class TestStationary:
    def test_doubly_stochastic_gives_uniform(self):
        K = np.array([[0.5, 0.5, 0.0], [0.0, 0.5, 0.5], [0.5, 0.0, 0.5]])
        xi = stationary_distribution(InducedChain(K, np.zeros(3)))
        np.testing.assert_allclose(xi.weights, np.full(3, 1 / 3), atol=1e-12)

    def test_two_state_balance(self):
        K = np.array([[0.9, 0.1], [0.5, 0.5]])
        xi = stationary_distribution(InducedChain(K, np.zeros(2)))
        np.testing.assert_allclose(xi.weights, [5 / 6, 1 / 6], atol=1e-11)

    def test_chain_matches_power_iteration_oracle(self, chain_bundle):
        chain = induce_chain(chain_bundle.mdp, chain_bundle.behavior)
        xi = stationary_distribution(chain)
        np.testing.assert_allclose(xi.weights, power_iteration(np.array(chain.kernel)), atol=1e-10)

    def test_stationarity_residual(self, bundle):
        chain = induce_chain(bundle.mdp, bundle.behavior)
        xi = stationary_distribution(chain)
        assert np.abs(xi.weights @ chain.kernel - xi.weights).sum() <= 1e-10
        assert xi.weights.sum() == pytest.approx(1.0, abs=1e-12)

    def test_reducible_chain_is_smoothed_and_flagged(self, baird_bundle):
        chain = induce_chain(baird_bundle.mdp, baird_bundle.target)
        xi = stationary_distribution(chain)
        assert xi.meta["smoothing"] == 1e-8
        assert xi.weights[6] > 0.99

    def test_iteration_cap_raises_with_residual(self):
        K = np.array([[0.9, 0.1], [0.5, 0.5]])
        with pytest.raises(ConvergenceError) as info:
            stationary_distribution(InducedChain(K, np.zeros(2)), tol=0.0, max_iter=3)
        assert info.value.iterations == 3


class TestBellman:
    def test_zero_vector_gives_reward(self, chain_bundle):
        chain = induce_chain(chain_bundle.mdp, chain_bundle.target)
        np.testing.assert_array_equal(bellman_apply(chain, np.zeros(50), 0.9), chain.reward)

    def test_matches_per_state_expectation(self, chain_bundle, rng):
        mdp, pi = chain_bundle.mdp, chain_bundle.target
        v = rng.normal(size=mdp.num_states)
        expected = np.array([
            sum(pi.probs[s, a] * (mdp.reward[s, a] + mdp.gamma * mdp.transition[s, a] @ v)
                for a in range(mdp.num_actions))
            for s in range(mdp.num_states)
        ])
        np.testing.assert_allclose(bellman_apply(induce_chain(mdp, pi), v, mdp.gamma), expected, atol=1e-12)

    def test_contraction_in_sup_norm(self, bundle, rng):
        chain = induce_chain(bundle.mdp, bundle.target)
        n = chain.num_states
        for _ in range(100):
            u, v = rng.normal(scale=10, size=(2, n))
            lhs = np.max(np.abs(bellman_apply(chain, u, bundle.gamma) - bellman_apply(chain, v, bundle.gamma)))
            assert lhs <= bundle.gamma * np.max(np.abs(u - v)) + 1e-12

    def test_batched_input(self, chain_bundle, rng):
        chain = induce_chain(chain_bundle.mdp, chain_bundle.target)
        V = rng.normal(size=(3, 50))
        batched = bellman_apply(chain, V, 0.9)
        for i in range(3):
            np.testing.assert_allclose(batched[i], bellman_apply(chain, V[i], 0.9), atol=1e-14)

    def test_shape_mismatch(self, chain_bundle):
        chain = induce_chain(chain_bundle.mdp, chain_bundle.target)
        with pytest.raises(DimensionError):
            bellman_apply(chain, np.zeros(3), 0.9)
