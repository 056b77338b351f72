"""Exact tabular MDP machinery.

Everything here is dense and exact: induced Markov chains, stationary
distributions, true value functions and the Bellman operator. These objects
are the oracle layer that the sample-based solvers are checked against.
"""

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.csgraph import connected_components

from ._validation import PROB_TOL, as_float_array, check_distribution, frozen
from .exceptions import ConvergenceError, DimensionError

__all__ = [
    "Mdp",
    "PolicyTable",
    "InducedChain",
    "StateDistribution",
    "induce_chain",
    "exact_value",
    "stationary_distribution",
    "bellman_apply",
]


@dataclass(frozen=True)
class Mdp:
    """Finite MDP with transition tensor ``P[s, a, s']`` and reward ``R[s, a]``.

    Parameters
    ----------
    transition : array-like of shape (n_states, n_actions, n_states)
    reward : array-like of shape (n_states, n_actions)
    gamma : float
        Discount factor in ``[0, 1)``.
    """

    transition: np.ndarray
    reward: np.ndarray
    gamma: float

    def __post_init__(self):
        P = as_float_array(self.transition, ndim=3, name="transition")
        R = as_float_array(self.reward, ndim=2, name="reward")
        if P.shape[0] != P.shape[2] or P.shape[:2] != R.shape:
            raise DimensionError(
                f"transition shape {P.shape} incompatible with reward shape {R.shape}"
            )
        check_distribution(P, name="transition")
        gamma = float(self.gamma)
        if not 0.0 <= gamma < 1.0:
            raise ValueError(f"gamma must lie in [0, 1), got {gamma}")
        object.__setattr__(self, "transition", frozen(P))
        object.__setattr__(self, "reward", frozen(R))
        object.__setattr__(self, "gamma", gamma)

    @property
    def num_states(self):
        return self.transition.shape[0]

    @property
    def num_actions(self):
        return self.transition.shape[1]

    @property
    def r_max(self):
        return float(np.abs(self.reward).max())

    def to_dict(self):
        return {
            "states": self.num_states,
            "actions": self.num_actions,
            "transition": self.transition.tolist(),
            "reward": self.reward.tolist(),
            "gamma": self.gamma,
        }

    @classmethod
    def from_dict(cls, doc):
        mdp = cls(doc["transition"], doc["reward"], doc["gamma"])
        if mdp.num_states != doc["states"] or mdp.num_actions != doc["actions"]:
            raise DimensionError("declared states/actions disagree with the tables")
        return mdp

    def to_json(self, **kwargs):
        return json.dumps(self.to_dict(), **kwargs)

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class PolicyTable:
    """Stationary stochastic policy ``probs[s, a] = pi(a | s)``."""

    probs: np.ndarray

    def __post_init__(self):
        p = as_float_array(self.probs, ndim=2, name="policy")
        check_distribution(p, name="policy")
        object.__setattr__(self, "probs", frozen(p))

    @property
    def num_states(self):
        return self.probs.shape[0]

    @property
    def num_actions(self):
        return self.probs.shape[1]

    @classmethod
    def uniform(cls, num_states, num_actions):
        return cls(np.full((num_states, num_actions), 1.0 / num_actions))

    @classmethod
    def deterministic(cls, actions, num_actions):
        actions = np.asarray(actions, dtype=int)
        probs = np.zeros((actions.size, num_actions))
        probs[np.arange(actions.size), actions] = 1.0
        return cls(probs)


@dataclass(frozen=True)
class InducedChain:
    """Markov reward process ``(P^pi, R^pi)`` obtained by fixing a policy."""

    kernel: np.ndarray
    reward: np.ndarray

    def __post_init__(self):
        K = as_float_array(self.kernel, ndim=2, name="kernel")
        r = as_float_array(self.reward, ndim=1, name="reward")
        if K.shape != (r.size, r.size):
            raise DimensionError(f"kernel {K.shape} does not match reward {r.shape}")
        check_distribution(K, name="kernel")
        object.__setattr__(self, "kernel", frozen(K))
        object.__setattr__(self, "reward", frozen(r))

    @property
    def num_states(self):
        return self.reward.size


@dataclass(frozen=True)
class StateDistribution:
    """Distribution ``xi`` over states; ``meta`` records how it was obtained."""

    weights: np.ndarray
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        w = as_float_array(self.weights, ndim=1, name="xi")
        check_distribution(w, name="xi")
        object.__setattr__(self, "weights", frozen(w))

    @property
    def xi_max(self):
        return float(self.weights.max())

    @property
    def num_states(self):
        return self.weights.size

    @classmethod
    def uniform(cls, num_states):
        return cls(np.full(num_states, 1.0 / num_states), {"method": "uniform"})


def _check_policy(mdp, policy):
    if policy.probs.shape != mdp.reward.shape:
        raise DimensionError(
            f"policy shape {policy.probs.shape} does not match MDP "
            f"({mdp.num_states} states, {mdp.num_actions} actions)"
        )


def induce_chain(mdp, policy):
    """Fix ``policy`` in ``mdp``; returns the chain ``(P^pi, R^pi)``."""
    _check_policy(mdp, policy)
    kernel = np.einsum("sa,sat->st", policy.probs, mdp.transition)
    # Row sums can drift by a few ulp; renormalize so the chain validates.
    kernel /= kernel.sum(axis=1, keepdims=True)
    reward = np.einsum("sa,sa->s", policy.probs, mdp.reward)
    return InducedChain(kernel, reward)


def exact_value(mdp, policy):
    """True value function: solves ``(I - gamma P^pi) V = R^pi``."""
    chain = induce_chain(mdp, policy)
    n = chain.num_states
    try:
        return np.linalg.solve(np.eye(n) - mdp.gamma * chain.kernel, chain.reward)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - impossible for gamma < 1
        raise RuntimeError("Bellman system is singular") from exc


def bellman_apply(chain, v, gamma):
    """Apply ``T v = R^pi + gamma P^pi v``; ``v`` may carry leading batch axes."""
    v = np.asarray(v, dtype=np.float64)
    if v.shape[-1] != chain.num_states:
        raise DimensionError(
            f"value vector has {v.shape[-1]} entries, chain has {chain.num_states} states"
        )
    return chain.reward + gamma * v @ chain.kernel.T


def is_irreducible(kernel):
    n_comp, _ = connected_components(kernel > 0, directed=True, connection="strong")
    return n_comp == 1


def stationary_distribution(chain, tol=PROB_TOL, max_iter=100_000, smoothing=1e-8):
    """Stationary distribution of ``chain`` by power iteration.

    Iterates the lazy kernel ``(I + P) / 2`` (same fixed point, aperiodic) until
    successive iterates differ by at most ``tol`` in L1. A reducible chain is
    first blended with ``smoothing`` uniform mass; the blend is recorded in the
    returned ``meta``.

    Raises
    ------
    ConvergenceError
        If ``max_iter`` iterations do not reach ``tol``.
    """
    K = np.array(chain.kernel)
    n = K.shape[0]
    meta = {"method": "power-iteration", "smoothing": 0.0}
    if not is_irreducible(K):
        K = (1.0 - smoothing) * K + smoothing / n
        meta["smoothing"] = smoothing
        meta["note"] = "kernel was reducible; blended with uniform noise"
    lazy = 0.5 * (K + np.eye(n))
    xi = np.full(n, 1.0 / n)
    diff = np.inf
    for it in range(1, max_iter + 1):
        nxt = xi @ lazy
        nxt /= nxt.sum()
        diff = np.abs(nxt - xi).sum()
        xi = nxt
        if diff <= tol:
            break
    else:
        raise ConvergenceError(
            f"power iteration did not converge in {max_iter} iterations",
            residual=diff,
            iterations=max_iter,
        )
    xi = np.clip(xi, 0.0, None)
    xi /= xi.sum()
    meta["iterations"] = it
    meta["residual_l1"] = float(np.abs(xi @ K - xi).sum())
    return StateDistribution(xi, meta)
