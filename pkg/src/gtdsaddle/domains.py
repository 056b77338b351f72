"""Benchmark domains: Baird's star, the 50-state chain and an energy-storage MDP.

Each constructor returns a :class:`DomainBundle` holding everything needed
to run an experiment: the MDP, behavior and target policies, the sampling
distribution ``xi``, a feature basis and the initial weight vector.
"""

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .features import FeatureBasis, bebf_basis
from .mdp import Mdp, PolicyTable, StateDistribution, induce_chain, stationary_distribution
from .sampling import exact_moments, importance_ratios

__all__ = ["DomainBundle", "baird", "chain50", "energy", "get_domain", "DOMAINS", "export_bundle"]

DASHED, SOLID = 0, 1
BUY, HOLD, SELL = 0, 1, 2


@dataclass(frozen=True)
class DomainBundle:
    mdp: Mdp
    behavior: PolicyTable
    target: PolicyTable
    xi: StateDistribution
    basis: FeatureBasis
    name: str
    theta0: np.ndarray = None
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        # raises AbsoluteContinuityError on a support violation
        importance_ratios(self.behavior, self.target)
        n = self.mdp.num_states
        if self.basis.num_states != n or self.xi.num_states != n:
            raise ValueError(f"{self.name}: basis/xi size disagrees with the MDP")
        theta0 = np.zeros(self.basis.dim) if self.theta0 is None else np.asarray(self.theta0, float)
        if theta0.shape != (self.basis.dim,):
            raise ValueError(f"{self.name}: theta0 must have {self.basis.dim} entries")
        object.__setattr__(self, "theta0", theta0)

    @property
    def gamma(self):
        return self.mdp.gamma

    @property
    def rho_max(self):
        return float(importance_ratios(self.behavior, self.target).max())

    @property
    def on_policy(self):
        return bool(np.array_equal(self.behavior.probs, self.target.probs))

    def moments(self):
        return exact_moments(self.mdp, self.behavior, self.target, self.xi, self.basis)

    def target_chain(self):
        return induce_chain(self.mdp, self.target)

    def manifest(self):
        return {
            "name": self.name,
            "gamma": self.mdp.gamma,
            "states": self.mdp.num_states,
            "actions": self.mdp.num_actions,
            "dim": self.basis.dim,
            "feature_bound": self.basis.feature_bound,
            "rho_max": self.rho_max,
            "on_policy": self.on_policy,
            "behavior": self.behavior.probs.tolist(),
            "target": self.target.probs.tolist(),
            "xi": self.xi.weights.tolist(),
            "xi_meta": self.xi.meta,
            "basis": self.basis.table.tolist(),
            "basis_meta": self.basis.meta,
            "theta0": self.theta0.tolist(),
            "meta": self.meta,
        }


def export_bundle(bundle, out_dir):
    """Write ``<name>.mdp.json`` and ``<name>.manifest.json``; returns both paths."""
    os.makedirs(out_dir, exist_ok=True)
    mdp_path = os.path.join(out_dir, f"{bundle.name}.mdp.json")
    man_path = os.path.join(out_dir, f"{bundle.name}.manifest.json")
    with open(mdp_path, "w") as fh:
        fh.write(bundle.mdp.to_json(indent=1))
    with open(man_path, "w") as fh:
        json.dump(bundle.manifest(), fh, indent=1, default=float)
    return mdp_path, man_path


def baird(gamma=0.99, solid_prob=1.0 / 7.0, reward=0.0, canonical_start=True):
    """Baird's seven-state star.

    Action ``dashed`` (0) moves uniformly to one of states 1-6, ``solid`` (1)
    moves to state 7. The behavior policy picks solid with ``solid_prob``;
    the target policy always picks solid. ``reward`` is a scalar paid on
    every transition (0 in the classical problem) or a pair
    ``(r_dashed, r_solid)``. Features are the canonical eight-dimensional
    star features.
    """
    S = 7
    P = np.zeros((S, 2, S))
    P[:, DASHED, :6] = 1.0 / 6.0
    P[:, SOLID, 6] = 1.0
    R = np.array(np.broadcast_to(np.asarray(reward, dtype=float), (S, 2)))
    mdp = Mdp(P, R, gamma)
    behavior = PolicyTable(np.tile([1.0 - solid_prob, solid_prob], (S, 1)))
    target = PolicyTable.deterministic(np.full(S, SOLID), 2)
    phi = np.zeros((S, 8))
    phi[np.arange(6), np.arange(6)] = 2.0
    phi[:6, 7] = 1.0
    phi[6, 6], phi[6, 7] = 1.0, 2.0
    basis = FeatureBasis(phi, {"kind": "baird-star"})
    theta0 = np.array([1, 1, 1, 1, 1, 1, 10, 1], float) if canonical_start else np.zeros(8)
    meta = {"solid_prob": solid_prob, "reward": np.asarray(reward, dtype=float).tolist(), "canonical_start": canonical_start}
    return DomainBundle(mdp, behavior, target, StateDistribution.uniform(S), basis, "baird", theta0, meta)


def chain50(n_states=50, gamma=0.9, success=0.9, reward_states=(9, 40), k=5, normalize="xi"):
    """Random-walk chain with two actions, evaluated on-policy under uniform play.

    Left/right succeed with probability ``success`` and otherwise move the
    opposite way; moves are clamped at the ends. Reward 1 is paid in the
    states listed in ``reward_states`` (0-based; 9 and 40 are states 10
    and 41 in one-based numbering). Features are ``k`` Bellman-error basis
    functions under the stationary distribution.
    """
    N = int(n_states)
    P = np.zeros((N, 2, N))
    for s in range(N):
        left, right = max(s - 1, 0), min(s + 1, N - 1)
        P[s, 0, left] += success
        P[s, 0, right] += 1.0 - success
        P[s, 1, right] += success
        P[s, 1, left] += 1.0 - success
    R = np.zeros((N, 2))
    R[list(reward_states), :] = 1.0
    mdp = Mdp(P, R, gamma)
    policy = PolicyTable.uniform(N, 2)
    xi = stationary_distribution(induce_chain(mdp, policy))
    basis = bebf_basis(mdp, policy, xi, k, normalize=normalize)
    meta = {"success": success, "reward_states": list(reward_states), "k": k}
    return DomainBundle(mdp, policy, policy, xi, basis, "chain50", None, meta)


def energy(n_prices=5, n_levels=10, gamma=0.95, price_low=1.0, price_high=5.0,
           price_stay=0.6, degradation=0.5, target_mix=0.5):
    """Energy-storage stand-in: buy, hold or sell one unit each step.

    The price index follows a lazy random walk on ``n_prices`` levels
    (stay with ``price_stay``, otherwise step to a neighbour, clamped).
    Storage takes ``n_levels`` values; selling when empty or buying when
    full is a no-op. The reward is the cash flow ``-price * moved`` minus
    ``degradation`` whenever a move ends fully charged or fully discharged.
    Behavior is uniform; the target mixes a threshold rule (buy when cheap,
    sell when dear) with uniform play in proportion ``target_mix``. ``xi``
    is the stationary distribution of the behavior chain. Features are the
    quadratic polynomial basis in normalized (price, level).
    """
    kp, ks = int(n_prices), int(n_levels)
    prices = np.linspace(price_low, price_high, kp)
    move = (1 - price_stay) / 2.0
    Pp = np.zeros((kp, kp))
    for i in range(kp):
        Pp[i, i] += price_stay
        Pp[i, max(i - 1, 0)] += move
        Pp[i, min(i + 1, kp - 1)] += move
    S = kp * ks
    P = np.zeros((S, 3, S))
    R = np.zeros((S, 3))
    for p in range(kp):
        for s in range(ks):
            i = p * ks + s
            for a, step in ((BUY, 1), (HOLD, 0), (SELL, -1)):
                s2 = min(max(s + step, 0), ks - 1)
                moved = s2 - s
                penalty = degradation if moved != 0 and s2 in (0, ks - 1) else 0.0
                R[i, a] = -prices[p] * moved - penalty
                P[i, a, np.arange(kp) * ks + s2] += Pp[p]
    mdp = Mdp(P, R, gamma)
    behavior = PolicyTable.uniform(S, 3)
    rule = np.empty(S, dtype=int)
    for p in range(kp):
        rule[p * ks:(p + 1) * ks] = BUY if p < kp // 2 else (SELL if p > kp // 2 else HOLD)
    target = PolicyTable(target_mix * PolicyTable.deterministic(rule, 3).probs + (1 - target_mix) / 3.0)
    xi = stationary_distribution(induce_chain(mdp, behavior))
    pp = np.repeat(np.linspace(-1, 1, kp), ks)
    ss = np.tile(np.linspace(-1, 1, ks), kp)
    basis = FeatureBasis(np.stack([np.ones(S), pp, ss, pp * ss, ss ** 2, pp ** 2], 1), {"kind": "quadratic"})
    bundle = DomainBundle(mdp, behavior, target, xi, basis, "energy", None, {})
    A, b, _ = bundle.moments()
    theta, *_ = np.linalg.lstsq(A, b, rcond=None)
    meta = {
        "n_prices": kp, "n_levels": ks, "degradation": degradation, "target_mix": target_mix,
        "a_solvable": bool(np.linalg.norm(A @ theta - b) <= 1e-9 * max(1.0, np.linalg.norm(b))),
        "a_min_singular": float(np.linalg.svd(A, compute_uv=False)[-1]),
    }
    return DomainBundle(mdp, behavior, target, xi, basis, "energy", None, meta)


DOMAINS = {"baird": baird, "chain50": chain50, "energy": energy}


def get_domain(name, **overrides):
    try:
        ctor = DOMAINS[name]
    except KeyError:
        raise ValueError(f"unknown domain {name!r}; choose from {sorted(DOMAINS)}") from None
    return ctor(**overrides)
