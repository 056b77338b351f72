"""Closed-form constants and finite-sample bounds, evaluated numerically.

Bounds are returned as :class:`BoundReport` objects carrying the value,
the inputs used and flags describing approximations (for example
``probe-max`` variance estimates or ``order-only`` rate expressions).
"""

import json
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from .exceptions import DimensionError
from .features import weighted_norm
from .mdp import exact_value
from .sampling import importance_ratios, make_rng
from .saddle import err as saddle_err

__all__ = [
    "BoundInputs",
    "BoundReport",
    "bound_inputs",
    "lemma2_bounds",
    "estimate_sigmas",
    "m_star",
    "light_tail_constants",
    "prop3_bound",
    "theorem1_check",
    "prop4_bound",
    "kolter_lmi_check",
    "prop5_bound",
    "rate_table",
    "prop6_bound",
    "projection_residual",
    "LmiWarning",
]


class LmiWarning(UserWarning):
    """The sampling distribution fails the off-policy LMI; a bound is inapplicable."""


@dataclass(frozen=True)
class BoundInputs:
    """Problem constants that enter the bounds.

    ``norm_a``/``norm_b`` are exact ``||A||_2``/``||b||_2`` when known; left
    as ``None``, the a-priori norm bounds of :func:`lemma2_bounds` are substituted (and flagged).
    """

    L: float
    d: int
    gamma: float
    rho_max: float
    r_max: float
    R: float
    tau: float = 1.0
    sigma1: float = 0.0
    sigma2: float = 0.0
    xi_max: float = 1.0
    nu: float = 1.0
    tau_c: float = 1.0
    sigma_min_amia: float = 1.0
    delta: float = 0.05
    norm_a: float = None
    norm_b: float = None

    def __post_init__(self):
        for name, value in asdict(self).items():
            if value is not None and value < 0:
                raise ValueError(f"{name} must be non-negative")
        if not 0.0 < self.delta < 1.0:
            raise ValueError("delta must lie in (0, 1)")

    @property
    def sigma(self):
        return float(np.hypot(self.sigma1, self.sigma2))

    def norms(self):
        """``(||A||, ||b||, flags)``, falling back to :func:`lemma2_bounds`."""
        a_bound, b_bound = lemma2_bounds(self)
        flags = []
        norm_a, norm_b = self.norm_a, self.norm_b
        if norm_a is None:
            norm_a = a_bound
            flags.append("lemma2-norm-a")
        if norm_b is None:
            norm_b = b_bound
            flags.append("lemma2-norm-b")
        return norm_a, norm_b, flags

    def to_dict(self):
        out = asdict(self)
        out["sigma"] = self.sigma
        return out


@dataclass
class BoundReport:
    name: str
    value: float
    inputs: dict = field(default_factory=dict)
    flags: list = field(default_factory=list)

    def __float__(self):
        return float(self.value)

    def to_dict(self):
        return {"name": self.name, "value": float(self.value), "inputs": self.inputs, "flags": list(self.flags)}

    def to_json(self, **kwargs):
        return json.dumps(self.to_dict(), default=float, **kwargs)


def lemma2_bounds(inputs):
    """``(||A||_2 <= (1+gamma) rho_max L^2 d, ||b||_2 <= rho_max L r_max)``."""
    i = inputs
    return (1.0 + i.gamma) * i.rho_max * i.L ** 2 * i.d, i.rho_max * i.L * i.r_max


def _sphere(rng, k, d, radius):
    z = rng.standard_normal((k, d))
    return radius * z / np.linalg.norm(z, axis=1, keepdims=True)


def _unit_rows(g, radius):
    norm = np.linalg.norm(g, axis=1, keepdims=True)
    return np.where(norm > 0, radius * g / np.where(norm > 0, norm, 1.0), 0.0)


def estimate_sigmas(mdp, pi_b, pi, xi, basis, objective, k_probe=16, seed=0, max_iter=500):
    """Variance constants ``(sigma_1, sigma_2)`` by exact enumeration.

    ``sigma_1^2`` bounds the exact variance of ``b_t - A_t theta - M_t y`` and
    ``sigma_2^2`` that of ``A_t^T y`` over ``Theta x Y``. Expectations run
    over every ``(s, a, s')`` with positive probability, so each variance is
    an exact quadratic form in ``(1, theta, y)``. Being convex, it peaks on
    the boundary spheres. ``sigma_2`` is then the top eigenvalue of its form
    times ``R_y^2``. ``sigma_1`` is the best of block-wise ascent runs from
    ``k_probe`` random boundary points (deterministic given ``seed``); it is
    a local maximum and hence flagged ``probe-max``.
    """
    if k_probe < 1:
        raise ValueError("k_probe must be >= 1")
    rho = importance_ratios(pi_b, pi)
    w = xi.weights[:, None, None] * pi_b.probs[:, :, None] * mdp.transition
    s, a, s2 = np.nonzero(w > 0)
    p = w[s, a, s2]
    p = p / p.sum()
    phi = basis.table[s]
    dphi = phi - mdp.gamma * basis.table[s2]
    rw = rho[s, a]
    d = basis.dim

    # sample of the y-direction as a linear map of (1, theta, y): (T, d, 1+2d)
    u = (rw * mdp.reward[s, a])[:, None] * phi
    U = rw[:, None, None] * phi[:, :, None] * dphi[:, None, :]
    if objective.m_mode == "identity":
        V = np.broadcast_to(np.eye(d), U.shape)
    else:
        V = phi[:, :, None] * phi[:, None, :]
    G = np.concatenate([u[:, :, None], -U, -V], axis=2)
    Gm = np.einsum("t,tij->ij", p, G)
    H = np.einsum("t,tij,tik->jk", p, G, G) - Gm.T @ Gm
    H = 0.5 * (H + H.T)
    Um = np.einsum("t,tij->ij", p, U)
    Q = np.einsum("t,tij,tkj->ik", p, U, U) - Um @ Um.T

    rt = objective.radius_theta if np.isfinite(objective.radius_theta) else 1.0
    ry = objective.radius_y if np.isfinite(objective.radius_y) else 1.0
    sigma2 = ry * np.sqrt(max(float(np.linalg.eigvalsh(0.5 * (Q + Q.T))[-1]), 0.0))

    rng = make_rng(seed, 0)
    theta = _sphere(rng, k_probe, d, rt)
    y = _sphere(rng, k_probe, d, ry)
    tb, yb = slice(1, 1 + d), slice(1 + d, 1 + 2 * d)

    def value(theta, y):
        z = np.hstack([np.ones((theta.shape[0], 1)), theta, y])
        return np.einsum("ki,ij,kj->k", z, H, z)

    current = value(theta, y)
    for _ in range(max_iter):
        # each block step maximizes the linear minorant on its sphere, so the
        # convex form never decreases
        z = np.hstack([np.ones((k_probe, 1)), theta, y])
        theta = _unit_rows(z @ H[:, tb], rt)
        z = np.hstack([np.ones((k_probe, 1)), theta, y])
        y = _unit_rows(z @ H[:, yb], ry)
        nxt = value(theta, y)
        done = np.all(nxt - current <= 1e-12 * np.maximum(1.0, np.abs(nxt)))
        current = nxt
        if done:
            break
    sigma1 = np.sqrt(max(float(current.max()), 0.0))
    return float(sigma1), float(sigma2)


def bound_inputs(bundle, objective, k_probe=16, delta=0.05, seed=0):
    """Assemble :class:`BoundInputs` for a domain bundle and saddle objective."""
    basis = bundle.basis
    s1, s2 = estimate_sigmas(bundle.mdp, bundle.behavior, bundle.target, bundle.xi, basis,
                             objective, k_probe, seed)
    C = objective.C
    eig_c = np.linalg.eigvalsh(0.5 * (C + C.T))
    amia = objective.A.T @ objective.M_pinv @ objective.A
    eig = np.linalg.eigvalsh(0.5 * (amia + amia.T))
    nonzero = eig[eig > 1e-10 * max(1.0, eig[-1])]
    return BoundInputs(
        L=basis.feature_bound, d=basis.dim, gamma=bundle.mdp.gamma, rho_max=bundle.rho_max,
        r_max=bundle.mdp.r_max, R=objective.radius, tau=objective.tau, sigma1=s1, sigma2=s2,
        xi_max=bundle.xi.xi_max, nu=max(float(eig_c[0]), 0.0), tau_c=float(eig_c[-1]),
        sigma_min_amia=float(nonzero[0]) if nonzero.size else 0.0, delta=delta,
        norm_a=objective.norm_a, norm_b=objective.norm_b,
    )


def m_star(inputs):
    """``M_* = R^2 (2 ||A|| + tau) + R (sigma + ||b||)``."""
    i = inputs
    norm_a, norm_b, flags = i.norms()
    value = i.R ** 2 * (2.0 * norm_a + i.tau) + i.R * (i.sigma + norm_b)
    return BoundReport("m_star", value, i.to_dict(), flags)


def light_tail_constants(inputs):
    """``(M_theta, M_y, M_*)`` and how ``M_*`` compares with them.

    ``M_theta^2 = sigma_2^2 + ||A||^2 R^2`` and
    ``M_y^2 = (||b|| + (||A|| + tau) R)^2 + sigma_1^2``. The returned dict
    reports ``R^2 (M_theta^2 + M_y^2) <= M_*^2`` (always true) and the
    stronger ``2 R^2 (M_theta^2 + M_y^2) <= M_*^2`` (not implied in general).
    """
    i = inputs
    norm_a, norm_b, _ = i.norms()
    m_theta = np.sqrt(i.sigma2 ** 2 + (norm_a * i.R) ** 2)
    m_y = np.sqrt((norm_b + (norm_a + i.tau) * i.R) ** 2 + i.sigma1 ** 2)
    ms = float(m_star(i))
    total = i.R ** 2 * (m_theta ** 2 + m_y ** 2)
    return {
        "m_theta": float(m_theta),
        "m_y": float(m_y),
        "m_star": ms,
        "dominated": bool(total <= ms ** 2 * (1 + 1e-12)),
        "dominated_with_factor_two": bool(2 * total <= ms ** 2 * (1 + 1e-12)),
    }


def prop3_bound(inputs, n, exact_norms=False):
    """High-probability bound on ``Err(theta_bar_n, y_bar_n)``.

    Default form (norms replaced by their :func:`lemma2_bounds` values)::

        sqrt(5/n) (8 + 2 log(2/delta)) R^2
            (rho_max L (2 (1+gamma) L d + r_max / R) + tau + sigma / R)

    With ``exact_norms=True`` the exact ``2 ||A|| + (||b|| + sigma)/R`` form
    is used instead (needs ``norm_a``/``norm_b``).
    """
    i = inputs
    if n < 1:
        raise ValueError("n must be >= 1")
    lead = np.sqrt(5.0 / n) * (8.0 + 2.0 * np.log(2.0 / i.delta)) * i.R ** 2
    flags = []
    if exact_norms:
        norm_a, norm_b, flags = i.norms()
        inner = 2.0 * norm_a + i.tau + (norm_b + i.sigma) / i.R
        flags.append("exact-norms")
    else:
        inner = i.rho_max * i.L * (2.0 * (1.0 + i.gamma) * i.L * i.d + i.r_max / i.R) + i.tau + i.sigma / i.R
        flags.append("lemma2-norms")
    return BoundReport("prop3", float(lead * inner), dict(i.to_dict(), n=int(n)), flags)


def theorem1_check(objective, theta_bar, y_bar, xi, tol=1e-9):
    """Check ``1/2 ||A theta_bar - b||^2_xi <= tau xi_max Err(theta_bar, y_bar)``.

    ``A theta - b`` lives in feature space, so its ``xi``-norm is read as the
    upper envelope ``xi_max ||.||_2^2``.

    Returns
    -------
    lhs, rhs : float
    holds : bool
    """
    xi_max = getattr(xi, "xi_max", None)
    if xi_max is None:
        xi_max = float(np.max(xi))
    res = objective.residual(theta_bar)
    lhs = 0.5 * xi_max * float(res @ res)
    rhs = objective.tau * xi_max * float(saddle_err(objective, theta_bar, y_bar))
    return lhs, rhs, bool(lhs <= rhs + tol)


def projection_residual(bundle):
    """``||V - Pi V||_xi`` for the bundle's target value function."""
    V = exact_value(bundle.mdp, bundle.target)
    w = bundle.xi.weights
    phi = bundle.basis.table
    # weighted least squares also covers rank-deficient feature tables
    coef, *_ = np.linalg.lstsq(phi * np.sqrt(w)[:, None], V * np.sqrt(w), rcond=None)
    return float(weighted_norm(V - phi @ coef, w))


def prop4_bound(inputs, err_value, v_proj_residual):
    """On-policy value-error bound ``(||V - Pi V|| + L/nu sqrt(2 d tau xi_max Err)) / (1 - gamma)``."""
    i = inputs
    flags = [] if i.rho_max == 1.0 else ["not-on-policy"]
    if i.nu <= 0:
        return BoundReport("prop4", np.inf, i.to_dict(), flags + ["singular-covariance"])
    root = np.sqrt(2.0 * i.d * i.tau * i.xi_max * max(float(err_value), 0.0))
    value = (v_proj_residual + i.L / i.nu * root) / (1.0 - i.gamma)
    inputs_out = dict(i.to_dict(), err=float(err_value), v_proj_residual=float(v_proj_residual))
    return BoundReport("prop4", float(value), inputs_out, flags)


def kolter_lmi_check(basis, xi, chain_target, tol=1e-10):
    """Minimum eigenvalue of the block matrix
    ``[[Phi^T Xi Phi, Phi^T Xi P Phi], [Phi^T P^T Xi Phi, Phi^T Xi Phi]]``.

    Returns ``(min_eig, holds)`` with ``holds = min_eig >= -tol``.
    """
    phi = np.asarray(getattr(basis, "table", basis), dtype=float)
    w = getattr(xi, "weights", xi)
    P = getattr(chain_target, "kernel", chain_target)
    if P.shape != (phi.shape[0], phi.shape[0]) or w.size != phi.shape[0]:
        raise DimensionError("basis, xi and chain disagree on the number of states")
    c = phi.T @ (w[:, None] * phi)
    cross = phi.T @ (w[:, None] * (P @ phi))
    block = np.block([[c, cross], [cross.T, c]])
    min_eig = float(np.linalg.eigvalsh(0.5 * (block + block.T))[0])
    return min_eig, bool(min_eig >= -tol)


def prop5_bound(inputs, err_value, v_proj_residual, lmi_holds=True):
    """Off-policy value-error bound.

    ``(1 + gamma sqrt(rho_max)) / (1 - gamma) ||V - Pi V||
    + sqrt(2 tau_C tau xi_max / sigma_min(A^T M^-1 A) Err)``.
    Emits :class:`LmiWarning` (and flags the report) when ``lmi_holds`` is False.
    """
    i = inputs
    flags = []
    if not lmi_holds:
        warnings.warn("sampling distribution fails the LMI; off-policy bound inapplicable", LmiWarning)
        flags.append("lmi-fails")
    lead = (1.0 + i.gamma * np.sqrt(i.rho_max)) / (1.0 - i.gamma) * v_proj_residual
    err_value = max(float(err_value), 0.0)
    if err_value == 0.0:
        tail = 0.0
    elif i.sigma_min_amia <= 0:
        tail = np.inf
        flags.append("singular-amia")
    else:
        tail = np.sqrt(2.0 * i.tau_c * i.tau * i.xi_max / i.sigma_min_amia * err_value)
    inputs_out = dict(i.to_dict(), err=err_value, v_proj_residual=float(v_proj_residual))
    return BoundReport("prop5", float(lead + tail), inputs_out, flags)


def rate_table(inputs, n):
    """Order-only rate expressions with unit constants.

    ``gtd_rate = (tau + ||A|| + sigma)/sqrt(n)``,
    ``smp_rate = (tau + ||A||)/n + sigma/sqrt(n)`` and
    ``optimal_rate = tau/n^2 + ||A||/n + sigma/sqrt(n)``.
    """
    i = inputs
    norm_a, _, flags = i.norms()
    n = np.asarray(n, dtype=float)
    out = {
        "gtd_rate": (i.tau + norm_a + i.sigma) / np.sqrt(n),
        "smp_rate": (i.tau + norm_a) / n + i.sigma / np.sqrt(n),
        "optimal_rate": i.tau / n ** 2 + norm_a / n + i.sigma / np.sqrt(n),
        "label": "order-only, unit constants",
        "flags": flags,
    }
    if out["gtd_rate"].ndim == 0:
        for k in ("gtd_rate", "smp_rate", "optimal_rate"):
            out[k] = float(out[k])
    return out


def prop6_bound(inputs, n, epsilon):
    """Order-only biased-weight rate ``(tau + ||A|| + sigma)/sqrt(n) + epsilon``."""
    if epsilon < 0:
        raise ValueError("epsilon must be non-negative")
    rates = rate_table(inputs, n)
    value = rates["gtd_rate"] + epsilon
    return BoundReport("prop6", value, dict(inputs.to_dict(), n=int(n), epsilon=float(epsilon)),
                       ["order-only"] + rates["flags"])
