"""Linear feature bases, the xi-weighted projection and BEBF construction."""

import json
from dataclasses import dataclass, field

import numpy as np

from ._validation import as_float_array, frozen
from .exceptions import ConditioningError, DimensionError
from .mdp import bellman_apply, exact_value, induce_chain

__all__ = ["FeatureBasis", "WeightedProjector", "build_projector", "bebf_basis", "weighted_norm"]

SINGULAR_TOL = 1e-12


def weighted_norm(v, xi):
    """``||v||_xi``; ``v`` may carry leading batch axes."""
    weights = getattr(xi, "weights", xi)
    return np.sqrt(np.sum(weights * np.square(v), axis=-1))


@dataclass(frozen=True)
class FeatureBasis:
    """Feature table ``Phi`` of shape ``(n_states, d)``.

    ``feature_bound`` is the smallest valid ``L``, i.e. the largest absolute
    entry of the table. Rank deficiency is allowed and reported through
    ``rank``.
    """

    table: np.ndarray
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        phi = as_float_array(self.table, ndim=2, name="feature table")
        if phi.shape[1] < 1:
            raise DimensionError("a basis needs at least one feature")
        object.__setattr__(self, "table", frozen(phi))

    @property
    def dim(self):
        return self.table.shape[1]

    @property
    def num_states(self):
        return self.table.shape[0]

    @property
    def feature_bound(self):
        return float(np.abs(self.table).max())

    @property
    def rank(self):
        return int(np.linalg.matrix_rank(self.table))

    def __getitem__(self, states):
        return self.table[states]

    def to_json(self):
        return json.dumps(self.table.tolist())

    @classmethod
    def from_json(cls, text):
        return cls(np.array(json.loads(text), dtype=float))


@dataclass(frozen=True)
class WeightedProjector:
    """``Pi = Phi (Phi^T Xi Phi)^{-1} Phi^T Xi`` together with ``C`` and its spectrum."""

    matrix: np.ndarray
    covariance: np.ndarray
    nu: float
    tau_c: float

    def project(self, g):
        return np.asarray(g, dtype=float) @ self.matrix.T


def build_projector(basis, xi):
    """Build the xi-orthogonal projector onto ``span(Phi)``.

    Raises
    ------
    ConditioningError
        If ``C = Phi^T Xi Phi`` is numerically singular; the error carries
        ``lambda_min(C)``.
    """
    phi = basis.table
    w = xi.weights
    if phi.shape[0] != w.size:
        raise DimensionError(f"basis has {phi.shape[0]} states, xi has {w.size}")
    C = phi.T @ (w[:, None] * phi)
    C = 0.5 * (C + C.T)
    eig = np.linalg.eigvalsh(C)
    nu, tau_c = float(eig[0]), float(eig[-1])
    if nu <= SINGULAR_TOL * max(1.0, tau_c):
        raise ConditioningError(
            f"feature covariance is singular (lambda_min={nu:.3e})", min_eigenvalue=nu
        )
    matrix = phi @ np.linalg.solve(C, phi.T * w)
    return WeightedProjector(frozen(matrix), frozen(C), max(nu, 0.0), tau_c)


def _xi_fit(cols, target, w):
    phi = np.column_stack(cols)
    coef, *_ = np.linalg.lstsq(phi * np.sqrt(w)[:, None], target * np.sqrt(w), rcond=None)
    return phi @ coef


def bebf_basis(mdp, policy, xi, k, tol=1e-12, normalize="xi"):
    """Bellman-error basis functions.

    Starts from the constant feature; each new feature is the Bellman error
    ``T v_j - v_j`` of the xi-weighted least-squares fit ``v_j`` of the true
    value function on the current features, Gram-Schmidt orthogonalized in
    the xi inner product.

    Parameters
    ----------
    k : int
        Requested number of features.
    normalize : {"xi", "unit-max"}
        ``"xi"`` returns xi-orthonormal columns. ``"unit-max"`` keeps the
        columns xi-orthogonal but rescales each to max-absolute-entry 1, so
        the feature bound is ``L = 1``.

    Returns
    -------
    FeatureBasis
        ``meta["truncated"]`` is True when the Bellman error vanished (below
        ``tol``) before ``k`` features were built.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if normalize not in ("xi", "unit-max"):
        raise ValueError(f"unknown normalization {normalize!r}")
    w = xi.weights
    chain = induce_chain(mdp, policy)
    V = exact_value(mdp, policy)

    one = np.ones(mdp.num_states)
    cols = [one / weighted_norm(one, w)]
    truncated = False
    while len(cols) < k:
        fit = _xi_fit(cols, V, w)
        err = bellman_apply(chain, fit, mdp.gamma) - fit
        # Two passes of modified Gram-Schmidt keep the columns orthogonal to
        # machine precision.
        for _ in range(2):
            for c in cols:
                err = err - np.sum(w * err * c) * c
        norm = weighted_norm(err, w)
        if norm < tol:
            truncated = True
            break
        cols.append(err / norm)

    table = np.column_stack(cols)
    if normalize == "unit-max":
        table = table / np.abs(table).max(axis=0)
    meta = {"kind": "bebf", "requested": k, "truncated": truncated, "normalize": normalize}
    return FeatureBasis(table, meta)
