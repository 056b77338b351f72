"""Scikit-learn style wrapper around the gradient-TD solvers."""

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from .features import FeatureBasis
from .sampling import SampleSet
from .solvers import VARIANTS, SolverConfig, constant, robust, run

__all__ = ["GradientTD"]


class GradientTD(RegressorMixin, BaseEstimator):
    """Linear value-function estimator trained by a gradient-TD solver.

    Parameters
    ----------
    features : FeatureBasis or array-like of shape (n_states, d)
        Feature table used to map state ids to feature vectors.
    gamma : float, default=0.9
        Discount factor.
    variant : str, default="gtd2"
        One of ``gtd``, ``gtd2``, ``gtd-proj``, ``gtd2-proj``, ``gtd2-mp``.
    step : {"constant", "robust"}, default="constant"
    alpha : float, default=0.005
        Constant step size (``step="constant"``).
    c, m_star : float
        Robust step ``2c / (m_star sqrt(5 n))`` (``step="robust"``).
    radius_theta, radius_y : float, optional
        Ball radii; required for the projected variants.
    n_iter : int, optional
        Number of updates; defaults to the number of transitions.
    theta0 : array-like, optional
        Initial weights (zeros by default).
    record_every : int, default=0
        Trace stride (0 keeps only the endpoints).

    Attributes
    ----------
    coef_ : ndarray of shape (d,)
        Step-size weighted average of the iterates.
    dual_coef_ : ndarray of shape (d,)
        Weighted average of the dual iterates.
    theta_, y_ : ndarray of shape (d,)
        Last primal and dual iterates.
    step_size_ : float
    n_iter_ : int
    trace_ : RunTrace
    """

    def __init__(self, features=None, gamma=0.9, variant="gtd2", step="constant", alpha=0.005,
                 c=1.0, m_star=None, radius_theta=None, radius_y=None, n_iter=None,
                 theta0=None, record_every=0):
        self.features = features
        self.gamma = gamma
        self.variant = variant
        self.step = step
        self.alpha = alpha
        self.c = c
        self.m_star = m_star
        self.radius_theta = radius_theta
        self.radius_y = radius_y
        self.n_iter = n_iter
        self.theta0 = theta0
        self.record_every = record_every

    def _basis(self):
        if self.features is None:
            raise ValueError("features must be given")
        if isinstance(self.features, FeatureBasis):
            return self.features
        return FeatureBasis(np.asarray(self.features, dtype=float))

    def _config(self, n):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")
        if self.step == "constant":
            policy = constant(self.alpha)
        elif self.step == "robust":
            policy = robust(self.c, self.m_star)
        else:
            raise ValueError("step must be 'constant' or 'robust'")
        return SolverConfig(self.variant, policy, n, self.radius_theta, self.radius_y, self.record_every)

    def fit(self, X, y=None):
        """Run the solver on transitions ``X``.

        ``X`` is a :class:`SampleSet` or an array of shape (n, 5) with
        columns ``s, a, r, s_next, rho``. ``y`` is ignored.
        """
        samples = X if isinstance(X, SampleSet) else SampleSet.from_array(X)
        basis = self._basis()
        if len(samples) == 0:
            raise ValueError("no transitions to fit on")
        if samples.s.max() >= basis.num_states or samples.s_next.max() >= basis.num_states:
            raise ValueError("transition state ids exceed the feature table")
        n = len(samples) if self.n_iter is None else int(self.n_iter)
        config = self._config(n)
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must lie in [0, 1)")
        trace, theta_bar, y_bar = run(config, samples, basis, theta0=self.theta0, gamma=self.gamma)
        self.coef_ = theta_bar
        self.dual_coef_ = y_bar
        self.theta_ = trace.terminal["theta"]
        self.y_ = trace.terminal["y"]
        self.step_size_ = trace.terminal["alpha"]
        self.n_iter_ = n
        self.trace_ = trace
        self.n_features_in_ = basis.dim
        return self

    def predict(self, X):
        """Values ``X @ coef_`` for feature rows ``X`` of shape (m, d)."""
        check_is_fitted(self, "coef_")
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected feature rows with {self.n_features_in_} columns")
        return X @ self.coef_

    def value_function(self):
        """Estimated values of every state, ``Phi @ coef_``."""
        check_is_fitted(self, "coef_")
        return self._basis().table @ self.coef_
