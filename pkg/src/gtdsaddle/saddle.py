"""Objectives and the convex-concave saddle-point problem behind gradient TD.

The saddle function is

    L(theta, y) = <b - A theta, y> - 1/2 ||y||_M^2,

with ``M = I`` (GTD, NEU objective) or ``M = C`` (GTD2, MSPBE objective).
Maximizing over ``y`` gives ``y*(theta) = M^{-1}(b - A theta)`` and
``max_y L = J(theta) / 2`` with ``J(theta) = ||b - A theta||^2_{M^{-1}}``.

When ``M`` or ``A`` is rank deficient (Baird's star basis has 8 features on
7 states) inverses are replaced by pseudo-inverses on the range of ``M``;
``b - A theta`` always lies in ``range(Phi^T) = range(C)``, so the identities
above remain exact.
"""

from dataclasses import dataclass

import numpy as np

from .exceptions import ConditioningError, DimensionError, NumericError
from .features import weighted_norm
from .mdp import bellman_apply, induce_chain

__all__ = [
    "M_MODES",
    "SaddleObjective",
    "SaddlePoint",
    "default_radii",
    "saddle_point",
    "lagrangian",
    "lagrangian_gradient",
    "gradient_field",
    "y_star",
    "j_value",
    "neu",
    "mspbe",
    "msbe",
    "mspbe_projected",
    "lemma1_residual",
    "err",
    "max_over_y",
    "min_over_theta",
]

M_MODES = ("identity", "covariance")
RANK_TOL = 1e-10
TR_TOL = 1e-10
TR_MAX_ITER = 200


def _spectral(M):
    lam, Q = np.linalg.eigh(0.5 * (M + M.T))
    cutoff = RANK_TOL * max(1.0, float(lam[-1]))
    lam = np.where(lam > cutoff, lam, 0.0)
    return lam, Q


class SaddleObjective:
    """Exact saddle problem ``(A, b, C, M)`` plus feasible-ball radii.

    Parameters
    ----------
    moments : MomentTriple
        Exact ``(A, b, C)``.
    m_mode : {"identity", "covariance"}
        ``M = I`` or ``M = C``.
    radius_theta, radius_y : float
        Radii of the Euclidean feasible balls ``Theta`` and ``Y``
        (``np.inf`` means unconstrained).
    allow_singular : bool
        Accept a singular ``C`` in covariance mode and work with
        pseudo-inverses; otherwise raise :class:`ConditioningError`.
    """

    def __init__(self, moments, m_mode="identity", radius_theta=np.inf, radius_y=np.inf,
                 allow_singular=False):
        if m_mode not in M_MODES:
            raise ValueError(f"m_mode must be one of {M_MODES}, got {m_mode!r}")
        A, b, C = (np.asarray(x, dtype=float) for x in moments)
        d = b.size
        if A.shape != (d, d) or C.shape != (d, d):
            raise DimensionError("A, b and C must have shapes (d, d), (d,), (d, d)")
        if radius_theta <= 0 or radius_y <= 0:
            raise ValueError("feasible radii must be positive")
        self.moments = moments
        self.A, self.b, self.C = A, b, C
        self.m_mode = m_mode
        self.radius_theta = float(radius_theta)
        self.radius_y = float(radius_y)
        self.M = np.eye(d) if m_mode == "identity" else 0.5 * (C + C.T)
        self.m_eigvals, self.m_eigvecs = _spectral(self.M)
        self.rank_deficient = bool(np.any(self.m_eigvals == 0.0))
        if self.rank_deficient and not allow_singular:
            raise ConditioningError(
                "M = C is singular; pass allow_singular=True to use pseudo-inverses",
                min_eigenvalue=float(np.linalg.eigvalsh(self.M)[0]),
            )
        inv = np.zeros_like(self.m_eigvals)
        np.divide(1.0, self.m_eigvals, out=inv, where=self.m_eigvals > 0)
        self.M_pinv = (self.m_eigvecs * inv) @ self.m_eigvecs.T
        self.tau = 1.0 if m_mode == "identity" else float(self.m_eigvals[-1])
        self.norm_a = float(np.linalg.norm(A, 2))
        self.norm_b = float(np.linalg.norm(b))

    @property
    def dim(self):
        return self.b.size

    @property
    def radius(self):
        return max(self.radius_theta, self.radius_y)

    def with_radii(self, radius_theta, radius_y):
        return SaddleObjective(self.moments, self.m_mode, radius_theta, radius_y,
                               allow_singular=self.rank_deficient)

    def residual(self, theta):
        """``b - A theta`` (batched over leading axes)."""
        return self.b - np.asarray(theta, dtype=float) @ self.A.T

    def __repr__(self):
        return (f"SaddleObjective(d={self.dim}, m_mode={self.m_mode!r}, "
                f"radius_theta={self.radius_theta:g}, radius_y={self.radius_y:g})")


@dataclass(frozen=True)
class SaddlePoint:
    theta_star: np.ndarray
    y_star: np.ndarray
    residual: float
    solvable: bool


def saddle_point(obj, tol=1e-8):
    """Minimum-norm least-squares ``theta*`` with ``y* = M^+(b - A theta*)``.

    ``solvable`` reports whether ``A theta = b`` holds to ``tol``.
    """
    theta, *_ = np.linalg.lstsq(obj.A, obj.b, rcond=None)
    res = obj.residual(theta)
    ys = y_star(obj, theta)
    norm = float(np.linalg.norm(res))
    return SaddlePoint(theta, ys, norm, norm <= tol * max(1.0, obj.norm_b))


def default_radii(moments, m_mode="identity", theta0=None, allow_singular=True):
    """Feasible radii guaranteeing ``theta*`` in ``Theta`` and a large enough ``Y``.

    ``R_theta = 10 max(||theta_LS||, ||theta_0||)`` (1 if both vanish) and
    ``R_y = max(R_theta, (||b|| + ||A|| R_theta) / tau)``; the second term
    keeps ``(b - A theta) / tau`` inside ``Y`` for every ``theta`` in ``Theta``.
    """
    probe = SaddleObjective(moments, m_mode, allow_singular=allow_singular)
    theta_ls = saddle_point(probe).theta_star
    scale = max(np.linalg.norm(theta_ls), 0.0 if theta0 is None else np.linalg.norm(theta0))
    r_theta = 10.0 * scale if scale > 0 else 1.0
    r_y = max(r_theta, (probe.norm_b + probe.norm_a * r_theta) / probe.tau)
    return float(r_theta), float(r_y)


def lagrangian(obj, theta, y):
    """``<b - A theta, y> - 1/2 y^T M y``."""
    y = np.asarray(y, dtype=float)
    return np.sum(obj.residual(theta) * y, axis=-1) - 0.5 * np.sum((y @ obj.M) * y, axis=-1)


def lagrangian_gradient(obj, theta, y):
    """``(grad_theta L, grad_y L) = (-A^T y, b - A theta - M y)``."""
    y = np.asarray(y, dtype=float)
    return -(y @ obj.A), obj.residual(theta) - y @ obj.M


def gradient_field(obj, theta, y):
    """Deterministic update directions (descend in theta, ascend in y).

    Returns ``(A^T y, b - A theta - M y)``; GTD/GTD2 step along this field
    with unbiased per-sample estimates of ``A``, ``b`` and ``M``.
    """
    g_theta, g_y = lagrangian_gradient(obj, theta, y)
    return -g_theta, g_y


def y_star(obj, theta):
    """Maximizer ``M^{-1}(b - A theta)`` of ``L(theta, .)``."""
    return obj.residual(theta) @ obj.M_pinv


def j_value(obj, theta):
    """``J(theta) = ||b - A theta||^2_{M^{-1}}``."""
    r = obj.residual(theta)
    return np.sum((r @ obj.M_pinv) * r, axis=-1)


def _moment_objective(moments, m_mode):
    if hasattr(moments, "m_mode"):
        moments = moments.moments
    return SaddleObjective(moments, m_mode, allow_singular=True)


def neu(moments, theta):
    """Norm of the expected TD update, ``||b - A theta||^2``."""
    return j_value(_moment_objective(moments, "identity"), theta)


def mspbe(moments, theta):
    """Mean-square projected Bellman error, ``||b - A theta||^2_{C^{-1}}``."""
    return j_value(_moment_objective(moments, "covariance"), theta)


def msbe(chain, basis, xi, gamma, theta):
    """Mean-square Bellman error ``||T v - v||^2_xi`` with ``v = Phi theta``.

    ``chain`` is the target policy's induced chain.
    """
    v = np.asarray(theta, dtype=float) @ basis.table.T
    return np.square(weighted_norm(bellman_apply(chain, v, gamma) - v, xi))


def mspbe_projected(projector, chain, basis, xi, gamma, theta):
    """MSPBE through the projection, ``||v - Pi T v||^2_xi``."""
    v = np.asarray(theta, dtype=float) @ basis.table.T
    return np.square(weighted_norm(v - projector.project(bellman_apply(chain, v, gamma)), xi))


def lemma1_residual(mdp, pi_b, pi, xi, basis, theta):
    """``||Phi^T Xi (T v - v) - (b - A theta)||_2`` for ``v = Phi theta``.

    ``T`` is the target policy's Bellman operator and ``(A, b)`` are the
    behavior-sampled moments, so this vanishes exactly when importance
    weighting corrects the sampling.
    """
    from .sampling import exact_moments

    A, b, _ = exact_moments(mdp, pi_b, pi, xi, basis)
    chain = induce_chain(mdp, pi)
    theta = np.asarray(theta, dtype=float)
    v = theta @ basis.table.T
    lhs = (xi.weights * (bellman_apply(chain, v, mdp.gamma) - v)) @ basis.table
    return np.linalg.norm(lhs - (b - theta @ A.T), axis=-1)


def _tr_values(gt, lam, shift):
    denom = lam + shift
    y = gt / denom
    return np.sum(gt * y - 0.5 * lam * y * y, axis=-1), np.sqrt(np.sum(y * y, axis=-1))


def max_over_y(obj, theta):
    """``max_{||y|| <= R_y} L(theta, y)`` and its maximizer.

    A concave trust-region subproblem. In the eigenbasis of ``M`` the
    maximizer is ``y(lambda) = (M + lambda I)^+ g`` with ``g = b - A theta``;
    if the unconstrained optimum lies outside the ball the multiplier
    ``lambda > 0`` solving ``||y(lambda)|| = R_y`` is found by safeguarded
    Newton on ``1/||y(lambda)|| - 1/R_y`` inside the bracket
    ``[0, ||g|| / R_y]``.

    Raises
    ------
    NumericError
        If the multiplier search does not converge within 200 iterations.
    """
    g = obj.residual(theta)
    lam, Q = obj.m_eigvals, obj.m_eigvecs
    gt = np.atleast_2d(g @ Q)
    with np.errstate(over="ignore", invalid="ignore"):
        gnorm = np.linalg.norm(gt, axis=-1)
    # overflowed residuals (runaway iterates) have an infinite maximum
    blown = ~np.isfinite(gnorm)
    gt = np.where(blown[:, None], 0.0, gt)
    gnorm = np.where(blown, 0.0, gnorm)
    R = obj.radius_y

    # Components along the null space of M make L unbounded in y.
    null = lam == 0.0
    unbounded = np.any(np.abs(gt[:, null]) > RANK_TOL * np.maximum(gnorm, 1.0)[:, None], axis=-1)
    gt = np.where(null & ~unbounded[:, None], 0.0, gt)
    inv = np.zeros_like(lam)
    np.divide(1.0, lam, out=inv, where=~null)
    y_free = gt * inv
    val_free = 0.5 * np.sum(gt * y_free, axis=-1)
    norm_free = np.linalg.norm(y_free, axis=-1)

    boundary = unbounded | (norm_free > R)
    shift = np.zeros(gt.shape[0])
    if np.isfinite(R) and np.any(boundary):
        gb = gt[boundary]
        lo = np.zeros(gb.shape[0])
        hi = np.linalg.norm(gb, axis=-1) / R
        x = 0.5 * hi
        done = np.zeros(gb.shape[0], dtype=bool)
        for _ in range(TR_MAX_ITER):
            denom = lam + x[:, None]
            phi2 = np.sum(np.square(gb / denom), axis=-1)
            ynorm = np.sqrt(phi2)
            f = ynorm - R
            # bracket collapsed to rounding level: x is as accurate as it gets
            done = (np.abs(f) <= TR_TOL * R) | (hi - lo <= 4 * np.finfo(float).eps * hi)
            if np.all(done):
                break
            # ||y|| is decreasing in lambda: too long means lambda is too small.
            lo = np.where(f > 0, x, lo)
            hi = np.where(f < 0, x, hi)
            dphi2 = -2.0 * np.sum(np.square(gb) / denom**3, axis=-1)
            psi = 1.0 / ynorm - 1.0 / R
            dpsi = -0.5 * phi2**-1.5 * dphi2
            with np.errstate(divide="ignore", invalid="ignore"):
                newton = x - psi / dpsi
            ok = np.isfinite(newton) & (newton > lo) & (newton < hi)
            x = np.where(done, x, np.where(ok, newton, 0.5 * (lo + hi)))
        else:
            if not np.all(done):
                raise NumericError(
                    "trust-region multiplier search did not converge",
                    bracket=(lo[~done].tolist(), hi[~done].tolist()),
                )
        shift[boundary] = x
    elif np.any(boundary):
        val_free = np.where(boundary, np.inf, val_free)

    val = val_free.copy()
    y_opt = y_free.copy()
    if np.isfinite(R) and np.any(boundary):
        sh = shift[boundary][:, None]
        val[boundary], _ = _tr_values(gt[boundary], lam, sh)
        y_opt[boundary] = gt[boundary] / (lam + sh)
    val = np.where(blown, np.inf, val)
    y_opt = np.where(blown[:, None], np.nan, y_opt) @ Q.T
    if np.ndim(g) == 1:
        return float(val[0]), y_opt[0]
    return val, y_opt


def min_over_theta(obj, y):
    """``min_{||theta|| <= R_theta} L(theta, y)`` (closed form; linear in theta)."""
    y = np.asarray(y, dtype=float)
    aty = np.linalg.norm(y @ obj.A, axis=-1)
    base = y @ obj.b - 0.5 * np.sum((y @ obj.M) * y, axis=-1)
    if not np.isfinite(obj.radius_theta):
        return np.where(aty > 0, -np.inf, base)
    return base - obj.radius_theta * aty


def err(obj, theta, y):
    """Saddle-point gap ``max_{y' in Y} L(theta, y') - min_{theta' in Theta} L(theta', y)``."""
    upper, _ = max_over_y(obj, theta)
    return upper - min_over_theta(obj, y)
