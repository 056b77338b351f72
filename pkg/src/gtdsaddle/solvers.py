"""Stochastic gradient-TD solvers of the saddle problem.

Variants
--------
``gtd``        raw GTD: ``M_t = I``, no projection.
``gtd2``       raw GTD2: ``M_t = phi phi^T``, no projection.
``gtd-proj``   GTD with ball projections and step-size weighted averaging.
``gtd2-proj``  GTD2 with ball projections and step-size weighted averaging.
``gtd2-mp``    GTD2 mirror-prox (extragradient with identity mirror map);
               projects after both half-steps when radii are finite.

All variants use simultaneous updates: the ``theta`` and ``y`` sub-steps
both read the pre-step pair, which is exactly a step along the saddle
gradient field. Every variant outputs the step-size weighted averages
``sum_t alpha_t theta_t / sum_t alpha_t`` over ``theta_1 .. theta_n``.

The work horse :func:`run_batch` advances ``R`` independent runs at once
(arrays of shape ``(R, d)``). Only row-wise operations are used, so a run's
trajectory does not depend on which other runs share its batch.
"""

import csv
import io
import json
from dataclasses import dataclass, field, replace

import numpy as np

from .exceptions import SampleExhaustedError
from .features import weighted_norm
from .saddle import err as saddle_err
from .saddle import j_value, mspbe, neu

__all__ = [
    "VARIANTS",
    "StepPolicy",
    "constant",
    "robust",
    "SolverConfig",
    "SolverState",
    "RunTrace",
    "BatchResult",
    "Evaluator",
    "project_ball",
    "robust_step_size",
    "gtd_step",
    "gtd2_step",
    "gtd2_mp_step",
    "run",
    "projected_run",
    "gtd2_mp_run",
    "run_batch",
    "DIVERGENCE_THRESHOLD",
]

VARIANTS = ("gtd", "gtd2", "gtd-proj", "gtd2-proj", "gtd2-mp")
PROJECTED = ("gtd-proj", "gtd2-proj")
DIVERGENCE_THRESHOLD = 1e6


def project_ball(x, R):
    """Euclidean projection onto ``{||x|| <= R}`` (row-wise for 2-D input)."""
    x = np.asarray(x, dtype=float)
    if not np.isfinite(R):
        return x
    norm = np.linalg.norm(x, axis=-1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        scaled = x * (R / norm)
    return np.where(norm > R, scaled, x)


def robust_step_size(m_star, n, c=1.0):
    """Constant step ``2c / (M_* sqrt(5 n))`` of the robust high-probability bound."""
    if m_star <= 0:
        raise ValueError("m_star must be positive")
    if n < 1 or c <= 0:
        raise ValueError("need n >= 1 and c > 0")
    return 2.0 * c / (m_star * np.sqrt(5.0 * n))


@dataclass(frozen=True)
class StepPolicy:
    """``kind="constant"`` uses ``value`` as alpha; ``kind="robust"`` uses it as ``c``."""

    kind: str
    value: float
    m_star: float = None

    def __post_init__(self):
        if self.kind not in ("constant", "robust"):
            raise ValueError(f"unknown step policy {self.kind!r}")
        if self.kind == "constant" and self.value < 0:
            raise ValueError("alpha must be non-negative")
        if self.kind == "robust" and self.value <= 0:
            raise ValueError("c must be positive")

    def alpha(self, n):
        if self.kind == "constant":
            return float(self.value)
        if self.m_star is None:
            raise ValueError("robust steps need m_star (see gtdsaddle.bounds.m_star)")
        return robust_step_size(self.m_star, n, self.value)

    def to_dict(self):
        out = {"kind": self.kind, "alpha" if self.kind == "constant" else "c": self.value}
        if self.m_star is not None:
            out["m_star"] = self.m_star
        return out


def constant(alpha):
    return StepPolicy("constant", float(alpha))


def robust(c=1.0, m_star=None):
    return StepPolicy("robust", float(c), None if m_star is None else float(m_star))


@dataclass(frozen=True)
class SolverConfig:
    """What to run: variant, step policy, budget, radii and trace stride.

    ``radius_theta``/``radius_y`` default to the objective's radii. A
    ``record_every`` of 0 records only the initial and final points.
    """

    variant: str
    step_policy: StepPolicy
    n: int
    radius_theta: float = None
    radius_y: float = None
    record_every: int = 0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if int(self.n) < 1:
            raise ValueError("n must be >= 1")
        if self.record_every < 0:
            raise ValueError("record_every must be >= 0")
        for r in (self.radius_theta, self.radius_y):
            if r is not None and r <= 0:
                raise ValueError("radii must be positive")

    @property
    def projected(self):
        return self.variant in PROJECTED

    @property
    def m_mode(self):
        return "identity" if self.variant.startswith("gtd-") or self.variant == "gtd" else "covariance"

    def radii(self, objective=None):
        """Active projection radii (inf for raw variants)."""
        if self.variant in ("gtd", "gtd2"):
            return np.inf, np.inf
        rt = self.radius_theta if self.radius_theta is not None else getattr(objective, "radius_theta", np.inf)
        ry = self.radius_y if self.radius_y is not None else getattr(objective, "radius_y", np.inf)
        if self.projected and not (np.isfinite(rt) and np.isfinite(ry)):
            raise ValueError("projected variants need finite radii")
        return float(rt), float(ry)

    def to_dict(self):
        return {
            "variant": self.variant,
            "step_policy": self.step_policy.to_dict(),
            "n": int(self.n),
            "radius_theta": self.radius_theta,
            "radius_y": self.radius_y,
            "record_every": self.record_every,
        }


@dataclass(frozen=True)
class SolverState:
    """Iterate pair plus the running sums behind the weighted averages."""

    theta: np.ndarray
    y: np.ndarray
    sum_alpha: float = 0.0
    theta_sum: np.ndarray = None
    y_sum: np.ndarray = None

    @classmethod
    def initial(cls, theta0, y0=None):
        theta0 = np.array(theta0, dtype=float)
        y0 = np.zeros_like(theta0) if y0 is None else np.array(y0, dtype=float)
        return cls(theta0, y0, 0.0, np.zeros_like(theta0), np.zeros_like(theta0))

    @property
    def theta_bar(self):
        return self.theta if self.sum_alpha == 0 else self.theta_sum / self.sum_alpha

    @property
    def y_bar(self):
        return self.y if self.sum_alpha == 0 else self.y_sum / self.sum_alpha


# --------------------------------------------------------------------------
# per-sample directions


def _dot(u, v):
    return np.sum(u * v, axis=-1)


def _directions(m_identity, phi, phin, r, rho, gamma, theta, y):
    """Sampled ascent directions ``(A_t^T y, b_t - A_t theta - M_t y)``."""
    dphi = phi - gamma * phin
    delta = r + gamma * _dot(phin, theta) - _dot(phi, theta)
    py = _dot(phi, y)
    theta_dir = (rho * py)[:, None] * dphi
    if m_identity:
        y_dir = (rho * delta)[:, None] * phi - y
    else:
        y_dir = (rho * delta - py)[:, None] * phi
    return theta_dir, y_dir


def _advance(variant, theta, y, phi, phin, r, rho, gamma, alpha, r_theta, r_y):
    m_identity = variant in ("gtd", "gtd-proj")
    theta_dir, y_dir = _directions(m_identity, phi, phin, r, rho, gamma, theta, y)
    if variant != "gtd2-mp":
        return project_ball(theta + alpha * theta_dir, r_theta), project_ball(y + alpha * y_dir, r_y)
    theta_m = project_ball(theta + alpha * theta_dir, r_theta)
    y_m = project_ball(y + alpha * y_dir, r_y)
    theta_dir, y_dir = _directions(False, phi, phin, r, rho, gamma, theta_m, y_m)
    return project_ball(theta + alpha * theta_dir, r_theta), project_ball(y + alpha * y_dir, r_y)


def _single_step(variant, state, t, basis, alpha, gamma, r_theta=np.inf, r_y=np.inf):
    phi = basis.table[[t.s]]
    phin = basis.table[[t.s_next]]
    theta, y = state.theta[None, :], state.y[None, :]
    r = np.array([t.r], dtype=float)
    rho = np.array([t.rho], dtype=float)
    th, yy = _advance(variant, theta, y, phi, phin, r, rho, gamma, alpha, r_theta, r_y)
    return SolverState(
        th[0], yy[0],
        state.sum_alpha + alpha,
        state.theta_sum + alpha * state.theta,
        state.y_sum + alpha * state.y,
    )


def gtd_step(state, t, basis, alpha, gamma):
    """One GTD update from transition ``t``.

    ``y += alpha (rho delta phi - y)`` and ``theta += alpha rho dphi (y^T phi)``,
    both from the pre-step pair.
    """
    return _single_step("gtd", state, t, basis, alpha, gamma)


def gtd2_step(state, t, basis, alpha, gamma):
    """One GTD2 update: ``y += alpha (rho delta - phi^T y) phi``; theta as in GTD."""
    return _single_step("gtd2", state, t, basis, alpha, gamma)


def gtd2_mp_step(state, t, basis, alpha, gamma, radius_theta=np.inf, radius_y=np.inf):
    """One mirror-prox GTD2 update (midpoint, then step with midpoint gradients)."""
    return _single_step("gtd2-mp", state, t, basis, alpha, gamma, radius_theta, radius_y)


# --------------------------------------------------------------------------
# evaluation


class Evaluator:
    """Batched diagnostics recorded along a run.

    Metrics evaluated at the current iterate: ``mspbe``, ``neu``, ``msbe`` and
    ``value_error`` (``||V - Phi theta||_xi``). Metrics evaluated at the
    running averages: ``err`` (saddle gap), ``j_bar``
    (``||A theta_bar - b||^2_{M^{-1}}``), ``value_error_bar`` and
    ``theorem1_gap`` (``tau xi_max Err - 1/2 xi_max ||A theta_bar - b||^2``,
    which must stay non-negative).

    ``msbe`` needs ``chain``/``gamma``; the value errors need ``value``; both
    need ``basis`` and ``xi``.
    """

    CURRENT = ("mspbe", "neu", "msbe", "value_error")
    AVERAGED = ("err", "j_bar", "value_error_bar", "theorem1_gap")

    def __init__(self, objective, metrics=("mspbe", "neu", "err"), basis=None, xi=None,
                 chain=None, gamma=None, value=None):
        unknown = set(metrics) - set(self.CURRENT) - set(self.AVERAGED)
        if unknown:
            raise ValueError(f"unknown metrics {sorted(unknown)}")
        self.objective = objective
        self.metrics = tuple(metrics)
        self.basis, self.xi, self.chain, self.gamma, self.value = basis, xi, chain, gamma, value
        needs_chain = {"msbe"} & set(metrics)
        needs_value = {"value_error", "value_error_bar"} & set(metrics)
        if needs_chain and (chain is None or basis is None or xi is None or gamma is None):
            raise ValueError("msbe needs chain, basis, xi and gamma")
        if needs_value and (value is None or basis is None or xi is None):
            raise ValueError("value errors need value, basis and xi")
        self.xi_max = None if xi is None else xi.xi_max

    def _value_error(self, theta):
        return weighted_norm(self.value - theta @ self.basis.table.T, self.xi)

    def __call__(self, theta, y, theta_bar, y_bar):
        obj = self.objective
        out = {}
        for name in self.metrics:
            if name == "mspbe":
                out[name] = mspbe(obj.moments, theta)
            elif name == "neu":
                out[name] = neu(obj.moments, theta)
            elif name == "msbe":
                v = theta @ self.basis.table.T
                tv = self.chain.reward + self.gamma * v @ self.chain.kernel.T
                out[name] = np.square(weighted_norm(tv - v, self.xi))
            elif name == "value_error":
                out[name] = self._value_error(theta)
            elif name == "err":
                out[name] = saddle_err(obj, theta_bar, y_bar)
            elif name == "j_bar":
                out[name] = j_value(obj, theta_bar)
            elif name == "value_error_bar":
                out[name] = self._value_error(theta_bar)
            elif name == "theorem1_gap":
                xi_max = 1.0 if self.xi_max is None else self.xi_max
                res = obj.residual(theta_bar)
                lhs = 0.5 * xi_max * np.sum(res * res, axis=-1)
                out[name] = obj.tau * xi_max * saddle_err(obj, theta_bar, y_bar) - lhs
        return out


# --------------------------------------------------------------------------
# traces


@dataclass
class RunTrace:
    """Recorded series of one run plus its terminal outputs."""

    iterations: np.ndarray
    metrics: dict
    theta: np.ndarray
    theta_bar: np.ndarray
    y_bar: np.ndarray
    terminal: dict = field(default_factory=dict)

    def to_csv(self, path=None, columns=None):
        columns = list(columns or self.metrics)
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["iteration"] + columns)
        for k, it in enumerate(self.iterations):
            w.writerow([int(it)] + [repr(float(self.metrics[c][k])) for c in columns])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text

    def summary(self):
        out = {}
        for k, v in self.terminal.items():
            out[k] = v.tolist() if isinstance(v, np.ndarray) else v
        return out

    def summary_json(self, **kwargs):
        return json.dumps(self.summary(), **kwargs)


@dataclass
class BatchResult:
    """Outputs of :func:`run_batch`; leading axis of every array is the run."""

    iterations: np.ndarray
    metrics: dict
    theta_trace: np.ndarray
    theta_bar_trace: np.ndarray
    y_bar_trace: np.ndarray
    theta: np.ndarray
    y: np.ndarray
    theta_bar: np.ndarray
    y_bar: np.ndarray
    sum_alpha: float
    alpha: float
    diverged: np.ndarray
    diverged_at: np.ndarray

    @property
    def n_runs(self):
        return self.theta.shape[0]

    def trace(self, i):
        terminal = {
            "theta_bar": self.theta_bar[i],
            "y_bar": self.y_bar[i],
            "theta": self.theta[i],
            "y": self.y[i],
            "alpha": self.alpha,
            "diverged": bool(self.diverged[i]),
            "diverged_at": int(self.diverged_at[i]),
        }
        for name, series in self.metrics.items():
            terminal[f"final_{name}"] = float(series[-1, i])
        return RunTrace(
            self.iterations,
            {k: v[:, i] for k, v in self.metrics.items()},
            self.theta_trace[:, i],
            self.theta_bar_trace[:, i],
            self.y_bar_trace[:, i],
            terminal,
        )


def _record_points(n, every):
    if every <= 0:
        return np.array([0, n])
    pts = np.arange(0, n + 1, every)
    return pts if pts[-1] == n else np.append(pts, n)


def run_batch(config, sample_sets, basis, objective=None, theta0=None, y0=None,
              evaluator=None, gamma=None, alpha=None):
    """Advance ``len(sample_sets)`` independent runs in lockstep.

    Parameters
    ----------
    config : SolverConfig
    sample_sets : sequence of SampleSet
        One data set per run; each must hold at least ``config.n`` samples.
    basis : FeatureBasis
    objective : SaddleObjective, optional
        Source of default radii (and of ``evaluator`` if none is given).
    theta0, y0 : array-like, optional
        Initial point shared by all runs (zeros by default).
    evaluator : Evaluator, optional
    gamma : float, optional
        Discount; defaults to ``sample_sets[0].meta["gamma"]``.
    alpha : float, optional
        Pre-computed step size (otherwise taken from the step policy).

    Returns
    -------
    BatchResult
    """
    n = int(config.n)
    runs = len(sample_sets)
    for ss in sample_sets:
        if len(ss) < n:
            raise SampleExhaustedError(f"need {n} samples, got {len(ss)}")
    if gamma is None:
        gamma = sample_sets[0].meta["gamma"]
    if alpha is None:
        alpha = config.step_policy.alpha(n)
    r_theta, r_y = config.radii(objective)
    if evaluator is None and objective is not None:
        evaluator = Evaluator(objective, metrics=("mspbe", "neu"))

    d = basis.dim
    theta = np.zeros((runs, d)) if theta0 is None else np.tile(np.asarray(theta0, float), (runs, 1))
    y = np.zeros((runs, d)) if y0 is None else np.tile(np.asarray(y0, float), (runs, 1))
    S = np.stack([ss.s[:n] for ss in sample_sets])
    Sn = np.stack([ss.s_next[:n] for ss in sample_sets])
    Rw = np.stack([ss.r[:n] for ss in sample_sets])
    Rho = np.stack([ss.rho[:n] for ss in sample_sets])
    table = basis.table

    points = _record_points(n, config.record_every)
    records = {name: np.full((points.size, runs), np.nan) for name in (evaluator.metrics if evaluator else ())}
    th_tr = np.full((points.size, runs, d), np.nan)
    thb_tr = np.full_like(th_tr, np.nan)
    yb_tr = np.full_like(th_tr, np.nan)

    theta_sum = np.zeros_like(theta)
    y_sum = np.zeros_like(y)
    sum_alpha = 0.0
    active = np.ones(runs, dtype=bool)
    diverged_at = np.full(runs, -1)

    def record(k, slot):
        if sum_alpha > 0:
            tb, yb = theta_sum / sum_alpha, y_sum / sum_alpha
        else:
            tb, yb = theta, y
        th_tr[slot], thb_tr[slot], yb_tr[slot] = theta, tb, yb
        bad = ~np.all(np.isfinite(theta), axis=1) | ~np.all(np.isfinite(y), axis=1)
        if evaluator is not None:
            with np.errstate(all="ignore"):
                safe_t = np.where(bad[:, None], 0.0, theta)
                safe_y = np.where(bad[:, None], 0.0, y)
                safe_tb = np.where(bad[:, None], 0.0, tb)
                safe_yb = np.where(bad[:, None], 0.0, yb)
                vals = evaluator(safe_t, safe_y, safe_tb, safe_yb)
            for name, v in vals.items():
                v = np.where(bad | ~active, np.nan, v)
                records[name][slot] = v
                if name != "theorem1_gap":
                    bad |= active & (~np.isfinite(v) | (np.abs(v) > DIVERGENCE_THRESHOLD))
        newly = bad & active
        if np.any(newly):
            diverged_at[newly] = k
            active[newly] = False
            for name in records:
                records[name][slot, newly] = np.nan

    slot = 0
    record(0, slot)
    slot += 1
    with np.errstate(over="ignore", invalid="ignore"):
        for t in range(n):
            sum_alpha += alpha
            theta_sum += alpha * theta
            y_sum += alpha * y
            new_theta, new_y = _advance(
                config.variant, theta, y, table[S[:, t]], table[Sn[:, t]],
                Rw[:, t], Rho[:, t], gamma, alpha, r_theta, r_y,
            )
            if active.all():
                theta, y = new_theta, new_y
            else:
                theta = np.where(active[:, None], new_theta, theta)
                y = np.where(active[:, None], new_y, y)
            if slot < points.size and t + 1 == points[slot]:
                record(t + 1, slot)
                slot += 1

    if sum_alpha > 0:
        theta_bar, y_bar = theta_sum / sum_alpha, y_sum / sum_alpha
    else:
        theta_bar, y_bar = theta.copy(), y.copy()
    return BatchResult(
        iterations=points, metrics=records, theta_trace=th_tr, theta_bar_trace=thb_tr,
        y_bar_trace=yb_tr, theta=theta, y=y, theta_bar=theta_bar, y_bar=y_bar,
        sum_alpha=sum_alpha, alpha=alpha, diverged=diverged_at >= 0, diverged_at=diverged_at,
    )


def run(config, samples, basis, objective=None, theta0=None, y0=None, evaluator=None, gamma=None):
    """Run one solver on one sample set; returns ``(RunTrace, theta_bar, y_bar)``."""
    res = run_batch(config, [samples], basis, objective, theta0, y0, evaluator, gamma)
    trace = res.trace(0)
    return trace, res.theta_bar[0], res.y_bar[0]


def projected_run(config, samples, basis, objective, theta0=None, y0=None, evaluator=None, gamma=None):
    """Revised (projected, averaged) GTD/GTD2.

    ``y <- Pi_Y(y + alpha (b_t - A_t theta - M_t y))`` and
    ``theta <- Pi_Theta(theta + alpha A_t^T y)``.
    """
    if not config.projected:
        raise ValueError(f"{config.variant!r} is not a projected variant")
    return run(config, samples, basis, objective, theta0, y0, evaluator, gamma)


def gtd2_mp_run(config, samples, basis, objective=None, theta0=None, y0=None, evaluator=None, gamma=None):
    """GTD2 mirror-prox: a midpoint step, then a step using midpoint gradients."""
    if config.variant != "gtd2-mp":
        config = replace(config, variant="gtd2-mp")
    return run(config, samples, basis, objective, theta0, y0, evaluator, gamma)
