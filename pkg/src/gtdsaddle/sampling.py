"""I.i.d. off-policy datasets, per-sample moment estimates and exact moments.

Every random draw goes through :func:`make_rng`, a Philox (counter-based)
generator keyed by ``(master_seed, run_index)``; a run's data therefore
depends only on its own key, never on how runs are scheduled.
"""

import csv
import io
from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np

from ._validation import check_state_ids, frozen
from .exceptions import AbsoluteContinuityError, DimensionError

__all__ = [
    "Transition",
    "SampleSet",
    "MomentTriple",
    "make_rng",
    "importance_ratios",
    "draw_dataset",
    "per_sample_estimates",
    "sample_moments",
    "exact_moments",
    "corrupt_rho",
    "reject_samples",
]

RHO_MODES = ("additive-constant", "multiplicative-clip")


def make_rng(master_seed, run_index=0, stream=None):
    """Philox generator for substream ``(master_seed, run_index)``.

    ``stream`` selects an auxiliary independent stream for the same run.
    """
    key = [int(master_seed), int(run_index)] + ([] if stream is None else [int(stream)])
    seq = np.random.SeedSequence(key)
    return np.random.Generator(np.random.Philox(seq))


class Transition(NamedTuple):
    s: int
    a: int
    r: float
    s_next: int
    rho: float


@dataclass(frozen=True)
class SampleSet:
    """Column-stored transitions ``(s, a, r, s_next, rho)``.

    ``meta`` names the generating distributions and carries ``rho_max`` of
    the generating policy pair.
    """

    s: np.ndarray
    a: np.ndarray
    r: np.ndarray
    s_next: np.ndarray
    rho: np.ndarray
    seed: tuple = (0, 0)
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        cols = {
            "s": np.array(self.s, dtype=np.int64),
            "a": np.array(self.a, dtype=np.int64),
            "r": np.array(self.r, dtype=np.float64),
            "s_next": np.array(self.s_next, dtype=np.int64),
            "rho": np.array(self.rho, dtype=np.float64),
        }
        n = cols["s"].shape
        if len(n) != 1 or any(c.shape != n for c in cols.values()):
            raise DimensionError("sample columns must be 1-D and of equal length")
        if np.any(cols["rho"] < 0):
            raise ValueError("importance weights must be non-negative")
        for k, v in cols.items():
            object.__setattr__(self, k, frozen(v))

    def __len__(self):
        return self.s.size

    def __getitem__(self, i):
        if isinstance(i, slice):
            return replace(
                self,
                s=self.s[i], a=self.a[i], r=self.r[i], s_next=self.s_next[i], rho=self.rho[i],
            )
        return Transition(
            int(self.s[i]), int(self.a[i]), float(self.r[i]), int(self.s_next[i]), float(self.rho[i])
        )

    @property
    def transitions(self):
        return [self[i] for i in range(len(self))]

    def to_array(self):
        """``(n, 5)`` float array with columns ``s, a, r, s_next, rho``."""
        return np.column_stack([self.s, self.a, self.r, self.s_next, self.rho]).astype(float)

    @classmethod
    def from_array(cls, X, **kwargs):
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != 5:
            raise DimensionError(f"expected an (n, 5) array, got {X.shape}")
        ids = X[:, [0, 1, 3]]
        if np.any(ids != np.round(ids)):
            raise ValueError("state and action columns must hold integers")
        return cls(X[:, 0], X[:, 1], X[:, 2], X[:, 3], X[:, 4], **kwargs)

    def to_csv(self, path=None):
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["s", "a", "r", "s_next", "rho"])
        for row in zip(self.s, self.a, self.r, self.s_next, self.rho):
            writer.writerow([int(row[0]), int(row[1]), repr(float(row[2])), int(row[3]), repr(float(row[4]))])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_csv(cls, path):
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        cols = {k: [row[k] for row in rows] for k in ("s", "a", "r", "s_next", "rho")}
        return cls(
            np.array(cols["s"], dtype=np.int64), np.array(cols["a"], dtype=np.int64),
            np.array(cols["r"], dtype=float), np.array(cols["s_next"], dtype=np.int64),
            np.array(cols["rho"], dtype=float),
        )


class MomentTriple(NamedTuple):
    """``(A, b, C)``; per-sample or exact."""

    a_mat: np.ndarray
    b_vec: np.ndarray
    c_mat: np.ndarray


def importance_ratios(pi_b, pi):
    """Table ``rho[s, a] = pi(a|s) / pi_b(a|s)`` (0 where ``pi_b`` is 0).

    Raises
    ------
    AbsoluteContinuityError
        If ``pi`` puts mass on an action ``pi_b`` never takes.
    """
    pb, pt = pi_b.probs, pi.probs
    if pb.shape != pt.shape:
        raise DimensionError("behavior and target policies differ in shape")
    bad = np.argwhere((pb == 0) & (pt > 0))
    if bad.size:
        raise AbsoluteContinuityError(int(bad[0, 0]), int(bad[0, 1]))
    rho = np.zeros_like(pb)
    np.divide(pt, pb, out=rho, where=pb > 0)
    return rho


def _inverse_cdf(cdf_rows, u):
    # cdf_rows[i] is the cumulative table for draw i; the last column is
    # forced to 1 so round-off can never push an index out of range.
    idx = np.sum(cdf_rows[..., :-1] <= u[..., None], axis=-1)
    return idx


def _cdf(p):
    c = np.cumsum(p, axis=-1)
    # Saturate from the last positive-mass category on, so round-off can
    # never select a trailing zero-probability category.
    k = p.shape[-1]
    last = k - 1 - np.argmax(p[..., ::-1] > 0, axis=-1)
    c[np.arange(k) >= last[..., None]] = 1.0
    return c


def draw_dataset(mdp, pi_b, pi, xi, n, seed, run_index=0):
    """Draw ``n`` i.i.d. transitions ``s ~ xi, a ~ pi_b(.|s), s' ~ P(.|s, a)``.

    ``seed`` is either a master seed (combined with ``run_index`` into a
    Philox substream) or a ready ``numpy.random.Generator``.
    """
    rho_table = importance_ratios(pi_b, pi)
    rng = seed if isinstance(seed, np.random.Generator) else make_rng(seed, run_index)
    u = rng.random((3, int(n)))
    s = _inverse_cdf(_cdf(xi.weights)[None, :], u[0])
    a = _inverse_cdf(_cdf(pi_b.probs)[s], u[1])
    s_next = _inverse_cdf(_cdf(mdp.transition)[s, a], u[2])
    key = (int(seed), int(run_index)) if not isinstance(seed, np.random.Generator) else (-1, -1)
    meta = {
        "rho_max": float(rho_table.max()),
        "xi": xi.meta.get("method", "given"),
        "on_policy": bool(np.array_equal(pi_b.probs, pi.probs)),
        "gamma": mdp.gamma,
    }
    return SampleSet(s, a, mdp.reward[s, a], s_next, rho_table[s, a], seed=key, meta=meta)


def per_sample_estimates(t, basis, gamma):
    """Unbiased one-sample estimates of ``(A, b, C)``.

    ``A_t = rho phi (phi - gamma phi')^T``, ``b_t = rho r phi`` and
    ``C_t = phi phi^T``.
    """
    phi = basis.table[t.s]
    dphi = phi - gamma * basis.table[t.s_next]
    return MomentTriple(t.rho * np.outer(phi, dphi), t.rho * t.r * phi, np.outer(phi, phi))


def sample_moments(samples, basis, gamma):
    """Average of :func:`per_sample_estimates` over a whole sample set."""
    check_state_ids(samples.s, basis.num_states)
    phi = basis.table[samples.s]
    dphi = phi - gamma * basis.table[samples.s_next]
    n = len(samples)
    rp = samples.rho[:, None] * phi
    A = rp.T @ dphi / n
    b = (samples.r[:, None] * rp).sum(axis=0) / n
    C = phi.T @ phi / n
    return MomentTriple(A, b, C)


def exact_moments(mdp, pi_b, pi, xi, basis):
    """Exact ``(A, b, C)``: expectations under ``xi`` and ``P^{pi_b}``."""
    if basis.num_states != mdp.num_states or xi.num_states != mdp.num_states:
        raise DimensionError("MDP, basis and xi disagree on the number of states")
    rho = importance_ratios(pi_b, pi)
    phi = basis.table
    # weight of (s, a): xi(s) pi_b(a|s) rho(s, a)
    w_sa = xi.weights[:, None] * pi_b.probs * rho
    w_sas = w_sa[:, :, None] * mdp.transition
    # sum_{a, s'} w(s, a, s') (phi(s) - gamma phi(s'))
    mass = w_sas.sum(axis=(1, 2))
    next_phi = np.einsum("sat,td->sd", w_sas, phi)
    A = phi.T @ (mass[:, None] * phi - mdp.gamma * next_phi)
    b = phi.T @ np.sum(w_sa * mdp.reward, axis=1)
    C = phi.T @ (xi.weights[:, None] * phi)
    return MomentTriple(A, b, 0.5 * (C + C.T))


def corrupt_rho(samples, epsilon, mode="additive-constant", seed=0):
    """Replace ``rho`` with a biased estimate whose mean bias is at most ``epsilon``.

    ``additive-constant`` adds ``epsilon`` to every weight. ``multiplicative-clip``
    multiplies each weight by ``1 + 2 kappa U`` with ``U ~ Uniform(0, 1)`` and
    ``kappa = epsilon / rho_max``, then clips at zero; its mean bias is
    ``kappa E[rho] <= epsilon``.
    """
    if epsilon < 0:
        raise ValueError("epsilon must be non-negative")
    if mode not in RHO_MODES:
        raise ValueError(f"mode must be one of {RHO_MODES}, got {mode!r}")
    if epsilon == 0:
        return samples
    if mode == "additive-constant":
        rho = samples.rho + epsilon
    else:
        rho_max = samples.meta.get("rho_max") or float(samples.rho.max()) or 1.0
        rng = make_rng(seed, 0) if not isinstance(seed, np.random.Generator) else seed
        kappa = epsilon / rho_max
        rho = np.clip(samples.rho * (1.0 + 2.0 * kappa * rng.random(len(samples))), 0.0, None)
    meta = dict(samples.meta, rho_bias={"epsilon": float(epsilon), "mode": mode})
    return replace(samples, rho=rho, meta=meta)


def reject_samples(samples):
    """Drop transitions whose action the target policy never takes (``rho == 0``)."""
    keep = samples.rho > 0
    meta = dict(samples.meta, rejected=int((~keep).sum()))
    return replace(
        samples,
        s=samples.s[keep], a=samples.a[keep], r=samples.r[keep],
        s_next=samples.s_next[keep], rho=samples.rho[keep], meta=meta,
    )
