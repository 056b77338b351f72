"""Seeded multi-run experiments, streaming aggregation and data export.

Run ``i`` of every solver variant in an experiment consumes the same data
set, drawn from substream ``(master_seed, i)``, so variant comparisons are
paired. Runs execute in fixed blocks of :data:`BLOCK_SIZE`; each block is a
deterministic function of its run indices, and blocks are reduced in index
order, so outputs do not depend on the degree of parallelism.
"""

import csv
import io
import json
import math
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .bounds import (
    bound_inputs,
    kolter_lmi_check,
    m_star,
    projection_residual,
    prop3_bound,
    prop4_bound,
    prop5_bound,
    prop6_bound,
    rate_table,
)
from .domains import DOMAINS, get_domain
from .exceptions import SpecValidationError
from .mdp import exact_value
from .saddle import SaddleObjective, default_radii
from .sampling import RHO_MODES, corrupt_rho, draw_dataset, make_rng
from .solvers import VARIANTS, Evaluator, SolverConfig, constant, robust, run_batch

__all__ = [
    "ExperimentSpec",
    "AggregateCurve",
    "ExperimentResult",
    "run_experiment",
    "stepsize_sweep",
    "BLOCK_SIZE",
]

BLOCK_SIZE = 50
METRICS = ("mspbe", "neu", "err", "msbe", "value_error", "j_bar", "value_error_bar", "theorem1_gap")
ALWAYS = ("err", "theorem1_gap", "value_error_bar")
THEOREM1_TOL = 1e-9


@dataclass(frozen=True)
class ExperimentSpec:
    """Validated experiment description (see :meth:`from_dict` for the JSON form).

    ``variants`` holds one dict per solver: ``variant`` plus either ``alpha``
    (constant step) or ``step="robust"`` with ``c``; optional ``label``,
    ``radius_theta`` and ``radius_y``.
    """

    domain: str
    variants: tuple
    n_steps: int
    n_runs: int
    master_seed: int = 0
    outputs: str = None
    metrics: tuple = ("mspbe", "neu", "err")
    domain_overrides: dict = field(default_factory=dict)
    record_every: int = None
    rho_bias: dict = None
    bounds: bool = True
    delta: float = 0.05

    @classmethod
    def from_dict(cls, doc):
        problems = []
        if not isinstance(doc, dict):
            raise SpecValidationError(["spec must be a JSON object"])
        known = {"domain", "variants", "n_steps", "n_runs", "master_seed", "outputs", "metrics",
                 "domain_overrides", "record_every", "rho_bias", "bounds", "delta"}
        for key in sorted(set(doc) - known):
            problems.append(f"unknown field {key!r}")

        domain = doc.get("domain")
        overrides = dict(doc.get("domain_overrides") or {})
        if isinstance(domain, dict):
            overrides = {**dict(domain.get("overrides") or {}), **overrides}
            domain = domain.get("name")
        if domain not in DOMAINS:
            problems.append(f"domain must be one of {sorted(DOMAINS)}, got {domain!r}")

        variants = doc.get("variants")
        if isinstance(variants, (str, dict)):
            variants = [variants]
        if not variants:
            problems.append("at least one variant is required")
            variants = []
        clean, labels = [], set()
        for k, v in enumerate(variants):
            v = {"variant": v} if isinstance(v, str) else dict(v)
            name = v.get("variant")
            if name not in VARIANTS:
                problems.append(f"variants[{k}]: variant must be one of {VARIANTS}, got {name!r}")
            step = v.get("step", "constant")
            if step == "constant":
                alpha = v.get("alpha")
                if not isinstance(alpha, (int, float)) or alpha < 0:
                    problems.append(f"variants[{k}]: constant steps need alpha >= 0")
            elif step == "robust":
                c = v.get("c", 1.0)
                if not isinstance(c, (int, float)) or c <= 0:
                    problems.append(f"variants[{k}]: robust steps need c > 0")
            else:
                problems.append(f"variants[{k}]: step must be 'constant' or 'robust'")
            for r in ("radius_theta", "radius_y"):
                if v.get(r) is not None and not (isinstance(v[r], (int, float)) and v[r] > 0):
                    problems.append(f"variants[{k}]: {r} must be positive")
            label = v.get("label") or name
            if label in labels:
                label = f"{label}-{k}"
            labels.add(label)
            v["label"] = label
            clean.append(v)

        def positive_int(key, default=None):
            value = doc.get(key, default)
            if not isinstance(value, int) or isinstance(value, bool) or value < 1:
                problems.append(f"{key} must be an integer >= 1, got {value!r}")
                return 1
            return value

        n_steps = positive_int("n_steps")
        n_runs = positive_int("n_runs")
        seed = doc.get("master_seed", 0)
        if not isinstance(seed, int) or seed < 0:
            problems.append("master_seed must be a non-negative integer")
        metrics = doc.get("metrics", ["mspbe", "neu", "err"])
        if isinstance(metrics, str):
            metrics = [metrics]
        for m in metrics:
            if m not in METRICS:
                problems.append(f"unknown metric {m!r}; choose from {METRICS}")
        record_every = doc.get("record_every")
        if record_every is not None and (not isinstance(record_every, int) or record_every < 0):
            problems.append("record_every must be a non-negative integer")
        rho_bias = doc.get("rho_bias")
        if rho_bias is not None:
            eps = rho_bias.get("epsilon")
            if not isinstance(eps, (int, float)) or eps < 0:
                problems.append("rho_bias.epsilon must be >= 0")
            if rho_bias.get("mode", "additive-constant") not in RHO_MODES:
                problems.append(f"rho_bias.mode must be one of {RHO_MODES}")
        delta = doc.get("delta", 0.05)
        if not isinstance(delta, (int, float)) or not 0 < delta < 1:
            problems.append("delta must lie in (0, 1)")
        if problems:
            raise SpecValidationError(problems)
        return cls(
            domain=domain, variants=tuple(clean), n_steps=n_steps, n_runs=n_runs,
            master_seed=seed, outputs=doc.get("outputs"), metrics=tuple(metrics),
            domain_overrides=overrides, record_every=record_every, rho_bias=rho_bias,
            bounds=bool(doc.get("bounds", True)), delta=float(delta),
        )

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            try:
                doc = json.load(fh)
            except json.JSONDecodeError as exc:
                raise SpecValidationError([f"not valid JSON: {exc}"]) from exc
        return cls.from_dict(doc)

    def to_dict(self):
        return {
            "domain": self.domain,
            "domain_overrides": dict(self.domain_overrides),
            "variants": [dict(v) for v in self.variants],
            "n_steps": self.n_steps,
            "n_runs": self.n_runs,
            "master_seed": self.master_seed,
            "outputs": self.outputs,
            "metrics": list(self.metrics),
            "record_every": self.stride,
            "rho_bias": self.rho_bias,
            "bounds": self.bounds,
            "delta": self.delta,
        }

    @property
    def stride(self):
        if self.record_every is not None:
            return self.record_every
        return max(1, self.n_steps // 100)


@dataclass
class AggregateCurve:
    """Per-record mean, population std and number of contributing runs."""

    iterations: np.ndarray
    mean: np.ndarray
    std: np.ndarray
    count: np.ndarray

    def to_csv(self, path=None):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["iteration", "mean", "std", "count"])
        for it, m, s, c in zip(self.iterations, self.mean, self.std, self.count):
            w.writerow([int(it), repr(float(m)), repr(float(s)), int(c)])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text


class _Welford:
    """Streaming mean/variance per record point; non-finite values are skipped."""

    def __init__(self, size):
        self.count = np.zeros(size, dtype=np.int64)
        self.mean = np.zeros(size)
        self.m2 = np.zeros(size)

    def push(self, x):
        ok = np.isfinite(x)
        self.count[ok] += 1
        delta = np.where(ok, x - self.mean, 0.0)
        self.mean[ok] += delta[ok] / self.count[ok]
        self.m2[ok] += (delta * np.where(ok, x - self.mean, 0.0))[ok]

    def curve(self, iterations):
        with np.errstate(invalid="ignore", divide="ignore"):
            mean = np.where(self.count > 0, self.mean, np.nan)
            std = np.where(self.count > 0, np.sqrt(self.m2 / np.maximum(self.count, 1)), np.nan)
        return AggregateCurve(np.asarray(iterations), mean, std, self.count.copy())


@dataclass
class ExperimentResult:
    """Aggregates, retained raw series and the summary document."""

    spec: ExperimentSpec
    iterations: np.ndarray
    curves: dict
    raw: dict
    terminal: dict
    summary: dict
    paths: list = field(default_factory=list)


# --------------------------------------------------------------------------
# experiment preparation and execution


@dataclass
class _Variant:
    label: str
    config: SolverConfig
    objective: SaddleObjective
    evaluator: Evaluator
    alpha: float
    inputs: object = None


@dataclass
class _Context:
    spec: ExperimentSpec
    bundle: object
    variants: list
    value: np.ndarray


def _prepare(spec):
    bundle = get_domain(spec.domain, **spec.domain_overrides)
    moments = bundle.moments()
    chain = bundle.target_chain()
    value = exact_value(bundle.mdp, bundle.target)
    metrics = tuple(dict.fromkeys(tuple(spec.metrics) + ALWAYS))
    out = []
    for v in spec.variants:
        name = v["variant"]
        m_mode = "identity" if name in ("gtd", "gtd-proj") else "covariance"
        rt, ry = default_radii(moments, m_mode, bundle.theta0)
        rt = v.get("radius_theta") or rt
        ry = v.get("radius_y") or ry
        objective = SaddleObjective(moments, m_mode, rt, ry, allow_singular=True)
        inputs = None
        if spec.bounds or v.get("step") == "robust":
            inputs = bound_inputs(bundle, objective, delta=spec.delta)
        if v.get("step", "constant") == "robust":
            policy = robust(v.get("c", 1.0), float(m_star(inputs)))
        else:
            policy = constant(v["alpha"])
        config = SolverConfig(name, policy, spec.n_steps, rt, ry, spec.stride)
        evaluator = Evaluator(objective, metrics, basis=bundle.basis, xi=bundle.xi, chain=chain,
                              gamma=bundle.gamma, value=value)
        out.append(_Variant(v["label"], config, objective, evaluator, policy.alpha(spec.n_steps), inputs))
    return _Context(spec, bundle, out, value)


def _draw(ctx, run_index):
    spec, b = ctx.spec, ctx.bundle
    samples = draw_dataset(b.mdp, b.behavior, b.target, b.xi, spec.n_steps, spec.master_seed, run_index)
    if spec.rho_bias:
        eps = spec.rho_bias["epsilon"]
        mode = spec.rho_bias.get("mode", "additive-constant")
        samples = corrupt_rho(samples, eps, mode, make_rng(spec.master_seed, run_index, stream=1))
    return samples


def _run_block(ctx, start, stop):
    sets = [_draw(ctx, i) for i in range(start, stop)]
    out = {}
    for v in ctx.variants:
        res = run_batch(v.config, sets, ctx.bundle.basis, v.objective, ctx.bundle.theta0,
                        evaluator=v.evaluator, gamma=ctx.bundle.gamma, alpha=v.alpha)
        out[v.label] = {
            "metrics": res.metrics,
            "theta_bar": res.theta_bar,
            "diverged": res.diverged,
            "diverged_at": res.diverged_at,
            "iterations": res.iterations,
        }
    return out


def _blocks(n_runs):
    return [(s, min(s + BLOCK_SIZE, n_runs)) for s in range(0, n_runs, BLOCK_SIZE)]


def _execute(ctx, parallel):
    blocks = _blocks(ctx.spec.n_runs)
    if parallel and parallel > 1 and len(blocks) > 1:
        with ProcessPoolExecutor(max_workers=min(parallel, len(blocks))) as pool:
            futures = [pool.submit(_run_block, ctx, s, e) for s, e in blocks]
            return [f.result() for f in futures]
    return [_run_block(ctx, s, e) for s, e in blocks]


def _finite(x):
    x = np.asarray(x, dtype=float)
    return x[np.isfinite(x)]


def _stats(x):
    f = _finite(x)
    if f.size == 0:
        return {"mean": None, "median": None, "std": None, "count": 0}
    return {"mean": float(f.mean()), "median": float(np.median(f)), "std": float(f.std()),
            "count": int(f.size)}


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        return float(obj) if math.isfinite(obj) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _bound_reports(ctx, v, terminal):
    b, spec = ctx.bundle, ctx.spec
    inputs = v.inputs
    reports = {"inputs": inputs.to_dict(), "m_star": m_star(inputs).to_dict()}
    reports["prop3"] = prop3_bound(inputs, spec.n_steps).to_dict()
    errs = terminal["err"]
    gaps = terminal["theorem1_gap_all"]
    finite_gaps = gaps[np.isfinite(gaps)]
    reports["theorem1"] = {
        "holds": bool(np.all(finite_gaps >= -THEOREM1_TOL)),
        "checked": int(finite_gaps.size),
        "min_gap": float(finite_gaps.min()) if finite_gaps.size else None,
    }
    min_eig, holds = kolter_lmi_check(b.basis, b.xi, b.target_chain())
    reports["lmi"] = {"min_eig": min_eig, "holds": holds}
    resid = projection_residual(b)
    med_err = float(np.median(_finite(errs))) if _finite(errs).size else float("nan")
    observed = terminal["value_error_bar"]
    if b.on_policy:
        rep = prop4_bound(inputs, med_err, resid).to_dict()
        per_run = np.array([prop4_bound(inputs, e, resid).value if np.isfinite(e) else np.nan for e in errs])
        ok = np.isfinite(per_run) & np.isfinite(observed)
        rep["coverage"] = float(np.mean(per_run[ok] >= observed[ok])) if ok.any() else None
        reports["prop4"] = rep
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        reports["prop5"] = prop5_bound(inputs, med_err, resid, lmi_holds=holds).to_dict()
    reports["rates"] = rate_table(inputs, spec.n_steps)
    if spec.rho_bias:
        reports["prop6"] = prop6_bound(inputs, spec.n_steps, spec.rho_bias["epsilon"]).to_dict()
    return reports


def run_experiment(spec, parallel=1, write=True):
    """Execute ``spec.n_runs`` seeded runs of every variant and aggregate.

    Writes ``<label>__<metric>.csv`` (columns ``iteration,mean,std,count``)
    for each requested metric and ``summary.json`` into ``spec.outputs``
    when ``write`` is true and an output directory is set.
    """
    if isinstance(spec, dict):
        spec = ExperimentSpec.from_dict(spec)
    if write and spec.outputs:
        os.makedirs(spec.outputs, exist_ok=True)
        if not os.access(spec.outputs, os.W_OK):
            raise OSError(f"output directory {spec.outputs!r} is not writable")
    ctx = _prepare(spec)
    blocks = _execute(ctx, parallel)
    iterations = blocks[0][ctx.variants[0].label]["iterations"]

    curves, raw, terminal, table, per_variant = {}, {}, {}, {}, {}
    for v in ctx.variants:
        names = v.evaluator.metrics
        acc = {m: _Welford(iterations.size) for m in names}
        series = {m: [] for m in names}
        theta_bar, diverged = [], []
        for blk in blocks:
            part = blk[v.label]
            for m in names:
                vals = part["metrics"][m]
                for r in range(vals.shape[1]):
                    acc[m].push(vals[:, r])
                series[m].append(vals)
            theta_bar.append(part["theta_bar"])
            diverged.append(part["diverged"])
        raw[v.label] = {m: np.concatenate(series[m], axis=1) for m in names}
        curves[v.label] = {m: acc[m].curve(iterations) for m in names}
        div = np.concatenate(diverged)
        term = {m: raw[v.label][m][-1] for m in names}
        term["theta_bar"] = np.concatenate(theta_bar)
        term["diverged"] = div
        term["theorem1_gap_all"] = raw[v.label]["theorem1_gap"].ravel()
        terminal[v.label] = term
        stats = {m: _stats(term[m]) for m in names}
        table[v.label] = {m: stats[m]["median"] for m in ("mspbe", "msbe") if m in names}
        entry = {
            "variant": v.config.variant,
            "alpha": v.alpha,
            "step_policy": v.config.step_policy.to_dict(),
            "radius_theta": v.objective.radius_theta,
            "radius_y": v.objective.radius_y,
            "m_mode": v.objective.m_mode,
            "diverged": int(div.sum()),
            "terminal": stats,
        }
        if v.inputs is not None and spec.bounds:
            entry["bounds"] = _bound_reports(ctx, v, term)
        per_variant[v.label] = entry

    summary = _clean({
        "config": spec.to_dict(),
        "domain": {
            "name": ctx.bundle.name, "meta": ctx.bundle.meta, "rho_max": ctx.bundle.rho_max,
            "on_policy": ctx.bundle.on_policy, "dim": ctx.bundle.basis.dim,
            "xi": ctx.bundle.xi.meta,
        },
        "table": table,
        "variants": per_variant,
        "block_size": BLOCK_SIZE,
    })
    paths = []
    if write and spec.outputs:
        for label, by_metric in curves.items():
            for m in spec.metrics:
                path = os.path.join(spec.outputs, f"{label}__{m}.csv")
                by_metric[m].to_csv(path)
                paths.append(path)
        path = os.path.join(spec.outputs, "summary.json")
        with open(path, "w") as fh:
            json.dump(summary, fh, indent=1, sort_keys=True)
        paths.append(path)
    return ExperimentResult(spec, iterations, curves, raw, terminal, summary, paths)


def stepsize_sweep(spec, alphas, parallel=1, write=True, metric="value_error_bar"):
    """Re-run ``spec`` once per constant step size in ``alphas``.

    Every variant's step is replaced by ``constant(alpha)``. For each alpha
    and variant the terminal ``metric`` (default ``||V - Phi theta_bar||_xi``)
    is reported per run; diverged runs count as ``inf`` in the medians and
    worst cases.
    """
    if isinstance(spec, dict):
        spec = ExperimentSpec.from_dict(spec)
    if not alphas:
        raise SpecValidationError(["at least one alpha is required"])
    if any(a < 0 for a in alphas):
        raise SpecValidationError(["alphas must be non-negative"])
    metrics = tuple(dict.fromkeys(tuple(spec.metrics) + (metric,)))
    per_alpha, results = {}, {}
    for alpha in alphas:
        variants = tuple(dict(v, step="constant", alpha=float(alpha)) for v in spec.variants)
        outputs = os.path.join(spec.outputs, f"alpha_{alpha:g}") if spec.outputs else None
        sub = replace(spec, variants=variants, outputs=outputs, metrics=metrics)
        res = run_experiment(sub, parallel=parallel, write=write)
        results[float(alpha)] = res
        entry = {}
        for label, term in res.terminal.items():
            vals = np.where(term["diverged"], np.inf, term[metric])
            vals = np.where(np.isnan(vals), np.inf, vals)
            entry[label] = {
                "median": float(np.median(vals)),
                "diverged": int(term["diverged"].sum()),
                "values": vals,
            }
        per_alpha[float(alpha)] = entry
    labels = [v["label"] for v in spec.variants]
    worst = {lab: max(per_alpha[a][lab]["median"] for a in per_alpha) for lab in labels}
    summary = _clean({
        "metric": metric,
        "alphas": [float(a) for a in alphas],
        "per_alpha": {f"{a:g}": {lab: {k: e[k] for k in ("median", "diverged")} for lab, e in d.items()}
                      for a, d in per_alpha.items()},
        "worst_median": worst,
    })
    if write and spec.outputs:
        os.makedirs(spec.outputs, exist_ok=True)
        with open(os.path.join(spec.outputs, "sweep_summary.json"), "w") as fh:
            json.dump(summary, fh, indent=1, sort_keys=True)
    return {"summary": summary, "per_alpha": per_alpha, "results": results, "worst": worst}
