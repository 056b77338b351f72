"""Command line entry point: ``run``, ``sweep`` and ``bundle-export``."""

import argparse
import json
import sys
from dataclasses import replace

from .domains import DOMAINS, export_bundle, get_domain
from .exceptions import SpecValidationError
from .harness import ExperimentSpec, run_experiment, stepsize_sweep

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 2, 3


def _parser():
    p = argparse.ArgumentParser(prog="gtdsaddle", description="Gradient-TD saddle-point experiments.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--seed", type=int, help="override master_seed")
        sp.add_argument("--out-dir", help="override the output directory")
        sp.add_argument("--parallel", type=int, default=1, help="worker processes (default 1)")

    r = sub.add_parser("run", help="run an experiment spec")
    r.add_argument("spec")
    common(r)
    s = sub.add_parser("sweep", help="step-size sweep over a spec")
    s.add_argument("spec")
    s.add_argument("--alphas", type=float, nargs="+", required=True)
    common(s)
    b = sub.add_parser("bundle-export", help="write a domain's MDP JSON and manifest")
    b.add_argument("domain", choices=sorted(DOMAINS))
    b.add_argument("--out-dir", default=".")
    return p


def _load(args):
    spec = ExperimentSpec.from_json(args.spec)
    changes = {}
    if args.seed is not None:
        if args.seed < 0:
            raise SpecValidationError(["--seed must be non-negative"])
        changes["master_seed"] = args.seed
    if args.out_dir:
        changes["outputs"] = args.out_dir
    spec = replace(spec, **changes)
    if not spec.outputs:
        raise SpecValidationError(["no output directory: set 'outputs' or pass --out-dir"])
    if args.parallel < 1:
        raise SpecValidationError(["--parallel must be >= 1"])
    return spec


def main(argv=None):
    args = _parser().parse_args(argv)
    try:
        if args.command == "bundle-export":
            paths = export_bundle(get_domain(args.domain), args.out_dir)
            print("\n".join(paths))
            return EXIT_OK
        spec = _load(args)
    except (SpecValidationError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    try:
        if args.command == "run":
            res = run_experiment(spec, parallel=args.parallel)
            print(json.dumps(res.summary["table"], indent=1))
        else:
            out = stepsize_sweep(spec, args.alphas, parallel=args.parallel)
            print(json.dumps(out["summary"]["worst_median"], indent=1))
    except SpecValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:  # noqa: BLE001 - reported through the exit code
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
