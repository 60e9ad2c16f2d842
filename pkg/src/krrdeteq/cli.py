"""Command-line entry point.

Subcommands map to experiment kinds (simulate, sphere, gcv-sweep,
probe-functionals, estimate) plus `deteq`, which evaluates the closed-form
predictions for a serialized spectral model without any sampling.

Exit codes: 0 success, 2 partial row failures, 1 usage or config errors.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys

from .deteq import deterministic_equivalents
from .harness import (
    CURVE_COLUMNS,
    ConfigError,
    ExperimentConfig,
    ExperimentResult,
    emit_results,
    run_experiment,
)
from .spectrum import ModelSpec, SpectrumError, model_from_json

SUBCOMMAND_KIND = {
    "simulate": "gaussian_curve",
    "sphere": "sphere_curve",
    "gcv-sweep": "gcv_sweep",
    "probe-functionals": "functional_probe",
    "estimate": "estimate_and_predict",
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage errors exit 1, not argparse's default 2
        self.print_usage(sys.stderr)
        raise SystemExit(f"error: {message}")


def _add_common(sub):
    sub.add_argument("--config", required=True, help="path to the experiment JSON config")
    sub.add_argument("--out", default=None, help="output path (overrides config output_path)")
    sub.add_argument("--format", choices=("csv", "json"), default="csv")
    sub.add_argument("--threads", type=int, default=None, help="worker count (default: KRRDETEQ_THREADS or 1)")
    sub.add_argument("--seed", type=int, default=None, help="root seed (overrides config)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="krrdeteq", description=__doc__)
    subs = parser.add_subparsers(dest="command", required=True)
    for name in SUBCOMMAND_KIND:
        _add_common(subs.add_parser(name))
    _add_common(subs.add_parser("deteq", help="closed-form predictions from a spectral model JSON"))
    return parser


def _default_threads(value) -> int:
    if value is not None:
        return max(int(value), 1)
    env = os.environ.get("KRRDETEQ_THREADS")
    return max(int(env), 1) if env else 1


def _run_deteq(args) -> int:
    with open(args.config) as handle:
        doc = json.load(handle)
    spectrum, alignment, noise = model_from_json(
        json.dumps({k: doc[k] for k in ("blocks", "alignment", "residual_energy", "noise_variance") if k in doc})
    )
    lam = float(doc.get("lambda", 0.0))
    n_grid = [int(v) for v in doc.get("n_grid", [])] or [int(doc["n"])]
    seed = int(doc.get("seed", 0)) if args.seed is None else args.seed
    rows = []
    failed = 0
    for n in n_grid:
        try:
            pred = deterministic_equivalents(
                ModelSpec(n=n, lam=lam, spectrum=spectrum, alignment=alignment, noise=noise)
            )
            rows.append(
                {
                    "kind": "deteq",
                    "n": n,
                    "lambda": lam,
                    "prediction": pred.risk,
                    "empirical_mean": math.nan,
                    "empirical_std": math.nan,
                    "reps": 0,
                    "seed": seed,
                    "lambda_star": pred.effective.lambda_star,
                    "upsilon2": pred.effective.upsilon2,
                    "status": "ok",
                }
            )
        except Exception as exc:
            failed += 1
            rows.append(
                {
                    "kind": "deteq",
                    "n": n,
                    "lambda": lam,
                    "prediction": math.nan,
                    "empirical_mean": math.nan,
                    "empirical_std": math.nan,
                    "reps": 0,
                    "seed": seed,
                    "lambda_star": math.nan,
                    "upsilon2": math.nan,
                    "status": f"error: {type(exc).__name__}: {exc}",
                }
            )
    result = ExperimentResult(rows, "curve", n_failed=failed)
    out = args.out or doc.get("output_path")
    if out is None:
        raise ConfigError("no output path: pass --out or set output_path in the config")
    emit_results(result, args.format, out)
    return 2 if failed else 0


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        if isinstance(exc.code, str):
            print(exc.code, file=sys.stderr)
            return 1
        return 0 if exc.code in (0, None) else 1
    try:
        if args.command == "deteq":
            return _run_deteq(args)
        with open(args.config) as handle:
            config = ExperimentConfig.from_json(handle.read(), kind=SUBCOMMAND_KIND[args.command])
        config = config.with_overrides(seed=args.seed, threads=_default_threads(args.threads))
        result = run_experiment(config)
        out = args.out or config.output_path
        if out is None:
            raise ConfigError("no output path: pass --out or set output_path in the config")
        emit_results(result, args.format, out)
        if result.n_failed:
            print(f"{result.n_failed} row(s) failed; see status column", file=sys.stderr)
            return 2
        return 0
    except (ConfigError, SpectrumError, FileNotFoundError, json.JSONDecodeError, KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
