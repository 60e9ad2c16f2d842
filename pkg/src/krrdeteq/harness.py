"""Declarative experiment runner: seeded replication, aggregation, emission.

A JSON config selects an experiment kind, model parameters, a replication
count and a root seed.  Replications derive order-independent seeds, so the
emitted tables are byte-identical for a given (config, seed) regardless of
worker count.  Failures are recorded per row and the remaining rows complete.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from . import estimation, functionals, krr, sphere
from .deteq import deterministic_equivalents
from .seeds import derive_rng
from .spectrum import Alignment, ModelSpec, NoiseModel, Spectrum, SpectrumError, nu_diagnostic

__all__ = ["ExperimentConfig", "ExperimentResult", "run_experiment", "emit_results", "CURVE_COLUMNS"]

CURVE_COLUMNS = [
    "kind",
    "n",
    "lambda",
    "prediction",
    "empirical_mean",
    "empirical_std",
    "reps",
    "seed",
    "lambda_star",
    "upsilon2",
    "status",
]
PROBE_COLUMNS = ["n", "functional_index", "median_rel_err", "q25", "q75", "reps", "seed"]

KINDS = ("gaussian_curve", "sphere_curve", "gcv_sweep", "functional_probe", "estimate_and_predict")


class ConfigError(ValueError):
    """Malformed experiment configuration."""


@dataclass(frozen=True)
class ExperimentConfig:
    """One experiment: kind, model parameters, replication count, seed."""

    kind: str
    reps: int = 1
    seed: int = 0
    noise_variance: float = 0.0
    lam: float = 0.0
    n_grid: tuple[int, ...] = ()
    lambda_grid: tuple[float, ...] = ()
    n: int = 0
    spectrum: dict | None = None
    target: dict | None = None
    d: int = 0
    gap: float = 0.0
    levels: int = 0
    energies: dict[int, float] | None = None
    a_choice: str = "identity"
    holdout: int = 0
    truncation: int | None = None
    output_path: str | None = None
    threads: int = 1

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown experiment kind {self.kind!r}")
        if self.reps < 1:
            raise ConfigError("reps must be >= 1")
        if self.kind in ("gaussian_curve", "sphere_curve", "functional_probe", "estimate_and_predict"):
            grid = list(self.n_grid)
            if not grid or sorted(grid) != grid or len(set(grid)) != len(grid):
                raise ConfigError("n_grid must be nonempty and strictly increasing")
        if self.kind == "gcv_sweep":
            if self.n < 1:
                raise ConfigError("gcv_sweep requires a positive n")
            grid = list(self.lambda_grid)
            if not grid or sorted(grid) != grid:
                raise ConfigError("lambda_grid must be nonempty and sorted")
        if self.kind == "estimate_and_predict" and self.holdout < 2:
            raise ConfigError("estimate_and_predict requires holdout >= 2")

    @classmethod
    def from_dict(cls, doc: dict, kind: str | None = None) -> "ExperimentConfig":
        doc = dict(doc)
        if kind is not None:
            found = doc.setdefault("kind", kind)
            if found != kind:
                raise ConfigError(f"config kind {found!r} does not match requested {kind!r}")
        known = {f for f in cls.__dataclass_fields__}
        alias = {"lambda": "lam"}
        kwargs: dict[str, Any] = {}
        for key, value in doc.items():
            key = alias.get(key, key)
            if key not in known:
                raise ConfigError(f"unknown config field {key!r}")
            kwargs[key] = value
        if "n_grid" in kwargs:
            kwargs["n_grid"] = tuple(int(v) for v in kwargs["n_grid"])
        if "lambda_grid" in kwargs:
            kwargs["lambda_grid"] = tuple(float(v) for v in kwargs["lambda_grid"])
        if "energies" in kwargs and kwargs["energies"] is not None:
            kwargs["energies"] = {int(k): float(v) for k, v in kwargs["energies"].items()}
        return cls(**kwargs)

    @classmethod
    def from_json(cls, text: str, kind: str | None = None) -> "ExperimentConfig":
        return cls.from_dict(json.loads(text), kind=kind)

    def canonical_json(self) -> str:
        doc = {k: getattr(self, k) for k in self.__dataclass_fields__}
        doc["n_grid"] = list(self.n_grid)
        doc["lambda_grid"] = list(self.lambda_grid)
        if self.energies is not None:
            doc["energies"] = {str(k): v for k, v in sorted(self.energies.items())}
        return json.dumps(doc, sort_keys=True)

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()[:16]

    def with_overrides(self, seed: int | None = None, threads: int | None = None) -> "ExperimentConfig":
        doc = json.loads(self.canonical_json())
        doc["energies"] = self.energies
        if seed is not None:
            doc["seed"] = int(seed)
        if threads is not None:
            doc["threads"] = int(threads)
        return ExperimentConfig(**{**doc, "n_grid": tuple(doc["n_grid"]), "lambda_grid": tuple(doc["lambda_grid"])})


@dataclass
class ExperimentResult:
    """Rows plus provenance; ``schema`` selects the emission column set."""

    rows: list[dict]
    schema: str  # "curve" | "probe"
    meta: dict = field(default_factory=dict)
    n_failed: int = 0


def _build_spectrum(doc: dict | None) -> Spectrum:
    if not doc:
        raise ConfigError("experiment requires a 'spectrum' entry")
    kind = doc.get("kind", "power_law")
    if kind == "power_law":
        return Spectrum.power_law(float(doc["exponent"]), int(doc["size"]))
    if kind == "blocks":
        return Spectrum.from_blocks(doc["blocks"])
    raise ConfigError(f"unknown spectrum kind {kind!r}")


def _build_beta(doc: dict | None, spectrum: Spectrum, seed: int) -> np.ndarray:
    """Expanded whitened target coefficients beta (per eigendirection)."""
    p = spectrum.total_rank
    if p > 2_000_000:
        raise ConfigError("expanded rank too large for feature-level simulation")
    doc = doc or {"kind": "random_unit"}
    kind = doc.get("kind", "random_unit")
    if kind == "random_unit":
        rng = derive_rng(seed, 7)
        beta = rng.standard_normal(p)
        return beta / np.linalg.norm(beta)
    if kind == "energies":
        values = np.asarray(doc["values"], dtype=float)
        if values.size != spectrum.n_blocks:
            raise ConfigError("target energies must have one entry per spectrum block")
        # spread block energy uniformly over its eigendirections
        per = np.repeat(values / spectrum.multiplicities, spectrum.multiplicities)
        return np.sqrt(per)
    raise ConfigError(f"unknown target kind {kind!r}")


def _block_energies(spectrum: Spectrum, beta: np.ndarray) -> np.ndarray:
    bounds = np.concatenate(([0], np.cumsum(spectrum.multiplicities)))
    return np.array(
        [float(np.sum(beta[a:b] ** 2)) for a, b in zip(bounds[:-1], bounds[1:])]
    )


def _diagnostic_nu(spectrum: Spectrum, n: int, lam: float) -> float:
    """Conditioning diagnostic carried on curve rows (never emitted to files).

    Evaluated at the full spectrum when lam > 0; in the ridgeless case the
    final degenerate block is treated as the tail so the required positive
    tail trace exists.
    """
    m = spectrum.total_rank
    if lam == 0:
        m -= int(spectrum.multiplicities[-1])
        if m < 1:
            return math.nan
    try:
        return nu_diagnostic(spectrum, m, n, lam)
    except SpectrumError:
        return math.nan


def _curve_row(config, n, lam, prediction, values, eff, status="ok", nu=math.nan) -> dict:
    values = [v for v in values if math.isfinite(v)]
    mean = float(np.mean(values)) if values else math.nan
    std = float(np.std(values, ddof=1)) if len(values) > 1 else 0.0 if values else math.nan
    return {
        "kind": config.kind,
        "n": n,
        "lambda": lam,
        "prediction": prediction,
        "empirical_mean": mean,
        "empirical_std": std,
        "reps": config.reps,
        "seed": config.seed,
        "lambda_star": eff.lambda_star if eff is not None else math.nan,
        "upsilon2": eff.upsilon2 if eff is not None else math.nan,
        "nu": nu,
        "status": status,
    }


def _map_tasks(tasks, worker, threads):
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(worker, tasks))
    return [worker(task) for task in tasks]


def _run_gaussian_curve(config: ExperimentConfig) -> ExperimentResult:
    spectrum = _build_spectrum(config.spectrum)
    beta = _build_beta(config.target, spectrum, config.seed)
    theta = beta / np.sqrt(spectrum.expand())
    alignment = Alignment(_block_energies(spectrum, beta))
    noise = NoiseModel(config.noise_variance)
    sigma = math.sqrt(config.noise_variance)

    def one_rep(task):
        n_index, n, rep = task
        rng = derive_rng(config.seed, 1, n_index, rep)
        try:
            sample = functionals.sample_gaussian_features(spectrum, n, rng)
            y = sample.matrix @ theta + sigma * rng.standard_normal(n)
            return task, krr.test_error_linear_exact(
                sample, theta, y, config.lam, config.noise_variance
            ), None
        except Exception as exc:  # record-and-continue
            return task, math.nan, f"{type(exc).__name__}: {exc}"

    tasks = [(i, n, r) for i, n in enumerate(config.n_grid) for r in range(config.reps)]
    outcomes = _map_tasks(tasks, one_rep, config.threads)
    by_n: dict[int, list] = {n: [] for n in config.n_grid}
    errors: dict[int, list[str]] = {n: [] for n in config.n_grid}
    for (_, n, _), value, err in outcomes:
        by_n[n].append(value)
        if err:
            errors[n].append(err)

    rows, failed = [], 0
    for n in config.n_grid:
        try:
            pred = deterministic_equivalents(
                ModelSpec(n=n, lam=config.lam, spectrum=spectrum, alignment=alignment, noise=noise)
            )
            prediction, eff = pred.risk, pred.effective
            nu = _diagnostic_nu(spectrum, n, config.lam)
            status = "ok" if not errors[n] else "error: " + errors[n][0]
        except Exception as exc:
            prediction, eff, nu = math.nan, None, math.nan
            status = f"error: {type(exc).__name__}: {exc}"
        if status != "ok":
            failed += 1
        rows.append(_curve_row(config, n, config.lam, prediction, by_n[n], eff, status, nu))
    return ExperimentResult(rows, "curve", n_failed=failed)


def _run_sphere_curve(config: ExperimentConfig) -> ExperimentResult:
    if config.d < 3 or config.levels < 1 or config.gap <= 0:
        raise ConfigError("sphere_curve requires d >= 3, levels >= 1, gap > 0")
    kernel = sphere.kernel_from_gaps(config.d, config.levels, config.gap)
    energies = config.energies or {k: k**-2.0 for k in range(1, config.levels + 1)}
    target = sphere.build_cyclic_target(config.d, energies)
    noise = NoiseModel(config.noise_variance)
    sigma = math.sqrt(config.noise_variance)

    def one_rep(task):
        n_index, n, rep = task
        rng = derive_rng(config.seed, 2, n_index, rep)
        try:
            points = sphere.sample_sphere(config.d, n, rng)
            gram = krr.GramMatrix(kernel.gram(points))
            y = target(points) + sigma * rng.standard_normal(n)
            fit = krr.fit_krr(gram, y, config.lam)
            return task, sphere.exact_sphere_risk(
                fit, kernel, target, config.noise_variance, points
            ), None
        except Exception as exc:
            return task, math.nan, f"{type(exc).__name__}: {exc}"

    tasks = [(i, n, r) for i, n in enumerate(config.n_grid) for r in range(config.reps)]
    outcomes = _map_tasks(tasks, one_rep, config.threads)
    by_n: dict[int, list] = {n: [] for n in config.n_grid}
    errors: dict[int, list[str]] = {n: [] for n in config.n_grid}
    for (_, n, _), value, err in outcomes:
        by_n[n].append(value)
        if err:
            errors[n].append(err)

    rows, failed = [], 0
    for n in config.n_grid:
        try:
            model = sphere.sphere_spectrum(kernel, target, noise, n, config.lam)
            pred = deterministic_equivalents(model)
            prediction, eff = pred.risk, pred.effective
            nu = _diagnostic_nu(model.spectrum, n, config.lam)
            status = "ok" if not errors[n] else "error: " + errors[n][0]
        except Exception as exc:
            prediction, eff, nu = math.nan, None, math.nan
            status = f"error: {type(exc).__name__}: {exc}"
        if status != "ok":
            failed += 1
        rows.append(_curve_row(config, n, config.lam, prediction, by_n[n], eff, status, nu))
    return ExperimentResult(rows, "curve", n_failed=failed)


def _run_gcv_sweep(config: ExperimentConfig) -> ExperimentResult:
    spectrum = _build_spectrum(config.spectrum)
    beta = _build_beta(config.target, spectrum, config.seed)
    theta = beta / np.sqrt(spectrum.expand())
    alignment = Alignment(_block_energies(spectrum, beta))
    noise = NoiseModel(config.noise_variance)
    sigma = math.sqrt(config.noise_variance)
    n = config.n

    def one_rep(rep):
        try:
            rng = derive_rng(config.seed, 3, rep)
            sample = functionals.sample_gaussian_features(spectrum, n, rng)
            y = sample.matrix @ theta + sigma * rng.standard_normal(n)
            gram = krr.GramMatrix(sample.matrix @ sample.matrix.T)
        except Exception:  # record-and-continue: the whole replication fails
            return [math.nan] * len(config.lambda_grid)
        values = []
        for lam in config.lambda_grid:
            try:
                values.append(krr.gcv(gram, y, lam))
            except Exception:
                values.append(math.nan)
        return values

    sweeps = np.array(_map_tasks(list(range(config.reps)), one_rep, config.threads))
    rows, failed = [], 0
    for j, lam in enumerate(config.lambda_grid):
        column = sweeps[:, j]
        try:
            pred = deterministic_equivalents(
                ModelSpec(n=n, lam=lam, spectrum=spectrum, alignment=alignment, noise=noise)
            )
            prediction, eff = pred.risk, pred.effective
            nu = _diagnostic_nu(spectrum, n, lam)
            status = "ok" if np.all(np.isfinite(column)) else "error: gcv failed in some replications"
        except Exception as exc:
            prediction, eff, nu = math.nan, None, math.nan
            status = f"error: {type(exc).__name__}: {exc}"
        if status != "ok":
            failed += 1
        rows.append(_curve_row(config, n, lam, prediction, list(column), eff, status, nu))
    return ExperimentResult(rows, "curve", n_failed=failed)


def _run_functional_probe(config: ExperimentConfig) -> ExperimentResult:
    spectrum = _build_spectrum(config.spectrum)
    rows = functionals.convergence_probe(
        spectrum,
        list(config.n_grid),
        config.lam,
        a_choice=config.a_choice,
        reps=config.reps,
        seed=config.seed,
        threads=config.threads,
    )
    return ExperimentResult(rows, "probe")


def _run_estimate_and_predict(config: ExperimentConfig) -> ExperimentResult:
    spectrum = _build_spectrum(config.spectrum)
    beta = _build_beta(config.target, spectrum, config.seed)
    theta = beta / np.sqrt(spectrum.expand())
    sigma = math.sqrt(config.noise_variance)

    rng = derive_rng(config.seed, 4)
    holdout = functionals.sample_gaussian_features(spectrum, config.holdout, rng)
    y_holdout = holdout.matrix @ theta + sigma * rng.standard_normal(config.holdout)
    est = estimation.estimate_spectrum(
        krr.GramMatrix(holdout.matrix @ holdout.matrix.T), y_holdout
    )

    def one_rep(task):
        n_index, n, rep = task
        rng = derive_rng(config.seed, 5, n_index, rep)
        try:
            sample = functionals.sample_gaussian_features(spectrum, n, rng)
            y = sample.matrix @ theta + sigma * rng.standard_normal(n)
            return task, krr.test_error_linear_exact(
                sample, theta, y, config.lam, config.noise_variance
            ), None
        except Exception as exc:
            return task, math.nan, f"{type(exc).__name__}: {exc}"

    tasks = [(i, n, r) for i, n in enumerate(config.n_grid) for r in range(config.reps)]
    outcomes = _map_tasks(tasks, one_rep, config.threads)
    by_n: dict[int, list] = {n: [] for n in config.n_grid}
    errors: dict[int, list[str]] = {n: [] for n in config.n_grid}
    for (_, n, _), value, err in outcomes:
        by_n[n].append(value)
        if err:
            errors[n].append(err)

    rows, failed = [], 0
    for n in config.n_grid:
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                model = estimation.decomposition_to_model(
                    est, n, config.lam, config.noise_variance, config.truncation
                )
            pred = deterministic_equivalents(model)
            prediction, eff = pred.risk, pred.effective
            nu = _diagnostic_nu(model.spectrum, n, config.lam)
            status = "ok" if not errors[n] else "error: " + errors[n][0]
        except Exception as exc:
            prediction, eff, nu = math.nan, None, math.nan
            status = f"error: {type(exc).__name__}: {exc}"
        if status != "ok":
            failed += 1
        rows.append(_curve_row(config, n, config.lam, prediction, by_n[n], eff, status, nu))
    return ExperimentResult(rows, "curve", n_failed=failed)


_RUNNERS = {
    "gaussian_curve": _run_gaussian_curve,
    "sphere_curve": _run_sphere_curve,
    "gcv_sweep": _run_gcv_sweep,
    "functional_probe": _run_functional_probe,
    "estimate_and_predict": _run_estimate_and_predict,
}


def run_experiment(config: ExperimentConfig) -> ExperimentResult:
    """Run one experiment; deterministic given (config, seed).

    Per-replication seeds derive from (seed, kind tag, grid index, rep), so
    the result is independent of thread count.  Row failures are recorded in
    the status column and the remaining rows complete.
    """
    result = _RUNNERS[config.kind](config)
    result.meta = {
        "config_hash": config.config_hash(),
        "seed": config.seed,
        "created_unix": time.time(),  # provenance only; never emitted to files
    }
    return result


def _format_cell(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def emit_results(result: ExperimentResult, fmt: str, path) -> None:
    """Write the result table as CSV or JSON with a fixed column set.

    Curve tables use the 11-column schema; probe tables use the probe schema
    declared by the functional-probe interface.  Output bytes depend only on
    the table rows.
    """
    if not result.rows:
        raise ConfigError("refusing to emit an empty result table")
    columns = CURVE_COLUMNS if result.schema == "curve" else PROBE_COLUMNS
    if fmt == "csv":
        with open(path, "w", newline="") as handle:
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(columns)
            for row in result.rows:
                writer.writerow([_format_cell(row[c]) for c in columns])
    elif fmt == "json":
        doc = {
            "columns": columns,
            "rows": [{c: row[c] for c in columns} for row in result.rows],
        }
        with open(path, "w") as handle:
            json.dump(doc, handle, sort_keys=True, indent=1)
            handle.write("\n")
    else:
        raise ConfigError(f"unknown output format {fmt!r}")
