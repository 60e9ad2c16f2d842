"""Empirical resolvent functionals and their closed-form counterparts.

For a feature matrix X (rows x_i = Sigma^{1/2} z_i) and resolvent
R = (X^T X + lam)^{-1}, four trace functionals of a p.s.d. test matrix A are
evaluated empirically and predicted in closed form from the effective
regularization.  A convergence probe measures how fast the empirical values
concentrate on the predictions as n grows.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .deteq import solve_effective_reg
from .seeds import derive_rng
from .spectrum import Spectrum, SpectrumError

__all__ = [
    "FeatureSample",
    "FunctionalReport",
    "RiskMatrix",
    "sample_gaussian_features",
    "empirical_functionals",
    "deterministic_functionals",
    "convergence_probe",
    "probe_to_csv",
]

# primal (p x p) factorization up to this aspect ratio, dual (n x n) beyond
PRIMAL_RATIO = 4


@dataclass(frozen=True)
class FeatureSample:
    """n x p feature matrix with its known diagonal covariance."""

    matrix: np.ndarray
    covariance: Spectrum
    seed: int = 0

    def __post_init__(self):
        x = np.asarray(self.matrix, dtype=float)
        if x.ndim != 2:
            raise SpectrumError("feature matrix must be 2-d")
        if x.shape[1] != self.covariance.total_rank:
            raise SpectrumError(
                f"feature dimension {x.shape[1]} != expanded covariance rank "
                f"{self.covariance.total_rank}"
            )
        object.__setattr__(self, "matrix", x)

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    @property
    def p(self) -> int:
        return self.matrix.shape[1]


@dataclass(frozen=True)
class RiskMatrix:
    """Structured test matrix Sigma^-1 beta beta^T Sigma^-1.

    Kept in factored form: by design Tr(A Sigma^2) = ||beta||^2 stays finite
    even when the dense matrix would be ill-conditioned.
    """

    beta: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "beta", np.asarray(self.beta, dtype=float).ravel())


@dataclass(frozen=True)
class FunctionalReport:
    """Empirical values, predictions, and relative errors for one sample."""

    phi: tuple[float, float, float, float]
    psi: tuple[float, float, float, float]
    rel_err: tuple[float, float, float, float]


def sample_gaussian_features(spectrum: Spectrum, n: int, seed) -> FeatureSample:
    """x = Sigma^{1/2} z with z ~ N(0, I_p); p = expanded rank of the spectrum."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    sqrt_sigma = np.sqrt(spectrum.expand())
    z = rng.standard_normal((n, sqrt_sigma.size))
    seed_val = seed if isinstance(seed, int) else 0
    return FeatureSample(matrix=z * sqrt_sigma, covariance=spectrum, seed=seed_val)


def _symmetrize(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    return 0.5 * (a + a.T)


def _resolvent(x: np.ndarray, lam: float) -> np.ndarray:
    """R = (X^T X + lam)^-1, via p x p Cholesky or the n x n dual form."""
    n, p = x.shape
    if p <= PRIMAL_RATIO * n:
        factor = cho_factor(x.T @ x + lam * np.eye(p), lower=True)
        return cho_solve(factor, np.eye(p))
    factor = cho_factor(x @ x.T + lam * np.eye(n), lower=True)
    gx = cho_solve(factor, x)
    return (np.eye(p) - x.T @ gx) / lam


def empirical_functionals(sample: FeatureSample, lam: float, a) -> tuple[float, float, float, float]:
    """The four resolvent trace functionals of the sample at test matrix ``a``.

    phi1 = Tr(A S^1/2 R S^1/2)          phi2 = Tr((X^T X / n) R)
    phi3 = Tr(A S^1/2 R S R S^1/2)      phi4 = Tr(A S^1/2 R (X^T X / n) R S^1/2)

    ``a`` is a dense symmetric p.s.d. array or a RiskMatrix.  phi4 uses
    X^T X = (X^T X + lam) - lam, so only R and R^2 contractions are needed.
    """
    if lam <= 0 or not math.isfinite(lam):
        raise SpectrumError("empirical functionals require lambda > 0")
    x = sample.matrix
    n, p = x.shape
    sigma = sample.covariance.expand()
    sqrt_sigma = np.sqrt(sigma)

    r = _resolvent(x, lam)
    # phi2 via Tr(X^T X R) = p - lam Tr(R)
    phi2 = (p - lam * float(np.trace(r))) / n

    if isinstance(a, RiskMatrix):
        if a.beta.size != p:
            raise SpectrumError("test matrix dimension mismatch")
        u = a.beta / sqrt_sigma
        ru = r @ u
        phi1 = float(u @ ru)
        phi3 = float(np.dot(sigma, ru * ru))
        phi4 = (phi1 - lam * float(ru @ ru)) / n
    else:
        a = _symmetrize(a)
        if a.shape != (p, p):
            raise SpectrumError("test matrix dimension mismatch")
        m = sqrt_sigma[:, None] * r * sqrt_sigma[None, :]
        if np.count_nonzero(a) == 0:
            return 0.0, phi2, 0.0, 0.0
        if np.array_equal(a, np.eye(p)):
            phi1 = float(np.trace(m))
            phi3 = float((m * m).sum())  # Tr(M^2) = ||M||_F^2, M symmetric
            tr_ar2 = float(((sqrt_sigma[:, None] * r) ** 2).sum())  # Tr(S R^2)
        else:
            am = a @ m
            phi1 = float(np.trace(am))
            phi3 = float((am * m.T).sum())  # Tr(A M M)
            sa = sqrt_sigma[:, None] * a * sqrt_sigma[None, :]
            tr_ar2 = float(((sa @ r) * r).sum())  # Tr(S^1/2 A S^1/2 R R)
        phi4 = (phi1 - lam * tr_ar2) / n
    for name, val in (("phi1", phi1), ("phi2", phi2), ("phi3", phi3), ("phi4", phi4)):
        if not math.isfinite(val):
            raise ArithmeticError(f"{name} is not finite")
    return phi1, phi2, phi3, phi4


def deterministic_functionals(
    spectrum: Spectrum, n: int, lam: float, a
) -> tuple[float, float, float, float]:
    """Closed-form predictions for the four functionals.

    With mu = lam / lambda_star:
    psi1 = Tr(A S (mu S + lam)^-1)               psi2 = Tr(S (S + ls)^-1) / n
    psi3 = Tr(A S^2 (mu S + lam)^-2) / (1 - U2)  psi4 = Tr(A S^2 (S + ls)^-2) / (n^2 (1 - U2))
    """
    eff = solve_effective_reg(spectrum, n, lam)
    ls, mu = eff.lambda_star, eff.mu_star
    sigma = spectrum.expand()
    denom = 1.0 - eff.upsilon2
    psi2 = eff.upsilon1
    if isinstance(a, RiskMatrix):
        if a.beta.size != sigma.size:
            raise SpectrumError("test matrix dimension mismatch")
        b2 = a.beta**2
        psi1 = float(np.sum(b2 / (sigma * (mu * sigma + lam))))
        psi3 = float(np.sum(b2 / (mu * sigma + lam) ** 2)) / denom
        psi4 = float(np.sum(b2 / (sigma + ls) ** 2)) / (n * n * denom)
    else:
        a = _symmetrize(a)
        if a.shape != (sigma.size, sigma.size):
            raise SpectrumError("test matrix dimension mismatch")
        diag_a = np.diag(a)
        psi1 = float(np.dot(diag_a, sigma / (mu * sigma + lam)))
        psi3 = float(np.dot(diag_a, sigma**2 / (mu * sigma + lam) ** 2)) / denom
        psi4 = float(np.dot(diag_a, sigma**2 / (sigma + ls) ** 2)) / (n * n * denom)
    return psi1, psi2, psi3, psi4


def functional_report(sample: FeatureSample, lam: float, a) -> FunctionalReport:
    phi = empirical_functionals(sample, lam, a)
    psi = deterministic_functionals(sample.covariance, sample.n, lam, a)
    rel = tuple(abs(p - q) / q if q != 0 else math.inf for p, q in zip(phi, psi))
    return FunctionalReport(phi=phi, psi=psi, rel_err=rel)


def _probe_task(spectrum, n, lam, a_choice, seed, n_index, rep):
    rng = derive_rng(seed, 101, n_index, rep)
    sample = sample_gaussian_features(spectrum, n, rng)
    p = spectrum.total_rank
    if a_choice == "identity":
        a = np.eye(p)
    elif a_choice == "rank_one":
        beta = np.zeros(p)
        beta[0] = 1.0
        a = RiskMatrix(beta)
    elif isinstance(a_choice, (np.ndarray, RiskMatrix)):
        a = a_choice
    else:
        raise SpectrumError(f"unknown test-matrix choice {a_choice!r}")
    return functional_report(sample, lam, a).rel_err


def convergence_probe(
    spectrum: Spectrum,
    n_grid,
    lam: float,
    a_choice="identity",
    reps: int = 20,
    seed: int = 0,
    threads: int = 1,
) -> list[dict]:
    """Median relative errors |phi_j - psi_j| / psi_j per (n, j) over replications.

    Gaussian features, per-replication derived seeds; the reduction is
    independent of worker count.  Returns rows with keys
    n, functional_index, median_rel_err, q25, q75, reps, seed.
    """
    n_grid = [int(v) for v in n_grid]
    if sorted(n_grid) != n_grid or not n_grid:
        raise SpectrumError("n grid must be nonempty and increasing")
    if reps < 1:
        raise SpectrumError("reps must be a positive integer")
    tasks = [(i, n, rep) for i, n in enumerate(n_grid) for rep in range(reps)]

    def run(task):
        i, n, rep = task
        return task, _probe_task(spectrum, n, lam, a_choice, seed, i, rep)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = dict(pool.map(run, tasks))
    else:
        results = dict(map(run, tasks))

    rows = []
    for i, n in enumerate(n_grid):
        errs = np.array([results[(i, n, rep)] for rep in range(reps)])
        for j in range(4):
            q25, med, q75 = np.percentile(errs[:, j], [25, 50, 75])
            rows.append(
                {
                    "n": n,
                    "functional_index": j + 1,
                    "median_rel_err": float(med),
                    "q25": float(q25),
                    "q75": float(q75),
                    "reps": reps,
                    "seed": seed,
                }
            )
    return rows


def probe_to_csv(rows: list[dict], path) -> None:
    columns = ["n", "functional_index", "median_rel_err", "q25", "q75", "reps", "seed"]
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow(
                [
                    row["n"],
                    row["functional_index"],
                    repr(float(row["median_rel_err"])),
                    repr(float(row["q25"])),
                    repr(float(row["q75"])),
                    row["reps"],
                    row["seed"],
                ]
            )
