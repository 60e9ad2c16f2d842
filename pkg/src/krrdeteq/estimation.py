"""Estimate the kernel spectrum and target alignment from a holdout sample.

Eigendecomposing K/m on a holdout of size m gives eigenvalue estimates
xi_hat_j = mu_j and alignment estimates beta_hat_j = v_j^T y / sqrt(m).
Plugging those into the closed-form risk predictions produces learning-curve
estimates without access to the true eigendecomposition.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass

import numpy as np

from .deteq import DetEquivalents, deterministic_equivalents
from .krr import GramMatrix, KrrError
from .spectrum import Alignment, ModelSpec, NoiseModel, Spectrum

__all__ = ["EstimatedDecomposition", "estimate_spectrum", "plugin_risk_curve"]

EIG_FLOOR = 1e-12


@dataclass(frozen=True)
class EstimatedDecomposition:
    """Holdout eigenvalues (nonincreasing) and squared alignment coefficients.

    Kept at full length m so that Parseval holds exactly:
    sum_j alignments[j] = ||y||^2 / m.  ``noise_estimate`` averages the
    alignment mass on numerically-zero eigendirections when any exist.
    """

    eigenvalues: np.ndarray
    alignments: np.ndarray
    holdout_size: int
    noise_estimate: float | None = None

    def to_json(self) -> str:
        return json.dumps(
            {
                "eigenvalues": [float(v) for v in self.eigenvalues],
                "alignments": [float(v) for v in self.alignments],
                "holdout_size": self.holdout_size,
                "noise_estimate": self.noise_estimate,
            },
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, text: str) -> "EstimatedDecomposition":
        doc = json.loads(text)
        return cls(
            eigenvalues=np.asarray(doc["eigenvalues"], dtype=float),
            alignments=np.asarray(doc["alignments"], dtype=float),
            holdout_size=int(doc["holdout_size"]),
            noise_estimate=doc.get("noise_estimate"),
        )


def estimate_spectrum(gram: GramMatrix, y: np.ndarray) -> EstimatedDecomposition:
    """Eigendecompose K/m and project the labels onto the eigenbasis."""
    y = np.asarray(y, dtype=float).ravel()
    m = gram.n
    if y.size != m:
        raise KrrError("label vector length must match the Gram size")
    mu, v = gram.eigendecomposition()  # raises on non-p.s.d. input
    mu = mu[::-1] / m
    v = v[:, ::-1]
    beta_sq = (v.T @ y) ** 2 / m
    eigenvalues = np.maximum(mu, 0.0)
    zero = eigenvalues <= EIG_FLOOR * max(eigenvalues[0], 0.0)
    noise_estimate = None
    if np.any(zero):
        noise_estimate = float(beta_sq[zero].mean() * m)
    return EstimatedDecomposition(
        eigenvalues=eigenvalues,
        alignments=beta_sq,
        holdout_size=m,
        noise_estimate=noise_estimate,
    )


def decomposition_to_model(
    est: EstimatedDecomposition,
    n: int,
    lam: float,
    noise_variance: float,
    truncation: int | None = None,
    noise_correction: bool = True,
) -> ModelSpec:
    """Assemble a prediction instance from estimated quantities.

    Keeps the top ``truncation`` eigendirections above the numerical-rank
    floor (default m/2); alignment mass beyond them joins the residual.  Each
    squared coefficient inflates by about noise_variance/m in expectation, so
    by default that amount is subtracted and clamped at zero.
    """
    m = est.holdout_size
    j_max = m // 2 if truncation is None else int(truncation)
    if not 1 <= j_max <= m:
        raise KrrError(f"truncation {j_max} outside [1, {m}]")
    keep = min(j_max, int(np.sum(est.eigenvalues > EIG_FLOOR * max(est.eigenvalues[0], 0.0))))
    if keep < 1:
        raise KrrError("no eigenvalues above the numerical-rank floor")
    beta_sq = est.alignments[:keep].copy()
    residual = float(est.alignments[keep:].sum())
    if noise_correction and noise_variance > 0:
        # retained coordinates: per-coordinate subtraction, clamped at 0;
        # tail: aggregate subtraction (per-coordinate clamping would inflate
        # the residual by ~2*phi(1)*sigma^2*(m-keep)/m on pure-noise modes)
        beta_sq = np.maximum(beta_sq - noise_variance / m, 0.0)
        residual = max(residual - (m - keep) * noise_variance / m, 0.0)
    spectrum = Spectrum(est.eigenvalues[:keep], np.ones(keep, dtype=np.int64))
    alignment = Alignment(beta_sq, residual_energy=residual)
    return ModelSpec(
        n=n, lam=lam, spectrum=spectrum, alignment=alignment, noise=NoiseModel(noise_variance)
    )


def plugin_risk_curve(
    est: EstimatedDecomposition,
    n_grid,
    lam: float,
    noise_variance: float,
    truncation: int | None = None,
    noise_correction: bool = True,
) -> list[tuple[int, float]]:
    """Predicted risk at every n in the grid from estimated spectral data.

    Emits (n, risk) pairs; a warning flags grid points at or beyond the
    holdout size, where the estimate loses validity.
    """
    n_grid = [int(v) for v in n_grid]
    out: list[tuple[int, float]] = []
    for n in n_grid:
        if n >= est.holdout_size:
            warnings.warn(
                f"n = {n} >= holdout size {est.holdout_size}: estimated spectrum "
                "may be unreliable at this sample count",
                stacklevel=2,
            )
        model = decomposition_to_model(est, n, lam, noise_variance, truncation, noise_correction)
        out.append((n, deterministic_equivalents(model).risk))
    return out


def plugin_equivalents(
    est: EstimatedDecomposition,
    n: int,
    lam: float,
    noise_variance: float,
    truncation: int | None = None,
    noise_correction: bool = True,
) -> DetEquivalents:
    """Full prediction bundle at one n (same construction as the risk curve)."""
    model = decomposition_to_model(est, n, lam, noise_variance, truncation, noise_correction)
    return deterministic_equivalents(model)
