"""Spectral data model for kernel ridge regression risk predictions.

A kernel operator is summarized by its positive eigenvalues grouped into
blocks ``(value, multiplicity)`` in nonincreasing order, the target's energy
per block, and a label-noise model.  All downstream formulas consume the
scalar sums defined here, so everything stays O(#blocks) even when a block
is astronomically degenerate (e.g. spherical-harmonic multiplicities).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Spectrum",
    "Alignment",
    "NoiseModel",
    "ModelSpec",
    "trace_resolvents",
    "tail_rank",
    "effective_rank",
    "nu_diagnostic",
    "model_to_json",
    "model_from_json",
]


class SpectrumError(ValueError):
    """Invalid spectral data or out-of-domain query."""


@dataclass(frozen=True)
class Spectrum:
    """Eigenvalue blocks ``(value, multiplicity)``, nonincreasing in value.

    Values must be strictly positive and finite; multiplicities are positive
    integers.  Blocks are stored unexpanded so that degenerate spectra cost
    O(#blocks) per evaluation.
    """

    values: np.ndarray
    multiplicities: np.ndarray
    # cumulative expanded counts / traces, filled in __post_init__
    _cum_mult: np.ndarray = field(repr=False, default=None)
    _cum_trace: np.ndarray = field(repr=False, default=None)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        mults = np.asarray(self.multiplicities, dtype=np.int64)
        if values.ndim != 1 or mults.ndim != 1 or values.size != mults.size:
            raise SpectrumError("values and multiplicities must be matching 1-d sequences")
        if values.size == 0:
            raise SpectrumError("spectrum must contain at least one block")
        if not np.all(np.isfinite(values)) or np.any(values <= 0):
            raise SpectrumError("eigenvalues must be finite and strictly positive")
        if np.any(values[1:] > values[:-1] * (1 + 1e-15)):
            raise SpectrumError("eigenvalues must be nonincreasing across blocks")
        if np.any(mults < 1):
            raise SpectrumError("multiplicities must be positive integers")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "multiplicities", mults)
        object.__setattr__(self, "_cum_mult", np.cumsum(mults))
        object.__setattr__(self, "_cum_trace", np.cumsum(values * mults))

    @classmethod
    def from_blocks(cls, blocks) -> "Spectrum":
        """Build from an iterable of ``(eigenvalue, multiplicity)`` pairs."""
        blocks = list(blocks)
        if not blocks:
            raise SpectrumError("spectrum must contain at least one block")
        return cls(
            values=np.array([b[0] for b in blocks], dtype=float),
            multiplicities=np.array([b[1] for b in blocks], dtype=np.int64),
        )

    @classmethod
    def power_law(cls, exponent: float, size: int) -> "Spectrum":
        """Unit-multiplicity spectrum xi_j = j^(-exponent), j = 1..size."""
        j = np.arange(1, size + 1, dtype=float)
        return cls(values=j ** (-float(exponent)), multiplicities=np.ones(size, dtype=np.int64))

    @property
    def n_blocks(self) -> int:
        return self.values.size

    @property
    def total_rank(self) -> int:
        return int(self._cum_mult[-1])

    @property
    def trace(self) -> float:
        return float(self._cum_trace[-1])

    def eigenvalue_at(self, j: int) -> float:
        """The j-th largest eigenvalue (1-based, blocks expanded)."""
        if not 1 <= j <= self.total_rank:
            raise SpectrumError(f"expanded index {j} outside [1, {self.total_rank}]")
        block = int(np.searchsorted(self._cum_mult, j))
        return float(self.values[block])

    def head_trace(self, m: int) -> float:
        """Sum of the m largest eigenvalues (blocks expanded)."""
        if not 0 <= m <= self.total_rank:
            raise SpectrumError(f"expanded index {m} outside [0, {self.total_rank}]")
        if m == 0:
            return 0.0
        block = int(np.searchsorted(self._cum_mult, m))
        prev_mult = int(self._cum_mult[block - 1]) if block > 0 else 0
        prev_trace = float(self._cum_trace[block - 1]) if block > 0 else 0.0
        return prev_trace + (m - prev_mult) * float(self.values[block])

    def tail_trace(self, m: int) -> float:
        """Sum of eigenvalues past the m largest (blocks expanded)."""
        return self.trace - self.head_trace(m)

    def split(self, m: int) -> tuple["Spectrum | None", "Spectrum | None"]:
        """Split at expanded index m into (top-m spectrum, tail spectrum).

        A block straddling the cut is divided virtually.  Either side may be
        None when empty.
        """
        if not 0 <= m <= self.total_rank:
            raise SpectrumError(f"expanded index {m} outside [0, {self.total_rank}]")
        if m == 0:
            return None, self
        if m == self.total_rank:
            return self, None
        head_v, head_m, tail_v, tail_m = [], [], [], []
        taken = 0
        for v, mult in zip(self.values, self.multiplicities):
            mult = int(mult)
            if taken >= m:
                tail_v.append(v)
                tail_m.append(mult)
            elif taken + mult <= m:
                head_v.append(v)
                head_m.append(mult)
            else:
                keep = m - taken
                head_v.append(v)
                head_m.append(keep)
                tail_v.append(v)
                tail_m.append(mult - keep)
            taken += mult
        head = Spectrum(np.array(head_v), np.array(head_m, dtype=np.int64))
        tail = Spectrum(np.array(tail_v), np.array(tail_m, dtype=np.int64))
        return head, tail

    def expand(self) -> np.ndarray:
        """Expanded eigenvalue vector (length = total rank).  Use sparingly."""
        return np.repeat(self.values, self.multiplicities)

    def scaled(self, c: float) -> "Spectrum":
        if c <= 0:
            raise SpectrumError("scale factor must be positive")
        return Spectrum(self.values * c, self.multiplicities)


@dataclass(frozen=True)
class Alignment:
    """Target energy per spectrum block plus energy outside the spectrum.

    ``energies[k]`` is the squared target coefficient mass in block k;
    ``residual_energy`` is target energy orthogonal to every listed block,
    which downstream acts as extra label noise.
    """

    energies: np.ndarray
    residual_energy: float = 0.0

    def __post_init__(self):
        energies = np.asarray(self.energies, dtype=float)
        if energies.ndim != 1:
            raise SpectrumError("alignment energies must be a 1-d sequence")
        if np.any(energies < 0) or not np.all(np.isfinite(energies)):
            raise SpectrumError("alignment energies must be finite and nonnegative")
        if not (math.isfinite(self.residual_energy) and self.residual_energy >= 0):
            raise SpectrumError("residual_energy must be finite and nonnegative")
        object.__setattr__(self, "energies", energies)
        object.__setattr__(self, "residual_energy", float(self.residual_energy))

    @classmethod
    def zero(cls, spectrum: Spectrum) -> "Alignment":
        return cls(np.zeros(spectrum.n_blocks))

    @property
    def total_energy(self) -> float:
        """Squared L2 norm of the target function."""
        return float(self.energies.sum()) + self.residual_energy

    def matches(self, spectrum: Spectrum) -> bool:
        return self.energies.size == spectrum.n_blocks


@dataclass(frozen=True)
class NoiseModel:
    """Label-noise variance plus the sub-Gaussian proxy used for sampling."""

    variance: float = 0.0
    sub_gaussian_proxy: float | None = None

    def __post_init__(self):
        if not (math.isfinite(self.variance) and self.variance >= 0):
            raise SpectrumError("noise variance must be finite and nonnegative")
        proxy = self.sub_gaussian_proxy
        if proxy is None:
            proxy = max(self.variance, 1e-300)
        if proxy < self.variance:
            raise SpectrumError("sub-Gaussian proxy must dominate the variance")
        object.__setattr__(self, "variance", float(self.variance))
        object.__setattr__(self, "sub_gaussian_proxy", float(proxy))


@dataclass(frozen=True)
class ModelSpec:
    """A full prediction instance: (n, lambda, spectrum, alignment, noise)."""

    n: int
    lam: float
    spectrum: Spectrum
    alignment: Alignment
    noise: NoiseModel = NoiseModel(0.0)

    def __post_init__(self):
        if self.n < 1:
            raise SpectrumError("sample count n must be a positive integer")
        if not (math.isfinite(self.lam) and self.lam >= 0):
            raise SpectrumError("ridge parameter must be finite and nonnegative")
        if self.lam == 0 and self.spectrum.total_rank <= self.n:
            raise SpectrumError(
                "lambda = 0 requires spectrum rank > n, otherwise the "
                "effective-regularization fixed point has no positive solution"
            )
        if not self.alignment.matches(self.spectrum):
            raise SpectrumError("alignment length must equal the number of spectrum blocks")


def trace_resolvents(spectrum: Spectrum, s: float) -> tuple[float, float]:
    """Resolvent trace sums (T1, T2) at shift s > 0.

    T1 = sum_k m_k xi_k / (xi_k + s), T2 = sum_k m_k xi_k^2 / (xi_k + s)^2.
    """
    if not (math.isfinite(s) and s > 0):
        raise SpectrumError("resolvent shift s must be positive")
    ratio = spectrum.values / (spectrum.values + s)
    t1 = float(np.dot(spectrum.multiplicities, ratio))
    t2 = float(np.dot(spectrum.multiplicities, ratio * ratio))
    return t1, t2


def tail_rank(spectrum: Spectrum, m: int, lam: float) -> float:
    """Regularized tail rank (lambda + sum_{j>m} xi_j) / xi_{m+1}.

    m counts leading eigenvalues with blocks expanded; returns +inf at
    m = total rank by convention.
    """
    if lam < 0 or not math.isfinite(lam):
        raise SpectrumError("regularization must be finite and nonnegative")
    if not 0 <= m <= spectrum.total_rank:
        raise SpectrumError(f"m = {m} outside [0, total rank = {spectrum.total_rank}]")
    if m == spectrum.total_rank:
        return math.inf
    return (lam + spectrum.tail_trace(m)) / spectrum.eigenvalue_at(m + 1)


def effective_rank(spectrum: Spectrum, m: int, n: int) -> float:
    """Smallest r >= n dominating intrinsic dimension at every scale.

    r = max(n, max_{0 <= k < min(n,m)} (sum_{j=k+1..m} xi_j) / xi_{k+1}).
    Within a constant-eigenvalue block the ratio is largest at the block
    start, so only block boundaries need scanning.
    """
    if n < 1:
        raise SpectrumError("n must be a positive integer")
    if not 1 <= m <= spectrum.total_rank:
        raise SpectrumError(f"m = {m} outside [1, total rank = {spectrum.total_rank}]")
    head = spectrum.head_trace(m)
    k_max = min(n, m) - 1
    best = float(n)
    starts = np.concatenate(([0], spectrum._cum_mult[:-1]))
    for start, value in zip(starts, spectrum.values):
        k = int(start)
        if k > k_max:
            break
        mass = head - spectrum.head_trace(k)
        best = max(best, mass / float(value))
    return best


def nu_diagnostic(spectrum: Spectrum, m: int, n: int, lam: float, eta: float = 0.25) -> float:
    """Conditioning diagnostic 1 + xi_(eta n) * r_eff * sqrt(log r_eff) / lambda_tail.

    ``lambda_tail = lam + sum_{j>m} xi_j`` must be positive.  The eigenvalue
    factor is xi at expanded index floor(eta*n) when that index is <= m and 0
    otherwise; an index below 1 is clamped to the top eigenvalue.  eta is a
    reporting knob only (default 0.25), never used in predictions.
    """
    if not 0 < eta < 0.5:
        raise SpectrumError("eta must lie in (0, 1/2)")
    if not 1 <= m <= spectrum.total_rank:
        raise SpectrumError(f"m = {m} outside [1, total rank = {spectrum.total_rank}]")
    lam_tail = lam + spectrum.tail_trace(m)
    if lam_tail <= 0:
        raise SpectrumError("lambda + tail trace must be positive")
    idx = int(math.floor(eta * n))
    if idx > m:
        return 1.0
    xi = spectrum.eigenvalue_at(max(idx, 1))
    r_eff = effective_rank(spectrum, m, n)
    return 1.0 + xi * r_eff * math.sqrt(math.log(r_eff)) / lam_tail


def model_to_json(spectrum: Spectrum, alignment: Alignment, noise: NoiseModel) -> str:
    """Serialize the spectral data to the canonical JSON document."""
    doc = {
        "blocks": [[float(v), int(m)] for v, m in zip(spectrum.values, spectrum.multiplicities)],
        "alignment": [float(t) for t in alignment.energies],
        "residual_energy": float(alignment.residual_energy),
        "noise_variance": float(noise.variance),
    }
    return json.dumps(doc, sort_keys=True)


def model_from_json(text: str) -> tuple[Spectrum, Alignment, NoiseModel]:
    doc = json.loads(text)
    spectrum = Spectrum.from_blocks(doc["blocks"])
    alignment = Alignment(np.asarray(doc["alignment"], dtype=float), doc.get("residual_energy", 0.0))
    noise = NoiseModel(doc.get("noise_variance", 0.0))
    if not alignment.matches(spectrum):
        raise SpectrumError("alignment length must equal the number of spectrum blocks")
    return spectrum, alignment, noise
