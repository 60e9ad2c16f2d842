"""Inner-product kernels on the sphere S^{d-1}(sqrt(d)).

The coordinate distribution t = <u, e1>/sqrt(d) of a uniform point has
density proportional to (1-t^2)^{(d-3)/2} on [-1, 1].  The orthonormal
polynomial family Q_k for that weight diagonalizes every inner-product
kernel h(<u,u'>/d): eigenvalue xi_k with multiplicity B_{d,k} (the dimension
of the degree-k harmonic subspace), where

    h(t) = sum_k xi_k * sqrt(B_{d,k}) * Q_k(t),
    Q_k(<u,u'>/d) = B_{d,k}^{-1/2} sum_s Y_ks(u) Y_ks(u'),

and the second identity (evaluated at u = u') gives Q_k(1) = sqrt(B_{d,k}).
These identities make test risk computable in closed form without ever
constructing a harmonic basis.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi

from .spectrum import Alignment, ModelSpec, NoiseModel, Spectrum, SpectrumError

__all__ = [
    "GegenbauerBasis",
    "SphereKernel",
    "SphereTarget",
    "dim_spherical",
    "gegenbauer_eval",
    "kernel_from_gaps",
    "kernel_eigencoeffs",
    "sample_sphere",
    "build_cyclic_target",
    "sphere_spectrum",
    "exact_sphere_risk",
    "sphere_moment",
]

DEFAULT_KMAX = 12
COEFF_CLAMP = 1e-10
QUAD_AGREEMENT = 1e-6


class SphereError(ValueError):
    """Invalid sphere-model construction or query."""


def dim_spherical(d: int, k: int) -> int:
    """Dimension of the degree-k harmonic subspace, exact integer arithmetic.

    B_{d,0} = 1, B_{d,1} = d, and for k >= 2
    B_{d,k} = ((d + 2k - 2) / k) * C(d + k - 3, k - 1).
    """
    if d < 3:
        raise SphereError("ambient dimension must be >= 3")
    if k < 0:
        raise SphereError("degree must be nonnegative")
    if k == 0:
        return 1
    if k == 1:
        return d
    num = (d + 2 * k - 2) * math.comb(d + k - 3, k - 1)
    if num % k:
        raise SphereError(f"non-integer harmonic dimension at d={d}, k={k}")
    return num // k


def sphere_moment(d: int, k: int) -> float:
    """E[u_1^2 ... u_k^2] on the radius-sqrt(d) sphere: d^k / prod_{i<k}(d+2i)."""
    if not 1 <= k <= d:
        raise SphereError("moment order must lie in [1, d]")
    value = 1.0
    for i in range(k):
        value *= d / (d + 2 * i)
    return value


def _quadrature(d: int, nodes: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Jacobi nodes/weights for the normalized coordinate density."""
    a = (d - 3) / 2.0
    x, w = roots_jacobi(nodes, a, a)
    return x, w / w.sum()


@dataclass(frozen=True)
class GegenbauerBasis:
    """Orthonormal polynomials for the sphere-coordinate weight, degrees <= kmax.

    Built from the classical ultraspherical three-term recurrence with
    parameter alpha = (d-2)/2, then normalized by quadrature so that
    int Q_j Q_k d(tau) = delta_jk.
    """

    d: int
    kmax: int = DEFAULT_KMAX
    norms: np.ndarray = field(init=False, repr=False)
    quad_nodes: np.ndarray = field(init=False, repr=False)
    quad_weights: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.d < 3:
            raise SphereError("ambient dimension must be >= 3")
        if self.kmax < 0:
            raise SphereError("kmax must be nonnegative")
        x, w = _quadrature(self.d, 4 * max(self.kmax, 1) + 16)
        raw = self._raw_values(x, self.kmax)
        norms = np.sqrt((raw * raw) @ w)
        object.__setattr__(self, "norms", norms)
        object.__setattr__(self, "quad_nodes", x)
        object.__setattr__(self, "quad_weights", w)

    def _raw_values(self, t: np.ndarray, kmax: int) -> np.ndarray:
        """Unnormalized ultraspherical values, shape (kmax+1, len(t))."""
        alpha = (self.d - 2) / 2.0
        out = np.empty((kmax + 1, t.size))
        out[0] = 1.0
        if kmax >= 1:
            out[1] = 2.0 * alpha * t
        for k in range(2, kmax + 1):
            out[k] = (2.0 * (k + alpha - 1) * t * out[k - 1] - (k + 2 * alpha - 2) * out[k - 2]) / k
        return out

    def _clamp(self, t: np.ndarray) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        if np.any(np.abs(t) > 1 + 1e-12):
            raise SphereError("argument outside [-1, 1]")
        return np.clip(t, -1.0, 1.0)

    def eval(self, k: int, t) -> np.ndarray:
        """Q_k(t) for |t| <= 1 (inputs within 1e-12 of the interval are clamped)."""
        if not 0 <= k <= self.kmax:
            raise SphereError(f"degree {k} outside [0, kmax = {self.kmax}]")
        t = self._clamp(np.atleast_1d(t))
        return self._raw_values(t, k)[k] / self.norms[k]

    def series(self, coeffs: np.ndarray, t) -> np.ndarray:
        """sum_k coeffs[k] * Q_k(t), carrying only two recurrence terms."""
        coeffs = np.asarray(coeffs, dtype=float)
        if coeffs.size > self.kmax + 1:
            raise SphereError("series has more coefficients than basis degrees")
        t = self._clamp(np.asarray(t, dtype=float))
        alpha = (self.d - 2) / 2.0
        prev = np.ones_like(t)
        acc = coeffs[0] / self.norms[0] * prev
        if coeffs.size == 1:
            return acc
        cur = 2.0 * alpha * t
        acc = acc + coeffs[1] / self.norms[1] * cur
        for k in range(2, coeffs.size):
            prev, cur = cur, (2.0 * (k + alpha - 1) * t * cur - (k + 2 * alpha - 2) * prev) / k
            acc = acc + coeffs[k] / self.norms[k] * cur
        return acc


@lru_cache(maxsize=32)
def _cached_basis(d: int, kmax: int) -> GegenbauerBasis:
    return GegenbauerBasis(d=d, kmax=kmax)


def gegenbauer_eval(basis: GegenbauerBasis, k: int, t) -> np.ndarray:
    return basis.eval(k, t)


@dataclass(frozen=True)
class SphereKernel:
    """Band-limited inner-product kernel h(t) = sum_k coeffs[k] sqrt(B_{d,k}) Q_k(t)."""

    d: int
    coeffs: np.ndarray
    basis: GegenbauerBasis = field(init=False, repr=False)

    def __post_init__(self):
        coeffs = np.asarray(self.coeffs, dtype=float)
        if coeffs.ndim != 1 or coeffs.size == 0:
            raise SphereError("kernel coefficients must be a nonempty 1-d sequence")
        if np.any(coeffs < 0) or not np.all(np.isfinite(coeffs)):
            raise SphereError("kernel eigenvalues must be finite and nonnegative")
        object.__setattr__(self, "coeffs", coeffs)
        object.__setattr__(self, "basis", _cached_basis(self.d, coeffs.size - 1))

    @property
    def kmax(self) -> int:
        return self.coeffs.size - 1

    @property
    def degrees(self) -> np.ndarray:
        return np.arange(self.coeffs.size)

    def multiplicities(self) -> np.ndarray:
        return np.array([dim_spherical(self.d, k) for k in self.degrees], dtype=np.int64)

    def h_at_one(self) -> float:
        """h(1) = sum_k coeffs[k] * B_{d,k}, the kernel trace."""
        return float(np.dot(self.coeffs, self.multiplicities()))

    def _series_scale(self, level_values: np.ndarray) -> np.ndarray:
        return level_values * np.sqrt(self.multiplicities().astype(float))

    def h_values(self, t) -> np.ndarray:
        return self.basis.series(self._series_scale(self.coeffs), t)

    def h2_values(self, t) -> np.ndarray:
        """Second-moment kernel sum_k coeffs[k]^2 sqrt(B_{d,k}) Q_k(t)."""
        return self.basis.series(self._series_scale(self.coeffs**2), t)

    def cross_gram(self, points_a: np.ndarray, points_b: np.ndarray, block: int = 1024) -> np.ndarray:
        """h(<a_i, b_j>/d) row-block streamed to bound peak memory."""
        a = np.asarray(points_a, dtype=float)
        b = np.asarray(points_b, dtype=float)
        if a.shape[1] != self.d or b.shape[1] != self.d:
            raise SphereError("point dimension must match the kernel's d")
        out = np.empty((a.shape[0], b.shape[0]))
        for start in range(0, a.shape[0], block):
            stop = min(start + block, a.shape[0])
            t = (a[start:stop] @ b.T) / self.d
            # inner products of same-radius sphere points live in [-d, d]
            out[start:stop] = self.h_values(np.clip(t, -1.0, 1.0))
        return out

    def gram(self, points: np.ndarray, block: int = 1024) -> np.ndarray:
        return self.cross_gram(points, points, block=block)

    def to_json(self) -> str:
        return json.dumps({"d": self.d, "coeffs": [float(c) for c in self.coeffs]}, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "SphereKernel":
        doc = json.loads(text)
        return cls(d=int(doc["d"]), coeffs=np.asarray(doc["coeffs"], dtype=float))


def kernel_from_gaps(d: int, levels: int, gap: float) -> SphereKernel:
    """Kernel with geometrically decaying level eigenvalues gap^-(k-1), k = 1..levels."""
    if levels < 1:
        raise SphereError("levels must be >= 1")
    if gap <= 0:
        raise SphereError("gap must be positive")
    coeffs = np.zeros(levels + 1)
    coeffs[1:] = float(gap) ** -(np.arange(1, levels + 1, dtype=float) - 1.0)
    return SphereKernel(d=d, coeffs=coeffs)


def kernel_eigencoeffs(h, d: int, kmax: int) -> np.ndarray:
    """Level eigenvalues of a scalar kernel function by projection.

    xi_k = B_{d,k}^{-1/2} * int h(t) Q_k(t) d(tau_{d,1}); the quadrature node
    count doubles until two successive estimates agree to 1e-6, else raises.
    Values within 1e-10 * h(1) of zero are clamped to 0; larger negatives
    mean h is not positive semidefinite at this d.
    """
    basis = _cached_basis(d, kmax)
    scale = max(abs(float(h(1.0))), 1.0)

    def estimate(nodes: int) -> np.ndarray:
        x, w = _quadrature(d, nodes)
        hv = np.asarray(h(x), dtype=float) * w
        q = basis._raw_values(x, kmax) / basis.norms[:, None]
        return q @ hv

    nodes = 4 * max(kmax, 1) + 16
    prev = estimate(nodes)
    for _ in range(8):
        nodes *= 2
        cur = estimate(nodes)
        if np.max(np.abs(cur - prev)) <= QUAD_AGREEMENT * scale:
            break
        prev = cur
    else:
        raise SphereError("quadrature failed to converge for the kernel function")
    mults = np.array([dim_spherical(d, k) for k in range(kmax + 1)], dtype=float)
    coeffs = cur / np.sqrt(mults)
    floor = COEFF_CLAMP * scale
    if np.any(coeffs < -floor):
        raise SphereError("kernel function is not positive semidefinite at this dimension")
    return np.where(coeffs < 0, 0.0, coeffs)


def sample_sphere(d: int, n: int, seed) -> np.ndarray:
    """n i.i.d. points uniform on the radius-sqrt(d) sphere; seeded, bit-stable."""
    if d < 1 or n < 1:
        raise SphereError("d and n must be positive")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    g = rng.standard_normal((n, d))
    return g * (math.sqrt(d) / np.linalg.norm(g, axis=1))[:, None]


@dataclass(frozen=True)
class SphereTarget:
    """Sum of cyclic multilinear monomials, one pure harmonic level per degree.

    Level k contributes C_{d,k} * sum_{j in [d]} prod_{s=j..j+k-1} u_s with
    cyclic indexing.  Distinct windows are uncorrelated (each product leaves
    odd powers), so level k's energy is exactly C_{d,k}^2 * d * M_{d,k} with
    M_{d,k} the diagonal moment E[u_1^2...u_k^2].
    """

    d: int
    energies: dict[int, float]
    coeffs: dict[int, float] = field(init=False)

    def __post_init__(self):
        if self.d < 3:
            raise SphereError("ambient dimension must be >= 3")
        energies = {int(k): float(e) for k, e in self.energies.items()}
        coeffs = {}
        for k, e in energies.items():
            if e < 0 or not math.isfinite(e):
                raise SphereError("level energies must be finite and nonnegative")
            if not 1 <= k < self.d:
                raise SphereError(
                    f"level {k} outside [1, d-1]: cyclic windows degenerate at k >= d"
                )
            coeffs[k] = math.sqrt(e / (self.d * sphere_moment(self.d, k)))
        object.__setattr__(self, "energies", energies)
        object.__setattr__(self, "coeffs", coeffs)

    @property
    def total_energy(self) -> float:
        return float(sum(self.energies.values()))

    def level_values(self, k: int, points: np.ndarray) -> np.ndarray:
        """The degree-k component C_{d,k} * sum_j prod of cyclic windows."""
        u = np.asarray(points, dtype=float)
        if u.shape[1] != self.d:
            raise SphereError("point dimension must match the target's d")
        if k not in self.coeffs:
            return np.zeros(u.shape[0])
        w = u.copy()
        for s in range(1, k):
            w *= np.roll(u, -s, axis=1)
        return self.coeffs[k] * w.sum(axis=1)

    def __call__(self, points: np.ndarray) -> np.ndarray:
        u = np.asarray(points, dtype=float)
        out = np.zeros(u.shape[0])
        for k in self.coeffs:
            out += self.level_values(k, u)
        return out

    def to_json(self) -> str:
        return json.dumps(
            {"d": self.d, "energies": {str(k): float(e) for k, e in sorted(self.energies.items())}},
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, text: str) -> "SphereTarget":
        doc = json.loads(text)
        return cls(d=int(doc["d"]), energies={int(k): float(e) for k, e in doc["energies"].items()})


def build_cyclic_target(d: int, energies: dict[int, float]) -> SphereTarget:
    """Target with prescribed per-level energies e_k (coefficients solved exactly)."""
    return SphereTarget(d=d, energies=dict(energies))


def kernel_tail_defect(h, kernel: SphereKernel) -> float:
    """Trace beyond the kernel's band limit: h(1) minus the retained trace.

    Zero for genuinely band-limited kernels; for a generic h truncated at
    kmax this is the spectral mass the truncation drops.
    """
    return float(np.asarray(h(1.0)).reshape(-1)[0]) - kernel.h_at_one()


def sphere_spectrum(
    kernel: SphereKernel,
    target: SphereTarget,
    noise: NoiseModel,
    n: int,
    lam: float,
    tail_trace: float = 0.0,
    pseudo_multiplicity: int | None = None,
) -> ModelSpec:
    """Pack the kernel levels and target energies into a prediction instance.

    Blocks are (xi_k, B_{d,k}) sorted by eigenvalue; target energy on levels
    the kernel gives zero weight (including k > kmax) is unlearnable and goes
    to the alignment residual.  The kernel is treated as exactly band-limited
    by default; a truncated generic kernel's dropped trace (see
    kernel_tail_defect) may optionally be appended as one pseudo-block of
    ``pseudo_multiplicity`` eigenvalues -- a documented approximation.
    """
    if kernel.d != target.d:
        raise SphereError("kernel and target dimensions disagree")
    mults = kernel.multiplicities()
    live = kernel.coeffs > 0
    if not np.any(live):
        raise SphereError("kernel has no positive eigenvalues")
    degrees = kernel.degrees[live]
    values = kernel.coeffs[live]
    block_mults = mults[live]
    energies = np.array([target.energies.get(int(k), 0.0) for k in degrees])
    residual = sum(
        e for k, e in target.energies.items() if k > kernel.kmax or kernel.coeffs[k] <= 0
    )
    if tail_trace < 0:
        raise SphereError("tail trace must be nonnegative")
    if tail_trace > 0:
        if pseudo_multiplicity is None or pseudo_multiplicity < 1:
            raise SphereError("appending a spectral tail requires a positive pseudo multiplicity")
        values = np.append(values, tail_trace / pseudo_multiplicity)
        block_mults = np.append(block_mults, pseudo_multiplicity)
        energies = np.append(energies, 0.0)
    order = np.argsort(-values, kind="stable")
    spectrum = Spectrum(values[order], block_mults[order])
    alignment = Alignment(energies[order], residual_energy=residual)
    return ModelSpec(n=n, lam=lam, spectrum=spectrum, alignment=alignment, noise=noise)


def exact_sphere_risk(
    fit,
    kernel: SphereKernel,
    target: SphereTarget,
    noise_variance: float,
    train_points: np.ndarray,
) -> float:
    """Population test risk of a fitted dual vector, in closed form.

    E_u[(f_*(u) - sum_i alpha_i h(<u_i,u>/d))^2] + sigma^2
      = ||f_*||^2 - 2 alpha^T v + alpha^T H2 alpha + sigma^2,
    where v_i = sum_k xi_k (P_k f_*)(u_i) and H2 uses the squared-eigenvalue
    kernel.  Both pieces follow from averaging the harmonic expansion of h
    against itself and against the target.
    """
    u = np.asarray(train_points, dtype=float)
    if kernel.d != target.d or u.shape[1] != kernel.d:
        raise SphereError("kernel/target/points dimensions disagree")
    alpha = np.asarray(fit.alpha, dtype=float).ravel()
    if alpha.size != u.shape[0]:
        raise SphereError("fit size must match the number of train points")
    v = np.zeros(u.shape[0])
    for k, _ in target.energies.items():
        if k <= kernel.kmax and kernel.coeffs[k] > 0:
            v += kernel.coeffs[k] * target.level_values(k, u)
    block = 1024
    quad = 0.0
    for start in range(0, u.shape[0], block):
        stop = min(start + block, u.shape[0])
        t = np.clip((u[start:stop] @ u.T) / kernel.d, -1.0, 1.0)
        quad += float(alpha[start:stop] @ (kernel.h2_values(t) @ alpha))
    return target.total_energy - 2.0 * float(alpha @ v) + quad + float(noise_variance)
