"""Canonical- and moment-form Gaussian representations and SPD linear algebra.

Every density in this package is either a ``MomentGaussian`` (mean and
covariance) or a ``CanonicalGaussian`` (information matrix and information
vector of the factor ``exp(-0.5 x' L x + x' h)``). All matrix inversions go
through Cholesky-based solves; explicit inverses are only formed when the
inverse itself is the requested output (solve against the identity).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

# Tolerances used across the package.
TAU_SYM = 1e-9    # max absolute asymmetry tolerated on symmetric inputs
TAU_PSD = 1e-10   # eigenvalues in [-TAU_PSD, 0) are clamped to zero
TAU_SOLVE = 1e-8  # relative residual tolerance of spd_solve
TAU_RT = 1e-10    # relative round-trip tolerance moment <-> canonical


class NotPositiveDefinite(ValueError):
    """Matrix is not symmetric positive (semi)definite where required."""


class DimensionMismatch(ValueError):
    """Operands do not share the required dimensions."""


def symmetrize(m: np.ndarray) -> np.ndarray:
    """Return the symmetric part 0.5 * (m + m')."""
    return 0.5 * (m + m.T)


def max_asymmetry(m: np.ndarray) -> float:
    """Largest absolute entry of m - m'."""
    if m.size == 0:
        return 0.0
    return float(np.abs(m - m.T).max())


def _as_square(m: np.ndarray, name: str) -> np.ndarray:
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise DimensionMismatch(f"{name} must be square, got shape {m.shape}")
    return m


def _require_symmetric(m: np.ndarray, name: str) -> np.ndarray:
    if max_asymmetry(m) > TAU_SYM:
        raise NotPositiveDefinite(
            f"{name} is not symmetric: max |m - m'| = {max_asymmetry(m):.3e} > {TAU_SYM:.0e}"
        )
    return symmetrize(m)


def _chol_solve(m: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Cholesky solve of a symmetric PD system without input validation.

    Closed-form factorizations for d <= 2 keep the per-call cost low; the
    message recursions solve thousands of such tiny systems per run.
    """
    d = m.shape[0]
    if d == 1:
        a = m[0, 0]
        if not a > 0.0:
            raise NotPositiveDefinite(f"1x1 matrix not PD (value {a!r})")
        return rhs / a
    if d == 2:
        a, b, c = m[0, 0], m[1, 0], m[1, 1]
        if not a > 0.0:
            raise NotPositiveDefinite(f"2x2 matrix not PD (leading entry {a!r})")
        l11 = math.sqrt(a)
        l21 = b / l11
        s = c - l21 * l21
        if not s > 0.0:
            raise NotPositiveDefinite(f"2x2 matrix not PD (Schur complement {s!r})")
        l22 = math.sqrt(s)
        y0 = rhs[0] / l11
        y1 = (rhs[1] - l21 * y0) / l22
        x1 = y1 / l22
        x0 = (y0 - l21 * x1) / l11
        out = np.empty(rhs.shape)
        out[0] = x0
        out[1] = x1
        return out
    try:
        factor = cho_factor(m, lower=True, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite(f"Cholesky factorization failed: {exc}") from exc
    return cho_solve(factor, rhs, check_finite=False)


def spd_cholesky(m: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor of a symmetric PD matrix."""
    m = _as_square(m, "matrix")
    try:
        return np.linalg.cholesky(m)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite(f"Cholesky factorization failed: {exc}") from exc


def spd_solve(m: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Solve ``m x = rhs`` for symmetric positive definite ``m``.

    ``rhs`` may be a vector or a matrix. Raises ``NotPositiveDefinite``
    when ``m`` is asymmetric beyond ``TAU_SYM`` or fails to factor.
    """
    m = _as_square(m, "matrix")
    m = _require_symmetric(m, "matrix")
    rhs = np.asarray(rhs, dtype=float)
    if rhs.shape[0] != m.shape[0]:
        raise DimensionMismatch(
            f"rhs leading dimension {rhs.shape[0]} != matrix dimension {m.shape[0]}"
        )
    return _chol_solve(m, rhs)


def spd_inverse(m: np.ndarray) -> np.ndarray:
    """Inverse of a symmetric PD matrix via Cholesky solve against identity."""
    m = _as_square(m, "matrix")
    return symmetrize(_chol_solve(m, np.eye(m.shape[0])))


def _eig_bounds(m: np.ndarray) -> tuple[float, float]:
    """(min, max) eigenvalue of a small symmetric matrix."""
    d = m.shape[0]
    if d == 1:
        v = float(m[0, 0])
        return v, v
    if d == 2:
        a, b, c = m[0, 0], m[0, 1], m[1, 1]
        half_tr = 0.5 * (a + c)
        rad = math.sqrt(max(0.25 * (a - c) ** 2 + b * b, 0.0))
        return half_tr - rad, half_tr + rad
    w = np.linalg.eigvalsh(m)
    return float(w[0]), float(w[-1])


def psd_clamp(m: np.ndarray, tol: float = TAU_PSD) -> np.ndarray:
    """Repair round-off negativity of a nominally PSD symmetric matrix.

    Eigenvalues in ``[-tol, 0)`` are clamped to zero through a symmetric
    eigenvalue re-projection; anything more negative raises, since that
    signals real divergence rather than floating-point drift.
    """
    lo, _ = _eig_bounds(m)
    if lo >= 0.0:
        return m
    if lo < -tol:
        raise NotPositiveDefinite(
            f"matrix is not positive semidefinite: min eigenvalue {lo:.3e} < -{tol:.0e}"
        )
    w, v = np.linalg.eigh(m)
    w = np.clip(w, 0.0, None)
    return symmetrize((v * w) @ v.T)


def is_psd(m: np.ndarray, tol: float = TAU_PSD) -> bool:
    lo, _ = _eig_bounds(symmetrize(m))
    return lo >= -tol


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class MomentGaussian:
    """Gaussian density in moment form: mean vector and SPD covariance."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float)
        cov = _as_square(self.cov, "cov")
        if mean.ndim != 1 or cov.shape[0] != mean.shape[0]:
            raise DimensionMismatch(
                f"mean shape {mean.shape} incompatible with cov shape {cov.shape}"
            )
        cov = _require_symmetric(cov, "cov")
        spd_cholesky(cov)  # strictly positive definite
        object.__setattr__(self, "mean", _freeze(mean))
        object.__setattr__(self, "cov", _freeze(cov))

    @property
    def dim(self) -> int:
        return self.mean.shape[0]


@dataclass(frozen=True)
class CanonicalGaussian:
    """Gaussian-form factor ``exp(-0.5 x' L x + x' h)`` in information form.

    ``info_matrix`` must be symmetric but is not required to be definite:
    a zero matrix encodes the flat (improper) factor, and correction
    messages arising from density ratios can carry small negative
    eigenvalues. Conversion to moment form requires a positive definite
    information matrix.
    """

    info_matrix: np.ndarray
    info_vector: np.ndarray

    def __post_init__(self):
        lam = _as_square(self.info_matrix, "info_matrix")
        eta = np.asarray(self.info_vector, dtype=float)
        if eta.ndim != 1 or lam.shape[0] != eta.shape[0]:
            raise DimensionMismatch(
                f"info_vector shape {eta.shape} incompatible with info_matrix shape {lam.shape}"
            )
        lam = _require_symmetric(lam, "info_matrix")
        object.__setattr__(self, "info_matrix", _freeze(lam))
        object.__setattr__(self, "info_vector", _freeze(eta))

    @property
    def dim(self) -> int:
        return self.info_vector.shape[0]

    @classmethod
    def flat(cls, dim: int) -> "CanonicalGaussian":
        """The all-ones factor (zero information)."""
        return cls(np.zeros((dim, dim)), np.zeros(dim))

    def is_proper(self, tol: float = TAU_PSD) -> bool:
        """True when the information matrix is PSD within tolerance."""
        return is_psd(self.info_matrix, tol)


def to_moment(g: CanonicalGaussian) -> MomentGaussian:
    """Convert a proper canonical Gaussian to moment form.

    Raises ``NotPositiveDefinite`` when the information matrix is not
    strictly PD (e.g. a flat or deficient message).
    """
    cov = spd_inverse(g.info_matrix)
    mean = _chol_solve(g.info_matrix, g.info_vector)
    return MomentGaussian(mean, cov)


def to_canonical(g: MomentGaussian) -> CanonicalGaussian:
    """Convert a moment-form Gaussian to information form."""
    lam = spd_inverse(g.cov)
    eta = _chol_solve(g.cov, g.mean)
    return CanonicalGaussian(lam, eta)


def canonical_product(*factors: CanonicalGaussian) -> CanonicalGaussian:
    """Unnormalized product of Gaussian-form factors: information adds."""
    if not factors:
        raise ValueError("canonical_product requires at least one factor")
    dim = factors[0].dim
    for g in factors[1:]:
        if g.dim != dim:
            raise DimensionMismatch(
                f"cannot multiply factors of dimension {dim} and {g.dim}"
            )
    lam = np.zeros((dim, dim))
    eta = np.zeros(dim)
    for g in factors:
        lam = lam + g.info_matrix
        eta = eta + g.info_vector
    return CanonicalGaussian(lam, eta)


@dataclass(frozen=True)
class MarginalTrajectory:
    """Per-timestep moment-form state densities, stacked as arrays."""

    means: np.ndarray  # (T, d)
    covs: np.ndarray   # (T, d, d)

    def __post_init__(self):
        means = np.asarray(self.means, dtype=float)
        covs = np.asarray(self.covs, dtype=float)
        if means.ndim != 2 or covs.ndim != 3:
            raise DimensionMismatch(
                f"means must be (T, d) and covs (T, d, d); got {means.shape}, {covs.shape}"
            )
        if covs.shape[0] != means.shape[0] or covs.shape[1:] != (means.shape[1],) * 2:
            raise DimensionMismatch(
                f"means shape {means.shape} incompatible with covs shape {covs.shape}"
            )
        object.__setattr__(self, "means", _freeze(means))
        object.__setattr__(self, "covs", _freeze(covs))

    def __len__(self) -> int:
        return self.means.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def gaussian(self, t: int) -> MomentGaussian:
        return MomentGaussian(self.means[t], self.covs[t])
