"""Dense matrix decompositions and norms used throughout the package.

All public functions accept anything convertible to a 2-D float64 array and
validate finiteness up front.  Matrices are row-major with shape
(n_rows, n_cols); singular vectors are returned as orthonormal columns.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse.linalg

from .errors import ValidationError

# Below this min-dimension the truncated path just runs the dense SVD: at desk
# scale the exact answer is cheaper than a randomized sketch is trustworthy.
# (A sketch cannot resolve singular values past the point where the spectrum
# stops decaying, so small problems should never take it.)
DENSE_FALLBACK_SIZE = 256

# Randomized range finder parameters (oversampling columns / power iterations).
OVERSAMPLE = 10
POWER_ITERATIONS = 2

# Dense operator-norm computation is exact up to this min-dimension; above it
# a Lanczos top-1 solve is used instead of a full decomposition.
_OPERATOR_NORM_DENSE_LIMIT = 512

_DEFAULT_SKETCH_SEED = 1729


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    """Validate and return `a` as a 2-D float64 array with finite entries."""
    out = np.asarray(a, dtype=np.float64)
    if out.ndim != 2:
        raise ValidationError(f"{name} must be 2-D, got ndim={out.ndim}")
    if out.shape[0] < 1 or out.shape[1] < 1:
        raise ValidationError(f"{name} must have at least one row and column, got shape {out.shape}")
    if not np.all(np.isfinite(out)):
        raise ValidationError(f"{name} contains non-finite entries")
    return out


@dataclass(frozen=True)
class SvdResult:
    """A (possibly truncated) singular value decomposition.

    u : (n, k) orthonormal columns
    s : (k,) nonincreasing, nonnegative
    v : (m, k) orthonormal columns, so that  a ~= u @ diag(s) @ v.T
    """

    u: np.ndarray
    s: np.ndarray
    v: np.ndarray

    @property
    def rank_limit(self) -> int:
        return self.s.shape[0]

    def truncate(self, k: int) -> "SvdResult":
        if not 0 <= k <= self.rank_limit:
            raise ValidationError(f"cannot truncate SVD with {self.rank_limit} components to k={k}")
        return SvdResult(self.u[:, :k], self.s[:k], self.v[:, :k])

    def reconstruct(self) -> np.ndarray:
        return (self.u * self.s) @ self.v.T


def svd_dense(a) -> SvdResult:
    """Full SVD with min(n, m) components, values sorted nonincreasing."""
    a = as_matrix(a)
    u, s, vt = np.linalg.svd(a, full_matrices=False)
    return SvdResult(u, s, vt.T)


def _orthonormalize(block: np.ndarray) -> np.ndarray:
    q, _ = np.linalg.qr(block)
    return q


def svd_truncated(a, k: int, rng: np.random.Generator | None = None) -> SvdResult:
    """Top-k SVD via a randomized range finder.

    Small inputs (min dimension <= DENSE_FALLBACK_SIZE) take the dense path
    and are exact.  Larger inputs sketch k + OVERSAMPLE columns and run
    POWER_ITERATIONS orthonormalized power steps, which is accurate whenever
    the spectrum decays past component k.  The sketch is seeded, so repeated
    calls are reproducible; pass `rng` to control the stream explicitly.
    """
    a = as_matrix(a)
    n, m = a.shape
    if not 1 <= k <= min(n, m):
        raise ValidationError(f"k must be in [1, {min(n, m)}], got {k}")
    if min(n, m) <= DENSE_FALLBACK_SIZE:
        return svd_dense(a).truncate(k)
    if rng is None:
        rng = np.random.default_rng(_DEFAULT_SKETCH_SEED)
    ell = min(k + OVERSAMPLE, min(n, m))
    sketch = rng.standard_normal((m, ell))
    q = _orthonormalize(a @ sketch)
    for _ in range(POWER_ITERATIONS):
        q = _orthonormalize(a.T @ q)
        q = _orthonormalize(a @ q)
    b = q.T @ a
    ub, s, vt = np.linalg.svd(b, full_matrices=False)
    return SvdResult(q @ ub[:, :k], s[:k], vt[:k].T)


def best_rank_s(a, s: int) -> np.ndarray:
    """Best rank-s approximation in any unitarily invariant norm; s=0 gives zeros."""
    a = as_matrix(a)
    if not 0 <= s <= min(a.shape):
        raise ValidationError(f"s must be in [0, {min(a.shape)}], got {s}")
    if s == 0:
        return np.zeros_like(a)
    return svd_dense(a).truncate(s).reconstruct()


def norm(a, kind: str) -> float:
    """Matrix norm of the requested kind.

    kind is one of:
      "operator"  - largest singular value
      "frobenius" - entrywise L2
      "two_infty" - largest euclidean row norm
      "entry_max" - largest absolute entry
    """
    a = as_matrix(a)
    if kind == "operator":
        if min(a.shape) <= _OPERATOR_NORM_DENSE_LIMIT:
            return float(np.linalg.svd(a, compute_uv=False)[0])
        return _operator_norm_lanczos(a)
    if kind == "frobenius":
        return float(np.sqrt(np.sum(a * a)))
    if kind == "two_infty":
        return float(np.sqrt(np.max(np.sum(a * a, axis=1))))
    if kind == "entry_max":
        return float(np.max(np.abs(a)))
    raise ValidationError(f"unknown norm kind {kind!r}")


def _operator_norm_lanczos(a: np.ndarray) -> float:
    # deterministic start vector keeps repeated calls bit-stable; the solver
    # wants it on the shorter side of the matrix
    k = min(a.shape)
    v0 = np.ones(k) / np.sqrt(k)
    s = scipy.sparse.linalg.svds(a, k=1, v0=v0, return_singular_vectors=False)
    return float(s[0])


def singular_gaps(s) -> np.ndarray:
    """Consecutive spectral gaps with the trailing value measured against zero.

    gaps[i] = s[i] - s[i+1] for i < len(s) - 1, and gaps[-1] = s[-1]: the
    spectrum is treated as padded with an implicit zero.  Input must be
    nonincreasing and nonnegative.
    """
    s = np.asarray(s, dtype=np.float64)
    if s.ndim != 1 or s.shape[0] < 1:
        raise ValidationError("singular value input must be a nonempty 1-D array")
    if not np.all(np.isfinite(s)):
        raise ValidationError("singular values must be finite")
    if np.any(s < 0):
        raise ValidationError("singular values must be nonnegative")
    if np.any(s[1:] > s[:-1]):
        raise ValidationError("singular values must be nonincreasing")
    return s - np.append(s[1:], 0.0)


def symmetric_dilation(a) -> np.ndarray:
    """The (n+m) x (n+m) symmetric embedding [[0, A], [A.T, 0]]."""
    a = as_matrix(a)
    n, m = a.shape
    out = np.zeros((n + m, n + m))
    out[:n, n:] = a
    out[n:, :n] = a.T
    return out


def principal_angles(u1, u2) -> np.ndarray:
    """Principal angles (radians, nondecreasing) between two column spaces."""
    u1 = as_matrix(u1, "subspace basis")
    u2 = as_matrix(u2, "subspace basis")
    if u1.shape[0] != u2.shape[0]:
        raise ValidationError("subspace bases must have matching row counts")
    overlap = np.linalg.svd(u1.T @ u2, compute_uv=False)
    return np.arccos(np.clip(overlap, -1.0, 1.0))[::-1]
