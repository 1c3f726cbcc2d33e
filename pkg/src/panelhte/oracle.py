"""Brute-force SVD reference, independent of the LAPACK-backed main path.

The oracle embeds the input in its symmetric dilation [[0, A], [A.T, 0]] and
diagonalizes that with cyclic Jacobi rotations.  Eigenvalues of the dilation
come in +/- sigma pairs whose eigenvectors are (u; v)/sqrt(2) and
(u; -v)/sqrt(2), so the positive side yields the SVD.  Nothing here calls
numpy's SVD; agreement between this path and linalg.svd_dense is evidence
that both are right.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np

from .errors import ValidationError
from .linalg import SvdResult, as_matrix, principal_angles

# Dilation sizes beyond this make cyclic Jacobi unreasonably slow.
MAX_DILATION_SIZE = 512

# Sweep until the off-diagonal Frobenius mass falls below this fraction of the
# input norm.  (An absolute cutoff is unattainable for large-norm inputs:
# rotations cannot push below the rounding floor, which scales with the norm.)
OFF_DIAGONAL_TOLERANCE = 1e-12

_MAX_SWEEPS = 64


@numba.njit(cache=True)
def _jacobi_cyclic(h, tol):  # pragma: no cover - exercised via oracle_svd
    n = h.shape[0]
    v = np.eye(n)
    sweeps = 0
    while sweeps < _MAX_SWEEPS:
        off = 0.0
        for i in range(n - 1):
            for j in range(i + 1, n):
                off += 2.0 * h[i, j] * h[i, j]
        if math.sqrt(off) <= tol:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = h[p, q]
                if apq == 0.0:
                    continue
                theta = 0.5 * (h[q, q] - h[p, p]) / apq
                t = 1.0 / (abs(theta) + math.sqrt(1.0 + theta * theta))
                if theta < 0.0:
                    t = -t
                c = 1.0 / math.sqrt(1.0 + t * t)
                s = t * c
                for k in range(n):
                    hkp = h[k, p]
                    hkq = h[k, q]
                    h[k, p] = c * hkp - s * hkq
                    h[k, q] = s * hkp + c * hkq
                for k in range(n):
                    hpk = h[p, k]
                    hqk = h[q, k]
                    h[p, k] = c * hpk - s * hqk
                    h[q, k] = s * hpk + c * hqk
                for k in range(n):
                    vkp = v[k, p]
                    vkq = v[k, q]
                    v[k, p] = c * vkp - s * vkq
                    v[k, q] = s * vkp + c * vkq
        sweeps += 1
    eigenvalues = np.empty(n)
    for i in range(n):
        eigenvalues[i] = h[i, i]
    return eigenvalues, v, sweeps


def _complete_basis(have: np.ndarray, total: int) -> np.ndarray:
    """Extend orthonormal columns `have` to `total` columns with identity picks."""
    dim, k = have.shape
    cols = [have[:, i] for i in range(k)]
    for i in range(dim):
        if len(cols) == total:
            break
        cand = np.zeros(dim)
        cand[i] = 1.0
        for c in cols:
            cand -= (c @ cand) * c
        nrm = np.linalg.norm(cand)
        if nrm > 1e-6:
            cols.append(cand / nrm)
    if len(cols) != total:
        raise RuntimeError("basis completion failed")
    return np.column_stack(cols)


def oracle_svd(a) -> SvdResult:
    """Full SVD of `a` via Jacobi diagonalization of the symmetric dilation.

    Requires n + m <= MAX_DILATION_SIZE.  Components whose singular value is
    below 1e-12 of the largest are reported as exactly zero, with their
    vectors filled in by orthonormal completion.
    """
    a = as_matrix(a)
    n, m = a.shape
    if n + m > MAX_DILATION_SIZE:
        raise ValidationError(
            f"oracle input of shape {a.shape} exceeds the dilation cap {MAX_DILATION_SIZE}"
        )
    dil = np.zeros((n + m, n + m))
    dil[:n, n:] = a
    dil[n:, :n] = a.T
    tol = OFF_DIAGONAL_TOLERANCE * max(math.sqrt(float(np.sum(a * a))), 1e-300)
    eigenvalues, vectors, sweeps = _jacobi_cyclic(dil.copy(), tol)
    if sweeps >= _MAX_SWEEPS:
        raise RuntimeError(f"Jacobi failed to converge within {_MAX_SWEEPS} sweeps")

    k = min(n, m)
    order = np.argsort(eigenvalues)[::-1]
    top = order[:k]
    scale = max(float(eigenvalues[order[0]]), 0.0)
    cutoff = 1e-12 * scale
    s = np.zeros(k)
    u = np.zeros((n, k))
    v = np.zeros((m, k))
    kept = 0
    for idx in top:
        lam = eigenvalues[idx]
        if lam <= cutoff:
            break
        w = vectors[:, idx]
        s[kept] = lam
        u[:, kept] = w[:n] * math.sqrt(2.0)
        v[:, kept] = w[n:] * math.sqrt(2.0)
        kept += 1
    if kept < k:
        u[:, kept:] = _complete_basis(u[:, :kept], k)[:, kept:]
        v[:, kept:] = _complete_basis(v[:, :kept], k)[:, kept:]
    return SvdResult(u, s, v)


def oracle_best_rank_s(a, s: int) -> np.ndarray:
    """Best rank-s approximation computed entirely on the oracle path."""
    a = as_matrix(a)
    if not 0 <= s <= min(a.shape):
        raise ValidationError(f"s must be in [0, {min(a.shape)}], got {s}")
    if s == 0:
        return np.zeros_like(a)
    return oracle_svd(a).truncate(s).reconstruct()


@dataclass(frozen=True)
class OracleReport:
    """Agreement summary between two SVDs of the same matrix.

    max_singular_value_deviation is relative to the largest singular value;
    max_subspace_angle (radians) is measured over the requested ranks,
    skipping ranks whose spectral gap is too degenerate for the subspace to
    be well defined; reconstruction_gap is the largest relative Frobenius
    distance between rank-s reconstructions.
    """

    max_singular_value_deviation: float
    max_subspace_angle: float
    reconstruction_gap: float
    ranks_checked: tuple[int, ...]


def compare_svds(a, lhs: SvdResult, rhs: SvdResult, ranks=None,
                 gap_floor: float = 1e-6) -> OracleReport:
    a = as_matrix(a)
    k = min(lhs.rank_limit, rhs.rank_limit)
    scale = max(lhs.s[0], rhs.s[0], 1e-300)
    value_dev = float(np.max(np.abs(lhs.s[:k] - rhs.s[:k]))) / scale
    if ranks is None:
        ranks = range(1, k + 1)
    ranks = tuple(int(r) for r in ranks)
    a_norm = max(float(np.linalg.norm(a)), 1e-300)
    angle = 0.0
    recon_gap = 0.0
    for r in ranks:
        if not 1 <= r <= k:
            raise ValidationError(f"rank {r} out of range [1, {k}]")
        left = lhs.truncate(r)
        right = rhs.truncate(r)
        recon = float(np.linalg.norm(left.reconstruct() - right.reconstruct())) / a_norm
        recon_gap = max(recon_gap, recon)
        gap = lhs.s[r - 1] - (lhs.s[r] if r < lhs.rank_limit else 0.0)
        if gap > gap_floor * scale:
            angle = max(angle, float(np.max(principal_angles(left.u, right.u))))
            angle = max(angle, float(np.max(principal_angles(left.v, right.v))))
    return OracleReport(value_dev, angle, recon_gap, ranks)
