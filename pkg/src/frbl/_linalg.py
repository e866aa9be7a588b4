"""Small dense linear algebra helpers shared across the package.

Everything here wraps numpy.linalg on symmetric matrices of desk-scale
dimension (N <= a few dozen). No iterative or sparse machinery.
"""
from __future__ import annotations

import numpy as np

# Relative rank tolerance used for every surjectivity / span decision.
RANK_RTOL = 1e-10


def sym(a: np.ndarray) -> np.ndarray:
    """Symmetric part (a + a.T) / 2."""
    return 0.5 * (a + a.T)


def asymmetry(a: np.ndarray) -> float:
    """Largest absolute deviation from symmetry."""
    if a.size == 0:
        return 0.0
    return float(np.max(np.abs(a - a.T)))


def min_eig(a: np.ndarray) -> float:
    if a.size == 0:
        return 0.0
    return float(np.linalg.eigvalsh(sym(a))[0])


def opnorm(a: np.ndarray) -> float:
    """Spectral norm; 0.0 for empty matrices."""
    if a.size == 0:
        return 0.0
    return float(np.linalg.norm(a, 2))


def chol_logdet(a: np.ndarray) -> float | None:
    """log det via Cholesky, or None when the matrix is not positive definite."""
    if a.shape[0] == 0:
        return 0.0
    try:
        l = np.linalg.cholesky(a)
    except np.linalg.LinAlgError:
        return None
    d = np.diag(l)
    if np.any(d <= 0.0) or not np.all(np.isfinite(d)):
        return None
    return float(2.0 * np.sum(np.log(d)))


def is_pd(a: np.ndarray) -> bool:
    return chol_logdet(sym(a)) is not None


def psd_sqrt(a: np.ndarray, floor: float = 1e-12) -> np.ndarray:
    """Symmetric square root with eigenvalues below floor*max truncated to 0."""
    if a.shape[0] == 0:
        return a.copy()
    w, v = np.linalg.eigh(sym(a))
    cut = floor * max(1.0, float(w[-1]))
    w = np.where(w < cut, 0.0, w)
    return (v * np.sqrt(w)) @ v.T


def spd_inv_sqrt(a: np.ndarray, floor: float = 1e-12) -> np.ndarray:
    """Inverse symmetric square root; raises if an eigenvalue had to be floored."""
    w, v = np.linalg.eigh(sym(a))
    cut = floor * max(1.0, float(w[-1]))
    if np.any(w < cut):
        raise np.linalg.LinAlgError(
            f"matrix not safely positive definite: min eigenvalue {w[0]:.3e} below floor {cut:.3e}"
        )
    return (v / np.sqrt(w)) @ v.T


def rank(a: np.ndarray, rtol: float = RANK_RTOL) -> int:
    """Numerical rank: singular values >= rtol * largest."""
    if a.size == 0:
        return 0
    s = np.linalg.svd(a, compute_uv=False)
    if s.size == 0 or s[0] == 0.0:
        return 0
    return int(np.sum(s >= rtol * s[0]))


def column_space(a: np.ndarray, rtol: float = RANK_RTOL) -> np.ndarray:
    """Orthonormal basis of the column space, as columns."""
    if a.size == 0:
        return np.zeros((a.shape[0], 0))
    u, s, _ = np.linalg.svd(a, full_matrices=False)
    if s.size == 0 or s[0] == 0.0:
        return np.zeros((a.shape[0], 0))
    r = int(np.sum(s >= rtol * s[0]))
    return u[:, :r]


def orth_complement(q: np.ndarray) -> np.ndarray:
    """Orthonormal basis (columns) of the orthogonal complement of span(q)."""
    n = q.shape[0]
    if q.shape[1] == 0:
        return np.eye(n)
    u, _, _ = np.linalg.svd(q, full_matrices=True)
    return u[:, q.shape[1]:]


def block_diag(blocks: list[np.ndarray]) -> np.ndarray:
    """Dense block-diagonal assembly; blocks may be rectangular."""
    rows = sum(b.shape[0] for b in blocks)
    cols = sum(b.shape[1] for b in blocks)
    out = np.zeros((rows, cols))
    r = c = 0
    for b in blocks:
        out[r:r + b.shape[0], c:c + b.shape[1]] = b
        r += b.shape[0]
        c += b.shape[1]
    return out


def block_of(a: np.ndarray, offsets: list[int], i: int, j: int) -> np.ndarray:
    """Extract block (i, j) of a matrix partitioned by offsets."""
    return a[offsets[i]:offsets[i + 1], offsets[j]:offsets[j + 1]]


def offsets_of(dims: tuple[int, ...] | list[int]) -> list[int]:
    out = [0]
    for d in dims:
        out.append(out[-1] + d)
    return out
