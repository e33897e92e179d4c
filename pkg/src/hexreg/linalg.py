"""Dense matrix kernels: row normalization, cosine similarity, singular values.

Matrices are 2-D C-contiguous float64 numpy arrays throughout. Singular
values come from a cyclic Jacobi eigendecomposition of the smaller Gram
matrix, which keeps the package free of LAPACK-backed SVD calls and makes
the spectrum computation easy to reproduce elsewhere.
"""

from __future__ import annotations

import numpy as np

from .errors import NoConvergence, NonFinite, NotNormalized, ZeroRow

_JACOBI_MAX_SWEEPS = 100
_JACOBI_TOL = 1e-12


def as_matrix(m) -> np.ndarray:
    """Coerce to a 2-D float64 array, rejecting non-finite entries."""
    a = np.asarray(m, dtype=np.float64)
    if a.ndim == 1:
        a = a.reshape(1, -1)
    if a.ndim != 2 or a.shape[0] < 1 or a.shape[1] < 1:
        raise NonFinite(f"expected a non-empty 2-D matrix, got shape {a.shape}")
    if not np.isfinite(a).all():
        raise NonFinite("matrix contains NaN or Inf entries")
    return a


def row_norms(m: np.ndarray) -> np.ndarray:
    return np.sqrt((m * m).sum(axis=1))


def l2_normalize_rows(m) -> np.ndarray:
    """Scale every row to unit Euclidean norm.

    Raises ZeroRow if any row norm is at or below 1e-12.
    """
    a = as_matrix(m)
    norms = row_norms(a)
    bad = np.nonzero(norms <= 1e-12)[0]
    if bad.size:
        raise ZeroRow(f"row {int(bad[0])} has norm {norms[bad[0]]:.3e} <= 1e-12")
    return a / norms[:, None]


def cosine_sim_matrix(z) -> np.ndarray:
    """Pairwise cosine similarities of unit-norm rows.

    Each off-diagonal pair is computed once and mirrored, so the result is
    bitwise symmetric. The diagonal is set to exactly 1 and all values are
    clamped into [-1, 1] to absorb rounding before threshold logic.

    Raises NotNormalized if any row norm deviates from 1 by more than 1e-9.
    """
    a = as_matrix(z)
    norms = row_norms(a)
    off = np.abs(norms - 1.0)
    if off.max(initial=0.0) > 1e-9:
        i = int(np.argmax(off))
        raise NotNormalized(f"row {i} has norm {norms[i]:.12f}, expected 1 +- 1e-9")
    full = a @ a.T
    upper = np.triu(full, 1)
    sims = upper + upper.T
    np.fill_diagonal(sims, 1.0)
    np.clip(sims, -1.0, 1.0, out=sims)
    return sims


def _jacobi_eigenvalues_sym(a: np.ndarray) -> np.ndarray:
    """Eigenvalues of a symmetric matrix by cyclic Jacobi rotations.

    Sweeps row-cyclically over all (p, q) pairs, zeroing A[p, q] with a
    two-sided rotation. Converges when the off-diagonal Frobenius norm
    drops below 1e-12 relative to the matrix norm; capped at 100 sweeps.
    """
    n = a.shape[0]
    if n == 1:
        return a[:1, 0].copy()
    a = a.copy()
    fro = np.sqrt((a * a).sum())
    if fro == 0.0:
        return np.zeros(n)
    stop = _JACOBI_TOL * fro
    # Rotations below this cannot keep the off-norm above the stop level.
    skip = stop / (2.0 * n)
    for _ in range(_JACOBI_MAX_SWEEPS):
        off = a - np.diag(np.diag(a))
        if np.sqrt((off * off).sum()) <= stop:
            return np.diag(a).copy()
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) <= skip:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0))
                if theta == 0.0:
                    t = 1.0
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                col_p = a[:, p].copy()
                col_q = a[:, q].copy()
                a[:, p] = c * col_p - s * col_q
                a[:, q] = s * col_p + c * col_q
                row_p = a[p, :].copy()
                row_q = a[q, :].copy()
                a[p, :] = c * row_p - s * row_q
                a[q, :] = s * row_p + c * row_q
                a[p, q] = 0.0
                a[q, p] = 0.0
    off = a - np.diag(np.diag(a))
    if np.sqrt((off * off).sum()) <= stop:
        return np.diag(a).copy()
    raise NoConvergence(f"Jacobi eigensolver did not converge in {_JACOBI_MAX_SWEEPS} sweeps")


def singular_values(m) -> np.ndarray:
    """Singular values of m, sorted descending, length min(rows, cols).

    Computed as square roots of the eigenvalues of the smaller Gram matrix
    (m^T m or m m^T); tiny negative eigenvalues from rounding are clamped
    to zero.
    """
    a = as_matrix(m)
    rows, cols = a.shape
    gram = a.T @ a if cols <= rows else a @ a.T
    evals = _jacobi_eigenvalues_sym(gram)
    evals = np.where(evals > 0.0, evals, 0.0)
    return np.sort(np.sqrt(evals))[::-1].copy()
