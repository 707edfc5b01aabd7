"""Dense SPD linear-algebra kernels and reproducible random sampling.

Every solver in the package goes through a Cholesky factorization; nothing
ever forms an explicit inverse.  Random streams are built on the counter-based
Philox generator so that a stream derived from ``(seed, *path)`` is identical
no matter how work is scheduled across threads.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg

from .exceptions import InvalidDimensionError, NotPositiveDefiniteError

SYMMETRY_RTOL = 1e-12
PIVOT_RTOL = 1e-12


def make_rng(seed: int, *path: int) -> np.random.Generator:
    """Deterministic generator for a seed and an optional integer sub-stream path.

    ``make_rng(s, i, j)`` always yields the same stream, independent of any
    other stream created from the same seed, so parallel sweeps can hand one
    stream to each work item without coordinating.
    """
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(p) for p in path))
    return np.random.Generator(np.random.Philox(ss))


def split_rng(rng: np.random.Generator, n: int) -> list[np.random.Generator]:
    """Split off ``n`` independent child generators."""
    return rng.spawn(n)


def check_spd(a, rtol: float = SYMMETRY_RTOL) -> np.ndarray:
    """Validate that ``a`` is a symmetric positive definite matrix.

    Returns the matrix as a float64 array with the symmetric part enforced.
    Raises :class:`NotPositiveDefiniteError` if any eigenvalue is not
    strictly positive, ``ValueError`` if the shape or symmetry is off.
    """
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    if a.shape[0] == 0:
        raise InvalidDimensionError("matrix dimension must be at least 1")
    scale = np.abs(a).max()
    if np.abs(a - a.T).max() > rtol * max(scale, 1.0):
        raise ValueError("matrix is not symmetric")
    a = 0.5 * (a + a.T)
    if np.linalg.eigvalsh(a)[0] <= 0.0:
        raise NotPositiveDefiniteError("matrix has a non-positive eigenvalue")
    return a


def spd_solve(a, b) -> np.ndarray:
    """Solve ``a @ x = b`` for SPD ``a`` via Cholesky.

    Accepts ``b`` as a vector or a matrix of right-hand sides.  Rejects
    matrices whose Cholesky pivots fall below ``PIVOT_RTOL`` relative to the
    largest pivot, which catches both indefinite and numerically singular
    input.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    scale = np.abs(a).max()
    if np.abs(a - a.T).max() > SYMMETRY_RTOL * max(scale, 1.0):
        raise ValueError("matrix is not symmetric")
    try:
        factor = scipy.linalg.cho_factor(0.5 * (a + a.T), lower=True, check_finite=False)
    except (scipy.linalg.LinAlgError, np.linalg.LinAlgError) as exc:
        raise NotPositiveDefiniteError(str(exc)) from exc
    pivots = np.diag(factor[0])
    if pivots.min() <= PIVOT_RTOL * pivots.max():
        raise NotPositiveDefiniteError(
            f"Cholesky pivot ratio {pivots.min() / pivots.max():.3e} below {PIVOT_RTOL:.0e}"
        )
    return scipy.linalg.cho_solve(factor, b, check_finite=False)


def chol_solve_stack(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Batched SPD solve: ``a`` is ``(..., d, d)``, ``b`` is ``(..., d, k)`` or ``(..., d)``.

    Factors each matrix in the stack with Cholesky (raising
    :class:`NotPositiveDefiniteError` if any fails) and back-substitutes.
    """
    try:
        lower = np.linalg.cholesky(a)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefiniteError(str(exc)) from exc
    pivots = np.diagonal(lower, axis1=-2, axis2=-1)
    if (pivots.min(axis=-1) <= PIVOT_RTOL * pivots.max(axis=-1)).any():
        raise NotPositiveDefiniteError("a matrix in the stack is numerically singular")
    vector_rhs = b.ndim == a.ndim - 1
    if vector_rhs:
        b = b[..., None]
    x = np.linalg.solve(np.swapaxes(lower, -1, -2), np.linalg.solve(lower, b))
    return x[..., 0] if vector_rhs else x


def random_orthogonal(rng: np.random.Generator, d: int) -> np.ndarray:
    """Draw a Haar-distributed rotation from SO(d).

    QR of a standard Gaussian matrix, with the factorization gauge fixed by
    the signs of R's diagonal (this makes the orthogonal factor Haar on O(d));
    a determinant of -1 is corrected by negating the first column, which maps
    the reflection component onto SO(d) without disturbing the distribution.
    """
    if d < 1:
        raise InvalidDimensionError(f"dimension must be >= 1, got {d}")
    z = rng.standard_normal((d, d))
    q, r = np.linalg.qr(z)
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def gaussian_matrix(rng: np.random.Generator, n: int, d: int, cov) -> np.ndarray:
    """Draw ``n`` i.i.d. rows from N(0, cov) as ``Z @ L.T`` with ``L`` the Cholesky factor."""
    if n < 1:
        raise InvalidDimensionError(f"sample count must be >= 1, got {n}")
    cov = np.asarray(cov, dtype=np.float64)
    if cov.shape != (d, d):
        raise ValueError(f"covariance shape {cov.shape} does not match dimension {d}")
    lower = _cholesky_lower(cov)
    return rng.standard_normal((n, d)) @ lower.T


def _cholesky_lower(a: np.ndarray) -> np.ndarray:
    try:
        lower = np.linalg.cholesky(a)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefiniteError(str(exc)) from exc
    pivots = np.diagonal(lower)
    if pivots.min() <= PIVOT_RTOL * pivots.max():
        raise NotPositiveDefiniteError("covariance is numerically singular")
    return lower


def gram_stack(x: np.ndarray) -> np.ndarray:
    """``(T, n, d) -> (T, d, d)`` stack of ``X.T @ X / n`` per batch entry."""
    n = x.shape[-2]
    return np.einsum("...ni,...nj->...ij", x, x) / n


def xty_stack(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """``(T, n, d), (T, n) -> (T, d)`` stack of ``X.T @ y`` per batch entry."""
    return np.einsum("...ni,...n->...i", x, y)


def symmetrize(a: np.ndarray) -> np.ndarray:
    """Average away the rounding-level asymmetry of an algebraically symmetric stack."""
    return 0.5 * (a + np.swapaxes(a, -1, -2))
