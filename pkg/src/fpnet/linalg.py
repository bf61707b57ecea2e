"""Seeded random matrices and the small set of dense kernels everything else uses.

All matrices are 2-D float64 numpy arrays. Degenerate matrices with a zero
dimension are rejected at every public entry point. Determinism is
per-implementation: the same seed always reproduces the same draws within
this package, but no bit-level agreement with other libraries is promised.
"""

import numpy as np
from scipy.linalg import lapack

from .errors import NotPositiveDefiniteError, RankDeficientError

# Relative floor under which a squared Cholesky pivot counts as a failure.
PIVOT_FLOOR = 1e-12

# Singular values below DEFAULT_RANK_TOL * s_max do not count toward rank.
DEFAULT_RANK_TOL = 1e-9


def as_matrix(a, name="matrix"):
    """Validate and return ``a`` as a 2-D float64 array.

    Raises ValueError for anything that is not a real 2-D array with at
    least one row and one column.
    """
    m = np.asarray(a, dtype=np.float64)
    if m.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got ndim={m.ndim}")
    if m.shape[0] == 0 or m.shape[1] == 0:
        raise ValueError(f"{name} must be non-empty, got shape {m.shape}")
    return m


def ensure_finite(m, name="result"):
    """Raise ValueError if ``m`` contains NaN or Inf; return ``m`` unchanged."""
    if not np.isfinite(m).all():
        raise ValueError(f"{name} contains non-finite entries")
    return m


class SeededRng:
    """Deterministic random source.

    Wraps a PCG64 generator; normal deviates come from numpy's ziggurat
    sampler. Every draw consumes state, so two streams with the same seed
    diverge as soon as their call sequences differ.
    """

    def __init__(self, seed):
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    def standard_normal(self, shape):
        return self._gen.standard_normal(shape)

    def normal(self, shape, sigma=1.0):
        if sigma <= 0:
            raise ValueError("sigma must be positive")
        return self._gen.normal(0.0, sigma, size=shape)

    def subset_without_replacement(self, pool, k):
        """Draw ``k`` distinct elements from 1-D ``pool``, in draw order."""
        pool = np.asarray(pool)
        if k > pool.shape[0]:
            raise ValueError(f"cannot draw {k} from pool of {pool.shape[0]}")
        return self._gen.choice(pool, size=int(k), replace=False)

    def permutation(self, n):
        return self._gen.permutation(int(n))


def gaussian_matrix(rows, cols, rng):
    """Matrix with i.i.d. standard normal entries, drawn from ``rng``."""
    rows, cols = int(rows), int(cols)
    if rows < 1 or cols < 1:
        raise ValueError(f"dimensions must be positive, got {rows}x{cols}")
    return rng.standard_normal((rows, cols))


def spd_solve(g, b):
    """Solve g @ x = b for symmetric positive definite ``g`` via Cholesky.

    Parameters
    ----------
    g : (n, n) symmetric positive definite matrix.
    b : (n, k) right-hand side.

    Returns
    -------
    x : (n, k) solution.

    Raises
    ------
    ValueError
        If ``g`` is not square, not symmetric, or shapes do not conform.
    NotPositiveDefiniteError
        If the factorisation fails or a squared pivot falls below
        PIVOT_FLOOR relative to the largest diagonal entry. The error
        carries the 0-based index of the failing pivot.
    """
    g = as_matrix(g, "g")
    b = as_matrix(b, "b")
    n = g.shape[0]
    if g.shape[1] != n:
        raise ValueError(f"g must be square, got shape {g.shape}")
    if b.shape[0] != n:
        raise ValueError(f"b has {b.shape[0]} rows, expected {n}")
    scale = np.max(np.abs(g))
    if not np.allclose(g, g.T, atol=1e-8 * max(1.0, scale), rtol=0.0):
        raise ValueError("g is not symmetric")

    c, info = lapack.dpotrf(g, lower=1, clean=0, overwrite_a=0)
    if info > 0:
        raise NotPositiveDefiniteError(info - 1)
    if info < 0:
        raise ValueError(f"illegal value in argument {-info} of dpotrf")
    diag = np.diagonal(c)
    floor = PIVOT_FLOOR * max(1.0, float(np.max(np.abs(np.diagonal(g)))))
    small = np.nonzero(diag * diag < floor)[0]
    if small.size:
        raise NotPositiveDefiniteError(int(small[0]), message=(
            f"pivot {int(small[0])} below floor: {float(diag[small[0]] ** 2):.3e}"
        ))
    x, info = lapack.dpotrs(c, b, lower=1)
    if info != 0:
        raise ValueError(f"illegal value in argument {-info} of dpotrs")
    return ensure_finite(x, "spd_solve result")


def pseudo_inverse_rows(u):
    """Right pseudo-inverse of a full-row-rank matrix.

    For u with shape (r, c), r <= c and full row rank, returns
    u+ = u.T @ inv(u @ u.T) of shape (c, r), so u @ u+ = I_r.
    Built from the normal equations of the row space, not an SVD.

    Raises RankDeficientError when r > c or when u @ u.T is not positive
    definite (rows are linearly dependent).
    """
    u = as_matrix(u, "u")
    r, c = u.shape
    if r > c:
        raise RankDeficientError(
            f"need rows <= cols for a right inverse, got {r}x{c}")
    gram = u @ u.T
    try:
        s = spd_solve(gram, u)  # s = inv(u u.T) @ u
    except NotPositiveDefiniteError as e:
        raise RankDeficientError(
            f"rows are linearly dependent (pivot {e.pivot_index})") from e
    return ensure_finite(s.T, "pseudo_inverse_rows result")


def rank_estimate(m, tol=DEFAULT_RANK_TOL):
    """Numerical rank: count of singular values above tol * largest.

    ``tol`` must be positive. An all-zero matrix has rank 0.
    """
    m = as_matrix(m, "m")
    if tol <= 0:
        raise ValueError("tol must be positive")
    s = np.linalg.svd(m, compute_uv=False)
    if s[0] == 0.0:
        return 0
    return int(np.count_nonzero(s > tol * s[0]))
