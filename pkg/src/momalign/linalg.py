"""Dense SPD primitives: second-moment aggregation, iterative matrix square
root, Frobenius-faithful vectorization, and cosine similarity.

All functions are pure and operate on float64 numpy arrays.
"""

from __future__ import annotations

import numpy as np

#: Default number of coupled Newton-Schulz iterations. Validated against an
#: eigendecomposition oracle for condition numbers <= 100 (relative residual
#: <= 1e-2 at 5 iterations).
DEFAULT_SQRT_ITERATIONS = 5

#: Default diagonal regularizer scale: eps = 1e-5 * trace / dim, which keeps
#: rank-deficient second moments positive definite for the iteration.
DEFAULT_EPS_SCALE = 1e-5


def _check_square_symmetric(a: np.ndarray, what: str) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"{what}: expected a square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{what}: non-finite entries")
    scale = max(1.0, float(np.max(np.abs(a)))) if a.size else 1.0
    if a.size and float(np.max(np.abs(a - a.T))) > 1e-8 * scale:
        raise ValueError(f"{what}: matrix is not symmetric within tolerance")
    return a


def _spectral_norm_estimate(a: np.ndarray, fro: float, iters: int = 50) -> float:
    """Largest-eigenvalue estimate for a PSD matrix by power iteration.

    Deterministic (fixed all-ones start). The Rayleigh quotient is clamped to
    [fro / sqrt(n), fro], the interval that always contains the true largest
    eigenvalue, which guards against a start vector that is nearly orthogonal
    to the dominant eigenvector.
    """
    n = a.shape[0]
    v = np.full(n, 1.0 / np.sqrt(n))
    for _ in range(iters):
        w = a @ v
        nw = float(np.linalg.norm(w))
        if nw <= 0.0:
            break
        v = w / nw
    rayleigh = float(v @ a @ v)
    return min(max(rayleigh, fro / np.sqrt(n)), fro)


def newton_schulz_sqrt(
    a: np.ndarray,
    iterations: int = DEFAULT_SQRT_ITERATIONS,
    eps: float | None = None,
) -> np.ndarray:
    """Approximate square root of an SPD matrix by coupled Newton-Schulz.

    The input is shifted by ``eps * I`` (default ``1e-5 * trace / dim``),
    pre-normalized by an estimate of its largest eigenvalue, iterated with
    the coupled scheme

        T_k = (3 I - Z_k Y_k) / 2,   Y_{k+1} = Y_k T_k,   Z_{k+1} = T_k Z_k,

    and post-compensated by the square root of the normalizer. The spectral
    norm is used rather than the trace because it maps the spectrum onto
    (0, 1] instead of over-shrinking it, which is what lets five iterations
    meet the documented residual bound at condition numbers up to 100. The
    estimate comes from deterministic power iteration, so the whole routine
    stays free of eigendecompositions. The result is symmetrized before
    return.
    """
    a = _check_square_symmetric(a, "newton_schulz_sqrt")
    if iterations < 1:
        raise ValueError("newton_schulz_sqrt: iterations must be >= 1")
    n = a.shape[0]
    ident = np.eye(n)
    if eps is None:
        eps = DEFAULT_EPS_SCALE * float(np.trace(a)) / n
    shifted = a + eps * ident
    fro = float(np.linalg.norm(shifted))
    if fro <= 0.0 or float(np.trace(shifted)) <= 0.0:
        raise ValueError("newton_schulz_sqrt: non-positive input after eps shift")
    norm = _spectral_norm_estimate(shifted, fro)
    y = shifted / norm
    z = ident
    for _ in range(iterations):
        t = 0.5 * (3.0 * ident - z @ y)
        y = y @ t
        z = t @ z
    out = y * np.sqrt(norm)
    return 0.5 * (out + out.T)


def second_moment(features: np.ndarray) -> np.ndarray:
    """Uncentered second-order moment (1/M) sum_m t_m t_m^T.

    ``features`` is a C x M matrix whose columns are the M spatial feature
    vectors. The output is exactly symmetric by construction and PSD up to
    rounding.
    """
    f = np.asarray(features, dtype=np.float64)
    if f.ndim != 2:
        raise ValueError(f"second_moment: expected a 2-D matrix, got shape {f.shape}")
    if f.shape[1] < 1:
        raise ValueError("second_moment: empty feature set (M = 0)")
    if not np.all(np.isfinite(f)):
        raise ValueError("second_moment: non-finite entries")
    q = (f @ f.T) / f.shape[1]
    return 0.5 * (q + q.T)


_SQRT2 = np.sqrt(2.0)


def vectorize_spd(a: np.ndarray) -> np.ndarray:
    """Upper-triangular vectorization with sqrt(2)-scaled off-diagonals.

    The scaling makes the plain dot product of two vectorized matrices equal
    their Frobenius inner product, so cosine over vectors equals cosine over
    matrices.
    """
    a = _check_square_symmetric(a, "vectorize_spd")
    n = a.shape[0]
    iu, ju = np.triu_indices(n)
    v = a[iu, ju].copy()
    v[iu != ju] *= _SQRT2
    return v


def cosine(u: np.ndarray, v: np.ndarray) -> float:
    """Cosine similarity; defined as 0 when either norm is below 1e-12."""
    u = np.asarray(u, dtype=np.float64).ravel()
    v = np.asarray(v, dtype=np.float64).ravel()
    if u.shape != v.shape:
        raise ValueError(f"cosine: length mismatch {u.shape} vs {v.shape}")
    nu = float(np.linalg.norm(u))
    nv = float(np.linalg.norm(v))
    if nu < 1e-12 or nv < 1e-12:
        return 0.0
    c = float(np.dot(u, v) / (nu * nv))
    return min(1.0, max(-1.0, c))
