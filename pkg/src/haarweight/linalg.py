"""Batched small-matrix helpers and dense spectral norms."""

from __future__ import annotations

import numpy as np


def symmetrize(a):
    return 0.5 * (a + np.swapaxes(a, -1, -2))


def powm_spd(a, s):
    """Batched symmetric power A^s via eigendecomposition (A must be SPD)."""
    w, v = np.linalg.eigh(symmetrize(np.asarray(a, dtype=float)))
    if np.any(w <= 0):
        raise np.linalg.LinAlgError("matrix power of a non positive definite matrix")
    return (v * (w ** s)[..., None, :]) @ np.swapaxes(v, -1, -2)


def sqrtm_spd(a):
    return powm_spd(a, 0.5)


def invm_spd(a):
    return powm_spd(a, -1.0)


def opnorm(a):
    """Batched spectral (largest singular value) norm."""
    return np.linalg.svd(np.asarray(a, dtype=float), compute_uv=False)[..., 0]


def lambda_max(a):
    """Batched largest eigenvalue of symmetric matrices."""
    return np.linalg.eigvalsh(symmetrize(a))[..., -1]


def is_spd(a, tol=0.0):
    try:
        np.linalg.cholesky(symmetrize(np.asarray(a, dtype=float)) + tol * np.eye(a.shape[-1]))
        return True
    except np.linalg.LinAlgError:
        return False


def spectral_norm(mat, tol=1e-13, max_iter=5000, seed=0, dense_cutoff=600):
    """Largest singular value of a dense matrix.

    Small matrices use full SVD; larger ones use power iteration on M^T M with
    a Rayleigh-residual stopping rule and a couple of random restarts, which
    converges to the top singular value to round-off for the sizes used here.
    """
    mat = np.asarray(mat, dtype=float)
    if min(mat.shape) <= dense_cutoff:
        return float(np.linalg.svd(mat, compute_uv=False)[0])
    rng = np.random.default_rng(seed)
    best = 0.0
    for _ in range(3):
        x = rng.standard_normal(mat.shape[1])
        x /= np.linalg.norm(x)
        prev = 0.0
        for _ in range(max_iter):
            y = mat @ x
            x = mat.T @ y
            nrm = np.linalg.norm(x)
            if nrm == 0.0:
                break
            x /= nrm
            val = np.sqrt(nrm)
            if abs(val - prev) <= tol * max(val, 1.0):
                break
            prev = val
        best = max(best, float(np.linalg.norm(mat @ x)))
    return best


def matfree_spectral_norm(matvec, rmatvec, dim, tol=1e-12, max_iter=4000, seed=0, restarts=2):
    """Power-iteration lower bound for the largest singular value of a linear
    map given only by matvec/rmatvec callables.  Returns (value, witness)."""
    rng = np.random.default_rng(seed)
    best, best_x = 0.0, None
    for _ in range(restarts):
        x = rng.standard_normal(dim)
        x /= np.linalg.norm(x)
        prev = 0.0
        for _ in range(max_iter):
            y = matvec(x)
            x = rmatvec(y)
            nrm = np.linalg.norm(x)
            if nrm == 0.0:
                break
            x /= nrm
            val = np.sqrt(nrm)
            if abs(val - prev) <= tol * max(val, 1.0):
                break
            prev = val
        val = float(np.linalg.norm(matvec(x)))
        if val > best:
            best, best_x = val, x
    return best, best_x
