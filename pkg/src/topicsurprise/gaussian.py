"""Multivariate Gaussian beliefs over topic preferences.

All covariance inverses and log-determinants go through a symmetric
eigendecomposition; nothing here forms an explicit inverse.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

EIG_FLOOR = 1e-12
SYMMETRY_TOL = 1e-9


@dataclass(frozen=True)
class GaussianBelief:
    """N(mean, cov) over a K-dimensional preference vector."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float).reshape(-1)
        cov = np.asarray(self.cov, dtype=float)
        if cov.shape != (mean.size, mean.size):
            raise ValueError(
                f"covariance shape {cov.shape} does not match mean length {mean.size}"
            )
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def dim(self) -> int:
        return self.mean.size

    @classmethod
    def isotropic(cls, dim: int, variance: float) -> "GaussianBelief":
        return cls(np.zeros(dim), variance * np.eye(dim))


def _checked_eigh(cov: np.ndarray, what: str) -> tuple[np.ndarray, np.ndarray]:
    vals, vecs = np.linalg.eigh(cov)
    if not np.all(np.isfinite(vals)):
        raise ValueError(f"{what} covariance has non-finite eigenvalues")
    if vals[0] < -SYMMETRY_TOL:
        raise ValueError(
            f"{what} covariance is not positive semi-definite: "
            f"smallest eigenvalue {vals[0]:.3e}"
        )
    return np.maximum(vals, EIG_FLOOR), vecs


def kl_divergence(post: GaussianBelief, prior: GaussianBelief) -> float:
    """KL(post || prior) for two multivariate normals.

    Both covariances are eigenvalue-floored at 1e-12 before use. Raises
    ``ValueError`` on dimension mismatch or on a covariance whose smallest
    eigenvalue is negative beyond 1e-9.
    """
    if post.dim != prior.dim:
        raise ValueError(f"dimension mismatch: {post.dim} vs {prior.dim}")
    k = post.dim
    prior_vals, prior_vecs = _checked_eigh(_symmetrize(prior.cov), "prior")
    post_vals = _checked_eigh(_symmetrize(post.cov), "posterior")[0]

    # tr(S0^-1 S1) in the prior's eigenbasis
    rotated = prior_vecs.T @ post.cov @ prior_vecs
    trace_term = float(np.sum(np.diag(rotated) / prior_vals))
    diff = prior_vecs.T @ (prior.mean - post.mean)
    quad_term = float(np.sum(diff * diff / prior_vals))
    logdet_term = float(np.sum(np.log(prior_vals)) - np.sum(np.log(post_vals)))

    kl = 0.5 * (trace_term + quad_term - k + logdet_term)
    if not np.isfinite(kl):
        raise ValueError("KL divergence is not finite")
    # roundoff can push identical beliefs a hair below zero
    return max(kl, 0.0)


def _symmetrize(cov: np.ndarray) -> np.ndarray:
    return 0.5 * (cov + cov.T)


def clip_eigenvalues(cov: np.ndarray, tau_v: float) -> np.ndarray:
    """Raise every eigenvalue of ``cov`` to at least ``tau_v``, keeping eigenvectors."""
    cov = np.asarray(cov, dtype=float)
    if tau_v <= 0:
        raise ValueError("tau_v must be positive")
    if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {cov.shape}")
    scale = max(1.0, float(np.max(np.abs(cov))) if cov.size else 1.0)
    if np.max(np.abs(cov - cov.T), initial=0.0) > SYMMETRY_TOL * scale:
        raise ValueError("covariance is not symmetric")
    vals, vecs = np.linalg.eigh(cov)
    if vals.size == 0 or vals[0] >= tau_v:
        return cov.copy()
    clipped = (vecs * np.maximum(vals, tau_v)) @ vecs.T
    return _symmetrize(clipped)


def floor_and_symmetrize(cov: np.ndarray) -> np.ndarray:
    """Symmetrize ``cov`` and floor its eigenvalues at 1e-12."""
    cov = np.asarray(cov, dtype=float)
    sym = _symmetrize(cov)
    vals, vecs = np.linalg.eigh(sym)
    if vals.size == 0 or vals[0] >= EIG_FLOOR:
        return sym
    return _symmetrize((vecs * np.maximum(vals, EIG_FLOOR)) @ vecs.T)
