"""Perron-Frobenius data of the mean matrix and second-moment recursions."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import IterationLimitError, SpectralError
from .model import BranchingModel, covariance_matrices, mean_matrix

RAYLEIGH_TOL = 1e-13
MAX_POWER_ITERS = 10**6


@dataclass(frozen=True)
class SpectralData:
    """Perron root with right/left eigenvectors, u.1 = u.v = 1."""

    rho: float
    u: np.ndarray
    v: np.ndarray


def _is_primitive(M: np.ndarray) -> bool:
    d = M.shape[0]
    B = M > 0
    P = B.copy()
    for _ in range((d - 1) ** 2 + 1):
        if P.all():
            return True
        P = (P @ B) > 0
    return False


def _dominant_pair(M: np.ndarray):
    """Power iteration from the all-ones vector; Rayleigh-quotient stopping."""
    x = np.ones(M.shape[0])
    lam = 0.0
    for _ in range(MAX_POWER_ITERS):
        y = M @ x
        norm = np.linalg.norm(y)
        if norm == 0.0:
            raise SpectralError("matrix annihilates the positive cone")
        y /= norm
        lam_new = y @ (M @ y) / (y @ y)
        if abs(lam_new - lam) < RAYLEIGH_TOL:
            return lam_new, y
        lam, x = lam_new, y
    raise IterationLimitError("power iteration did not converge")


def perron(M: np.ndarray) -> SpectralData:
    """Perron root and eigenvectors of a primitive nonnegative matrix.

    Right vector from M, left vector from M^T, then two scalar rescalings
    enforce u.1 = 1 followed by u.v = 1.
    """
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise SpectralError("mean matrix must be square")
    if np.any(M < 0):
        raise SpectralError("mean matrix must be nonnegative")
    if not _is_primitive(M):
        raise SpectralError("mean matrix is not primitive (positive regularity fails)")
    rho, u = _dominant_pair(M)
    _, v = _dominant_pair(M.T)
    u = np.abs(u)
    v = np.abs(v)
    u /= u.sum()
    v /= u @ v
    return SpectralData(rho=float(rho), u=u, v=v)


def spectral_of(model: BranchingModel) -> SpectralData:
    return perron(mean_matrix(model))


def mean_power_diagnostic(model: BranchingModel, n_max: int):
    """Sup-norm gaps ||rho^-n M^n - u^T v||_inf for n = 1..n_max."""
    M = mean_matrix(model)
    sd = perron(M)
    target = np.outer(sd.u, sd.v)
    gaps = []
    P = np.eye(model.d)
    for n in range(1, n_max + 1):
        P = P @ M
        gaps.append((n, float(np.max(np.abs(P / sd.rho**n - target)))))
    return gaps


def second_moments(model: BranchingModel, x, k: int) -> np.ndarray:
    """Matrix of E_x[X_{k,i} X_{k,j}] via the mean/covariance recursion.

    C_{x,k} = (M^T)^k C_{x,0} M^k
              + sum_{n=1..k} (M^T)^{k-n} (sum_i Sigma^i E_x[X_{n-1,i}]) M^{k-n}
    with C_{x,0} = x^T x.
    """
    x = np.asarray(x, dtype=float)
    M = mean_matrix(model)
    sigmas = covariance_matrices(model)
    C = np.outer(x, x)
    Mk = np.linalg.matrix_power(M, k)
    out = Mk.T @ C @ Mk
    for n in range(1, k + 1):
        mean_prev = x @ np.linalg.matrix_power(M, n - 1)
        inner = sum(sigmas[i] * mean_prev[i] for i in range(model.d))
        Mkn = np.linalg.matrix_power(M, k - n)
        out += Mkn.T @ inner @ Mkn
    return out
