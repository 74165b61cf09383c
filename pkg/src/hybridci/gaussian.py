"""Moment and information parameterizations of Gaussian beliefs."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

SINGULAR_RTOL = 1e-12
PSD_RTOL = 1e-9


class SingularMatrixError(np.linalg.LinAlgError):
    """Raised when a matrix that must be inverted is (numerically) singular."""

    def __init__(self, what: str, min_eig: float, scale: float):
        self.min_eig = min_eig
        self.scale = scale
        super().__init__(
            f"{what} is singular: min eigenvalue {min_eig:.3e} "
            f"<= {SINGULAR_RTOL:g} * norm {scale:.3e}"
        )


def symmetrize(m: np.ndarray) -> np.ndarray:
    return 0.5 * (m + m.T)


def is_psd(m: np.ndarray, rtol: float = PSD_RTOL) -> bool:
    """True if ``m`` is symmetric and its smallest eigenvalue is >= -rtol*||m||."""
    m = np.asarray(m, dtype=float)
    if not np.allclose(m, m.T, rtol=0.0, atol=rtol * max(np.abs(m).max(), 1e-300)):
        return False
    scale = np.linalg.norm(m, 2)
    if scale == 0.0:
        return True
    return bool(np.linalg.eigvalsh(symmetrize(m))[0] >= -rtol * scale)


def spd_inverse(m: np.ndarray, what: str = "matrix") -> np.ndarray:
    """Invert a symmetric positive-definite matrix via Cholesky.

    The result is symmetrized. Raises :class:`SingularMatrixError` naming the
    smallest eigenvalue when ``m`` is not safely invertible.
    """
    m = symmetrize(np.asarray(m, dtype=float))
    scale = np.linalg.norm(m, 2) if m.size else 0.0
    try:
        c = linalg.cho_factor(m, lower=True, check_finite=False)
        diag = np.diag(c[0])
        # Cholesky succeeds on some badly conditioned matrices; the squared
        # pivot ratio is a cheap lower bound on the condition number.
        if diag.min() ** 2 <= SINGULAR_RTOL * scale:
            raise np.linalg.LinAlgError
    except np.linalg.LinAlgError:
        eig = np.linalg.eigvalsh(m)[0] if m.size else 0.0
        if eig <= SINGULAR_RTOL * scale:
            raise SingularMatrixError(what, float(eig), float(scale)) from None
        inv = np.linalg.inv(m)
        return symmetrize(inv)
    inv = linalg.cho_solve(c, np.eye(m.shape[0]), check_finite=False)
    return symmetrize(inv)


def logdet_spd(m: np.ndarray) -> float:
    """log det of an SPD matrix through its Cholesky factor."""
    c = linalg.cholesky(symmetrize(np.asarray(m, dtype=float)), lower=True, check_finite=False)
    return float(2.0 * np.log(np.diag(c)).sum())


@dataclass(frozen=True)
class GaussianMoments:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
        if cov.shape != (mean.size, mean.size):
            raise ValueError(f"cov shape {cov.shape} does not match mean length {mean.size}")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def dim(self) -> int:
        return self.mean.size


@dataclass(frozen=True)
class GaussianInfo:
    """Information-form belief: ``info_vec = P^-1 mean``, ``info_mat = P^-1``."""

    info_vec: np.ndarray
    info_mat: np.ndarray

    def __post_init__(self):
        y = np.atleast_1d(np.asarray(self.info_vec, dtype=float))
        Y = np.atleast_2d(np.asarray(self.info_mat, dtype=float))
        if Y.shape != (y.size, y.size):
            raise ValueError(f"info_mat shape {Y.shape} does not match info_vec length {y.size}")
        object.__setattr__(self, "info_vec", y)
        object.__setattr__(self, "info_mat", Y)

    @property
    def dim(self) -> int:
        return self.info_vec.size

    @classmethod
    def weak_prior(cls, dim: int, eps: float = 1e-4) -> "GaussianInfo":
        """Zero-mean prior with information matrix ``eps * I``."""
        return cls(np.zeros(dim), eps * np.eye(dim))

    def mean(self) -> np.ndarray:
        return to_moments(self).mean


def to_info(m: GaussianMoments) -> GaussianInfo:
    Y = spd_inverse(m.cov, "covariance")
    return GaussianInfo(Y @ m.mean, Y)


def to_moments(g: GaussianInfo) -> GaussianMoments:
    P = spd_inverse(g.info_mat, "information matrix")
    return GaussianMoments(P @ g.info_vec, P)
