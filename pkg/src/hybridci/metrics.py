"""Estimator comparison measures."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .gaussian import GaussianMoments, SingularMatrixError, logdet_spd


def _logdet(m: np.ndarray, what: str) -> float:
    try:
        return logdet_spd(m)
    except np.linalg.LinAlgError:
        raise SingularMatrixError(what, float(np.linalg.eigvalsh(0.5 * (m + m.T))[0]),
                                  float(np.linalg.norm(m, 2))) from None


def bhattacharyya_divergence(p1: GaussianMoments, p2: GaussianMoments) -> float:
    if p1.dim != p2.dim:
        raise ValueError(f"dimension mismatch {p1.dim} != {p2.dim}")
    S = 0.5 * (p1.cov + p2.cov)
    d = p1.mean - p2.mean
    try:
        c = linalg.cho_factor(0.5 * (S + S.T), lower=True, check_finite=False)
    except np.linalg.LinAlgError:
        raise SingularMatrixError("average covariance", float(np.linalg.eigvalsh(S)[0]),
                                  float(np.linalg.norm(S, 2))) from None
    maha = float(d @ linalg.cho_solve(c, d, check_finite=False))
    ld = 2.0 * np.log(np.diag(c[0])).sum()
    ld1 = _logdet(p1.cov, "first covariance")
    ld2 = _logdet(p2.cov, "second covariance")
    # the log-det term is >= 0 by concavity; clip the rounding residue
    return maha / 8.0 + max(0.5 * (ld - 0.5 * (ld1 + ld2)), 0.0)


def bhattacharyya(p1: GaussianMoments, p2: GaussianMoments) -> float:
    """Bhattacharyya affinity ``exp(-D)``: 1 for identical Gaussians, toward 0 as they separate."""
    return float(np.exp(-bhattacharyya_divergence(p1, p2)))


def det_ratio(p_cen: np.ndarray, p_dec: np.ndarray, n_d: int | None = None) -> float:
    """``(det P_cen / det P_dec) ** (1 / n_d)`` evaluated through log-determinants."""
    n_d = p_cen.shape[0] if n_d is None else n_d
    if p_cen.shape != p_dec.shape:
        raise ValueError(f"shape mismatch {p_cen.shape} != {p_dec.shape}")
    return float(np.exp((_logdet(p_cen, "centralized covariance")
                         - _logdet(p_dec, "decentralized covariance")) / n_d))


def rmse(estimate_mean, truth) -> float:
    e = np.asarray(estimate_mean, dtype=float)
    t = np.asarray(truth, dtype=float)
    if e.shape != t.shape:
        raise ValueError(f"length mismatch {e.shape} != {t.shape}")
    return float(np.sqrt(np.mean((e - t) ** 2)))


@dataclass(frozen=True)
class StepMetrics:
    bhattacharyya_affinity: float
    det_ratio: float
    rmse: float
    logdet_cov: float

    def __post_init__(self):
        if not 0.0 <= self.bhattacharyya_affinity <= 1.0:
            raise ValueError(f"affinity {self.bhattacharyya_affinity} outside [0, 1]")


def step_metrics(estimate: GaussianMoments, centralized: GaussianMoments, truth) -> StepMetrics:
    return StepMetrics(
        bhattacharyya_affinity=bhattacharyya(estimate, centralized),
        det_ratio=det_ratio(centralized.cov, estimate.cov),
        rmse=rmse(estimate.mean, truth),
        logdet_cov=_logdet(estimate.cov, "estimate covariance"),
    )
