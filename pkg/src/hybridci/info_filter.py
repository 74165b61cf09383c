"""Information-form Kalman filter: prediction, measurement increments, fusion."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .field_model import FieldModel
from .gaussian import GaussianInfo, SingularMatrixError, spd_inverse, symmetrize


@dataclass(frozen=True)
class InfoIncrement:
    """Information contributed by one observation: ``H^T R^-1 z`` and ``H^T R^-1 H``."""

    di: np.ndarray
    dI: np.ndarray

    def __post_init__(self):
        di = np.atleast_1d(np.asarray(self.di, dtype=float))
        dI = np.atleast_2d(np.asarray(self.dI, dtype=float))
        if dI.shape != (di.size, di.size):
            raise ValueError(f"dI shape {dI.shape} does not match di length {di.size}")
        object.__setattr__(self, "di", di)
        object.__setattr__(self, "dI", dI)

    @classmethod
    def zero(cls, dim: int) -> "InfoIncrement":
        return cls(np.zeros(dim), np.zeros((dim, dim)))


@dataclass(frozen=True)
class ObservationModel:
    H: np.ndarray
    R: np.ndarray

    def __post_init__(self):
        H = np.atleast_2d(np.asarray(self.H, dtype=float))
        R = np.atleast_2d(np.asarray(self.R, dtype=float))
        if R.shape != (H.shape[0], H.shape[0]):
            raise ValueError(f"R must be {H.shape[0]}x{H.shape[0]}, got {R.shape}")
        if not np.allclose(R, R.T):
            raise ValueError("R must be symmetric")
        if np.linalg.eigvalsh(R)[0] <= 0:
            raise ValueError("R must be positive definite")
        object.__setattr__(self, "H", H)
        object.__setattr__(self, "R", R)

    @classmethod
    def point_sensor(cls, n: int, index: int, std: float) -> "ObservationModel":
        """One-hot sensor reading state ``index`` with noise std ``std``."""
        H = np.zeros((1, n))
        H[0, index] = 1.0
        return cls(H, np.array([[std**2]]))

    def sample(self, x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        noise = np.linalg.cholesky(self.R) @ rng.standard_normal(self.R.shape[0])
        return self.H @ x + noise


def predict(prior: GaussianInfo, model: FieldModel) -> GaussianInfo:
    """Propagate an information-form belief through the plant.

    Runs in moment form (``P- = A P A^T + Q``) so that ``A`` need not be
    invertible. A singular prior information matrix falls back to the
    information-form recursion, which does need an invertible ``A``.
    """
    A, Q = model.A, model.q_eff
    if prior.dim != model.dim:
        raise ValueError(f"prior dimension {prior.dim} != model dimension {model.dim}")
    try:
        P = spd_inverse(prior.info_mat, "prior information matrix")
    except SingularMatrixError:
        return _predict_singular(prior, A, Q)
    mean = P @ prior.info_vec
    P_pred = A @ P @ A.T + Q
    Y_pred = spd_inverse(P_pred, "predicted covariance")
    return GaussianInfo(Y_pred @ (A @ mean), Y_pred)


def _predict_singular(prior: GaussianInfo, A: np.ndarray, Q: np.ndarray) -> GaussianInfo:
    try:
        A_inv = np.linalg.inv(A)
    except np.linalg.LinAlgError:
        raise SingularMatrixError("prior information matrix (with singular A)", 0.0, 1.0) from None
    M = symmetrize(A_inv.T @ prior.info_mat @ A_inv)
    Q_inv = spd_inverse(Q, "process noise covariance")
    # Omega = M (M + Q^-1)^-1
    Omega = np.linalg.solve(M + Q_inv, M).T
    n = M.shape[0]
    Y_pred = symmetrize(M - Omega @ M)
    y_pred = (np.eye(n) - Omega) @ (A_inv.T @ prior.info_vec)
    return GaussianInfo(y_pred, Y_pred)


def local_increment(obs: ObservationModel, z) -> InfoIncrement:
    z = np.atleast_1d(np.asarray(z, dtype=float))
    if z.shape != (obs.H.shape[0],):
        raise ValueError(f"observation has shape {z.shape}, expected ({obs.H.shape[0]},)")
    R_inv = spd_inverse(obs.R, "measurement noise covariance")
    HtRi = obs.H.T @ R_inv
    return InfoIncrement(HtRi @ z, symmetrize(HtRi @ obs.H))


def centralized_update(pred: GaussianInfo, incs: Sequence[InfoIncrement]) -> GaussianInfo:
    y = pred.info_vec.copy()
    Y = pred.info_mat.copy()
    for inc in incs:
        if inc.di.shape != y.shape:
            raise ValueError(f"increment dimension {inc.di.size} != belief dimension {y.size}")
        y += inc.di
        Y += inc.dI
    return GaussianInfo(y, Y)
