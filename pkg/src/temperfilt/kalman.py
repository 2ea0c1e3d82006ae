"""Tempered filtering for linear systems with additive Gaussian noise.

For these systems the tempered belief stays Gaussian at every step, so
the filter reduces to closed-form mean and covariance updates in
information form.  The likelihood exponent scales the measurement
information term; the posterior and belief exponents act only through
their product, which divides every covariance.  At the neutral exponents
the updates are exactly the standard Kalman filter.

Covariances are symmetrized after each update and checked for positive
definiteness by Cholesky factorization; a failure raises immediately,
naming the matrix, rather than repairing it silently.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .hmm import TemperingParams

__all__ = [
    "LinearGaussianModel",
    "GaussianBelief",
    "tk_init",
    "tk_step",
    "tk_run",
]


def _spd_inverse(mat: np.ndarray, name: str) -> np.ndarray:
    """Invert via Cholesky, raising with the matrix name on failure."""
    try:
        chol = np.linalg.cholesky(mat)
    except np.linalg.LinAlgError as exc:
        raise ValueError(f"{name} is not symmetric positive definite") from exc
    ident = np.eye(mat.shape[0])
    half = np.linalg.solve(chol, ident)
    return half.T @ half


def _symmetrize(mat: np.ndarray) -> np.ndarray:
    return 0.5 * (mat + mat.T)


@dataclass(frozen=True)
class LinearGaussianModel:
    """x' = A x + w,  y = C x + v, with Gaussian noise and Gaussian start.

    ``sigma_w``, ``sigma_v``, ``sigma_x0`` are the process, measurement,
    and initial-state covariances; ``x0_mean`` the initial mean.
    """

    A: np.ndarray
    C: np.ndarray
    sigma_w: np.ndarray
    sigma_v: np.ndarray
    x0_mean: np.ndarray
    sigma_x0: np.ndarray

    def __post_init__(self):
        for name in ("A", "C", "sigma_w", "sigma_v", "sigma_x0"):
            object.__setattr__(
                self, name, np.atleast_2d(np.asarray(getattr(self, name), float))
            )
        object.__setattr__(
            self, "x0_mean", np.atleast_1d(np.asarray(self.x0_mean, float))
        )
        n, m = self.n_states, self.n_outputs
        shapes = {
            "A": (n, n),
            "C": (m, n),
            "sigma_w": (n, n),
            "sigma_v": (m, m),
            "sigma_x0": (n, n),
        }
        for name, want in shapes.items():
            got = getattr(self, name).shape
            if got != want:
                raise ValueError(f"{name} has shape {got}, expected {want}")
        if self.x0_mean.shape != (n,):
            raise ValueError(
                f"x0_mean has shape {self.x0_mean.shape}, expected ({n},)"
            )
        for name in ("sigma_w", "sigma_v", "sigma_x0"):
            _spd_inverse(getattr(self, name), name)

    @property
    def n_states(self) -> int:
        return self.A.shape[0]

    @property
    def n_outputs(self) -> int:
        return self.C.shape[0]


@dataclass(frozen=True)
class GaussianBelief:
    mean: np.ndarray
    cov: np.ndarray


def _require_positive(lam: TemperingParams) -> None:
    if min(lam.lambda_L, lam.lambda_P, lam.lambda_B) <= 0.0:
        raise ValueError(
            "the closed-form Gaussian filter requires strictly positive exponents"
        )


def tk_init(
    m: LinearGaussianModel, lam: TemperingParams, y0: np.ndarray
) -> GaussianBelief:
    """Belief after the first measurement."""
    _require_positive(lam)
    y0 = np.atleast_1d(np.asarray(y0, float))
    pb = lam.lambda_P * lam.lambda_B
    sigma_v_inv = _spd_inverse(m.sigma_v, "sigma_v")
    sigma_x0_inv = _spd_inverse(m.sigma_x0, "sigma_x0")
    info = sigma_x0_inv + lam.lambda_L * (m.C.T @ sigma_v_inv @ m.C)
    cov = _symmetrize(_spd_inverse(_symmetrize(info), "initial information") / pb)
    mean = cov @ (
        pb * sigma_x0_inv @ m.x0_mean
        + lam.lambda_L * pb * m.C.T @ sigma_v_inv @ y0
    )
    return GaussianBelief(mean=mean, cov=cov)


def tk_step(
    b: GaussianBelief, m: LinearGaussianModel, lam: TemperingParams, y_k: np.ndarray
) -> tuple[GaussianBelief, np.ndarray]:
    """One predict/update cycle; also returns the predicted covariance."""
    _require_positive(lam)
    y_k = np.atleast_1d(np.asarray(y_k, float))
    pb = lam.lambda_P * lam.lambda_B
    sigma_v_inv = _spd_inverse(m.sigma_v, "sigma_v")

    cov_pred = _symmetrize(m.A @ b.cov @ m.A.T + m.sigma_w / pb)
    cov_pred_inv = _spd_inverse(cov_pred, "predicted covariance")
    info = cov_pred_inv / pb + lam.lambda_L * (m.C.T @ sigma_v_inv @ m.C)
    cov = _symmetrize(_spd_inverse(_symmetrize(info), "updated information") / pb)
    mean = cov @ (
        cov_pred_inv @ m.A @ b.mean + lam.lambda_L * pb * m.C.T @ sigma_v_inv @ y_k
    )
    return GaussianBelief(mean=mean, cov=cov), cov_pred


def tk_run(
    m: LinearGaussianModel, lam: TemperingParams, y
) -> list[GaussianBelief]:
    """Filter a whole measurement sequence; one belief per step.

    ``y`` is (T, n_outputs).  A flat sequence reads as T scalar
    measurements for a scalar sensor and as one vector measurement
    otherwise.
    """
    y = np.atleast_1d(np.asarray(y, float))
    if y.ndim == 1:
        y = y[:, None] if m.n_outputs == 1 else y[None, :]
    beliefs = [tk_init(m, lam, y[0])]
    for k in range(1, len(y)):
        belief, _ = tk_step(beliefs[-1], m, lam, y[k])
        beliefs.append(belief)
    return beliefs
