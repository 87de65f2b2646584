"""Data model and adjusted least squares (ALS) fit for the linear EIV model.

The model is ``y = c'x + e`` with covariates observed only through
surrogates ``w = x + delta``.  ``Cov(delta) = S`` is presumed known, ``e``
may contain misspecification on top of pure measurement error.  There is no
intercept term; append a constant column with a zero row/column in ``S`` if
one is wanted.
"""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike, NDArray

__all__ = [
    "DataError",
    "Dataset",
    "ErrorModel",
    "ThetaEstimate",
    "sample_moments",
    "symmetric_pinv",
    "als_estimate",
    "r_squared",
]

PINV_RTOL = 1e-12
SYMMETRY_RTOL = 1e-10
PSD_RTOL = 1e-10


class DataError(ValueError):
    """Invalid input data: shape mismatch, non-finite values, bad matrices."""


def _readonly(a: NDArray[np.float64]) -> NDArray[np.float64]:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Dataset:
    """Observed sample ``(y_i, w_i)``, i = 1..n.

    Parameters
    ----------
    y : array-like, shape (n,)
        Response.
    w : array-like, shape (n, m) or (n,)
        Surrogate covariates, one row per observation.  A 1-d ``w`` is
        treated as a single covariate.
    column_names : sequence of str, optional
        Labels for the ``m`` columns of ``w``.
    """

    y: NDArray[np.float64]
    w: NDArray[np.float64]
    column_names: tuple[str, ...] | None = None

    def __init__(
        self,
        y: ArrayLike,
        w: ArrayLike,
        column_names: Sequence[str] | None = None,
    ) -> None:
        y_arr = np.array(y, dtype=np.float64)
        w_arr = np.array(w, dtype=np.float64)
        if y_arr.ndim != 1:
            raise DataError(f"y must be one-dimensional, got shape {y_arr.shape}")
        if w_arr.ndim == 1:
            w_arr = w_arr.reshape(-1, 1)
        if w_arr.ndim != 2:
            raise DataError(f"w must be two-dimensional, got shape {w_arr.shape}")
        n, m = w_arr.shape
        if n < 1 or m < 1:
            raise DataError("dataset needs at least one observation and one covariate")
        if y_arr.shape[0] != n:
            raise DataError(f"y has {y_arr.shape[0]} rows but w has {n}")
        if not (np.all(np.isfinite(y_arr)) and np.all(np.isfinite(w_arr))):
            raise DataError("dataset contains NaN or infinite values")
        names = None
        if column_names is not None:
            names = tuple(str(c) for c in column_names)
            if len(names) != m:
                raise DataError(f"expected {m} column names, got {len(names)}")
        object.__setattr__(self, "y", _readonly(y_arr))
        object.__setattr__(self, "w", _readonly(w_arr))
        object.__setattr__(self, "column_names", names)

    @property
    def n(self) -> int:
        return self.w.shape[0]

    @property
    def m(self) -> int:
        return self.w.shape[1]

    def scaled(self, y_factor: float = 1.0, w_factors: ArrayLike | None = None) -> Dataset:
        """Return a copy with ``y -> y_factor*y`` and ``w -> w @ diag(w_factors)``."""
        w = self.w if w_factors is None else self.w * np.asarray(w_factors, dtype=np.float64)
        return Dataset(self.y * y_factor, w, self.column_names)


@dataclass(frozen=True, eq=False)
class ErrorModel:
    """Presumed covariate-error covariance ``S`` and response-variance bound.

    ``S`` must be symmetric positive semidefinite; zero rows and columns mark
    covariates observed without error.  ``sigma0_sq`` may be zero for fitting
    only, but the validity test requires it to be positive.
    """

    S: NDArray[np.float64]
    sigma0_sq: float = 0.0

    def __init__(self, S: ArrayLike, sigma0_sq: float = 0.0) -> None:
        S_arr = np.array(S, dtype=np.float64)
        if S_arr.ndim == 0:
            S_arr = S_arr.reshape(1, 1)
        if S_arr.ndim != 2 or S_arr.shape[0] != S_arr.shape[1]:
            raise DataError(f"S must be a square matrix, got shape {S_arr.shape}")
        if not np.all(np.isfinite(S_arr)):
            raise DataError("S contains NaN or infinite values")
        scale = float(np.max(np.abs(S_arr))) if S_arr.size else 0.0
        if np.max(np.abs(S_arr - S_arr.T), initial=0.0) > SYMMETRY_RTOL * max(scale, 1e-300):
            raise DataError("S is not symmetric")
        S_arr = 0.5 * (S_arr + S_arr.T)
        if scale > 0:
            eig = np.linalg.eigvalsh(S_arr)
            if eig[0] < -PSD_RTOL * max(eig[-1], 0.0):
                raise DataError("S is not positive semidefinite")
        sigma0_sq = float(sigma0_sq)
        if not np.isfinite(sigma0_sq) or sigma0_sq < 0:
            raise DataError(f"sigma0_sq must be a nonnegative finite number, got {sigma0_sq}")
        object.__setattr__(self, "S", _readonly(S_arr))
        object.__setattr__(self, "sigma0_sq", sigma0_sq)

    @classmethod
    def zero(cls, m: int, sigma0_sq: float = 0.0) -> ErrorModel:
        return cls(np.zeros((m, m)), sigma0_sq)

    @classmethod
    def from_stddevs(cls, stddevs: ArrayLike, sigma0_sq: float = 0.0) -> ErrorModel:
        """Independent covariate errors: ``S = diag(tau_1^2, ..., tau_m^2)``."""
        tau = np.atleast_1d(np.asarray(stddevs, dtype=np.float64))
        if np.any(tau < 0):
            raise DataError("standard deviations must be nonnegative")
        return cls(np.diag(tau**2), sigma0_sq)

    @property
    def m(self) -> int:
        return self.S.shape[0]


@dataclass(frozen=True, eq=False)
class ThetaEstimate:
    """Result of one ALS fit.

    ``sigma_tilde_sq`` is the raw moment estimate and can be negative when the
    presumed ``S`` is too large; ``sigma_hat_sq`` is its clamp at zero.
    ``gram_singular`` records that the pseudo-inverse dropped at least one
    eigenvalue of ``mean(ww') - S``.
    """

    c_hat: NDArray[np.float64]
    sigma_tilde_sq: float
    sigma_hat_sq: float
    rss: float
    gram_singular: bool = False

    @property
    def theta(self) -> NDArray[np.float64]:
        """Stacked parameter vector ``(c_hat, sigma_hat_sq)``."""
        return np.append(self.c_hat, self.sigma_hat_sq)


def sample_moments(d: Dataset) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """Return ``mean(w w')`` and ``mean(w y)`` over the sample."""
    M_ww = d.w.T @ d.w / d.n
    M_ww = 0.5 * (M_ww + M_ww.T)
    m_wy = d.w.T @ d.y / d.n
    return M_ww, m_wy


def symmetric_pinv(
    D: NDArray[np.float64], rtol: float = PINV_RTOL
) -> tuple[NDArray[np.float64], bool]:
    """Moore-Penrose inverse of a symmetric matrix via its eigendecomposition.

    Eigenvalues with ``|lambda| <= rtol * max|lambda|`` are treated as zero.
    Returns the pseudo-inverse and whether any eigenvalue was dropped.
    """
    lam, V = np.linalg.eigh(D)
    top = np.max(np.abs(lam), initial=0.0)
    keep = np.abs(lam) > rtol * top
    if top == 0.0:
        keep[:] = False
    inv = np.zeros_like(lam)
    inv[keep] = 1.0 / lam[keep]
    P = (V * inv) @ V.T
    return 0.5 * (P + P.T), bool(not np.all(keep))


def als_estimate(d: Dataset, em: ErrorModel) -> ThetaEstimate:
    """Adjusted least squares estimate of ``c`` and the response-error variance.

    ``c_hat = (mean(ww') - S)^+ mean(wy)``, ``RSS = sum (y - c_hat'w)^2`` and
    ``sigma_tilde^2 = RSS/n - c_hat' S c_hat``.
    """
    if em.m != d.m:
        raise DataError(f"S is {em.m}x{em.m} but the dataset has {d.m} covariates")
    M_ww, m_wy = sample_moments(d)
    P, singular = symmetric_pinv(M_ww - em.S)
    c_hat = P @ m_wy
    resid = d.y - d.w @ c_hat
    rss = float(resid @ resid)
    sigma_tilde_sq = rss / d.n - float(c_hat @ em.S @ c_hat)
    if not (np.all(np.isfinite(c_hat)) and np.isfinite(sigma_tilde_sq)):
        raise DataError("non-finite estimate; check the data scale")
    return ThetaEstimate(
        c_hat=_readonly(c_hat),
        sigma_tilde_sq=sigma_tilde_sq,
        sigma_hat_sq=max(0.0, sigma_tilde_sq),
        rss=rss,
        gram_singular=singular,
    )


def r_squared(d: Dataset, c_hat: ArrayLike) -> float:
    """Centered coefficient of determination ``1 - RSS / sum (y - ybar)^2``.

    Can be negative for poor fits since the model has no intercept.
    """
    c = np.asarray(c_hat, dtype=np.float64)
    if c.shape != (d.m,):
        raise DataError(f"coefficient vector must have length {d.m}")
    tss = float(np.sum((d.y - d.y.mean()) ** 2))
    if tss <= 0.0:
        raise DataError("response is constant; R^2 is undefined")
    resid = d.y - d.w @ c
    return 1.0 - float(resid @ resid) / tss
