"""Sandwich variance and the one-sided Wald test of ``H0: sigma^2 <= sigma0^2``.

Rejecting H0 means the residual variance of ``y`` is larger than the presumed
measurement error can explain, i.e. the linear model misses covariates (or
the presumed error levels are too small).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from statistics import NormalDist

import numpy as np
from numpy.typing import ArrayLike, NDArray

from memv.core import DataError, Dataset, ErrorModel, ThetaEstimate, als_estimate, sample_moments, symmetric_pinv

__all__ = [
    "DEFAULT_Z_ALPHA",
    "DegenerateResidualError",
    "EstimatingFunctionValue",
    "SandwichEstimate",
    "TestResult",
    "eval_estimating_functions",
    "estimating_function_matrix",
    "sandwich",
    "memv_test",
    "normal_cdf",
    "normal_sf",
    "z_from_alpha",
    "alpha_from_z",
    "suggest_sigma0",
]

DEFAULT_Z_ALPHA = 3.0
DEGENERATE_RTOL = 1e-14


class DegenerateResidualError(ArithmeticError):
    """Raised when the residual fourth-moment spread is numerically zero."""


def normal_cdf(t: float) -> float:
    """Standard normal CDF, accurate in both tails."""
    return 0.5 * math.erfc(-t / math.sqrt(2.0))


def normal_sf(t: float) -> float:
    """Upper tail ``1 - Phi(t)`` without cancellation for large ``t``."""
    return 0.5 * math.erfc(t / math.sqrt(2.0))


def z_from_alpha(alpha: float) -> float:
    """Critical value ``z`` with ``1 - Phi(z) = alpha``."""
    if not 0.0 < alpha < 0.5:
        raise ValueError(f"alpha must lie in (0, 0.5), got {alpha}")
    return NormalDist().inv_cdf(1.0 - alpha)


def alpha_from_z(z_alpha: float) -> float:
    return normal_sf(z_alpha)


@dataclass(frozen=True, eq=False)
class EstimatingFunctionValue:
    s_c: NDArray[np.float64]
    s_sigma2: float

    @property
    def s_theta(self) -> NDArray[np.float64]:
        return np.append(self.s_c, self.s_sigma2)


def eval_estimating_functions(
    y: float, w: ArrayLike, c: ArrayLike, sigma_sq: float, S: ArrayLike
) -> EstimatingFunctionValue:
    """Evaluate the ALS estimating functions at a single observation.

    ``s_c = w y - (w w' - S) c`` and ``s_sigma2 = (y - c'w)^2 - c'Sc - sigma^2``.
    """
    w = np.atleast_1d(np.asarray(w, dtype=np.float64))
    c = np.atleast_1d(np.asarray(c, dtype=np.float64))
    S = np.atleast_2d(np.asarray(S, dtype=np.float64))
    if not (w.shape == c.shape and S.shape == (w.size, w.size)):
        raise DataError("dimension mismatch between w, c and S")
    s_c = w * y - (np.outer(w, w) - S) @ c
    r = y - float(c @ w)
    s_sigma2 = r * r - float(c @ S @ c) - sigma_sq
    return EstimatingFunctionValue(s_c=s_c, s_sigma2=s_sigma2)


def estimating_function_matrix(
    d: Dataset, S: NDArray[np.float64], c: ArrayLike, sigma_sq: float
) -> NDArray[np.float64]:
    """Row ``i`` holds ``s_theta(y_i, w_i; c, sigma^2)``; shape (n, m+1)."""
    c = np.asarray(c, dtype=np.float64)
    r = d.y - d.w @ c
    s_c = d.w * r[:, None] + (S @ c)[None, :]
    s_sigma2 = r * r - float(c @ S @ c) - sigma_sq
    return np.column_stack([s_c, s_sigma2])


@dataclass(frozen=True, eq=False)
class SandwichEstimate:
    """Sandwich covariance ``A^+ B A^+`` of the stacked estimator.

    ``Sigma_hat`` is the asymptotic covariance of ``sqrt(n)(theta_hat - theta)``;
    ``se_hat`` is the resulting standard error of ``sigma_hat^2``.
    """

    A_hat: NDArray[np.float64]
    B_hat: NDArray[np.float64]
    Sigma_hat: NDArray[np.float64]
    v_sigma2_sq: float
    se_hat: float
    gram_singular: bool = False


def sandwich(d: Dataset, em: ErrorModel, theta: ThetaEstimate) -> SandwichEstimate:
    M_ww, _ = sample_moments(d)
    m = d.m
    A = np.zeros((m + 1, m + 1))
    A[:m, :m] = M_ww - em.S
    A[m, m] = 1.0
    A_pinv = np.zeros_like(A)
    A_pinv[:m, :m], singular = symmetric_pinv(A[:m, :m])
    A_pinv[m, m] = 1.0

    s = estimating_function_matrix(d, em.S, theta.c_hat, theta.sigma_hat_sq)
    B = s.T @ s / d.n
    B = 0.5 * (B + B.T)
    Sigma = A_pinv @ B @ A_pinv
    # block-diagonal A^+ leaves the sigma^2 entry of B untouched
    v2 = float(B[m, m])
    return SandwichEstimate(
        A_hat=A,
        B_hat=B,
        Sigma_hat=Sigma,
        v_sigma2_sq=v2,
        se_hat=math.sqrt(v2 / d.n),
        gram_singular=singular or theta.gram_singular,
    )


@dataclass(frozen=True, eq=False)
class TestResult:
    """Outcome of one MEM-V test.

    Attributes
    ----------
    T : float
        Wald statistic ``(RSS/n - sigma0^2 - c'Sc) / (sqrt(bracket/n))`` where
        ``bracket = mean(r^4) - mean(r^2)^2``.  ``-inf`` when the residual
        spread vanishes and the numerator is negative.
    p_value : float
        One-sided ``1 - Phi(T)``.
    reject : bool
        ``sigma_hat^2 > sigma0^2 + z_alpha * se_hat``.
    bracket_gap : float
        ``v_sigma2^2 - bracket``; zero up to rounding whenever
        ``sigma_tilde^2 >= 0``.
    """

    __test__ = False  # not a pytest class

    T: float
    p_value: float
    reject: bool
    z_alpha: float
    theta: ThetaEstimate
    se_hat: float
    sigma0_sq: float
    bracket: float
    bracket_gap: float
    numerator: float
    n: int

    @property
    def alpha(self) -> float:
        return alpha_from_z(self.z_alpha)


def memv_test(d: Dataset, em: ErrorModel, z_alpha: float = DEFAULT_Z_ALPHA) -> TestResult:
    """Fit by ALS under ``em`` and test ``H0: sigma^2 <= em.sigma0_sq``.

    Raises
    ------
    DegenerateResidualError
        If ``mean(r^4) - mean(r^2)^2`` is numerically zero while the
        numerator of ``T`` is nonnegative, so no direction can be inferred.
    """
    if em.sigma0_sq <= 0.0:
        raise DataError("sigma0_sq must be positive to run the test")
    if not (z_alpha > 0 and math.isfinite(z_alpha)):
        raise DataError(f"z_alpha must be positive, got {z_alpha}")
    if d.n < d.m + 2:
        raise DataError(f"need n >= m + 2 observations, got n={d.n}, m={d.m}")

    theta = als_estimate(d, em)
    sw = sandwich(d, em, theta)
    r = d.y - d.w @ theta.c_hat
    r2 = r * r
    mean_r2 = theta.rss / d.n
    bracket = float(np.mean(r2 * r2)) - mean_r2 * mean_r2
    # centered form is the numerically safer way to get the same quantity
    bracket_centered = float(np.mean((r2 - mean_r2) ** 2))
    numerator = theta.sigma_tilde_sq - em.sigma0_sq

    if bracket_centered < DEGENERATE_RTOL * max(1.0, mean_r2 * mean_r2):
        if numerator >= 0.0:
            raise DegenerateResidualError("degenerate residual distribution")
        T = -math.inf
    else:
        T = numerator / math.sqrt(bracket_centered / d.n)

    reject = theta.sigma_hat_sq > em.sigma0_sq + z_alpha * sw.se_hat
    return TestResult(
        T=T,
        p_value=normal_sf(T),
        reject=bool(reject),
        z_alpha=float(z_alpha),
        theta=theta,
        se_hat=sw.se_hat,
        sigma0_sq=em.sigma0_sq,
        bracket=bracket,
        bracket_gap=sw.v_sigma2_sq - bracket_centered,
        numerator=numerator,
        n=d.n,
    )


def suggest_sigma0(d: Dataset, theta: ThetaEstimate) -> float:
    """Rule-of-thumb presumed response variance ``RSS / (n - m)``."""
    if d.n <= d.m:
        raise DataError(f"need n > m, got n={d.n}, m={d.m}")
    return theta.rss / (d.n - d.m)
