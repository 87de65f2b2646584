"""Testing under an unknown covariate-error covariance.

When ``Cov(delta)`` is unknown it is presumed to be ``kappa * S_w``, a share
``kappa`` of the sample covariance of the surrogates, and the test is run over
a grid of ``kappa``.  Optionally part of the covariance is known and only the
complementary block is scaled.

:class:`TruthSpec` and :func:`asymptotic_numerator` give the almost-sure limit
of the test numerator for a structural model with known population moments;
they are used to validate the sweep on simulated data.
"""

from __future__ import annotations

import math
from collections.abc import Iterable, Sequence
from concurrent.futures import Executor
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import ArrayLike, NDArray

from memv.core import DataError, Dataset, ErrorModel, sample_moments
from memv.inference import (
    DEFAULT_Z_ALPHA,
    DegenerateResidualError,
    TestResult,
    alpha_from_z,
    memv_test,
)

__all__ = [
    "DEFAULT_GRID",
    "DEGENERATE_RTOL",
    "KnownBlock",
    "SweepPoint",
    "SweepCurve",
    "TruthSpec",
    "sample_covariance",
    "build_presumed_S",
    "sweep",
    "asymptotic_numerator",
]

DEFAULT_GRID: tuple[float, ...] = tuple(round(0.01 * k, 2) for k in range(96))
DEGENERATE_RTOL = 1e-10


@dataclass(frozen=True, eq=False)
class KnownBlock:
    """Covariates whose error covariance is known exactly."""

    indices: tuple[int, ...]
    S: NDArray[np.float64]

    def __init__(self, indices: Iterable[int], S: ArrayLike) -> None:
        idx = tuple(int(i) for i in indices)
        S_arr = np.atleast_2d(np.asarray(S, dtype=np.float64))
        if len(set(idx)) != len(idx):
            raise DataError("known block indices must be distinct")
        if S_arr.shape != (len(idx), len(idx)):
            raise DataError(f"known block matrix must be {len(idx)}x{len(idx)}")
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "S", S_arr)


def sample_covariance(d: Dataset) -> NDArray[np.float64]:
    """Unbiased sample covariance of the surrogate covariates."""
    if d.n < 2:
        raise DataError("sample covariance needs at least two observations")
    centered = d.w - d.w.mean(axis=0)
    C = centered.T @ centered / (d.n - 1)
    return 0.5 * (C + C.T)


def build_presumed_S(
    S_w_hat: ArrayLike, kappa: float, known_block: KnownBlock | None = None
) -> NDArray[np.float64]:
    """Presumed error covariance ``kappa * S_w``, or its block-diagonal variant.

    With ``known_block`` the given matrix occupies its index set and
    ``kappa * S_w`` restricted to the remaining covariates fills the
    complement; cross blocks are zero.
    """
    S_w = np.asarray(S_w_hat, dtype=np.float64)
    if not 0.0 <= kappa < 1.0:
        raise DataError(f"kappa must lie in [0, 1), got {kappa}")
    if known_block is None:
        return kappa * S_w
    m = S_w.shape[0]
    known = np.asarray(known_block.indices, dtype=int)
    if known.size and (known.min() < 0 or known.max() >= m):
        raise DataError(f"known block indices out of range for m={m}")
    rest = np.setdiff1d(np.arange(m), known)
    S = np.zeros((m, m))
    S[np.ix_(known, known)] = known_block.S
    S[np.ix_(rest, rest)] = kappa * S_w[np.ix_(rest, rest)]
    return S


@dataclass(frozen=True, eq=False)
class SweepPoint:
    """Test at one presumed ``kappa``.

    ``test`` is ``None`` and ``A_n`` is NaN at degenerate points, where the
    presumed gram ``mean(ww') - S`` is numerically singular or the residual
    distribution is degenerate.
    """

    kappa: float
    test: TestResult | None
    A_n: float
    degenerate: bool
    reason: str = ""

    @property
    def p_value(self) -> float:
        return math.nan if self.test is None else self.test.p_value


@dataclass(frozen=True, eq=False)
class SweepCurve:
    points: tuple[SweepPoint, ...]
    S_w_hat: NDArray[np.float64]
    alpha: float
    accept_intervals: tuple[tuple[float, float], ...] = field(default=())
    reject_intervals: tuple[tuple[float, float], ...] = field(default=())

    @property
    def kappas(self) -> NDArray[np.float64]:
        return np.array([p.kappa for p in self.points])

    @property
    def p_values(self) -> NDArray[np.float64]:
        return np.array([p.p_value for p in self.points])

    @property
    def A_n(self) -> NDArray[np.float64]:
        return np.array([p.A_n for p in self.points])


def _is_degenerate(M: NDArray[np.float64]) -> bool:
    lam = np.linalg.eigvalsh(M)
    return bool(lam[0] < DEGENERATE_RTOL * lam[-1]) or lam[-1] <= 0.0


def _point(
    d: Dataset,
    M_ww: NDArray[np.float64],
    S_w: NDArray[np.float64],
    kappa: float,
    sigma0_sq: float,
    z_alpha: float,
    known_block: KnownBlock | None,
) -> SweepPoint:
    S = build_presumed_S(S_w, kappa, known_block)
    if _is_degenerate(M_ww - S):
        return SweepPoint(kappa, None, math.nan, True, "singular presumed gram")
    try:
        res = memv_test(d, ErrorModel(S, sigma0_sq), z_alpha)
    except DegenerateResidualError as exc:
        return SweepPoint(kappa, None, math.nan, True, str(exc))
    return SweepPoint(kappa, res, res.numerator, False)


def _intervals(points: Sequence[SweepPoint], alpha: float):
    accept: list[tuple[float, float]] = []
    reject: list[tuple[float, float]] = []
    run_start = run_end = None
    run_rejects = None
    for pt in [*points, None]:
        label = None if pt is None or pt.degenerate else pt.p_value < alpha
        if label is not None and label == run_rejects:
            run_end = pt.kappa
            continue
        if run_rejects is not None:
            (reject if run_rejects else accept).append((run_start, run_end))
        run_rejects = label
        if pt is not None:
            run_start = run_end = pt.kappa
    return tuple(accept), tuple(reject)


def sweep(
    d: Dataset,
    sigma0_sq: float,
    grid: Sequence[float] = DEFAULT_GRID,
    z_alpha: float = DEFAULT_Z_ALPHA,
    known_block: KnownBlock | None = None,
    executor: Executor | None = None,
) -> SweepCurve:
    """Run the test at every ``kappa`` of ``grid``.

    Intervals split the non-degenerate grid points into runs with
    ``p < alpha`` (reject) and ``p >= alpha`` (accept), where
    ``alpha = 1 - Phi(z_alpha)``.  Degenerate points break runs.

    ``executor`` optionally evaluates the grid points concurrently; the
    result does not depend on it.
    """
    grid = [float(k) for k in grid]
    if not grid:
        raise DataError("kappa grid is empty")
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise DataError("kappa grid must be strictly increasing")
    if any(not 0.0 <= k < 1.0 for k in grid):
        raise DataError("kappa grid values must lie in [0, 1)")
    if sigma0_sq <= 0:
        raise DataError("sigma0_sq must be positive")

    M_ww, _ = sample_moments(d)
    S_w = sample_covariance(d)
    args = (d, M_ww, S_w)
    if executor is None:
        points = [_point(*args, k, sigma0_sq, z_alpha, known_block) for k in grid]
    else:
        futures = [executor.submit(_point, *args, k, sigma0_sq, z_alpha, known_block) for k in grid]
        points = [f.result() for f in futures]
    alpha = alpha_from_z(z_alpha)
    accept, reject = _intervals(points, alpha)
    return SweepCurve(tuple(points), S_w, alpha, accept, reject)


@dataclass(frozen=True, eq=False)
class TruthSpec:
    """Population description of a structural EIV model.

    ``x`` has independent components ``U[x_low_j, x_high_j]``; ``e`` and
    ``delta`` are centered normal.  Moments are exact.
    """

    c: NDArray[np.float64]
    sigma_sq: float
    S_true: NDArray[np.float64]
    x_low: NDArray[np.float64]
    x_high: NDArray[np.float64]

    def __init__(self, c, sigma_sq, S_true, x_low, x_high) -> None:
        object.__setattr__(self, "c", np.asarray(c, dtype=np.float64))
        object.__setattr__(self, "sigma_sq", float(sigma_sq))
        object.__setattr__(self, "S_true", np.atleast_2d(np.asarray(S_true, dtype=np.float64)))
        object.__setattr__(self, "x_low", np.asarray(x_low, dtype=np.float64))
        object.__setattr__(self, "x_high", np.asarray(x_high, dtype=np.float64))
        if np.linalg.matrix_rank(self.S_x) < self.m:
            raise DataError("Cov(x) must be nonsingular")

    @property
    def m(self) -> int:
        return self.c.size

    @property
    def mean_x(self) -> NDArray[np.float64]:
        return 0.5 * (self.x_low + self.x_high)

    @property
    def var_x(self) -> NDArray[np.float64]:
        return (self.x_high - self.x_low) ** 2 / 12.0

    @property
    def S_x(self) -> NDArray[np.float64]:
        return np.diag(self.var_x)

    @property
    def Exx(self) -> NDArray[np.float64]:
        mu = self.mean_x
        return self.S_x + np.outer(mu, mu)

    @property
    def Eww(self) -> NDArray[np.float64]:
        return self.Exx + self.S_true

    @property
    def S_w(self) -> NDArray[np.float64]:
        return self.S_x + self.S_true

    def residual_moments(self, b: ArrayLike) -> tuple[float, float]:
        """Second and fourth raw moments of ``u = y - b'w``.

        ``u = a'x + e - b'delta`` with ``a = c - b``; built from cumulants,
        since uniform components have zero third and ``-h^4/120`` fourth
        cumulant and the normal part only adds variance.
        """
        b = np.asarray(b, dtype=np.float64)
        a = self.c - b
        k1 = float(a @ self.mean_x)
        k2 = float(a**2 @ self.var_x) + self.sigma_sq + float(b @ self.S_true @ b)
        k4 = float(a**4 @ (-((self.x_high - self.x_low) ** 4) / 120.0))
        m2 = k2 + k1**2
        m4 = k4 + 3 * k2**2 + 6 * k2 * k1**2 + k1**4
        return m2, m4

    def B_inf(self, kappa: float) -> float:
        """Limit of the squared denominator spread ``mean(r^4) - mean(r^2)^2``."""
        Lam = self.Lambda(kappa)
        m2, m4 = self.residual_moments(Lam @ self.c)
        return m4 - m2 * m2

    def Lambda(self, kappa: float) -> NDArray[np.float64]:
        G = self.Eww - kappa * self.S_w
        lam = np.linalg.eigvalsh(G)
        if lam[0] < DEGENERATE_RTOL * np.linalg.eigvalsh(self.Eww)[-1]:
            raise DataError(f"E[ww'] - kappa*S_w is singular at kappa={kappa}")
        return np.linalg.solve(G, self.Exx)


def asymptotic_numerator(
    truth: TruthSpec, kappa: float, sigma0_sq: float
) -> tuple[NDArray[np.float64], float]:
    """Return ``Lambda`` and ``A_inf``, the almost-sure limit of the test numerator.

    With ``Lambda = (E ww' - kappa S_w)^{-1} E xx'`` the ALS estimate tends to
    ``Lambda c`` and

        A_inf = c'(I - Lambda')E xx'(I - Lambda)c
                + c'Lambda'(S - kappa S_w)Lambda c + sigma^2 - sigma0^2.

    The sign of ``A_inf`` gives the limiting p-value: 0 if positive, 1 if
    negative, 1/2 if zero.
    """
    Lam = truth.Lambda(kappa)
    I = np.eye(truth.m)
    a = (I - Lam) @ truth.c
    b = Lam @ truth.c
    A_inf = (
        float(a @ truth.Exx @ a)
        + float(b @ (truth.S_true - kappa * truth.S_w) @ b)
        + truth.sigma_sq
        - sigma0_sq
    )
    return Lam, A_inf
