"""Monte Carlo study of the MEM-V test.

Two covariates ``x1 ~ U[0, 1.5]`` and ``x2 ~ U[0, 0.3]`` are observed with
normal errors whose standard deviations are ``x_error_factor`` times the
average covariate levels (0.75, 0.15).  The response error standard deviation
is ``y_error_factor`` times the mean noiseless response.  Optionally a hidden
covariate ``x3 ~ U[0, 0.45 f]`` enters ``y`` but not the fit.  The presumed
variance is ``sigma0^2 = ratio * sigma^2`` with ``ratio = pa_level * U[0.8, 1.2]``.

Every replication draws from its own generator keyed by
``(seed, cell key, replication index)``, so results are independent of the
execution order and of the number of worker processes.
"""

from __future__ import annotations

import hashlib
import itertools
import math
from collections.abc import Sequence
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from numpy.typing import NDArray

from memv.core import Dataset, ErrorModel, als_estimate, r_squared
from memv.inference import DEFAULT_Z_ALPHA, memv_test
from memv.sweep import TruthSpec

__all__ = [
    "X_HIGH",
    "SimConfig",
    "SimTruth",
    "ReplicationRecord",
    "CellSummary",
    "GridSpec",
    "GridResult",
    "replication_rng",
    "generate_dataset",
    "run_replication",
    "run_cell",
    "run_grid",
    "simulate_structural",
    "pearson_or_none",
    "STRATA",
]

X_HIGH = np.array([1.5, 0.3])
X_LEVEL = X_HIGH / 2.0
# mean of the two average covariate levels
X3_LEVEL = float(X_LEVEL.mean())
PA_JITTER = (0.8, 1.2)


@dataclass(frozen=True)
class SimConfig:
    n: int = 100
    x_error_factor: float = 0.05
    y_error_factor: float = 0.05
    pa_level: float = 1.0
    inclusion: bool = False
    f: float = 1.0
    replications: int = 30
    seed: int = 0
    c_true: tuple[float, ...] = (1.0, 1.0)
    x3_coef: float = 1.0
    z_alpha: float = DEFAULT_Z_ALPHA

    def __post_init__(self) -> None:
        if self.n < 4:
            raise ValueError("n must be at least 4")
        if self.replications < 1:
            raise ValueError("replications must be >= 1")
        for name in ("x_error_factor", "y_error_factor", "pa_level", "f"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if len(self.c_true) != X_HIGH.size:
            raise ValueError(f"c_true must have {X_HIGH.size} entries")

    @property
    def cell_key(self) -> int:
        """Stable integer identifying the data-generating settings of the cell."""
        text = repr(
            (
                self.n,
                float(self.x_error_factor),
                float(self.y_error_factor),
                float(self.pa_level),
                bool(self.inclusion),
                float(self.f),
                tuple(float(c) for c in self.c_true),
                float(self.x3_coef),
            )
        )
        return int.from_bytes(hashlib.sha256(text.encode()).digest()[:8], "little")

    @property
    def S_true(self) -> NDArray[np.float64]:
        return np.diag((self.x_error_factor * X_LEVEL) ** 2)


@dataclass(frozen=True, eq=False)
class SimTruth:
    x: NDArray[np.float64]
    e: NDArray[np.float64]
    delta: NDArray[np.float64]
    x3: NDArray[np.float64] | None
    c_true: NDArray[np.float64]
    x3_coef: float
    sigma_sq_true: float
    S_true: NDArray[np.float64]
    sigma0_sq: float
    pa_ratio: float

    @property
    def y0(self) -> NDArray[np.float64]:
        y0 = self.x @ self.c_true
        if self.x3 is not None:
            y0 = y0 + self.x3_coef * self.x3
        return y0


def replication_rng(seed: int, cell_key: int, replication_index: int) -> np.random.Generator:
    ss = np.random.SeedSequence([int(seed) & (2**64 - 1), cell_key, int(replication_index)])
    return np.random.Generator(np.random.PCG64(ss))


def generate_dataset(cfg: SimConfig, replication_index: int) -> tuple[Dataset, SimTruth]:
    rng = replication_rng(cfg.seed, cfg.cell_key, replication_index)
    n = cfg.n
    x = rng.uniform(0.0, X_HIGH, size=(n, X_HIGH.size))
    delta = rng.normal(0.0, 1.0, size=(n, X_HIGH.size)) * (cfg.x_error_factor * X_LEVEL)
    c = np.asarray(cfg.c_true, dtype=np.float64)
    y0 = x @ c
    x3 = None
    if cfg.inclusion:
        x3 = rng.uniform(0.0, X3_LEVEL * cfg.f, size=n)
        y0 = y0 + cfg.x3_coef * x3
    sigma = cfg.y_error_factor * float(np.mean(y0))
    e = rng.normal(0.0, 1.0, size=n) * sigma
    ratio = cfg.pa_level * rng.uniform(*PA_JITTER)
    sigma_sq = sigma * sigma
    truth = SimTruth(
        x=x,
        e=e,
        delta=delta,
        x3=x3,
        c_true=c,
        x3_coef=cfg.x3_coef,
        sigma_sq_true=sigma_sq,
        S_true=cfg.S_true,
        sigma0_sq=ratio * sigma_sq,
        pa_ratio=ratio,
    )
    return Dataset(y0 + e, x + delta, ("x1", "x2")), truth


@dataclass(frozen=True)
class ReplicationRecord:
    n: int
    x_error_factor: float
    y_error_factor: float
    pa_level: float
    inclusion: bool
    f: float
    replication: int
    pa_ratio: float
    h0_true: bool
    reject: bool
    p_value: float
    T: float
    r2: float
    sigma_hat_sq: float
    se_hat: float

    @property
    def type2(self) -> bool:
        return (not self.h0_true) and (not self.reject)

    @property
    def stratum(self) -> str:
        if self.inclusion:
            return "inclusion"
        return "no_h0_true" if self.h0_true else "no_h0_false"


def run_replication(cfg: SimConfig, replication_index: int) -> ReplicationRecord:
    d, truth = generate_dataset(cfg, replication_index)
    res = memv_test(d, ErrorModel(truth.S_true, truth.sigma0_sq), cfg.z_alpha)
    ols = als_estimate(d, ErrorModel.zero(d.m))
    # hidden covariate means the model is invalid whatever the variances are
    h0_true = (not cfg.inclusion) and truth.sigma_sq_true <= truth.sigma0_sq
    return ReplicationRecord(
        n=cfg.n,
        x_error_factor=cfg.x_error_factor,
        y_error_factor=cfg.y_error_factor,
        pa_level=cfg.pa_level,
        inclusion=cfg.inclusion,
        f=cfg.f,
        replication=replication_index,
        pa_ratio=truth.pa_ratio,
        h0_true=h0_true,
        reject=res.reject,
        p_value=res.p_value,
        T=res.T,
        r2=r_squared(d, ols.c_hat),
        sigma_hat_sq=res.theta.sigma_hat_sq,
        se_hat=res.se_hat,
    )


def _rate(flags: Sequence[bool]) -> float | None:
    return float(np.mean(flags)) if len(flags) else None


@dataclass(frozen=True)
class CellSummary:
    """Aggregates over the replications of one cell.

    ``type1_rate`` is the rejection rate among replications with H0 true and
    ``type2_rate`` the non-rejection rate among those with H0 false; either
    is ``None`` when the cell has no replication of that kind.
    """

    config: SimConfig
    rejection_rate: float
    type1_rate: float | None
    type2_rate: float | None
    mean_r2: float
    mean_p: float
    records: tuple[ReplicationRecord, ...] = field(repr=False)


def summarize(cfg: SimConfig, records: Sequence[ReplicationRecord]) -> CellSummary:
    return CellSummary(
        config=cfg,
        rejection_rate=float(np.mean([r.reject for r in records])),
        type1_rate=_rate([r.reject for r in records if r.h0_true]),
        type2_rate=_rate([not r.reject for r in records if not r.h0_true]),
        mean_r2=float(np.mean([r.r2 for r in records])),
        mean_p=float(np.mean([r.p_value for r in records])),
        records=tuple(records),
    )


def run_cell(cfg: SimConfig) -> CellSummary:
    return summarize(cfg, [run_replication(cfg, i) for i in range(cfg.replications)])


@dataclass(frozen=True)
class GridSpec:
    """Cartesian grid of cells.

    ``f`` is a grid factor for cells without inclusion as well, where it only
    changes the RNG key; this yields 3*3*3*3*2 = 162 cells per sample size.
    """

    ns: tuple[int, ...] = (30, 100, 500, 5000)
    x_error_factors: tuple[float, ...] = (0.01, 0.05, 0.2)
    y_error_factors: tuple[float, ...] = (0.01, 0.05, 0.2)
    pa_levels: tuple[float, ...] = (0.5, 1.0, 2.0)
    fs: tuple[float, ...] = (0.1, 1.0, 3.0)
    inclusions: tuple[bool, ...] = (False, True)
    replications: int = 30
    c_true: tuple[float, ...] = (1.0, 1.0)
    x3_coef: float = 1.0
    z_alpha: float = DEFAULT_Z_ALPHA

    def configs(self, seed: int) -> list[SimConfig]:
        out = []
        for n, xf, yf, pa, f, inc in itertools.product(
            self.ns, self.x_error_factors, self.y_error_factors, self.pa_levels, self.fs, self.inclusions
        ):
            out.append(
                SimConfig(
                    n=int(n),
                    x_error_factor=float(xf),
                    y_error_factor=float(yf),
                    pa_level=float(pa),
                    inclusion=bool(inc),
                    f=float(f),
                    replications=self.replications,
                    seed=int(seed),
                    c_true=tuple(float(c) for c in self.c_true),
                    x3_coef=float(self.x3_coef),
                    z_alpha=float(self.z_alpha),
                )
            )
        return out

    def to_dict(self) -> dict:
        return asdict(self)


def pearson_or_none(a: Sequence[float], b: Sequence[float]) -> float | None:
    """Pearson correlation, or ``None`` when either input is constant."""
    x = np.asarray(a, dtype=np.float64)
    y = np.asarray(b, dtype=np.float64)
    if x.size < 2 or np.ptp(x) == 0.0 or np.ptp(y) == 0.0:
        return None
    xc = x - x.mean()
    yc = y - y.mean()
    denom = math.sqrt(float(xc @ xc) * float(yc @ yc))
    if denom == 0.0:
        return None
    return float(xc @ yc) / denom


STRATA = ("all", "inclusion", "no_h0_true", "no_h0_false")


def _stratum_stats(records: Sequence[ReplicationRecord]) -> dict[str, float | None]:
    if not records:
        return dict.fromkeys(
            ("rejection_rate", "mean_r2", "type2_rate", "mean_p", "corr_p_reject", "corr_p_r2", "corr_p_type2")
        )
    p = [r.p_value for r in records]
    return {
        "rejection_rate": float(np.mean([r.reject for r in records])),
        "mean_r2": float(np.mean([r.r2 for r in records])),
        "type2_rate": _rate([not r.reject for r in records if not r.h0_true]),
        "mean_p": float(np.mean(p)),
        "corr_p_reject": pearson_or_none(p, [float(r.reject) for r in records]),
        "corr_p_r2": pearson_or_none(p, [r.r2 for r in records]),
        "corr_p_type2": pearson_or_none(p, [float(r.type2) for r in records]),
    }


@dataclass(frozen=True)
class GridResult:
    cells: tuple[CellSummary, ...]

    @property
    def records(self) -> list[ReplicationRecord]:
        return [r for c in self.cells for r in c.records]

    @property
    def ns(self) -> list[int]:
        return sorted({c.config.n for c in self.cells})

    def select(self, n: int | None = None, stratum: str = "all") -> list[ReplicationRecord]:
        recs = self.records
        if n is not None:
            recs = [r for r in recs if r.n == n]
        if stratum != "all":
            recs = [r for r in recs if r.stratum == stratum]
        return recs

    def table1(self) -> dict[tuple[str, str], dict[int, float | None]]:
        """Rows keyed by (indicator, stratum), columns by sample size."""
        rows: dict[tuple[str, str], dict[int, float | None]] = {}
        for n in self.ns:
            for stratum in STRATA:
                for key, value in _stratum_stats(self.select(n, stratum)).items():
                    rows.setdefault((key, stratum), {})[n] = value
        return rows

    def table2(self) -> list[tuple[str, float, dict[str, float | None]]]:
        """Averages by error factors (all cells) and by ``f`` (inclusion cells)."""
        recs = self.records
        out = []
        for factor, attr, pool in (
            ("y_error_factor", "y_error_factor", recs),
            ("x_error_factor", "x_error_factor", recs),
            ("f", "f", [r for r in recs if r.inclusion]),
        ):
            for level in sorted({getattr(r, attr) for r in pool}):
                sub = [r for r in pool if getattr(r, attr) == level]
                stats = _stratum_stats(sub)
                out.append(
                    (
                        factor,
                        level,
                        {k: stats[k] for k in ("rejection_rate", "mean_r2", "type2_rate", "mean_p")},
                    )
                )
        return out


def run_grid(spec: GridSpec, seed: int, workers: int = 1) -> GridResult:
    """Run every cell of ``spec``; ``workers > 1`` uses a process pool."""
    configs = spec.configs(seed)
    if not configs:
        raise ValueError("simulation grid is empty")
    if workers <= 1:
        cells = [run_cell(c) for c in configs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            cells = list(pool.map(run_cell, configs, chunksize=max(1, len(configs) // (4 * workers))))
    return GridResult(tuple(cells))


def simulate_structural(truth: TruthSpec, n: int, rng: np.random.Generator) -> Dataset:
    """Draw ``n`` observations from the structural model described by ``truth``."""
    m = truth.m
    x = rng.uniform(truth.x_low, truth.x_high, size=(n, m))
    lam, V = np.linalg.eigh(truth.S_true)
    root = V * np.sqrt(np.clip(lam, 0.0, None))
    delta = rng.standard_normal((n, m)) @ root.T
    e = rng.standard_normal(n) * math.sqrt(truth.sigma_sq)
    return Dataset(x @ truth.c + e, x + delta)

