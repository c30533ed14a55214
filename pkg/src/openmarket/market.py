"""Price-path simulation, CSV persistence and simple-return increments.

Three model kinds are supported:

* ``gbm``    -- correlated geometric Brownian motion, stepped exactly in log space.
* ``atlas``  -- rank-based diffusion whose drift and volatility depend on the
  current capitalization rank, stepped by Euler-Maruyama in log space with the
  rank frozen at the left endpoint of each step.
* ``factor`` -- single-factor market whose drift is tied to the covariance with
  the top-n market portfolio (a synthetic CAPM market), Euler in log space.

Every path ``i`` of an ensemble draws from its own generator seeded with
``(seed, i)``, so ensembles are reproducible and order-independent.
"""

from __future__ import annotations

import csv
import os
import tempfile
from dataclasses import dataclass, field
from typing import Iterator, Optional

import numpy as np

from .errors import OpenMarketError, SimulationError

__all__ = [
    "TimeGrid",
    "ModelSpec",
    "MarketPath",
    "IncrementSeries",
    "simulate",
    "simulate_ensemble",
    "load_paths",
    "write_paths",
    "increments",
    "psd_sqrt",
]


@dataclass(frozen=True)
class TimeGrid:
    """Strictly increasing time points starting at 0 (years)."""

    t: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.t, dtype=float)
        if t.ndim != 1 or t.size < 2:
            raise OpenMarketError("time grid needs at least 2 points")
        if t[0] != 0.0:
            raise OpenMarketError(f"time grid must start at 0, got {t[0]!r}")
        if not np.all(np.diff(t) > 0):
            raise OpenMarketError("time grid must be strictly increasing")
        t.setflags(write=False)
        object.__setattr__(self, "t", t)

    @classmethod
    def uniform(cls, horizon: float, dt: float) -> "TimeGrid":
        steps = int(round(horizon / dt))
        if steps < 1 or not np.isclose(steps * dt, horizon, rtol=1e-9, atol=0.0):
            raise OpenMarketError(f"horizon {horizon} is not a multiple of dt {dt}")
        return cls(np.arange(steps + 1) * dt)

    @property
    def dt(self) -> np.ndarray:
        return np.diff(self.t)

    @property
    def horizon(self) -> float:
        return float(self.t[-1])

    def __len__(self):
        return self.t.size


def psd_sqrt(cov: np.ndarray) -> np.ndarray:
    """Symmetric square root of a positive semidefinite matrix.

    Raises
    ------
    OpenMarketError
        If ``cov`` is not symmetric or has a clearly negative eigenvalue.
    """
    cov = np.asarray(cov, dtype=float)
    if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
        raise OpenMarketError("covariance must be a square matrix")
    if not np.allclose(cov, cov.T, rtol=0.0, atol=1e-12):
        raise OpenMarketError("covariance must be symmetric")
    lam, vec = np.linalg.eigh(cov)
    scale = max(1.0, float(np.max(np.abs(lam)))) if lam.size else 1.0
    if lam.size and lam.min() < -1e-10 * scale:
        raise OpenMarketError(
            f"covariance is not positive semidefinite (min eigenvalue {lam.min():.3g})"
        )
    return (vec * np.sqrt(np.clip(lam, 0.0, None))) @ vec.T


@dataclass(frozen=True)
class ModelSpec:
    """Parametric price model.

    Use the :meth:`gbm`, :meth:`atlas` or :meth:`factor` constructors rather than
    filling fields by hand. Drifts are drift rates of simple returns (1/year), so
    the log-price drift is ``drift - variance / 2``.
    """

    kind: str
    s0: np.ndarray
    drift: Optional[np.ndarray] = None  # gbm
    cov: Optional[np.ndarray] = None  # gbm, factor
    rank_drift: Optional[np.ndarray] = None  # atlas
    rank_vol: Optional[np.ndarray] = None  # atlas
    leverage: float = 0.0  # factor
    n: int = 0  # factor: size of the top-n market the drift refers to
    loadings: Optional[np.ndarray] = None  # factor
    factor_vol: float = 0.0
    idio_vol: Optional[np.ndarray] = None
    _sqrt: Optional[np.ndarray] = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        s0 = np.asarray(self.s0, dtype=float)
        if s0.ndim != 1 or s0.size < 1:
            raise OpenMarketError("initial prices must be a non-empty vector")
        if not np.all(s0 > 0) or not np.all(np.isfinite(s0)):
            raise OpenMarketError("initial prices must be strictly positive")
        object.__setattr__(self, "s0", s0)
        N = s0.size
        if self.kind in ("gbm", "factor"):
            cov = np.asarray(self.cov, dtype=float)
            if cov.shape != (N, N):
                raise OpenMarketError(f"covariance must be {N}x{N}")
            object.__setattr__(self, "cov", cov)
            object.__setattr__(self, "_sqrt", psd_sqrt(cov))
            if self.kind == "gbm":
                drift = np.asarray(self.drift, dtype=float)
                if drift.shape != (N,):
                    raise OpenMarketError(f"drift must have length {N}")
                object.__setattr__(self, "drift", drift)
            elif not 1 <= self.n < N:
                raise OpenMarketError("factor model requires 1 <= n < N")
        elif self.kind == "atlas":
            if N < 2:
                raise OpenMarketError("atlas model requires N >= 2")
            g = np.asarray(self.rank_drift, dtype=float)
            v = np.asarray(self.rank_vol, dtype=float)
            if g.shape != (N,) or v.shape != (N,):
                raise OpenMarketError(f"rank drift and rank volatility must have length {N}")
            if np.any(v < 0):
                raise OpenMarketError("volatilities must be nonnegative")
            object.__setattr__(self, "rank_drift", g)
            object.__setattr__(self, "rank_vol", v)
        else:
            raise OpenMarketError(f"unknown model kind {self.kind!r}")

    @property
    def N(self) -> int:
        return self.s0.size

    @classmethod
    def gbm(cls, drift, cov, s0) -> "ModelSpec":
        cov = np.asarray(cov, dtype=float)
        if cov.ndim == 1:
            cov = np.diag(cov)
        return cls(kind="gbm", s0=s0, drift=drift, cov=cov)

    @classmethod
    def atlas(cls, rank_drift, rank_vol, s0) -> "ModelSpec":
        return cls(kind="atlas", s0=s0, rank_drift=rank_drift, rank_vol=rank_vol)

    @classmethod
    def factor(cls, loadings, factor_vol, idio_vol, leverage, n, s0) -> "ModelSpec":
        """Single-factor market with covariance ``factor_vol**2 * b b' + diag(idio_vol**2)``
        and drift ``leverage * cov @ mu_top`` evaluated on the current top-n weights."""
        b = np.asarray(loadings, dtype=float)
        idio = np.broadcast_to(np.asarray(idio_vol, dtype=float), b.shape).copy()
        if np.any(idio < 0) or factor_vol < 0:
            raise OpenMarketError("volatilities must be nonnegative")
        cov = factor_vol**2 * np.outer(b, b) + np.diag(idio**2)
        return cls(
            kind="factor", s0=s0, cov=cov, leverage=float(leverage), n=int(n),
            loadings=b, factor_vol=float(factor_vol), idio_vol=idio,
        )


@dataclass(frozen=True)
class MarketPath:
    """Strictly positive N x M price matrix on a time grid."""

    grid: TimeGrid
    S: np.ndarray

    def __post_init__(self):
        S = np.array(self.S, dtype=float, ndmin=2)
        if S.shape[1] != len(self.grid):
            raise OpenMarketError(
                f"price matrix has {S.shape[1]} columns for {len(self.grid)} grid points"
            )
        bad = np.argwhere(~(S > 0) | ~np.isfinite(S))
        if bad.size:
            i, k = bad[0]
            raise OpenMarketError(f"price S[{i}][{k}] = {S[i, k]!r} is not strictly positive")
        S.setflags(write=False)
        object.__setattr__(self, "S", S)

    @property
    def N(self) -> int:
        return self.S.shape[0]

    @property
    def M(self) -> int:
        return self.S.shape[1]

    @property
    def t(self) -> np.ndarray:
        return self.grid.t

    @property
    def Sigma(self) -> np.ndarray:
        """Total capitalization per grid point."""
        return self.S.sum(axis=0)

    def subsample(self, stride: int) -> "MarketPath":
        """Coarser path observed every ``stride`` grid points (same Brownian path)."""
        if (self.M - 1) % stride:
            raise OpenMarketError(f"stride {stride} does not divide {self.M - 1} steps")
        return MarketPath(TimeGrid(self.t[::stride]), self.S[:, ::stride])

    def truncate(self, horizon: float) -> "MarketPath":
        """Prefix of the path up to ``horizon`` (which must lie on the grid)."""
        idx = np.flatnonzero(np.isclose(self.t, horizon, rtol=0.0, atol=1e-12))
        if idx.size != 1 or idx[0] == 0:
            raise OpenMarketError(f"horizon {horizon} is not a positive grid time")
        k = idx[0] + 1
        return MarketPath(TimeGrid(self.t[:k]), self.S[:, :k])


@dataclass(frozen=True)
class IncrementSeries:
    """Simple returns dR[i][k] = (S[i][k+1] - S[i][k]) / S[i][k], shape N x (M-1)."""

    dR: np.ndarray

    def __post_init__(self):
        dR = np.asarray(self.dR, dtype=float)
        if dR.ndim != 2:
            raise OpenMarketError("increments must be an N x (M-1) matrix")
        if not np.all(dR > -1.0):
            raise OpenMarketError("simple returns must exceed -1")
        object.__setattr__(self, "dR", dR)

    @property
    def N(self) -> int:
        return self.dR.shape[0]

    @property
    def steps(self) -> int:
        return self.dR.shape[1]


def increments(path: MarketPath) -> IncrementSeries:
    S = path.S
    dR = (S[:, 1:] - S[:, :-1]) / S[:, :-1]
    dR.setflags(write=False)
    return IncrementSeries(dR)


def _rng(seed: int, path_index: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), int(path_index)])


def _check_finite(logS: np.ndarray):
    bad = ~np.isfinite(logS)
    if bad.any():
        step = int(np.argmax(bad.any(axis=0)))
        raise SimulationError(f"non-finite price at step {step}", step=step)


def _simulate_gbm(spec: ModelSpec, dt: np.ndarray, rng) -> np.ndarray:
    N = spec.N
    z = rng.standard_normal((N, dt.size))
    shocks = spec._sqrt @ (z * np.sqrt(dt))
    log_drift = (spec.drift - 0.5 * np.diag(spec.cov))[:, None] * dt
    logS = np.empty((N, dt.size + 1))
    logS[:, 0] = np.log(spec.s0)
    np.cumsum(log_drift + shocks, axis=1, out=logS[:, 1:])
    logS[:, 1:] += logS[:, :1]
    return logS


def _simulate_atlas(spec: ModelSpec, dt: np.ndarray, rng) -> np.ndarray:
    N = spec.N
    z = rng.standard_normal((N, dt.size))
    sqdt = np.sqrt(dt)
    vol = spec.rank_vol
    log_drift = spec.rank_drift - 0.5 * vol**2
    logS = np.empty((N, dt.size + 1))
    x = np.log(spec.s0)
    logS[:, 0] = x
    rank = np.empty(N, dtype=np.intp)
    for k in range(dt.size):
        # stable sort on -x: ties go to the smaller index
        rank[np.argsort(-x, kind="stable")] = np.arange(N)
        x = x + log_drift[rank] * dt[k] + vol[rank] * sqdt[k] * z[:, k]
        logS[:, k + 1] = x
    return logS


def _simulate_factor(spec: ModelSpec, dt: np.ndarray, rng) -> np.ndarray:
    N, n = spec.N, spec.n
    z = rng.standard_normal((N, dt.size))
    shocks = spec._sqrt @ (z * np.sqrt(dt))
    half_var = 0.5 * np.diag(spec.cov)
    logS = np.empty((N, dt.size + 1))
    x = np.log(spec.s0)
    logS[:, 0] = x
    for k in range(dt.size):
        S = np.exp(x)
        top = np.argsort(-S, kind="stable")[:n]
        mu_top = np.zeros(N)
        mu_top[top] = S[top] / S[top].sum()
        alpha = spec.leverage * (spec.cov @ mu_top)
        x = x + (alpha - half_var) * dt[k] + shocks[:, k]
        logS[:, k + 1] = x
    return logS


_SIMULATORS = {"gbm": _simulate_gbm, "atlas": _simulate_atlas, "factor": _simulate_factor}


def simulate(spec: ModelSpec, grid: TimeGrid, seed: int, path_index: int = 0) -> MarketPath:
    """Simulate one price path.

    Parameters
    ----------
    spec : ModelSpec
        Model and parameters.
    grid : TimeGrid
        Observation times; the path is stepped on exactly these points.
    seed : int
        Ensemble seed.
    path_index : int
        Index of the path inside the ensemble; selects the RNG stream.
    """
    logS = _SIMULATORS[spec.kind](spec, grid.dt, _rng(seed, path_index))
    _check_finite(logS)
    # scale the exact initial prices so a flat log path stays bit-constant
    with np.errstate(over="ignore"):
        S = spec.s0[:, None] * np.exp(logS - logS[:, :1])
    _check_finite(S)
    if not np.all(S > 0):
        step = int(np.argmax(~(S > 0).all(axis=0)))
        raise SimulationError(f"price underflow at step {step}", step=step)
    return MarketPath(grid, S)


def simulate_ensemble(
    spec: ModelSpec, grid: TimeGrid, seed: int, n_paths: int, start: int = 0
) -> Iterator[MarketPath]:
    """Lazily yield paths ``start .. start + n_paths - 1`` of an ensemble."""
    for i in range(start, start + n_paths):
        yield simulate(spec, grid, seed, i)


def write_paths(path: MarketPath, file) -> None:
    """Write ``t,S1,...,SN`` CSV; floats are written with round-trip precision."""
    header = ["t"] + [f"S{i + 1}" for i in range(path.N)]
    rows = np.vstack([path.t, path.S]).T
    atomic_write_rows(file, header, rows)


def atomic_write_rows(file, header, rows) -> None:
    """Write a numeric CSV through a temporary file and an atomic rename."""
    file = os.fspath(file)
    directory = os.path.dirname(os.path.abspath(file))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=".csv")
    try:
        with os.fdopen(fd, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in rows:
                w.writerow([repr(float(v)) for v in row])
        os.replace(tmp, file)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_paths(file) -> MarketPath:
    """Read a ``t,S1,...,SN`` CSV into a :class:`MarketPath`.

    Raises
    ------
    OpenMarketError
        On a malformed header, non-monotone times, or a non-positive price
        (the message names the offending row and column).
    """
    with open(file, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0].strip() != "t" or len(header) < 2:
            raise OpenMarketError(f"{file}: header must be t,S1,...,SN")
        cols = [h.strip() for h in header]
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(cols):
                raise OpenMarketError(f"{file}: row {lineno} has {len(row)} fields, expected {len(cols)}")
            try:
                rows.append([float(v) for v in row])
            except ValueError as exc:
                raise OpenMarketError(f"{file}: row {lineno}: {exc}") from None
    data = np.array(rows, dtype=float)
    if data.shape[0] < 2:
        raise OpenMarketError(f"{file}: need at least 2 rows")
    bad = np.argwhere(~(data[:, 1:] > 0) | ~np.isfinite(data[:, 1:]))
    if bad.size:
        r, c = bad[0]
        raise OpenMarketError(
            f"{file}: non-positive price {data[r, c + 1]!r} at row {r + 2}, column {cols[c + 1]}"
        )
    t = data[:, 0]
    if t[0] != 0.0 or not np.all(np.diff(t) > 0):
        raise OpenMarketError(f"{file}: times must start at 0 and increase strictly")
    return MarketPath(TimeGrid(t), data[:, 1:].T)
