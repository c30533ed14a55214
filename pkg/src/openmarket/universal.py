"""Constant rebalanced portfolios by rank, the best retrospectively chosen
weights, and the universal portfolio among the top n stocks."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import minimize_scalar

from .errors import BlowThroughError, OpenMarketError
from .market import IncrementSeries, ModelSpec, TimeGrid, atomic_write_rows, increments, simulate
from .portfolios import WealthPath, WeightPath
from .ranks import RankView, rank_path

__all__ = [
    "validate_simplex_point",
    "sample_simplex",
    "simplex_grid",
    "project_simplex",
    "ranked_returns",
    "cr_wealth",
    "cr_terminal_log_wealth",
    "best_retrospective",
    "UniversalWealth",
    "universal_wealth",
    "UniversalReport",
    "asymptotic_gap",
]


def validate_simplex_point(xi, n: int, N: int, tol: float = 1e-12) -> np.ndarray:
    """Return ``xi`` padded to length N after checking it lies in the top-n simplex."""
    xi = np.asarray(xi, dtype=float)
    if xi.size < N:
        xi = np.concatenate([xi, np.zeros(N - xi.size)])
    if xi.shape != (N,):
        raise OpenMarketError(f"weights must have length at most {N}")
    if np.any(xi < -tol) or abs(xi[:n].sum() - 1.0) > tol or np.any(np.abs(xi[n:]) > tol):
        raise OpenMarketError(f"{xi} is not in the top-{n} simplex")
    return xi


def sample_simplex(n: int, N: int, size: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform samples on the top-n simplex (flat Dirichlet on the first n coordinates)."""
    out = np.zeros((size, N))
    out[:, :n] = rng.dirichlet(np.ones(n), size=size)
    return out


def simplex_grid(n: int, N: int, resolution: int) -> np.ndarray:
    """All points of the top-n simplex with coordinates in multiples of ``1/resolution``."""
    if n == 1:
        pts = np.ones((1, 1))
    else:
        # compositions of `resolution` into n nonnegative parts
        def comps(total, parts):
            if parts == 1:
                return [[total]]
            return [[i] + rest for i in range(total + 1) for rest in comps(total - i, parts - 1)]

        if n == 2:
            i = np.arange(resolution + 1)
            pts = np.stack([i, resolution - i], axis=1) / resolution
        else:
            pts = np.array(comps(resolution, n), dtype=float) / resolution
    out = np.zeros((pts.shape[0], N))
    out[:, :n] = pts
    return out


def project_simplex(v: np.ndarray) -> np.ndarray:
    """Euclidean projection onto the probability simplex (sort-based)."""
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    k = np.arange(1, v.size + 1)
    r = np.flatnonzero(u - css / k > 0)[-1]
    return np.maximum(v - css[r] / (r + 1.0), 0.0)


def ranked_returns(rv: RankView, inc: IncrementSeries) -> np.ndarray:
    """``dR`` of the stock holding each rank at the left endpoint of each step, N x (M-1)."""
    return rv.by_rank(inc.dR)


def _cr_returns(xis: np.ndarray, rr: np.ndarray) -> np.ndarray:
    r = xis @ rr
    if np.any(r <= -1.0):
        s, k = np.argwhere(r <= -1.0)[0]
        raise BlowThroughError(f"portfolio return <= -1 at step {k}", step=int(k))
    return r


def cr_wealth(xi, rv: RankView, inc: IncrementSeries) -> WealthPath:
    """Wealth of the portfolio holding ``xi[k]`` in the rank-(k+1) stock at all times."""
    xi = validate_simplex_point(xi, rv.n, rv.N)
    r = _cr_returns(xi[None, :], ranked_returns(rv, inc))[0]
    X = np.empty(r.size + 1)
    X[0] = 1.0
    np.cumprod(1.0 + r, out=X[1:])
    return WealthPath(X, "cr")


def cr_terminal_log_wealth(xis: np.ndarray, rr: np.ndarray) -> np.ndarray:
    """``log X_xi(T)`` for each row of ``xis`` given ranked returns ``rr``."""
    return np.sum(np.log1p(_cr_returns(np.atleast_2d(xis), rr)), axis=1)


def _polish(xi0: np.ndarray, rr: np.ndarray, n: int, iters: int = 200) -> np.ndarray:
    """Projected gradient ascent of the concave map xi -> log X_xi(T) on the simplex."""
    rr_n = rr[:n]
    x = xi0[:n].copy()

    def f(z):
        r = z @ rr_n
        return -np.inf if np.any(r <= -1) else float(np.sum(np.log1p(r)))

    fx = f(x)
    step = 1.0
    for _ in range(iters):
        grad = rr_n @ (1.0 / (1.0 + x @ rr_n))
        while step > 1e-12:
            y = project_simplex(x + step * grad)
            fy = f(y)
            if fy >= fx:
                break
            step *= 0.5
        if fy < fx or np.allclose(y, x, rtol=0, atol=1e-13):
            break
        x, fx = y, fy
        step *= 2.0
    out = np.zeros_like(xi0)
    out[:n] = x
    return out


def best_retrospective(
    rv: RankView,
    inc: IncrementSeries,
    n: Optional[int] = None,
    optimizer: str = "auto",
    resolution: int = 200,
    starts: int = 20,
    seed: int = 0,
) -> Tuple[np.ndarray, float]:
    """Weights in the top-n simplex maximizing terminal wealth, and that wealth.

    ``optimizer="grid"`` evaluates the full simplex grid at ``1/resolution`` and
    polishes the best point; ``"multistart"`` runs projected gradient ascent from
    ``starts`` random points. ``"auto"`` picks grid for ``n <= 3``. Log-wealth is
    concave in the weights, so both polish steps climb to the global maximum.
    """
    n = rv.n if n is None else n
    N = rv.N
    rr = ranked_returns(rv, inc)
    if optimizer == "auto":
        optimizer = "grid" if n <= 3 else "multistart"
    if optimizer == "grid":
        if resolution <= 0:
            raise OpenMarketError("optimizer budget must be positive")
        cand = simplex_grid(n, N, resolution)
    elif optimizer == "multistart":
        if starts <= 0:
            raise OpenMarketError("optimizer budget must be positive")
        cand = sample_simplex(n, N, starts, np.random.default_rng(seed))
    else:
        raise OpenMarketError(f"unknown optimizer {optimizer!r}")
    logw = cr_terminal_log_wealth(cand, rr)
    if n == 1:
        return cand[0], float(np.exp(logw[0]))
    if optimizer == "grid":
        polished = [_polish(cand[int(np.argmax(logw))], rr, n)]
        if n == 2:
            res = minimize_scalar(
                lambda a: -cr_terminal_log_wealth(np.r_[a, 1 - a, np.zeros(N - 2)], rr)[0],
                bounds=(0.0, 1.0), method="bounded", options={"xatol": 1e-10},
            )
            polished.append(np.r_[res.x, 1 - res.x, np.zeros(N - 2)])
    else:
        polished = [_polish(c, rr, n) for c in cand]
    polished = np.array(polished)
    plog = cr_terminal_log_wealth(polished, rr)
    allc = np.vstack([cand, polished])
    alll = np.concatenate([logw, plog])
    j = int(np.argmax(alll))
    return allc[j], float(np.exp(alll[j]))


@dataclass(frozen=True)
class UniversalWealth:
    """Universal portfolio wealth two ways: (a) wealth of the averaged weight
    path, (b) the plain average of the sampled constant-rebalanced wealths."""

    X_weights: WealthPath
    X_average: WealthPath
    pi_hat: WeightPath
    samples: np.ndarray
    X_samples_T: np.ndarray

    @property
    def relative_gap(self) -> np.ndarray:
        return np.abs(self.X_weights.X - self.X_average.X) / self.X_average.X


def universal_wealth(
    rv: RankView, inc: IncrementSeries, n: Optional[int] = None, samples: int = 1000, seed: int = 0,
    chunk: int = 256,
) -> UniversalWealth:
    """Monte Carlo universal portfolio among the top n stocks.

    Weights ``xi`` are drawn uniformly on the top-n simplex; at each step the
    rank-k weight of the universal portfolio is the wealth-weighted average of
    ``xi_k`` across samples.
    """
    n = rv.n if n is None else n
    if samples < 100:
        raise OpenMarketError(f"universal portfolio needs at least 100 samples, got {samples}")
    N, steps = rv.N, inc.steps
    xis = sample_simplex(n, N, samples, np.random.default_rng([int(seed), 7919]))
    rr = ranked_returns(rv, inc)
    total = np.zeros(steps + 1)
    weighted = np.zeros((N, steps + 1))
    for s in range(0, samples, chunk):
        xc = xis[s : s + chunk]
        X = np.empty((xc.shape[0], steps + 1))
        X[:, 0] = 1.0
        np.cumprod(1.0 + _cr_returns(xc, rr), axis=1, out=X[:, 1:])
        total += X.sum(axis=0)
        weighted += xc.T @ X
    pr = weighted / weighted.sum(axis=0)  # rank weights, (N, M); sum_k xi_k = 1 so the sum equals total
    pi_hat = WeightPath(rv.by_name(pr), "universal")
    r = np.einsum("ik,ik->k", pr[:, :-1], rr)
    Xa = np.empty(steps + 1)
    Xa[0] = 1.0
    np.cumprod(1.0 + r, out=Xa[1:])
    X_avg = total / samples
    xT = np.exp(cr_terminal_log_wealth(xis, rr))
    return UniversalWealth(WealthPath(Xa, "universal"), WealthPath(X_avg, "universal_avg"), pi_hat, xis, xT)


@dataclass
class UniversalReport:
    """Gap ``(1/T)(log X* - log X_hat)`` per horizon, averaged over an ensemble."""

    horizons: np.ndarray
    gap_mean: np.ndarray
    gap_se: np.ndarray
    xstar_mean: np.ndarray
    xhat_mean: np.ndarray
    samples: int
    n_paths: int
    min_mu_n: float
    gaps: np.ndarray = field(repr=False)
    verdict: str = ""

    def decreasing_within_se(self) -> bool:
        """Each step of the schedule lowers the mean gap, allowing one combined standard error."""
        d = np.diff(self.gap_mean)
        tol = np.sqrt(self.gap_se[1:] ** 2 + self.gap_se[:-1] ** 2)
        return bool(np.all(d < tol))

    def strictly_decreasing(self) -> bool:
        return bool(np.all(np.diff(self.gap_mean) < 0))

    def write_csv(self, file) -> None:
        rows = np.column_stack([
            self.horizons, self.gap_mean, self.gap_se, self.xstar_mean, self.xhat_mean,
            np.full(self.horizons.size, self.samples, dtype=float),
        ])
        atomic_write_rows(file, ["T", "gap_mean", "gap_se", "Xstar", "Xhat", "samples"], rows)


def asymptotic_gap(
    spec: ModelSpec,
    n: int,
    horizons: Sequence[float],
    dt: float,
    samples: int,
    n_paths: int,
    seed: int,
    delta: Optional[float] = None,
) -> UniversalReport:
    """Ensemble experiment on the growth gap between the best constant rebalanced
    weights (chosen in hindsight) and the universal portfolio.

    Each path is simulated once to the largest horizon and truncated to the
    others. ``delta`` (if given) is the lower bound the growth-gap result assumes for
    ``mu_(n)``; the ensemble minimum is always reported and a violation turns
    the verdict into ``HYPOTHESIS-UNMET``.
    """
    horizons = np.asarray(sorted(horizons), dtype=float)
    grid = TimeGrid.uniform(float(horizons[-1]), dt)
    gaps = np.zeros((n_paths, horizons.size))
    xstar = np.zeros_like(gaps)
    xhat = np.zeros_like(gaps)
    min_mu_n = np.inf
    for i in range(n_paths):
        full = simulate(spec, grid, seed, i)
        for j, T in enumerate(horizons):
            path = full.truncate(T)
            rv, tv = rank_path(path, n)
            inc = increments(path)
            _, xs = best_retrospective(rv, inc, n)
            uw = universal_wealth(rv, inc, n, samples, seed=seed * 1_000_003 + i)
            xh = uw.X_average.X[-1]
            gaps[i, j] = (np.log(xs) - np.log(xh)) / T
            xstar[i, j], xhat[i, j] = xs, xh
        min_mu_n = min(min_mu_n, float(np.min(tv.mu_ranked[n - 1])))
    mean = gaps.mean(axis=0)
    se = gaps.std(axis=0, ddof=1) / np.sqrt(n_paths) if n_paths > 1 else np.zeros_like(mean)
    verdict = "HYPOTHESIS-UNMET" if delta is not None and min_mu_n < delta else ""
    return UniversalReport(
        horizons, mean, se, xstar.mean(axis=0), xhat.mean(axis=0), samples, n_paths, min_mu_n, gaps, verdict
    )
