"""Rank machinery: ranked prices, rank maps, the top-n mask, top-n market
weights, censored returns and discrete (collision) local times."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from .errors import OpenMarketError
from .market import IncrementSeries, MarketPath, atomic_write_rows

__all__ = [
    "RankView",
    "TopNView",
    "LocalTimeEstimate",
    "CollisionLocalTimes",
    "rank_path",
    "censored_increments",
    "local_time",
    "tanaka_steps",
    "collision_local_times",
    "write_ranked",
    "write_weights",
]


@dataclass(frozen=True)
class RankView:
    """Per-step ranks of an N x M price matrix.

    ``u[i, m]`` is the 1-based rank of asset ``i`` and ``p[k, m]`` the 1-based
    asset holding rank ``k + 1``. ``order`` and ``rank0`` are the same maps
    0-based, for indexing.
    """

    u: np.ndarray
    p: np.ndarray
    ranked: np.ndarray
    mask: np.ndarray
    n: int

    @property
    def order(self) -> np.ndarray:
        return self.p - 1

    @property
    def rank0(self) -> np.ndarray:
        return self.u - 1

    @property
    def N(self) -> int:
        return self.u.shape[0]

    @property
    def M(self) -> int:
        return self.u.shape[1]

    def by_rank(self, x: np.ndarray) -> np.ndarray:
        """Reorder an N x M (or N x (M-1)) named array by the rank at each column."""
        return np.take_along_axis(x, self.order[:, : x.shape[1]], axis=0)

    def by_name(self, xr: np.ndarray) -> np.ndarray:
        """Inverse of :meth:`by_rank`: put rank-indexed values back on asset names."""
        out = np.empty_like(xr)
        np.put_along_axis(out, self.order[:, : xr.shape[1]], xr, axis=0)
        return out


@dataclass(frozen=True)
class TopNView:
    """Capitalization weights of the whole market and of the top-n market."""

    S_tilde: np.ndarray
    Sigma_tilde: np.ndarray
    mu: np.ndarray
    mu_tilde: np.ndarray
    mu_ranked: np.ndarray


@dataclass(frozen=True)
class LocalTimeEstimate:
    L: np.ndarray
    scheme: str
    bandwidth: Optional[float] = None


@dataclass(frozen=True)
class CollisionLocalTimes:
    """Collision local times of adjacent ranked gaps plus the non-adjacent diagnostic.

    ``adjacent[k - 1]`` is the local time at 0 of ``X_(k) - X_(k+1)``;
    ``nonadjacent[(k, l)]`` the same for ``l >= k + 2`` (ranks 1-based).
    """

    adjacent: List[LocalTimeEstimate]
    nonadjacent: Dict[Tuple[int, int], LocalTimeEstimate] = field(default_factory=dict)
    level: str = "price"

    def degeneracy_ratio(self) -> float:
        """Largest non-adjacent terminal local time over the largest adjacent one."""
        adj = max((float(e.L[-1]) for e in self.adjacent), default=0.0)
        non = max((float(e.L[-1]) for e in self.nonadjacent.values()), default=0.0)
        if adj == 0.0:
            return 0.0 if non == 0.0 else np.inf
        return non / adj


def rank_path(path: MarketPath, n: int) -> Tuple[RankView, TopNView]:
    """Rank every column of ``path.S`` and build the top-``n`` views.

    Ties are broken in favour of the smaller asset index.
    """
    S = path.S
    N = S.shape[0]
    if not 1 <= n < N:
        raise OpenMarketError(f"open market requires 1 <= n < N, got n={n}, N={N}")
    order = np.argsort(-S, axis=0, kind="stable")
    rank0 = np.empty_like(order)
    np.put_along_axis(rank0, order, np.arange(N)[:, None], axis=0)
    ranked = np.take_along_axis(S, order, axis=0)
    mask = rank0 < n
    rv = RankView(u=rank0 + 1, p=order + 1, ranked=ranked, mask=mask, n=n)

    Sigma = S.sum(axis=0)
    S_tilde = np.where(mask, S, 0.0)
    Sigma_tilde = ranked[:n].sum(axis=0)
    tv = TopNView(
        S_tilde=S_tilde,
        Sigma_tilde=Sigma_tilde,
        mu=S / Sigma,
        mu_tilde=S_tilde / Sigma_tilde,
        mu_ranked=ranked / Sigma,
    )
    return rv, tv


def censored_increments(inc: IncrementSeries, rv: RankView) -> IncrementSeries:
    """Keep the return of asset i over step k only if it ranked in the top n at t_k."""
    if inc.dR.shape != (rv.N, rv.M - 1):
        raise OpenMarketError("increment and rank shapes do not match")
    return IncrementSeries(np.where(rv.mask[:, :-1], inc.dR, 0.0))


def _sign(x):
    return np.where(x > 0, 1.0, -1.0)


def tanaka_steps(z_left: np.ndarray, z_right: np.ndarray) -> np.ndarray:
    """Per-step Tanaka increments 1/2 (|z'| - |z| - sign(z) (z' - z)), sign(0) = -1.

    Always nonnegative: 1/2 (|z'| - z') when z > 0 and 1/2 (|z'| + z') otherwise.
    """
    return 0.5 * (np.abs(z_right) - np.abs(z_left) - _sign(z_left) * (z_right - z_left))


def local_time(y, scheme: str = "tanaka", eps: Optional[float] = None) -> LocalTimeEstimate:
    """Local time at the origin of a sampled path ``y``.

    Parameters
    ----------
    y : array_like
        Samples of the process on the grid.
    scheme : {"tanaka", "occupation"}
        ``tanaka``: L = 1/2 (|y| - |y_0| - sum sign(y) dy), kept nondecreasing
        by a running maximum. ``occupation``: L = (1/2eps) sum 1{|y| < eps} dy^2.
    eps : float, optional
        Occupation bandwidth, required (> 0) for the occupation scheme.
    """
    y = np.asarray(y, dtype=float)
    if not np.all(np.isfinite(y)):
        raise OpenMarketError("local time input must be finite")
    L = np.zeros(y.shape)
    if scheme == "tanaka":
        np.cumsum(tanaka_steps(y[..., :-1], y[..., 1:]), axis=-1, out=L[..., 1:])
        L = np.maximum.accumulate(L, axis=-1)
        return LocalTimeEstimate(L, "tanaka")
    if scheme == "occupation":
        if eps is None or not eps > 0:
            raise OpenMarketError("occupation scheme needs a bandwidth eps > 0")
        near = np.abs(y[..., :-1]) < eps
        np.cumsum(near * np.diff(y, axis=-1) ** 2 / (2.0 * eps), axis=-1, out=L[..., 1:])
        return LocalTimeEstimate(L, "occupation", float(eps))
    raise OpenMarketError(f"unknown local time scheme {scheme!r}")


def _gap_local_time(values: np.ndarray, rv: RankView, k: int, l: int) -> np.ndarray:
    """Local time of the nonnegative ranked gap X_(k) - X_(l) (0-based ranks).

    Over each step the two assets holding ranks k and l at the left endpoint are
    followed by name, so a crossing shows up as a sign change of the named
    difference Z. The ranked gap is |Z| and its local time is twice that of Z.
    """
    order = rv.order
    cols = np.arange(rv.M - 1)
    a, b = order[k, :-1], order[l, :-1]
    z_left = values[a, cols] - values[b, cols]
    z_right = values[a, cols + 1] - values[b, cols + 1]
    L = np.zeros(rv.M)
    np.cumsum(2.0 * tanaka_steps(z_left, z_right), out=L[1:])
    return L


def collision_local_times(
    rv: RankView,
    level: str = "price",
    values: Optional[np.ndarray] = None,
    nonadjacent: bool = True,
) -> CollisionLocalTimes:
    """Collision local times between adjacent ranks.

    Parameters
    ----------
    rv : RankView
    level : {"price", "weight"}
        Gap between ranked prices ``S_(k) - S_(k+1)`` or ranked market weights
        ``mu_(k) - mu_(k+1)``.
    values : ndarray, optional
        Named N x M series to use instead of the prices rebuilt from ``rv``.
    nonadjacent : bool
        Also estimate the gaps with rank distance >= 2 (should stay near 0).
    """
    if values is None:
        values = rv.by_name(rv.ranked)
        if level == "weight":
            values = values / rv.ranked.sum(axis=0)
        elif level != "price":
            raise OpenMarketError(f"unknown level {level!r}")
    N = rv.N
    adj = [LocalTimeEstimate(_gap_local_time(values, rv, k, k + 1), "tanaka") for k in range(N - 1)]
    non = {}
    if nonadjacent:
        for k in range(N - 2):
            for l in range(k + 2, N):
                non[(k + 1, l + 1)] = LocalTimeEstimate(_gap_local_time(values, rv, k, l), "tanaka")
    return CollisionLocalTimes(adj, non, level)


def write_ranked(t: np.ndarray, rv: RankView, file) -> None:
    header = ["t"] + [f"rank{k + 1}" for k in range(rv.N)]
    atomic_write_rows(file, header, np.vstack([t, rv.ranked]).T)


def write_weights(t: np.ndarray, weights: np.ndarray, file, prefix: str = "mu") -> None:
    header = ["t"] + [f"{prefix}{i + 1}" for i in range(weights.shape[0])]
    atomic_write_rows(file, header, np.vstack([t, weights]).T)
