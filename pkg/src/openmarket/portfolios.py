"""Wealth of weight trajectories, relative wealth, growth decompositions, the
Monte Carlo supermartingale test and the leakage representation of the top-n
market portfolio's wealth."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .errors import BlowThroughError, OpenMarketError
from .market import IncrementSeries, MarketPath, atomic_write_rows, increments
from .ranks import RankView, TopNView, collision_local_times, rank_path

__all__ = [
    "WeightPath",
    "WealthPath",
    "GrowthDecomposition",
    "wealth",
    "relative_wealth",
    "growth_decomposition",
    "SupermartingaleReport",
    "supermartingale_test",
    "supermartingale_suite",
    "LeakageResult",
    "tilde_mu_wealth",
    "rank_constant_rule",
    "censored_constant_rule",
]


@dataclass(frozen=True)
class WeightPath:
    """N x M portfolio weights; cash holds ``1 - sum(pi)``."""

    pi: np.ndarray
    name: str = ""

    def __post_init__(self):
        pi = np.asarray(self.pi, dtype=float)
        if pi.ndim != 2:
            raise OpenMarketError("weights must be an N x M matrix")
        if not np.all(np.isfinite(pi)):
            raise OpenMarketError("weights must be finite")
        object.__setattr__(self, "pi", pi)

    @property
    def cash(self) -> np.ndarray:
        return 1.0 - self.pi.sum(axis=0)

    def is_stock(self, tol: float = 1e-12) -> bool:
        return bool(np.all(np.abs(self.cash) <= tol))

    def is_top_n(self, rv: RankView) -> bool:
        return bool(np.all(self.pi[~rv.mask[:, : self.pi.shape[1]]] == 0.0))


@dataclass(frozen=True)
class WealthPath:
    X: np.ndarray
    name: str = ""

    @property
    def log(self) -> np.ndarray:
        return np.log(self.X)


def wealth(w: WeightPath, inc: IncrementSeries) -> WealthPath:
    """Self-financing wealth ``X[k+1] = X[k] (1 + pi[:, k] . dR[:, k])``, ``X[0] = 1``.

    Weights at the last grid point, if present, are ignored.

    Raises
    ------
    BlowThroughError
        If a step's portfolio return is ``<= -1``.
    """
    steps = inc.steps
    if w.pi.shape[0] != inc.N or w.pi.shape[1] < steps:
        raise OpenMarketError("weight path and increments do not match")
    r = np.einsum("ik,ik->k", w.pi[:, :steps], inc.dR)
    bad = np.flatnonzero(r <= -1.0)
    if bad.size:
        raise BlowThroughError(
            f"portfolio return {r[bad[0]]:.4g} <= -1 at step {bad[0]}", step=int(bad[0])
        )
    X = np.empty(steps + 1)
    X[0] = 1.0
    np.cumprod(1.0 + r, out=X[1:])
    return WealthPath(X, w.name)


def relative_wealth(num: WealthPath, den: WealthPath) -> np.ndarray:
    if num.X.shape != den.X.shape:
        raise OpenMarketError("wealth paths live on different grids")
    return num.X / den.X


@dataclass(frozen=True)
class GrowthDecomposition:
    """Per-step rates and their clock integrals (``A, Gamma, C`` start at 0)."""

    alpha_pi: np.ndarray
    gamma_pi: np.ndarray
    c_pipi: np.ndarray
    A: np.ndarray
    Gamma: np.ndarray
    C: np.ndarray


def _integrate(rate: np.ndarray, dO: np.ndarray) -> np.ndarray:
    out = np.zeros(rate.shape[-1])
    np.cumsum(rate[: dO.size] * dO, out=out[1:])
    return out


def growth_decomposition(w: WeightPath, chars) -> GrowthDecomposition:
    """``alpha_pi = pi' alpha``, ``gamma_pi = pi' alpha - pi' c pi / 2`` and clock integrals.

    ``chars`` is any object with ``alpha`` (N x M), ``c`` (M x N x N) and ``dO``;
    censored characteristics work too and give identical values for top-n weights.
    """
    pi = w.pi[:, : chars.alpha.shape[1]]
    a = np.einsum("ik,ik->k", pi, chars.alpha)
    cpp = np.einsum("ik,kij,jk->k", pi, chars.c, pi)
    g = a - 0.5 * cpp
    return GrowthDecomposition(
        a, g, cpp, _integrate(a, chars.dO), _integrate(g, chars.dO), _integrate(cpp, chars.dO)
    )


# ---------------------------------------------------------------------------
# supermartingale test

Rule = Callable[[MarketPath, RankView], WeightPath]


def rank_constant_rule(weights: Sequence[float], name: str = "") -> Rule:
    """Hold ``weights[k]`` of wealth in the stock currently ranked ``k + 1``; rest in cash."""
    w = np.asarray(weights, dtype=float)

    def rule(path: MarketPath, rv: RankView) -> WeightPath:
        pr = np.zeros(rv.ranked.shape)
        pr[: w.size] = w[:, None]
        return WeightPath(rv.by_name(pr), name)

    return rule


def censored_constant_rule(weights: Sequence[float], name: str = "") -> Rule:
    """Hold ``weights[i]`` in stock ``i`` while it ranks in the top n, cash otherwise."""
    w = np.asarray(weights, dtype=float)

    def rule(path: MarketPath, rv: RankView) -> WeightPath:
        return WeightPath(np.where(rv.mask, w[:, None], 0.0), name)

    return rule


@dataclass
class SupermartingaleRow:
    name: str
    mean: float
    se: float
    passed: bool


@dataclass
class SupermartingaleReport:
    """Estimates of ``E[X_pi(T) / X_rho(T)]`` with standard errors."""

    rows: List[SupermartingaleRow]
    n_paths: int
    k_se: float = 3.0

    @property
    def all_passed(self) -> bool:
        return all(r.passed for r in self.rows)

    def to_text(self) -> str:
        lines = [f"{'portfolio':<16}{'mean':>12}{'se':>12}  verdict", "-" * 48]
        for r in self.rows:
            lines.append(f"{r.name:<16}{r.mean:>12.6f}{r.se:>12.6f}  {'PASS' if r.passed else 'FAIL'}")
        lines.append(f"paths: {self.n_paths}; PASS iff mean <= 1 + {self.k_se:g} se")
        return "\n".join(lines)


def supermartingale_test(
    numeraire: Rule,
    tests: Dict[str, Rule],
    paths: Iterable[MarketPath],
    n: int,
    k_se: float = 3.0,
    min_paths: int = 100,
) -> SupermartingaleReport:
    """Monte Carlo check that ``X_pi / X_rho`` has mean at most 1 at the horizon.

    Parameters
    ----------
    numeraire : callable
        ``(path, rank_view) -> WeightPath`` giving the candidate numeraire rho.
    tests : dict of callables
        Named top-n test portfolio rules.
    paths : iterable of MarketPath
        Independent paths on a common grid; consumed once.
    n : int
        Size of the top-n market.

    Raises
    ------
    OpenMarketError
        If fewer than ``min_paths`` paths were supplied.
    """
    return supermartingale_suite({"rho": numeraire}, tests, paths, n, k_se, min_paths)["rho"]


def supermartingale_suite(
    numeraires: Dict[str, Rule],
    tests: Dict[str, Rule],
    paths: Iterable[MarketPath],
    n: int,
    k_se: float = 3.0,
    min_paths: int = 100,
) -> Dict[str, SupermartingaleReport]:
    """:func:`supermartingale_test` for several candidate numeraires on one pass over the paths."""
    names = list(tests)
    keys = list(numeraires)
    sums = np.zeros((len(keys), len(names)))
    sq = np.zeros_like(sums)
    count = 0
    for path in paths:
        rv, _ = rank_path(path, n)
        inc = increments(path)
        xt = np.array([wealth(tests[name](path, rv), inc).X[-1] for name in names])
        for a, key in enumerate(keys):
            ratio = xt / wealth(numeraires[key](path, rv), inc).X[-1]
            sums[a] += ratio
            sq[a] += ratio * ratio
        count += 1
    if count < min_paths:
        raise OpenMarketError(f"ensemble too small: {count} paths < {min_paths}")
    mean = sums / count
    var = np.maximum(sq / count - mean**2, 0.0) * count / (count - 1)
    se = np.sqrt(var / count)
    out = {}
    for a, key in enumerate(keys):
        rows = [
            SupermartingaleRow(name, float(m), float(s), bool(m <= 1.0 + k_se * s))
            for name, m, s in zip(names, mean[a], se[a])
        ]
        out[key] = SupermartingaleReport(rows, count, k_se)
    return out


# ---------------------------------------------------------------------------
# top-n market portfolio and its leakage

@dataclass(frozen=True)
class LeakageResult:
    """Wealth of the top-n market portfolio computed directly and via leakage."""

    direct: WealthPath
    via_leakage: WealthPath
    cap_ratio: np.ndarray  # Sigma_tilde / Sigma_tilde(0)
    leakage: np.ndarray  # 1/2 int dL / Sigma_tilde, nondecreasing

    @property
    def relative_gap(self) -> np.ndarray:
        return np.abs(self.direct.X - self.via_leakage.X) / self.direct.X


def tilde_mu_wealth(path: MarketPath, rv: RankView, tv: Optional[TopNView] = None) -> LeakageResult:
    """Wealth of the top-n market portfolio, directly and through the leakage formula.

    The leakage route multiplies ``Sigma_tilde / Sigma_tilde(0)`` by
    ``exp(-1/2 int dL / Sigma_tilde)`` where ``L`` is the collision local time of
    ``S_(n) - S_(n+1)`` and the integrand is taken at the left endpoint.
    """
    if tv is None:
        _, tv = rank_path(path, rv.n)
    direct = wealth(WeightPath(tv.mu_tilde, "mu_tilde"), increments(path))
    lt = collision_local_times(rv, "price", values=path.S, nonadjacent=False)
    dL = np.diff(lt.adjacent[rv.n - 1].L)
    leak = np.zeros(rv.M)
    np.cumsum(0.5 * dL / tv.Sigma_tilde[:-1], out=leak[1:])
    cap_ratio = tv.Sigma_tilde / tv.Sigma_tilde[0]
    via = WealthPath(cap_ratio * np.exp(-leak), "mu_tilde_leakage")
    return LeakageResult(direct, via, cap_ratio, leak)


def write_wealth(t: np.ndarray, series: Dict[str, np.ndarray], file) -> None:
    header = ["t"] + list(series)
    atomic_write_rows(file, header, np.vstack([t] + [np.asarray(v) for v in series.values()]).T)
