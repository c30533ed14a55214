"""Functionally generated portfolios and numerical checks of their master formulas.

Generating functions act on column vectors: ``value(x)`` takes an ``(N,)`` or
``(N, M)`` array and returns a scalar per column, ``grad`` returns the same shape
as ``x`` and ``hess`` returns ``(N, N)`` or ``(M, N, N)``. The rank-based
builtins are written in terms of the ranked weights ``x_(1) >= ... >= x_(N)``;
the caller passes ranked weights in.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import OpenMarketError
from .market import MarketPath, atomic_write_rows, increments
from .portfolios import WealthPath, WeightPath, tilde_mu_wealth, wealth
from .ranks import RankView, TopNView, collision_local_times, rank_path

__all__ = [
    "GeneratingFunction",
    "builtin",
    "weighted_arithmetic",
    "geometric",
    "diversity",
    "topn_sum",
    "cr",
    "generate_ranked",
    "generate_denominated",
    "MasterFormulaReport",
    "verify_master",
    "check_balance",
    "check_derivatives",
]


@dataclass(frozen=True)
class GeneratingFunction:
    value: Callable[[np.ndarray], np.ndarray]
    grad: Callable[[np.ndarray], np.ndarray]
    hess: Callable[[np.ndarray], np.ndarray]
    N: int
    balanced: bool = False
    top_n: Optional[int] = None
    name: str = "G"

    @property
    def admissible(self) -> bool:
        """Balanced and depending on the first ``top_n`` coordinates only."""
        return self.balanced and self.top_n is not None


def _cols(x):
    x = np.asarray(x, dtype=float)
    return x, x.ndim == 1


def _hess_out(h_cols, vector):
    # h_cols has shape (N, N, M); return (N, N) or (M, N, N)
    return h_cols[:, :, 0] if vector else np.moveaxis(h_cols, -1, 0)


def _as2d(x):
    return x[:, None] if x.ndim == 1 else x


def weighted_arithmetic(c, N: int) -> GeneratingFunction:
    """``G(x) = sum_{i<n} c_i x_i`` with ``n = len(c)``, ``c >= 0`` not all zero."""
    c = np.asarray(c, dtype=float)
    n = c.size
    if n > N or np.any(c < 0) or not np.any(c > 0):
        raise OpenMarketError("weighted_arithmetic needs 0 < len(c) <= N and c >= 0, not all zero")
    full = np.zeros(N)
    full[:n] = c

    def value(x):
        x, vec = _cols(x)
        v = full @ _as2d(x)
        return v[0] if vec else v

    def grad(x):
        x, vec = _cols(x)
        g = np.broadcast_to(full[:, None], _as2d(x).shape).copy()
        return g[:, 0] if vec else g

    def hess(x):
        x, vec = _cols(x)
        return _hess_out(np.zeros((N, N, _as2d(x).shape[1])), vec)

    return GeneratingFunction(value, grad, hess, N, True, n, f"weighted_arithmetic(n={n})")


def topn_sum(n: int, N: int) -> GeneratingFunction:
    """``G(x) = x_1 + ... + x_n``; generates the top-n market portfolio."""
    g = weighted_arithmetic(np.ones(n), N)
    return GeneratingFunction(g.value, g.grad, g.hess, N, True, n, f"topn_sum(n={n})")


def geometric(c, N: int, name: Optional[str] = None) -> GeneratingFunction:
    """``G(x) = prod_{i<n} x_i^{c_i}`` with ``c >= 0`` summing to 1."""
    c = np.asarray(c, dtype=float)
    n = c.size
    if n > N or np.any(c < 0) or not np.isclose(c.sum(), 1.0, rtol=0, atol=1e-12):
        raise OpenMarketError("geometric needs nonnegative exponents summing to 1")
    full = np.zeros(N)
    full[:n] = c

    def value(x):
        x, vec = _cols(x)
        x2 = _as2d(x)
        v = np.exp(full @ np.log(x2))
        return v[0] if vec else v

    def grad(x):
        x, vec = _cols(x)
        x2 = _as2d(x)
        g = value(x2) * full[:, None] / x2
        return g[:, 0] if vec else g

    def hess(x):
        x, vec = _cols(x)
        x2 = _as2d(x)
        G = value(x2)
        r = full[:, None] / x2  # D_i G / G
        h = G * (r[:, None, :] * r[None, :, :])
        idx = np.arange(N)
        h[idx, idx, :] -= G * full[:, None] / x2**2
        return _hess_out(h, vec)

    return GeneratingFunction(value, grad, hess, N, True, n, name or f"geometric(n={n})")


def cr(xi, N: int) -> GeneratingFunction:
    """``G(x) = prod_k x_(k)^{xi_k}``: generates the constant rebalanced portfolio ``xi`` by rank.

    ``xi`` may have length ``n`` or ``N`` (entries beyond the last nonzero rank
    must vanish).
    """
    xi = np.asarray(xi, dtype=float)
    if np.any(xi < 0) or not np.isclose(xi.sum(), 1.0, rtol=0, atol=1e-12):
        raise OpenMarketError("cr weights must lie in the simplex")
    nz = np.flatnonzero(xi)
    n = int(nz[-1]) + 1 if nz.size else 1
    g = geometric(xi[:n], N)
    return GeneratingFunction(g.value, g.grad, g.hess, N, True, n, f"cr(n={n})")


def diversity(p: float, n: int, N: int, unchecked: bool = False) -> GeneratingFunction:
    """``G(x) = (sum_{i<n} x_i^p)^{1/p}`` on the positive orthant.

    ``p`` must lie in (0, 1) unless ``unchecked`` is set (then any ``p != 0``).
    """
    p = float(p)
    if not unchecked and not 0 < p < 1:
        raise OpenMarketError("diversity parameter p must lie in (0, 1)")
    if p == 0 or not 1 <= n <= N:
        raise OpenMarketError("diversity needs p != 0 and 1 <= n <= N")

    def value(x):
        x, vec = _cols(x)
        s = np.sum(_as2d(x)[:n] ** p, axis=0)
        v = s ** (1.0 / p)
        return v[0] if vec else v

    def grad(x):
        x, vec = _cols(x)
        x2 = _as2d(x)
        s = np.sum(x2[:n] ** p, axis=0)
        g = np.zeros_like(x2)
        g[:n] = s ** (1.0 / p - 1.0) * x2[:n] ** (p - 1.0)
        return g[:, 0] if vec else g

    def hess(x):
        x, vec = _cols(x)
        x2 = _as2d(x)
        s = np.sum(x2[:n] ** p, axis=0)
        xp1 = x2[:n] ** (p - 1.0)
        h = np.zeros((N, N, x2.shape[1]))
        h[:n, :n] = (1.0 - p) * s ** (1.0 / p - 2.0) * xp1[:, None, :] * xp1[None, :, :]
        idx = np.arange(n)
        h[idx, idx] -= (1.0 - p) * s ** (1.0 / p - 1.0) * x2[:n] ** (p - 2.0)
        return _hess_out(h, vec)

    return GeneratingFunction(value, grad, hess, N, True, n, f"diversity(p={p:g},n={n})")


def builtin(name: str, N: int, **params) -> GeneratingFunction:
    """Look up a builtin generating function by name.

    ``weighted_arithmetic(c=...)``, ``geometric(c=...)``, ``diversity(p=..., n=...)``,
    ``topn_sum(n=...)``, ``cr(xi=...)``.
    """
    if name == "weighted_arithmetic":
        return weighted_arithmetic(params["c"], N)
    if name == "geometric":
        return geometric(params["c"], N)
    if name == "diversity":
        return diversity(params["p"], params["n"], N, params.get("unchecked", False))
    if name == "topn_sum":
        return topn_sum(params["n"], N)
    if name == "cr":
        return cr(params["xi"], N)
    raise OpenMarketError(f"unknown generating function {name!r}")


def check_balance(G: GeneratingFunction, points: np.ndarray) -> float:
    """Max of ``|G(x) - x . DG(x)|`` and ``|G(a x) - a G(x)|`` (a = 0.5, 2) over columns."""
    x = np.asarray(points, dtype=float)
    v = G.value(x)
    err = np.max(np.abs(v - np.sum(x * G.grad(x), axis=0)))
    for a in (0.5, 2.0):
        err = max(err, float(np.max(np.abs(G.value(a * x) - a * v))))
    return float(err)


def check_derivatives(G: GeneratingFunction, x: np.ndarray, h: float = 1e-5) -> float:
    """Worst relative mismatch between analytic and central-difference derivatives at ``x``.

    The step along coordinate ``i`` is ``h * max(|x_i|, 1e-3)`` so that small
    weights near the boundary of the orthant are not stepped over.
    """
    x = np.asarray(x, dtype=float)
    N = x.size
    hs = h * np.maximum(np.abs(x), 1e-3)
    E = np.diag(hs)
    fd_grad = np.array([(G.value(x + E[i]) - G.value(x - E[i])) / (2 * hs[i]) for i in range(N)])
    fd_hess = np.array([(G.grad(x + E[i]) - G.grad(x - E[i])) / (2 * hs[i]) for i in range(N)])
    g, H = G.grad(x), G.hess(x)
    scale_g = max(1.0, float(np.max(np.abs(g))))
    scale_h = max(1.0, float(np.max(np.abs(H))))
    return max(
        float(np.max(np.abs(fd_grad - g))) / scale_g,
        float(np.max(np.abs(fd_hess - H))) / scale_h,
    )


def generate_ranked(G: GeneratingFunction, tv: TopNView, rv: RankView) -> WeightPath:
    """Portfolio generated by ``G`` evaluated on ranked market weights.

    Rank ``k`` receives ``(D_k G / G + 1 - sum_l mu_(l) D_l G / G) mu_(k)``
    (just ``D_k G / G * mu_(k)`` for balanced G), mapped back to asset names.
    """
    x = tv.mu_ranked
    if not np.all(x > 0):
        raise OpenMarketError("ranked market weights must be strictly positive")
    Gv = G.value(x)
    ratio = G.grad(x) / Gv
    if G.balanced:
        pr = ratio * x
    else:
        pr = (ratio + 1.0 - np.sum(x * ratio, axis=0)) * x
    if G.admissible:
        pr[G.top_n :] = 0.0
    return WeightPath(rv.by_name(pr), G.name)


def generate_denominated(G: GeneratingFunction, path: MarketPath, x_mu_tilde: np.ndarray, tv: TopNView) -> WeightPath:
    """Portfolio generated by ``G`` evaluated on prices denominated by the top-n market wealth.

    ``pi_i = s_i D_i G / G + mu~_i (1 - sum_j s_j D_j G / G)`` with ``s = S / X_mu~``.
    """
    s = path.S / np.asarray(x_mu_tilde)[None, :]
    Gv = G.value(s)
    if not np.all(np.isfinite(Gv)) or not np.all(Gv > 0):
        raise OpenMarketError("generating function is not positive on the denominated prices")
    term = s * G.grad(s) / Gv
    pi = term + tv.mu_tilde * (1.0 - term.sum(axis=0))
    return WeightPath(pi, G.name)


@dataclass(frozen=True)
class MasterFormulaReport:
    """Both sides of a master formula along one path, with the pieces of the right side."""

    t: np.ndarray
    lhs: np.ndarray
    rhs: np.ndarray
    log_g: np.ndarray
    local_time_term: np.ndarray
    hessian_term: np.ndarray
    mode: str

    @property
    def gap(self) -> np.ndarray:
        return self.lhs - self.rhs

    @property
    def max_gap(self) -> float:
        return float(np.max(np.abs(self.gap)))

    @property
    def relative_gap(self) -> float:
        scale = float(np.max(np.abs(self.lhs)))
        return self.max_gap / scale if scale > 0 else self.max_gap

    def write_csv(self, file) -> None:
        atomic_write_rows(file, ["t", "lhs", "rhs", "gap"], np.vstack([self.t, self.lhs, self.rhs, self.gap]).T)


def _cumulative(x):
    out = np.zeros(x.size + 1)
    np.cumsum(x, out=out[1:])
    return out


def _named_increments(values: np.ndarray, rv: RankView) -> np.ndarray:
    """Increments over each step of the series held at each rank at the left endpoint."""
    order = rv.order[:, :-1]
    cols = np.arange(rv.M - 1)
    return values[order, cols + 1] - values[order, cols]


def _hessian_term(G, x_left, dx, idx=None):
    """sum_k 1/2 sum_ij D2_ij G / G dx_i dx_j at left endpoints, cumulated."""
    H = G.hess(x_left)  # (M-1, N, N)
    Gv = G.value(x_left)
    if idx is not None:
        H = H[:, idx][:, :, idx]
        dx = dx[idx]
    q = np.einsum("kij,ik,jk->k", H, dx, dx) / Gv
    return _cumulative(0.5 * q)


def verify_master(G: GeneratingFunction, path: MarketPath, n: int, mode: str = "topn") -> MasterFormulaReport:
    """Compare realized log relative wealth of the generated portfolio with its
    master-formula decomposition along one path.

    Parameters
    ----------
    mode : {"topn", "entire", "denominated"}
        ``topn``: rank-generated portfolio against the top-n market portfolio
        (G must be admissible). ``entire``: rank-generated portfolio against the
        whole market portfolio. ``denominated``: G on prices denominated by the
        top-n market wealth, against the top-n market portfolio.

    Local-time integrands are taken at the left endpoint of each step; quadratic
    covariations are realized brackets of the ranked weights (or denominated prices).
    """
    rv, tv = rank_path(path, n)
    inc = increments(path)
    t = path.t
    if mode == "denominated":
        leak = tilde_mu_wealth(path, rv, tv)
        x_mt = leak.direct.X
        pi = generate_denominated(G, path, x_mt, tv)
        lhs = np.log(wealth(pi, inc).X) - np.log(x_mt)
        s = path.S / x_mt
        Gs = G.value(s)
        log_g = np.log(Gs / Gs[0])
        ds = np.diff(s, axis=1)
        hess = _hessian_term(G, s[:, :-1], ds)
        zero = np.zeros_like(lhs)
        return MasterFormulaReport(t, lhs, log_g - hess, log_g, zero, hess, mode)

    if mode not in ("topn", "entire"):
        raise OpenMarketError(f"unknown master formula mode {mode!r}")
    if mode == "topn" and not G.admissible:
        flag = "balanced" if not G.balanced else "top_n"
        raise OpenMarketError(f"generating function {G.name} is not admissible (fails {flag})")

    x = tv.mu_ranked
    pi = generate_ranked(G, tv, rv)
    x_pi = wealth(pi, inc).X
    Gx = G.value(x)
    log_g = np.log(Gx / Gx[0])
    lt = collision_local_times(rv, "weight", values=tv.mu, nonadjacent=False)
    dL = np.array([np.diff(e.L) for e in lt.adjacent])  # (N-1, M-1), k -> gap k, k+1
    x_left = x[:, :-1]
    ratio = G.grad(x_left) / G.value(x_left)  # D_k G / G at left endpoints
    dx = _named_increments(tv.mu, rv)
    N = rv.N

    if mode == "entire":
        x_mu = wealth(WeightPath(tv.mu, "mu"), inc).X
        lhs = np.log(x_pi) - np.log(x_mu)
        pr = rv.by_rank(pi.pi)[:, :-1] / x_left
        lt_rate = np.sum((pr[:-1] - pr[1:]) * dL, axis=0)
        local = _cumulative(-0.5 * lt_rate)
        hess = _hessian_term(G, x_left, dx)
        return MasterFormulaReport(t, lhs, log_g + local - hess, log_g, local, hess, mode)

    x_mt = wealth(WeightPath(tv.mu_tilde, "mu_tilde"), inc).X
    lhs = np.log(x_pi) - np.log(x_mt)
    top = x[:n].sum(axis=0)
    log_top = np.log(top / top[0])
    nxt = np.vstack([ratio[1:], np.zeros((1, ratio.shape[1]))])
    terms = (ratio[:n] - nxt[:n]) * dL[:n]
    rate = -0.5 * np.sum(terms, axis=0) + 0.5 * dL[n - 1] / top[:-1]
    local = _cumulative(rate)
    hess = _hessian_term(G, x_left, dx, idx=np.arange(n))
    rhs = log_g - log_top + local - hess
    return MasterFormulaReport(t, lhs, rhs, log_g - log_top, local, hess, mode)
