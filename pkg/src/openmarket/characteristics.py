"""Local characteristics (drift rates, covariation rates, clock), their top-n
censoring, the spectral pseudo-inverse, the numeraire portfolio, maximal growth
rates and viability verdicts.

All implemented models are absolutely continuous in time, so the clock is
calendar time: ``dO[k] = t[k+1] - t[k]`` and every rate is per year.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .errors import OpenMarketError
from .market import IncrementSeries, MarketPath, ModelSpec, atomic_write_rows
from .portfolios import WeightPath, wealth
from .ranks import RankView

__all__ = [
    "LocalCharacteristics",
    "CensoredCharacteristics",
    "GrowthReport",
    "analytic_characteristics",
    "censor",
    "pseudo_inverse",
    "numeraire_portfolio",
    "whole_market_numeraire",
    "numeraire_residual",
    "growth_supremum_excess",
    "growth_report",
    "WitnessCheck",
    "witness_check",
    "write_characteristics",
    "read_characteristics",
]


@dataclass(frozen=True)
class LocalCharacteristics:
    """Drift rates ``alpha`` (N x M), covariation rates ``c`` (M x N x N), clock steps ``dO`` (M-1)."""

    alpha: np.ndarray
    c: np.ndarray
    dO: np.ndarray

    def __post_init__(self):
        alpha = np.asarray(self.alpha, dtype=float)
        c = np.asarray(self.c, dtype=float)
        dO = np.asarray(self.dO, dtype=float)
        N, M = alpha.shape
        if c.shape != (M, N, N):
            raise OpenMarketError(f"covariation rates must have shape {(M, N, N)}, got {c.shape}")
        if dO.shape != (M - 1,) or not np.all(dO > 0):
            raise OpenMarketError("clock increments must be positive, one per step")
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "dO", dO)

    @property
    def N(self) -> int:
        return self.alpha.shape[0]

    @property
    def M(self) -> int:
        return self.alpha.shape[1]


@dataclass(frozen=True)
class CensoredCharacteristics:
    """``alpha_tilde = D alpha`` and ``c_tilde = D c D`` with ``D = diag(mask)``."""

    alpha: np.ndarray
    c: np.ndarray
    dO: np.ndarray
    mask: np.ndarray

    @property
    def N(self) -> int:
        return self.alpha.shape[0]

    @property
    def M(self) -> int:
        return self.alpha.shape[1]


def analytic_characteristics(spec: ModelSpec, path: MarketPath, rv: Optional[RankView] = None) -> LocalCharacteristics:
    """Model drift and covariation rates along a simulated path.

    GBM rates are constant; Atlas rates are the rank-k parameters assigned through
    the rank of each asset at each grid point; factor-model drift is
    ``leverage * c @ mu_top`` on the model's own top-n weights.
    """
    N, M = path.N, path.M
    if spec.N != N:
        raise OpenMarketError("model and path have different asset counts")
    dO = path.grid.dt
    if spec.kind == "gbm":
        alpha = np.broadcast_to(spec.drift[:, None], (N, M))
        c = np.broadcast_to(spec.cov, (M, N, N))
    elif spec.kind == "atlas":
        if rv is None:
            raise OpenMarketError("atlas characteristics need the rank view")
        r = rv.rank0
        alpha = spec.rank_drift[r]
        vol2 = spec.rank_vol[r] ** 2
        c = np.zeros((M, N, N))
        idx = np.arange(N)
        c[:, idx, idx] = vol2.T
    elif spec.kind == "factor":
        order = np.argsort(-path.S, axis=0, kind="stable")[: spec.n]
        top = np.zeros((N, M), dtype=bool)
        np.put_along_axis(top, order, True, axis=0)
        S_top = np.where(top, path.S, 0.0)
        mu_top = S_top / S_top.sum(axis=0)
        alpha = spec.leverage * (spec.cov @ mu_top)
        c = np.broadcast_to(spec.cov, (M, N, N))
    else:
        raise OpenMarketError(f"unsupported model kind {spec.kind!r}")
    return LocalCharacteristics(alpha, c, dO)


def censor(chars, rv: RankView) -> CensoredCharacteristics:
    """Mask drift rows and covariation rows/columns of assets outside the top n."""
    mask = rv.mask
    if mask.shape != chars.alpha.shape:
        raise OpenMarketError("mask and characteristics do not match")
    d = mask.astype(float)
    alpha = chars.alpha * d
    c = chars.c * d.T[:, :, None] * d.T[:, None, :]
    return CensoredCharacteristics(alpha, c, chars.dO, mask)


def pseudo_inverse(m, tol: float = 1e-10) -> np.ndarray:
    """Pseudo-inverse of a symmetric PSD matrix (or a stack of them) by spectral thresholding.

    Eigenvalues at or below ``tol * lambda_max`` are treated as zero; the rest are
    inverted. Equals the Moore-Penrose inverse on symmetric PSD input.

    Raises
    ------
    OpenMarketError
        If the input is asymmetric beyond 1e-9 (absolute, relative to its scale).
    """
    m = np.asarray(m, dtype=float)
    if m.ndim < 2 or m.shape[-1] != m.shape[-2]:
        raise OpenMarketError("pseudo-inverse needs square matrices")
    scale = max(1.0, float(np.max(np.abs(m)))) if m.size else 1.0
    if np.max(np.abs(m - np.swapaxes(m, -1, -2)), initial=0.0) > 1e-9 * scale:
        raise OpenMarketError("pseudo-inverse input is not symmetric")
    lam, vec = np.linalg.eigh(0.5 * (m + np.swapaxes(m, -1, -2)))
    lam_max = lam[..., -1:] if lam.shape[-1] else lam
    keep = lam > tol * np.maximum(lam_max, 0.0)
    keep &= lam > 0
    inv = np.where(keep, 1.0 / np.where(keep, lam, 1.0), 0.0)
    return (vec * inv[..., None, :]) @ np.swapaxes(vec, -1, -2)


def _pinv_steps(c: np.ndarray, tol: float) -> np.ndarray:
    """Pseudo-inverse per step, computed once per run of identical consecutive matrices.

    Rates change only when ranks (or the model state) change, so runs are long.
    """
    M = c.shape[0]
    if M == 0:
        return np.zeros_like(c)
    new = np.ones(M, dtype=bool)
    new[1:] = np.any(c[1:] != c[:-1], axis=(1, 2))
    starts = np.flatnonzero(new)
    pinv = pseudo_inverse(c[starts], tol)
    return pinv[np.cumsum(new) - 1]


def _solve(alpha: np.ndarray, c: np.ndarray, tol: float):
    cdag = _pinv_steps(c, tol)
    nu = np.einsum("kij,jk->ik", cdag, alpha)
    proj = np.einsum("kij,jk->ik", c, nu)
    resid = np.linalg.norm(proj - alpha, axis=0)
    norm = np.linalg.norm(alpha, axis=0)
    range_ok = resid <= tol * norm
    return nu, proj, range_ok


def numeraire_portfolio(cc: CensoredCharacteristics, tol: float = 1e-10) -> Tuple[WeightPath, np.ndarray]:
    """``rho = D c_tilde^+ alpha_tilde`` per grid point, and the per-step range flag.

    ``range_ok[k]`` is False where ``alpha_tilde`` leaves the range of ``c_tilde``
    (no numeraire exists there); ``rho`` is still the least-squares candidate.
    """
    nu, _, range_ok = _solve(cc.alpha, cc.c, tol)
    rho = np.where(cc.mask, nu, 0.0)
    return WeightPath(rho, "rho"), range_ok


def whole_market_numeraire(chars: LocalCharacteristics, tol: float = 1e-10) -> Tuple[WeightPath, np.ndarray]:
    """``c^+ alpha`` for the whole N-stock market."""
    nu, _, range_ok = _solve(chars.alpha, chars.c, tol)
    return WeightPath(nu, "rho_whole"), range_ok


def numeraire_residual(cc: CensoredCharacteristics, rho: WeightPath, range_ok: np.ndarray) -> np.ndarray:
    """Per-step ``||c~ rho - alpha~|| / ||alpha~||`` (0 where ``alpha~ = 0``, NaN where out of range)."""
    r = np.einsum("kij,jk->ik", cc.c, rho.pi[:, : cc.M]) - cc.alpha
    num = np.linalg.norm(r, axis=0)
    den = np.linalg.norm(cc.alpha, axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        rel = np.where(den > 0, num / np.where(den > 0, den, 1.0), num)
    return np.where(range_ok, rel, np.nan)


def growth_supremum_excess(
    cc: CensoredCharacteristics, g_tilde: np.ndarray, samples: int, rng: np.random.Generator, scale: float = 5.0
) -> float:
    """Largest ``p' alpha~ - p' c~ p / 2 - g~`` over random masked vectors ``p``.

    Vectors are Gaussian with standard deviation ``scale`` restricted to the
    current top n. A value ``<= 0`` (up to rounding) supports ``g~`` being the
    supremum; steps with infinite ``g~`` are skipped.
    """
    ok = np.isfinite(g_tilde)
    p = rng.standard_normal((cc.M, samples, cc.N)) * scale * cc.mask.T[:, None, :]
    lin = np.einsum("ksi,ik->ks", p, cc.alpha)
    quad = np.einsum("ksi,kij,ksj->ks", p, cc.c, p)
    excess = lin - 0.5 * quad - g_tilde[:, None]
    return float(np.max(excess[ok])) if np.any(ok) else -np.inf


@dataclass(frozen=True)
class GrowthReport:
    """Maximal growth rates of the top-n and the whole market.

    ``g_tilde``/``g`` are +inf at grid points where the drift leaves the range of
    the covariation rate. ``G_tilde``, ``G`` and ``gap = G - G_tilde`` are clock
    integrals with left-endpoint rates. ``witness`` is the Case-A weight path
    (zero wherever the top-n drift lies in range).
    """

    g_tilde: np.ndarray
    G_tilde: np.ndarray
    range_ok: np.ndarray
    verdict: str
    g: np.ndarray
    G: np.ndarray
    whole_range_ok: np.ndarray
    gap: np.ndarray
    witness: WeightPath

    @property
    def viable(self) -> bool:
        return self.verdict == "viable"

    def gap_nondecreasing(self, tol: float = 1e-12) -> bool:
        return bool(np.all(np.diff(self.gap) >= -tol))


def _growth(alpha, c, tol):
    nu, proj, range_ok = _solve(alpha, c, tol)
    g = 0.5 * np.einsum("ik,ik->k", alpha, nu)
    return np.where(range_ok, g, np.inf), range_ok, proj


def growth_report(
    chars: LocalCharacteristics,
    cc: CensoredCharacteristics,
    tol: float = 1e-10,
    explosion: float = 1e6,
) -> GrowthReport:
    """Maximal growth, aggregate growth, viability verdict and whole-market gap.

    The verdict is ``"nonviable(case A)"`` when some step's censored drift is out
    of range, ``"nonviable(case B)"`` when ``G_tilde(T)`` exceeds
    ``explosion * T``, and ``"viable"`` otherwise.
    """
    steps = cc.dO.size
    g_tilde, range_ok, proj = _growth(cc.alpha, cc.c, tol)
    g, whole_ok, _ = _growth(chars.alpha, chars.c, tol)

    def integrate(rate):
        out = np.zeros(rate.size)
        np.cumsum(rate[:steps] * cc.dO, out=out[1:])
        return out

    G_tilde = integrate(g_tilde)
    G = integrate(g)
    horizon = float(np.sum(cc.dO))
    if not np.all(range_ok[:steps]):
        verdict = "nonviable(case A)"
    elif G_tilde[-1] > explosion * horizon:
        verdict = "nonviable(case B)"
    else:
        verdict = "viable"
    with np.errstate(invalid="ignore"):
        gap = G - G_tilde

    resid = cc.alpha - proj
    r2 = np.sum(resid**2, axis=0)
    phi = np.where(range_ok, 0.0, resid / np.where(range_ok, 1.0, r2))
    phi = np.where(cc.mask, phi, 0.0)
    return GrowthReport(g_tilde, G_tilde, range_ok, verdict, g, G, whole_ok, gap, WeightPath(phi, "phi"))


@dataclass(frozen=True)
class WitnessCheck:
    """Wealth of the Case-A witness and the realized quadratic variation of its
    martingale part."""

    X: np.ndarray
    nondecreasing: bool
    realized_qv: float


def witness_check(phi: WeightPath, inc: IncrementSeries, cc: CensoredCharacteristics) -> WitnessCheck:
    """Run the witness portfolio on realized returns.

    The martingale part of each step's return is the realized return minus its
    conditional mean ``exp(alpha dt) - 1`` (exact for the log-space models here).
    """
    w = wealth(phi, inc)
    steps = inc.steps
    pi = phi.pi[:, :steps]
    compensator = np.expm1(cc.alpha[:, :steps] * cc.dO)
    mart = np.einsum("ik,ik->k", pi, inc.dR - compensator)
    return WitnessCheck(w.X, bool(np.all(np.diff(w.X) >= 0)), float(np.sum(mart**2)))


def write_characteristics(t: np.ndarray, chars, file) -> None:
    """CSV with one row per grid point: ``t, alpha_1..alpha_N, c_11..c_NN`` (row-major)."""
    N, M = chars.alpha.shape
    header = ["t"] + [f"alpha_{i + 1}" for i in range(N)]
    header += [f"c_{i + 1}_{j + 1}" for i in range(N) for j in range(N)]
    rows = np.hstack([np.asarray(t)[:, None], chars.alpha.T, np.asarray(chars.c).reshape(M, N * N)])
    atomic_write_rows(file, header, rows)


def read_characteristics(file) -> Tuple[np.ndarray, LocalCharacteristics]:
    with open(file, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        data = np.array([[float(v) for v in row] for row in reader if row])
    N = sum(1 for h in header if h.startswith("alpha_"))
    if len(header) != 1 + N + N * N:
        raise OpenMarketError(f"{file}: expected {1 + N + N * N} columns")
    t = data[:, 0]
    alpha = data[:, 1 : 1 + N].T
    c = data[:, 1 + N :].reshape(-1, N, N)
    return t, LocalCharacteristics(alpha, c, np.diff(t))
