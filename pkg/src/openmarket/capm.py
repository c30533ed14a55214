"""Is the top-n market in the realm of the CAPM? Leverage and beta processes
from censored characteristics, plus realized-data checks."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .characteristics import CensoredCharacteristics
from .market import IncrementSeries, atomic_write_rows
from .ranks import RankView

__all__ = ["CapmFit", "capm_fit", "ResidualCheck", "residual_orthogonality", "realized_beta", "pooled_beta"]


@dataclass(frozen=True)
class CapmFit:
    """Leverage ``b`` (M), betas ``beta`` (N x M) and the two CAPM verdicts.

    ``positive`` marks grid points where ``c_mm = mu~' c~ mu~`` exceeds the
    numerical-zero threshold. ``residual_A`` is the per-step
    ``max_i |alpha~_i - b c_im|`` there; ``integrability`` is the finite sum
    ``sum_i int |b| 1{c_mm > 0} |c_im| dO`` (a size diagnostic, always finite).
    """

    b: np.ndarray
    beta: np.ndarray
    alpha_m: np.ndarray
    c_mm: np.ndarray
    c_im: np.ndarray
    positive: np.ndarray
    residual_A: np.ndarray
    violation_B: np.ndarray
    verdictA: bool
    verdictB: bool
    integrability: float

    @property
    def in_capm(self) -> bool:
        return self.verdictA and self.verdictB

    def write_csv(self, t, file) -> None:
        N = self.beta.shape[0]
        header = ["t", "b"] + [f"beta_{i + 1}" for i in range(N)]
        atomic_write_rows(file, header, np.vstack([t, self.b, self.beta]).T)


def capm_fit(cc: CensoredCharacteristics, mu_tilde, tol: float = 1e-9, eps: float = 1e-12) -> CapmFit:
    """Compute ``b = alpha_m / c_mm`` and ``beta_i = c_im / c_mm`` (or ``alpha~_i / alpha_m``
    where ``c_mm`` vanishes) and test conditions (A) and (B).

    Parameters
    ----------
    cc : CensoredCharacteristics
    mu_tilde : ndarray or WeightPath
        Top-n market weights, N x M.
    tol : float
        Tolerance on ``|alpha~_i - b c_im|`` for (A) and on ``|alpha~_i|`` for (B).
    eps : float
        ``c_mm <= eps * max(c_mm)`` counts as zero; ``|alpha_m| <= eps * max|alpha~|``
        counts as a zero drift of the top-n market.
    """
    mu = np.asarray(getattr(mu_tilde, "pi", mu_tilde), dtype=float)
    a = cc.alpha
    c_im = np.einsum("kij,jk->ik", cc.c, mu)
    c_mm = np.einsum("ik,ik->k", mu, c_im)
    alpha_m = np.einsum("ik,ik->k", mu, a)
    positive = c_mm > eps * max(float(np.max(c_mm)), 0.0)
    safe = np.where(positive, c_mm, 1.0)
    b = np.where(positive, alpha_m / safe, 0.0)

    a_scale = float(np.max(np.abs(a))) if a.size else 0.0
    m_zero = np.abs(alpha_m) <= eps * a_scale
    second = ~positive & ~m_zero
    beta = np.where(positive, c_im / safe, 0.0)
    beta = np.where(second, a / np.where(m_zero, 1.0, alpha_m), beta)

    residual_A = np.where(positive, np.max(np.abs(a - b * c_im), axis=0), 0.0)
    violation_B = np.where(~positive & m_zero, np.max(np.abs(a), axis=0), 0.0)
    steps = cc.dO.size
    integrability = float(np.sum(np.abs(b[:steps]) * positive[:steps] * np.abs(c_im[:, :steps]) * cc.dO))
    return CapmFit(
        b, beta, alpha_m, c_mm, c_im, positive, residual_A, violation_B,
        bool(np.all(residual_A <= tol)), bool(np.all(violation_B <= tol)), integrability,
    )


@dataclass(frozen=True)
class ResidualCheck:
    """Realized ``[N_i, R_mu~](T)`` per asset against ``[R_mu~, R_mu~](T)``."""

    covariation: np.ndarray
    qv_market: float
    ratio: float
    passed: bool


def _market_returns(inc: IncrementSeries, mu) -> np.ndarray:
    mu = np.asarray(getattr(mu, "pi", mu), dtype=float)
    return np.einsum("ik,ik->k", mu[:, : inc.steps], inc.dR)


def residual_orthogonality(
    inc: IncrementSeries, beta: np.ndarray, rv: RankView, mu_tilde, tol: float = 0.01
) -> ResidualCheck:
    """Realized covariation of ``N_i = R~_i - int beta_i dR_mu~`` with ``R_mu~``.

    Increments are censored and betas taken at the left endpoint. Passes when
    ``max_i |[N_i, R_mu~](T)| <= tol * [R_mu~, R_mu~](T)``.
    """
    steps = inc.steps
    dRm = _market_returns(inc, mu_tilde)
    dRt = np.where(rv.mask[:, :steps], inc.dR, 0.0)
    dN = dRt - beta[:, :steps] * dRm
    cov = dN @ dRm
    qv = float(dRm @ dRm)
    worst = float(np.max(np.abs(cov)))
    ratio = worst / qv if qv > 0 else (0.0 if worst == 0 else np.inf)
    return ResidualCheck(cov, qv, ratio, bool(worst <= tol * qv))


def realized_beta(inc: IncrementSeries, rv: RankView, mu_tilde) -> np.ndarray:
    """Pooled realized beta of each asset on the top-n market over the steps it ranks in the top n.

    NaN for assets never in the top n.
    """
    steps = inc.steps
    dRm = _market_returns(inc, mu_tilde)
    on = rv.mask[:, :steps]
    num = np.sum(np.where(on, inc.dR * dRm, 0.0), axis=1)
    den = np.sum(np.where(on, dRm**2, 0.0), axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(den > 0, num / den, np.nan)


def pooled_beta(fit: CapmFit, rv: RankView, steps: int) -> np.ndarray:
    """``c_mm``-weighted average of the fitted beta over the steps each asset ranks in the top n.

    This is the quantity :func:`realized_beta` estimates.
    """
    on = rv.mask[:, :steps]
    w = np.where(on, fit.c_mm[:steps], 0.0)
    num = np.sum(w * fit.beta[:, :steps], axis=1)
    den = np.sum(w, axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(den > 0, num / den, np.nan)
