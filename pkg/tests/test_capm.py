import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import factor_beta
from openmarket.capm import capm_fit, pooled_beta, realized_beta, residual_orthogonality
from openmarket.characteristics import CensoredCharacteristics, analytic_characteristics, censor
from openmarket.market import ModelSpec, TimeGrid, increments, simulate
from openmarket.ranks import rank_path

LOADINGS, FV, IDIO, LEVERAGE = [1.0, 1.2, 0.8, 1.1], 0.2, 0.05, 2.0


def _cc(alpha, c, mask):
    alpha, c = np.asarray(alpha, dtype=float), np.asarray(c, dtype=float)
    mask = np.asarray(mask, dtype=bool)
    d = mask.astype(float)
    return CensoredCharacteristics(
        np.repeat((alpha * d)[:, None], 2, axis=1),
        np.repeat((c * np.outer(d, d))[None], 2, axis=0),
        np.array([0.1]),
        np.repeat(mask[:, None], 2, axis=1),
    )


def _weights(mu):
    return np.repeat(np.asarray(mu, dtype=float)[:, None], 2, axis=1)


@pytest.fixture(scope="module")
def factor_market():
    spec = ModelSpec.factor(LOADINGS, FV, IDIO, LEVERAGE, 3, [100.0, 95.0, 90.0, 85.0])
    p = simulate(spec, TimeGrid.uniform(1.0, 1e-4), 10)
    rv, tv = rank_path(p, 3)
    cc = censor(analytic_characteristics(spec, p, rv), rv)
    return p, rv, tv, cc


def test_single_factor_recovery_by_hand():
    beta = np.array([1.0, 1.5, 0.5])
    mask = [True, True, False]
    c = 0.04 * np.outer(beta, beta)
    mu = np.array([0.6, 0.4, 0.0])
    alpha = 3.0 * c @ mu
    fit = capm_fit(_cc(alpha, c, mask), _weights(mu))
    assert fit.verdictA and fit.verdictB and fit.in_capm
    np.testing.assert_allclose(fit.b, 3.0, rtol=1e-12)
    cm = c @ mu
    np.testing.assert_allclose(fit.beta[:, 0], [cm[0] / (mu @ cm), cm[1] / (mu @ cm), 0.0], rtol=1e-12)


def test_zero_drift_is_in_the_capm():
    c = np.diag([0.04, 0.09, 0.01])
    mu = np.array([0.5, 0.5, 0.0])
    fit = capm_fit(_cc(np.zeros(3), c, [True, True, False]), _weights(mu))
    assert fit.verdictA and fit.verdictB
    assert np.all(fit.b == 0)
    cmm = mu @ c @ mu
    np.testing.assert_allclose(fit.beta[:, 0], [0.02 / cmm, 0.045 / cmm, 0.0], rtol=1e-12)


def test_independent_pair_is_not_in_the_capm():
    fit = capm_fit(_cc([1.0, 0.0, 0.3], np.eye(3), [True, True, False]), _weights([0.5, 0.5, 0.0]))
    assert not fit.verdictA
    assert fit.residual_A.max() == pytest.approx(0.5)


def test_zero_covariation_with_drift_violates_b():
    fit = capm_fit(_cc([1.0, -1.0], np.zeros((2, 2)), [True, True]), _weights([0.5, 0.5]))
    assert not fit.positive.any()
    assert not fit.verdictB
    fit = capm_fit(_cc([1.0, 2.0], np.zeros((2, 2)), [True, True]), _weights([0.5, 0.5]))
    assert fit.verdictB  # alpha_m != 0: beta from the drift ratio
    np.testing.assert_allclose(fit.beta[:, 0], [1.0 / 1.5, 2.0 / 1.5])


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(1e-12, 1.0), st.floats(1.0, 100.0))
def test_verdicts_are_monotone_in_tolerance(seed, tol, factor):
    rng = np.random.default_rng(seed)
    N = 4
    a = rng.standard_normal((N, int(rng.integers(0, N + 1))))
    c = a @ a.T
    mask = np.array([True, True, True, False])
    mu = rng.dirichlet(np.ones(3))
    alpha = rng.choice([0.0, 1.0]) * (c @ np.r_[mu, 0.0]) + rng.choice([0.0, 1e-3]) * rng.standard_normal(N)
    cc = _cc(alpha, c, mask)
    tight = capm_fit(cc, _weights(np.r_[mu, 0.0]), tol=tol)
    loose = capm_fit(cc, _weights(np.r_[mu, 0.0]), tol=tol * factor)
    assert loose.verdictA >= tight.verdictA
    assert loose.verdictB >= tight.verdictB


def test_factor_model_recovers_leverage_and_beta(factor_market):
    p, rv, tv, cc = factor_market
    fit = capm_fit(cc, tv.mu_tilde)
    assert fit.in_capm
    assert np.max(np.abs(fit.b - LEVERAGE)) <= 1e-10
    expect = factor_beta(LOADINGS, FV, IDIO, tv.mu_tilde)
    np.testing.assert_allclose(fit.beta, expect, atol=1e-12)
    # identity: sum_i mu~_i beta_i = 1 where the market has variance
    np.testing.assert_allclose(np.sum(tv.mu_tilde * fit.beta, axis=0), 1.0, rtol=1e-12)
    assert fit.integrability > 0 and np.isfinite(fit.integrability)


def test_residuals_are_orthogonal_to_the_market(factor_market):
    p, rv, tv, cc = factor_market
    fit = capm_fit(cc, tv.mu_tilde)
    inc = increments(p)
    chk = residual_orthogonality(inc, fit.beta, rv, tv.mu_tilde)
    assert chk.passed and chk.ratio <= 0.01
    zero = residual_orthogonality(inc, np.zeros_like(fit.beta), rv, tv.mu_tilde)
    assert zero.ratio > 0.5  # raw returns load on the market
    rb = realized_beta(inc, rv, tv.mu_tilde)
    pb = pooled_beta(fit, rv, inc.steps)
    ok = np.isfinite(pb)
    assert np.sqrt(np.mean((rb[ok] - pb[ok]) ** 2)) <= 0.02


def test_zero_vol_market_has_no_covariation():
    spec = ModelSpec.gbm(np.zeros(3), np.zeros(3), [3.0, 2.0, 1.0])
    p = simulate(spec, TimeGrid.uniform(1.0, 0.01), 0)
    rv, tv = rank_path(p, 2)
    chk = residual_orthogonality(increments(p), np.ones((3, p.M)), rv, tv.mu_tilde)
    assert np.all(chk.covariation == 0) and chk.qv_market == 0 and chk.passed


def test_capm_csv(tmp_path, factor_market):
    p, rv, tv, cc = factor_market
    capm_fit(cc, tv.mu_tilde).write_csv(p.t, tmp_path / "c.csv")
    with open(tmp_path / "c.csv") as fh:
        assert fh.readline().strip() == "t,b,beta_1,beta_2,beta_3,beta_4"
