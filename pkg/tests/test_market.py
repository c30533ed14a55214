import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from openmarket.errors import OpenMarketError, SimulationError
from openmarket.market import (
    IncrementSeries,
    MarketPath,
    ModelSpec,
    TimeGrid,
    increments,
    load_paths,
    psd_sqrt,
    simulate,
    simulate_ensemble,
    write_paths,
)
from openmarket.ranks import rank_path


def test_time_grid_validation():
    with pytest.raises(OpenMarketError):
        TimeGrid([0.0])
    with pytest.raises(OpenMarketError):
        TimeGrid([0.1, 0.2])
    with pytest.raises(OpenMarketError):
        TimeGrid([0.0, 0.5, 0.5])
    g = TimeGrid.uniform(1.0, 0.25)
    assert len(g) == 5
    np.testing.assert_allclose(g.dt, 0.25)
    assert g.horizon == 1.0


def test_model_spec_rejects_bad_inputs():
    with pytest.raises(OpenMarketError):
        ModelSpec.gbm([0.0, 0.0], [[1.0, 2.0], [2.0, 1.0]], [1.0, 1.0])  # indefinite
    with pytest.raises(OpenMarketError):
        ModelSpec.gbm([0.0, 0.0], [0.1, 0.1], [1.0, 0.0])
    with pytest.raises(OpenMarketError):
        ModelSpec.atlas([0.0, 0.0], [0.1, -0.1], [1.0, 2.0])
    with pytest.raises(OpenMarketError):
        psd_sqrt(np.array([[1.0, 0.5], [0.0, 1.0]]))


def test_zero_vol_single_asset_is_deterministic():
    g = TimeGrid.uniform(2.0, 0.1)
    p = simulate(ModelSpec.gbm([0.07], [0.0], [50.0]), g, seed=1)
    np.testing.assert_allclose(p.S[0], 50.0 * np.exp(0.07 * g.t), rtol=1e-13)
    flat = simulate(ModelSpec.gbm([0.0], [0.0], [50.0]), g, seed=1)
    assert np.all(flat.S == 50.0)


def test_driftless_gbm_is_a_martingale():
    spec = ModelSpec.gbm([0.0, 0.0], [0.04, 0.04], [1.0, 1.0])
    g = TimeGrid([0.0, 1.0])
    ends = np.array([p.S[:, -1] for p in simulate_ensemble(spec, g, 3, 10_000)])
    mean = ends.mean(axis=0)
    se = ends.std(axis=0, ddof=1) / np.sqrt(ends.shape[0])
    assert np.all(np.abs(mean - 1.0) <= 3 * se)


def test_gbm_log_increments_have_exact_moments():
    cov = np.array([[0.09, 0.03], [0.03, 0.04]])
    drift = np.array([0.1, -0.05])
    spec = ModelSpec.gbm(drift, cov, [1.0, 1.0])
    dt = 0.5
    x = np.array([np.log(p.S[:, 1]) for p in simulate_ensemble(spec, TimeGrid([0.0, dt]), 7, 100_000)])
    mean_true = (drift - 0.5 * np.diag(cov)) * dt
    se = np.sqrt(np.diag(cov) * dt / x.shape[0])
    assert np.all(np.abs(x.mean(axis=0) - mean_true) <= 4 * se)
    var = x.var(axis=0, ddof=1)
    var_se = np.diag(cov) * dt * np.sqrt(2.0 / (x.shape[0] - 1))
    assert np.all(np.abs(var - np.diag(cov) * dt) <= 4 * var_se)
    cxy = np.cov(x.T)[0, 1]
    assert abs(cxy - cov[0, 1] * dt) <= 4 * np.sqrt((cov[0, 0] * cov[1, 1] + cov[0, 1] ** 2) * dt**2 / x.shape[0])


def test_atlas_produces_rank_crossings():
    spec = ModelSpec.atlas([0.0, 0.0, 0.5], [0.2, 0.2, 0.2], [120.0, 100.0, 80.0])
    g = TimeGrid.uniform(10.0, 0.01)
    crossed = 0
    for p in simulate_ensemble(spec, g, 4, 1000):
        order = np.argsort(-p.S, axis=0, kind="stable")
        crossed += bool(np.any(order[:, 1:] != order[:, :-1]))
    assert crossed > 990


def test_same_seed_same_bytes(tmp_path):
    spec = ModelSpec.atlas([0.1, 0.0, -0.1], [0.3, 0.2, 0.1], [1.0, 2.0, 3.0])
    g = TimeGrid.uniform(1.0, 0.01)
    a, b = simulate(spec, g, 9, 4), simulate(spec, g, 9, 4)
    assert a.S.tobytes() == b.S.tobytes()
    write_paths(a, tmp_path / "a.csv")
    write_paths(b, tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    assert simulate(spec, g, 9, 5).S.tobytes() != a.S.tobytes()


def test_ensemble_is_order_independent():
    spec = ModelSpec.gbm([0.0] * 3, [0.04] * 3, [1.0] * 3)
    g = TimeGrid.uniform(0.1, 0.01)
    whole = list(simulate_ensemble(spec, g, 2, 6))
    tail = list(simulate_ensemble(spec, g, 2, 3, start=3))
    for x, y in zip(whole[3:], tail):
        assert np.array_equal(x.S, y.S)


def test_non_finite_step_reports_index():
    spec = ModelSpec.gbm([800.0, 0.0], [0.0, 0.0], [1.0, 1.0])
    with pytest.raises(SimulationError) as exc:
        simulate(spec, TimeGrid.uniform(2.0, 0.5), 0)
    assert exc.value.step is not None


def test_factor_model_covariance():
    spec = ModelSpec.factor([1.0, 2.0, 0.5], 0.2, [0.1, 0.0, 0.3], 1.5, 2, [3.0, 2.0, 1.0])
    expect = 0.04 * np.outer([1.0, 2.0, 0.5], [1.0, 2.0, 0.5]) + np.diag([0.01, 0.0, 0.09])
    np.testing.assert_allclose(spec.cov, expect, rtol=1e-15)
    with pytest.raises(OpenMarketError):
        ModelSpec.factor([1.0, 1.0], 0.2, 0.1, 1.0, 2, [1.0, 1.0])


def test_round_trip_is_bit_identical(tmp_path):
    spec = ModelSpec.gbm([0.05, 0.02], [0.09, 0.04], [100.0, 37.5])
    p = simulate(spec, TimeGrid.uniform(1.0, 1e-2), 11)
    write_paths(p, tmp_path / "p.csv")
    q = load_paths(tmp_path / "p.csv")
    assert np.array_equal(p.S, q.S)
    assert np.array_equal(p.t, q.t)
    assert (tmp_path / "p.csv").read_text().splitlines()[0] == "t,S1,S2"


def test_load_constant_file(tmp_path):
    f = tmp_path / "c.csv"
    f.write_text("t,S1,S2\n0,1.5,2\n0.5,1.5,2\n1,1.5,2\n")
    p = load_paths(f)
    assert p.S.shape == (2, 3)
    assert np.all(p.S[0] == 1.5)
    assert np.all(increments(p).dR == 0.0)


def test_load_rejects_zero_price_naming_the_cell(tmp_path):
    f = tmp_path / "bad.csv"
    f.write_text("t,S1,S2\n0,1,2\n0.5,1,0\n")
    with pytest.raises(OpenMarketError, match=r"row 3, column S2"):
        load_paths(f)


def test_load_rejects_non_monotone_times(tmp_path):
    f = tmp_path / "bad.csv"
    f.write_text("t,S1\n0,1\n0.5,1\n0.4,1\n")
    with pytest.raises(OpenMarketError, match="increase"):
        load_paths(f)


def test_market_path_validation():
    g = TimeGrid([0.0, 1.0])
    with pytest.raises(OpenMarketError):
        MarketPath(g, np.array([[1.0, -1.0]]))
    p = MarketPath(g, np.array([[1.0, 2.0], [3.0, 4.0]]))
    assert np.array_equal(p.Sigma, [4.0, 6.0])


def test_simple_increment_arithmetic():
    p = MarketPath(TimeGrid([0.0, 1.0, 2.0]), np.array([[100.0, 110.0, 99.0]]))
    np.testing.assert_allclose(increments(p).dR[0], [0.10, -0.10], rtol=1e-15)


def test_increments_reconstruct_the_path():
    spec = ModelSpec.gbm([0.1, 0.0, -0.1], [0.09, 0.04, 0.16], [1.0, 2.0, 3.0])
    p = simulate(spec, TimeGrid.uniform(1.0, 1e-3), 12)
    inc = increments(p)
    rebuilt = p.S[:, :1] * np.cumprod(1.0 + inc.dR, axis=1)
    np.testing.assert_allclose(rebuilt, p.S[:, 1:], rtol=1e-12)
    assert np.all(inc.dR > -1)
    with pytest.raises(OpenMarketError):
        IncrementSeries(np.array([[-1.0]]))


def test_subsample_and_truncate():
    spec = ModelSpec.gbm([0.0] * 2, [0.04] * 2, [1.0] * 2)
    p = simulate(spec, TimeGrid.uniform(1.0, 0.01), 1)
    q = p.subsample(4)
    assert np.array_equal(q.S, p.S[:, ::4])
    r = p.truncate(0.5)
    assert r.t[-1] == pytest.approx(0.5)
    assert np.array_equal(r.S, p.S[:, : r.M])


@settings(max_examples=25, deadline=None)
@given(
    seed=st.integers(0, 2**31),
    N=st.integers(2, 5),
    kind=st.sampled_from(["gbm", "atlas"]),
)
def test_simulated_prices_are_positive(seed, N, kind):
    rng = np.random.default_rng(seed)
    s0 = rng.uniform(1.0, 100.0, N)
    if kind == "gbm":
        spec = ModelSpec.gbm(rng.normal(0, 0.5, N), rng.uniform(0, 1.0, N), s0)
    else:
        spec = ModelSpec.atlas(rng.normal(0, 0.5, N), rng.uniform(0, 1.0, N), s0)
    p = simulate(spec, TimeGrid.uniform(1.0, 0.05), seed)
    assert np.all(p.S > 0)
    assert np.array_equal(p.Sigma, p.S.sum(axis=0))
    rank_path(p, N - 1)
