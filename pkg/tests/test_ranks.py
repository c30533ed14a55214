import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import EXPECTED_HALF_LOCAL_TIME, EXPECTED_REFLECTED_LOCAL_TIME, ranks_by_sort, tanaka_loop
from openmarket.errors import OpenMarketError
from openmarket.market import IncrementSeries, MarketPath, ModelSpec, TimeGrid, increments, simulate, simulate_ensemble
from openmarket.ranks import censored_increments, collision_local_times, local_time, rank_path, write_ranked


def _column(*s):
    S = np.array(s, dtype=float)[:, None].repeat(2, axis=1)
    return MarketPath(TimeGrid([0.0, 1.0]), S)


def test_three_asset_example():
    rv, tv = rank_path(_column(3, 1, 2), 2)
    assert rv.ranked[:, 0].tolist() == [3, 2, 1]
    assert rv.u[:, 0].tolist() == [1, 3, 2]
    assert rv.p[:, 0].tolist() == [1, 3, 2]
    assert rv.mask[:, 0].tolist() == [True, False, True]
    np.testing.assert_allclose(tv.mu[:, 0], [1 / 2, 1 / 6, 1 / 3], rtol=1e-15)
    np.testing.assert_allclose(tv.mu_tilde[:, 0], [3 / 5, 0, 2 / 5], rtol=1e-15)
    assert tv.Sigma_tilde[0] == 5.0


def test_ties_go_to_the_smaller_index():
    rv, _ = rank_path(_column(2, 2, 1), 1)
    assert rv.u[:, 0].tolist() == [1, 2, 3]
    assert rv.mask[:, 0].tolist() == [True, False, False]


def test_n_out_of_range():
    for n in (0, 3, 4):
        with pytest.raises(OpenMarketError):
            rank_path(_column(3, 1, 2), n)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(1, 4), min_size=2, max_size=7), st.data())
def test_ranks_match_sort_oracle(prices, data):
    S = np.array(prices, dtype=float)
    n = data.draw(st.integers(1, S.size - 1))
    rv, tv = rank_path(_column(*S), n)
    u, p = ranks_by_sort(list(S))
    assert rv.u[:, 0].tolist() == u
    assert rv.p[:, 0].tolist() == p
    assert rv.mask[:, 0].sum() == n
    assert tv.mu_tilde[:, 0].sum() == pytest.approx(1.0, abs=1e-15)
    x = np.arange(S.size, dtype=float)[:, None].repeat(2, axis=1)
    assert np.array_equal(rv.by_name(rv.by_rank(x)), x)


def test_rank_invariants_on_gbm_paths():
    spec = ModelSpec.gbm(np.zeros(6), np.full(6, 0.09), np.linspace(90.0, 110.0, 6))
    g = TimeGrid.uniform(1.0, 1e-2)
    cols = np.arange(len(g))
    for p in simulate_ensemble(spec, g, 1, 50):
        rv, tv = rank_path(p, 3)
        assert np.all(rv.u[rv.order, cols] == np.arange(1, 7)[:, None])
        assert np.all(np.diff(rv.ranked, axis=0) <= 0)
        np.testing.assert_allclose(rv.ranked.sum(0), p.Sigma, rtol=1e-12)
        np.testing.assert_allclose(tv.mu_tilde.sum(0), 1.0, rtol=1e-14)
        assert np.all(tv.mu_tilde[~rv.mask] == 0)


def test_censored_increments():
    p = simulate(ModelSpec.gbm([0.0] * 3, [0.04] * 3, [3.0, 2.0, 1.0]), TimeGrid.uniform(0.1, 0.01), 2)
    inc = increments(p)
    rv, _ = rank_path(p, 2)
    out = censored_increments(inc, rv)
    assert np.array_equal(out.dR[rv.mask[:, :-1]], inc.dR[rv.mask[:, :-1]])
    assert np.all(out.dR[~rv.mask[:, :-1]] == 0)

    # full mask -> identity; never-in-top asset -> zero row
    class Full:
        mask = np.ones((3, p.M), dtype=bool)
        N, M = 3, p.M

    assert np.array_equal(censored_increments(inc, Full).dR, inc.dR)
    Full.mask = Full.mask.copy()
    Full.mask[1] = False
    assert np.all(censored_increments(inc, Full).dR[1] == 0)
    with pytest.raises(OpenMarketError):
        censored_increments(IncrementSeries(inc.dR[:, :-1]), rv)


def test_local_time_far_from_zero_is_zero():
    t = np.linspace(0.0, 1.0, 101)
    assert np.all(local_time(1.0 + t).L == 0)
    assert np.all(local_time(1.0 + t, "occupation", eps=0.5).L == 0)


def test_local_time_rejects_bad_input():
    with pytest.raises(OpenMarketError):
        local_time([0.0, 1.0], "occupation", eps=0.0)
    with pytest.raises(OpenMarketError):
        local_time([0.0, 1.0], "occupation", eps=-1.0)
    with pytest.raises(OpenMarketError):
        local_time([0.0, 1.0], "occupation")
    with pytest.raises(OpenMarketError):
        local_time([0.0, 1.0], "spline")
    with pytest.raises(OpenMarketError):
        local_time([0.0, np.nan])


def test_tanaka_matches_loop_oracle_and_is_monotone():
    rng = np.random.default_rng(3)
    for _ in range(20):
        y = np.cumsum(rng.standard_normal(500)) * 0.05 + rng.normal(0, 0.1)
        L = local_time(y).L
        np.testing.assert_allclose(L, tanaka_loop(y), atol=1e-12)
        assert np.all(np.diff(L) >= 0)


def test_brownian_local_time_mean():
    # E of the discrete Tanaka sum equals 1/2 E|W(1)| exactly, for any step size
    rng = np.random.default_rng(17)
    W = np.zeros((4000, 1001))
    W[:, 1:] = np.cumsum(rng.standard_normal((4000, 1000)) * np.sqrt(1e-3), axis=1)
    L1 = local_time(W).L[:, -1]
    se = L1.std(ddof=1) / np.sqrt(L1.size)
    assert abs(L1.mean() - EXPECTED_HALF_LOCAL_TIME) <= 4 * se


def test_gap_local_time_is_twice_the_difference_local_time():
    # S1 - S2 = W, ranked gap |W|: collision local time of |W| is 2 L^W, E = E|W(1)|
    rng = np.random.default_rng(23)
    g = TimeGrid.uniform(1.0, 1e-3)
    ends, halves = [], []
    for _ in range(1000):
        W = np.concatenate([[0.0], np.cumsum(rng.standard_normal(len(g) - 1)) * np.sqrt(1e-3)])
        S = np.vstack([20.0 + W, np.full(len(g), 20.0)])
        rv, _ = rank_path(MarketPath(g, S), 1)
        L = collision_local_times(rv, values=S).adjacent[0].L
        ends.append(L[-1])
        halves.append(local_time(W).L[-1])
    ends = np.array(ends)
    np.testing.assert_allclose(ends, 2 * np.array(halves), atol=1e-12)
    se = ends.std(ddof=1) / np.sqrt(ends.size)
    assert abs(ends.mean() - EXPECTED_REFLECTED_LOCAL_TIME) <= 4 * se


def test_collision_local_time_positive_for_equal_start():
    spec = ModelSpec.gbm([0.0, 0.0], [0.09, 0.09], [1.0, 1.0])
    pos = sum(
        collision_local_times(rank_path(p, 1)[0]).adjacent[0].L[-1] > 0
        for p in simulate_ensemble(spec, TimeGrid.uniform(1.0, 1e-3), 8, 1000)
    )
    assert pos > 950


def test_no_crossings_no_collision_local_time():
    p = simulate(ModelSpec.gbm([0.0] * 3, [0.0] * 3, [3.0, 2.0, 1.0]), TimeGrid.uniform(1.0, 0.01), 0)
    lt = collision_local_times(rank_path(p, 2)[0], "weight")
    assert all(np.all(e.L == 0) for e in lt.adjacent)
    assert lt.degeneracy_ratio() == 0.0


def test_nonadjacent_collisions_are_negligible():
    spec = ModelSpec.atlas([0.0, 0.0, 0.0, 0.4], [0.2, 0.2, 0.2, 0.2], [110.0, 105.0, 100.0, 95.0])
    p = simulate(spec, TimeGrid.uniform(5.0, 1e-3), 4)
    lt = collision_local_times(rank_path(p, 2)[0])
    assert min(float(e.L[-1]) for e in lt.adjacent) > 0
    assert set(lt.nonadjacent) == {(1, 3), (1, 4), (2, 4)}
    assert lt.degeneracy_ratio() < 0.05
    with pytest.raises(OpenMarketError):
        collision_local_times(rank_path(p, 2)[0], level="log")


def test_write_ranked(tmp_path):
    p = simulate(ModelSpec.gbm([0.0] * 3, [0.04] * 3, [3.0, 2.0, 1.0]), TimeGrid.uniform(0.1, 0.05), 0)
    rv, _ = rank_path(p, 2)
    write_ranked(p.t, rv, tmp_path / "r.csv")
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines[0] == "t,rank1,rank2,rank3"
    assert len(lines) == p.M + 1
