"""Quick invariant suites on built-in fixtures, behind ``openmarket selftest``.

Each suite returns ``(ok, detail)``; sizes are small so the whole run takes a
few seconds.
"""

from __future__ import annotations

import time
from typing import Callable, List, Tuple

import numpy as np

from .capm import capm_fit
from .characteristics import analytic_characteristics, censor, numeraire_portfolio, numeraire_residual, pseudo_inverse
from .fgp import builtin, check_derivatives, cr, generate_ranked, topn_sum
from .market import ModelSpec, TimeGrid, increments, simulate
from .ranks import rank_path
from .universal import cr_wealth, universal_wealth

__all__ = ["SUITES", "run_selftest"]

_GBM = ModelSpec.gbm(np.full(5, 0.05), np.full(5, 0.04), [120.0, 110.0, 100.0, 95.0, 90.0])


def ranks() -> Tuple[bool, str]:
    spec = ModelSpec.gbm(np.zeros(6), np.full(6, 0.09), np.full(6, 100.0))
    grid = TimeGrid.uniform(0.1, 1e-3)
    worst = 0.0
    for i in range(50):
        p = simulate(spec, grid, 11, i)
        rv, _ = rank_path(p, 3)
        cols = np.arange(p.M)
        if not np.all(rv.u[rv.order, cols] == np.arange(1, 7)[:, None]):
            return False, f"u and p are not inverse on path {i}"
        if np.any(np.diff(rv.ranked, axis=0) > 0):
            return False, f"ranked prices increase on path {i}"
        worst = max(worst, float(np.max(np.abs(rv.ranked.sum(0) - p.S.sum(0)) / p.S.sum(0))))
    return worst <= 1e-12, f"rank sums match to {worst:.1e}"


def pinv() -> Tuple[bool, str]:
    rng = np.random.default_rng(5)
    worst = 0.0
    for _ in range(200):
        N = int(rng.integers(1, 8))
        r = int(rng.integers(0, N + 1))
        a = rng.standard_normal((N, r))
        m = a @ a.T
        mp = pseudo_inverse(m)
        s = max(1.0, np.abs(m).max()) * max(1.0, np.abs(mp).max())
        err = max(
            np.abs(m @ mp @ m - m).max() / max(1.0, np.abs(m).max()),
            np.abs(mp @ m @ mp - mp).max() / max(1.0, np.abs(mp).max()),
            np.abs(m @ mp - (m @ mp).T).max() / s,
        )
        worst = max(worst, float(err))
    return worst <= 1e-10, f"Moore-Penrose identities hold to {worst:.1e}"


def numeraire() -> Tuple[bool, str]:
    p = simulate(_GBM, TimeGrid.uniform(0.2, 1e-3), 3)
    rv, _ = rank_path(p, 3)
    cc = censor(analytic_characteristics(_GBM, p, rv), rv)
    rho, ok = numeraire_portfolio(cc)
    res = float(np.nanmax(numeraire_residual(cc, rho, ok)))
    return bool(np.all(ok)) and res <= 1e-10, f"||c~rho - a~|| / ||a~|| <= {res:.1e}"


def generators() -> Tuple[bool, str]:
    p = simulate(_GBM, TimeGrid.uniform(0.2, 1e-3), 4)
    rv, tv = rank_path(p, 3)
    e1 = float(np.max(np.abs(generate_ranked(topn_sum(3, 5), tv, rv).pi - tv.mu_tilde)))
    xi = np.array([0.5, 0.3, 0.2])
    w = generate_ranked(cr(xi, 5), tv, rv).pi
    e2 = float(np.max(np.abs(rv.by_rank(w)[:3] - xi[:, None])))
    x = np.random.default_rng(1).dirichlet(np.ones(5))
    x = np.sort(x)[::-1]
    e3 = max(
        check_derivatives(builtin(name, 5, **kw), x)
        for name, kw in [
            ("weighted_arithmetic", {"c": [1, 2, 3, 4, 5]}),
            ("geometric", {"c": [0.4, 0.3, 0.3]}),
            ("diversity", {"p": 0.5, "n": 3}),
            ("topn_sum", {"n": 3}),
            ("cr", {"xi": xi}),
        ]
    )
    ok = e1 <= 1e-12 and e2 <= 1e-12 and e3 <= 1e-6
    return ok, f"topn_sum {e1:.1e}, cr {e2:.1e}, derivatives {e3:.1e}"


def universal() -> Tuple[bool, str]:
    p = simulate(_GBM, TimeGrid.uniform(0.2, 1e-3), 6)
    rv, _ = rank_path(p, 3)
    inc = increments(p)
    uw = universal_wealth(rv, inc, 3, 300, seed=1)
    gap = float(np.max(uw.relative_gap))
    one = universal_wealth(rv, inc, 1, 100, seed=1)
    top = cr_wealth(np.eye(5)[0], rv, inc).X
    e1 = float(np.max(np.abs(one.X_average.X - top) / top))
    return gap <= 1e-10 and e1 <= 1e-12, f"identity gap {gap:.1e}, n=1 degeneracy {e1:.1e}"


def capm() -> Tuple[bool, str]:
    spec = ModelSpec.factor([1.0, 1.2, 0.8, 1.1], 0.2, 0.05, 2.0, 3, [100.0, 95.0, 90.0, 85.0])
    p = simulate(spec, TimeGrid.uniform(0.2, 1e-3), 7)
    rv, tv = rank_path(p, 3)
    fit = capm_fit(censor(analytic_characteristics(spec, p, rv), rv), tv.mu_tilde)
    err = float(np.max(np.abs(fit.b - 2.0)))
    return fit.verdictA and fit.verdictB and err <= 1e-10, f"verdicts {fit.verdictA}/{fit.verdictB}, |b - 2| <= {err:.1e}"


SUITES: List[Tuple[str, Callable]] = [
    ("ranks", ranks),
    ("pseudo-inverse", pinv),
    ("numeraire", numeraire),
    ("generators", generators),
    ("universal", universal),
    ("capm", capm),
]


def run_selftest(echo=print) -> bool:
    all_ok = True
    for name, fn in SUITES:
        t0 = time.perf_counter()
        ok, detail = fn()
        all_ok &= ok
        echo(f"{'PASS' if ok else 'FAIL'}  {name:<15} {detail}  ({time.perf_counter() - t0:.2f} s)")
    return all_ok
