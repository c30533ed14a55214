"""Experiment runners behind the ``run`` subcommand.

Each runner takes a validated :class:`ExperimentConfig` and returns a
:class:`RunReport`, writing its CSV artifacts into the output directory.
Everything is a deterministic function of the config and its seed.
"""

from __future__ import annotations

import time
from pathlib import Path
from typing import Callable, Dict, List

import numpy as np

from . import capm as capm_mod
from .artifacts import RunReport, write_table
from .characteristics import (
    analytic_characteristics,
    censor,
    growth_report,
    growth_supremum_excess,
    numeraire_portfolio,
    numeraire_residual,
    witness_check,
    write_characteristics,
)
from .config import ExperimentConfig
from .errors import ConfigError, OpenMarketError
from .fgp import builtin, verify_master
from .market import increments, simulate, simulate_ensemble, write_paths
from .portfolios import (
    WeightPath,
    censored_constant_rule,
    rank_constant_rule,
    supermartingale_suite,
    tilde_mu_wealth,
    wealth,
    write_wealth,
)
from .ranks import rank_path
from .universal import asymptotic_gap, universal_wealth

__all__ = ["run_experiment", "random_test_rules", "refinement_slope", "RUNNERS"]


def refinement_slope(dts, errors) -> float:
    """Least-squares slope of ``log(error)`` against ``log(dt)``."""
    return float(np.polyfit(np.log(dts), np.log(errors), 1)[0])


def random_test_rules(n: int, N: int, count: int, rng: np.random.Generator) -> Dict[str, Callable]:
    """``count`` long-only top-n test portfolios: half constant by rank, half
    constant by name while in the top n."""
    rules = {}
    for j in range(count):
        if j % 2 == 0:
            w = rng.dirichlet(np.ones(n))
            rules[f"rank_{j // 2 + 1}"] = rank_constant_rule(w, f"rank_{j // 2 + 1}")
        else:
            w = rng.uniform(0.0, 1.0 / n, N)
            rules[f"censored_{j // 2 + 1}"] = censored_constant_rule(w, f"censored_{j // 2 + 1}")
    return rules


def _save_paths(cfg: ExperimentConfig, out: Path, report: RunReport) -> None:
    if cfg.save_paths == 0:
        return
    (out / "paths").mkdir(exist_ok=True)
    for i in range(min(cfg.save_paths, cfg.paths)):
        name = f"paths/path_{i:04d}.csv"
        write_paths(simulate(cfg.model, cfg.grid, cfg.seed, i), out / name)
        report.artifacts.append(name)


# ---------------------------------------------------------------------------

def run_numeraire(cfg: ExperimentConfig, out: Path, report: RunReport) -> None:
    count = cfg.param("tests", 10, int)
    delta = cfg.param("perturb", 0.5, float)
    k_se = cfg.param("k_se", 3.0, float)
    n, spec = cfg.n, cfg.model
    tests = random_test_rules(n, cfg.N, count, np.random.default_rng([cfg.seed, 101]))
    range_flags: List[bool] = []
    cache = {}

    def rho_rule(path, rv):
        if cache.get("path") is not path:
            cc = censor(analytic_characteristics(spec, path, rv), rv)
            rho, ok = numeraire_portfolio(cc)
            range_flags.append(bool(np.all(ok)))
            cache.update(path=path, rho=rho)
        return cache["rho"]

    def perturbed_rule(path, rv):
        rho = rho_rule(path, rv).pi.copy()
        shift = np.zeros((cfg.N, rv.M))
        order = rv.order
        cols = np.arange(rv.M)
        shift[order[0], cols] += delta
        shift[order[1 % n], cols] -= delta
        return WeightPath(rho + shift, "rho_perturbed")

    tests_with_rho = dict(tests)
    tests_with_rho["rho"] = rho_rule
    paths = simulate_ensemble(spec, cfg.grid, cfg.seed, cfg.paths)
    reps = supermartingale_suite(
        {"rho": rho_rule, "perturbed": perturbed_rule}, tests_with_rho, paths, n, k_se, min_paths=min(100, cfg.paths)
    )
    true, pert = reps["rho"], reps["perturbed"]
    rows = [(r.name, r.mean, r.se, "PASS" if r.passed else "FAIL") for r in true.rows]
    write_table(out / "supermartingale.csv", ["portfolio", "mean", "se", "verdict"], rows)
    rows = [(r.name, r.mean, r.se, "PASS" if r.passed else "FAIL") for r in pert.rows]
    write_table(out / "supermartingale_perturbed.csv", ["portfolio", "mean", "se", "verdict"], rows)
    report.artifacts += ["supermartingale.csv", "supermartingale_perturbed.csv"]

    in_range = all(range_flags)
    for r in true.rows:
        if r.name == "rho":
            continue
        detail = f"E[X_pi/X_rho] = {r.mean:.5f} (se {r.se:.5f})"
        report.add(f"supermartingale.{r.name}", r.passed if in_range else "HYPOTHESIS-UNMET", detail, "numeraire")
        report.scalar(f"ratio_mean.{r.name}", r.mean, r.se)
    broken = [r.name for r in pert.rows if not r.passed]
    report.add(
        "supermartingale.perturbed_rho_detected",
        bool(broken),
        f"perturbed numeraire beaten by {', '.join(broken) or 'none'}",
        "numeraire",
    )

    # one path in detail
    path = simulate(spec, cfg.grid, cfg.seed, 0)
    rv, _ = rank_path(path, n)
    inc = increments(path)
    series = {"rho": wealth(rho_rule(path, rv), inc).X}
    for name, rule in tests.items():
        series[name] = wealth(rule(path, rv), inc).X
    write_wealth(path.t, series, out / "wealth.csv")
    report.artifacts.append("wealth.csv")


def _refined(cfg: ExperimentConfig, measure: Callable, strides: np.ndarray):
    """Simulate at the configured step, subsample by each stride, collect ``measure``."""
    vals = np.zeros((cfg.paths, strides.size))
    for i, full in enumerate(simulate_ensemble(cfg.model, cfg.grid, cfg.seed, cfg.paths)):
        for j, s in enumerate(strides):
            vals[i, j] = measure(full.subsample(int(s)))
    mean = vals.mean(axis=0)
    se = vals.std(axis=0, ddof=1) / np.sqrt(cfg.paths) if cfg.paths > 1 else np.zeros_like(mean)
    return vals, mean, se


def _strides(cfg):
    strides = np.asarray(cfg.param("strides", [1.0, 4.0, 16.0], list), dtype=int)
    if strides.size < 1 or np.any(strides < 1):
        raise ConfigError(f"[{cfg.kind}] strides: need positive integers")
    check = cfg.param("check_stride", int(strides[min(1, strides.size - 1)]), int)
    if check not in strides:
        raise ConfigError(f"[{cfg.kind}] check_stride: {check} is not among the strides")
    return strides, check


def _slope_check(report, name, dts, mean, lo, hi, criterion):
    if dts.size < 2:
        return
    if np.all(mean > 0):
        slope = refinement_slope(dts, mean)
        report.scalar(f"{name}.slope", slope)
        report.add(f"{name}.refinement_slope", lo <= slope <= hi, f"slope {slope:.3f} in [{lo}, {hi}]", criterion)
    else:
        report.add(f"{name}.refinement_slope", "PASS", "exact at every step size", criterion)


def run_masterformula(cfg: ExperimentConfig, out: Path, report: RunReport) -> None:
    mode = cfg.param("mode", "topn")
    name = cfg.param("generator", "diversity")
    params = {}
    if name == "diversity":
        params = {"p": cfg.param("p", 0.5, float), "n": cfg.n}
    elif name in ("topn_sum",):
        params = {"n": cfg.n}
    elif name in ("cr", "weighted_arithmetic", "geometric"):
        params = {"xi" if name == "cr" else "c": cfg.param("weights", None, list)}
    try:
        G = builtin(name, cfg.N, **params)
    except (OpenMarketError, TypeError, ValueError) as exc:
        raise ConfigError(f"[masterformula] generator: {exc}") from exc
    rel_tol = cfg.param("rel_tol", 0.05, float)
    strides, check = _strides(cfg)
    lo, hi = cfg.param("slope_min", 0.3, float), cfg.param("slope_max", 0.7, float)

    def measure(path):
        r = verify_master(G, path, cfg.n, mode)
        return np.array([r.max_gap, float(np.max(np.abs(r.lhs)))])

    vals = np.zeros((cfg.paths, strides.size, 2))
    for i, full in enumerate(simulate_ensemble(cfg.model, cfg.grid, cfg.seed, cfg.paths)):
        for j, s in enumerate(strides):
            vals[i, j] = measure(full.subsample(int(s)))
    mean = vals.mean(axis=0)
    se = vals.std(axis=0, ddof=1) / np.sqrt(cfg.paths) if cfg.paths > 1 else np.zeros_like(mean)
    dts = cfg.dt * strides
    write_table(
        out / "refinement.csv",
        ["dt", "max_gap_mean", "max_gap_se", "max_lhs_mean"],
        [(d, m[0], s[0], m[1]) for d, m, s in zip(dts, mean, se)],
    )
    j = int(np.flatnonzero(strides == check)[0])
    ratio = mean[j, 0] / mean[j, 1] if mean[j, 1] > 0 else mean[j, 0]
    report.scalar("max_gap_mean", mean[j, 0], se[j, 0])
    report.scalar("relative_gap", ratio)
    report.add(
        "master.gap",
        ratio <= rel_tol,
        f"mean max|gap| / mean max|LHS| = {ratio:.4f} <= {rel_tol} at dt={cfg.dt * check:g}",
        "master formula",
    )
    _slope_check(report, "master", dts, mean[:, 0], lo, hi, "master formula")

    path = simulate(cfg.model, cfg.grid, cfg.seed, 0).subsample(check)
    verify_master(G, path, cfg.n, mode).write_csv(out / "masterformula.csv")
    report.artifacts += ["refinement.csv", "masterformula.csv"]


def run_leakage(cfg: ExperimentConfig, out: Path, report: RunReport) -> None:
    rel_tol = cfg.param("rel_tol", 0.01, float)
    strides, check = _strides(cfg)
    lo, hi = cfg.param("slope_min", 0.3, float), cfg.param("slope_max", 0.7, float)
    monotone = [True]

    def measure(path):
        rv, tv = rank_path(path, cfg.n)
        r = tilde_mu_wealth(path, rv, tv)
        monotone[0] &= bool(np.all(np.diff(r.leakage) >= 0))
        return r.relative_gap[-1]

    _, mean, se = _refined(cfg, measure, strides)
    dts = cfg.dt * strides
    write_table(
        out / "refinement.csv",
        ["dt", "rel_gap_mean", "rel_gap_se"],
        [(d, m, s) for d, m, s in zip(dts, mean, se)],
    )
    j = int(np.flatnonzero(strides == check)[0])
    report.scalar("relative_gap", mean[j], se[j])
    report.add(
        "leakage.identity",
        mean[j] <= rel_tol,
        f"mean |direct - via leakage| / direct = {mean[j]:.5f} <= {rel_tol} at dt={cfg.dt * check:g}",
        "leakage identity",
    )
    report.add("leakage.nondecreasing", monotone[0], "leakage term nondecreasing on every path", "leakage identity")
    _slope_check(report, "leakage", dts, mean, lo, hi, "leakage identity")

    path = simulate(cfg.model, cfg.grid, cfg.seed, 0).subsample(check)
    rv, tv = rank_path(path, cfg.n)
    r = tilde_mu_wealth(path, rv, tv)
    write_table(
        out / "leakage.csv",
        ["t", "direct", "via_leakage", "cap_ratio", "leakage"],
        np.column_stack([path.t, r.direct.X, r.via_leakage.X, r.cap_ratio, r.leakage]),
    )
    report.artifacts += ["refinement.csv", "leakage.csv"]


def run_universal(cfg: ExperimentConfig, out: Path, report: RunReport) -> None:
    horizons = cfg.param("horizons", np.array([cfg.horizon]), list)
    samples = cfg.param("samples", 1000, int)
    delta = cfg.param("delta", None, float)
    id_tol = cfg.param("identity_tol", 0.005, float)
    if np.any(horizons <= 0) or np.max(horizons) > cfg.horizon + 1e-12:
        raise ConfigError("[universal] horizons: must lie in (0, T]")

    path = simulate(cfg.model, cfg.grid, cfg.seed, 0)
    rv, _ = rank_path(path, cfg.n)
    inc = increments(path)
    uw = universal_wealth(rv, inc, cfg.n, samples, seed=cfg.seed)
    gap = float(np.max(uw.relative_gap))
    report.scalar("identity_gap", gap)
    report.add(
        "universal.identity",
        gap <= id_tol,
        f"max relative gap between weight-path and averaged wealth {gap:.2e} <= {id_tol}",
        "universal identity",
    )
    write_wealth(path.t, {"weights": uw.X_weights.X, "average": uw.X_average.X}, out / "universal_wealth.csv")
    report.artifacts.append("universal_wealth.csv")

    if horizons.size >= 2:
        rep = asymptotic_gap(cfg.model, cfg.n, horizons, cfg.dt, samples, cfg.paths, cfg.seed, delta)
        rep.write_csv(out / "universal.csv")
        report.artifacts.append("universal.csv")
        for T, m, s in zip(rep.horizons, rep.gap_mean, rep.gap_se):
            report.scalar(f"gap_T{T:g}", m, s)
        report.scalar("min_mu_n", rep.min_mu_n)
        ok = rep.strictly_decreasing() and rep.decreasing_within_se() and rep.gap_mean[-1] < 0.5 * rep.gap_mean[0]
        detail = (
            f"gap {rep.gap_mean[0]:.4f} -> {rep.gap_mean[-1]:.4f}; strictly decreasing "
            f"{rep.strictly_decreasing()}, within se {rep.decreasing_within_se()}"
        )
        report.add("universal.gap_trend", rep.verdict or ok, detail, "asymptotic gap")


def run_capm(cfg: ExperimentConfig, out: Path, report: RunReport) -> None:
    tol = cfg.param("tol", 1e-9, float)
    resid_tol = cfg.param("resid_tol", 0.01, float)
    beta_tol = cfg.param("beta_tol", 0.02, float)
    rows = []
    identity = 0.0
    in_capm = True
    worst_ratio, worst_beta = 0.0, 0.0
    for i, path in enumerate(simulate_ensemble(cfg.model, cfg.grid, cfg.seed, cfg.paths)):
        rv, tv = rank_path(path, cfg.n)
        inc = increments(path)
        cc = censor(analytic_characteristics(cfg.model, path, rv), rv)
        fit = capm_mod.capm_fit(cc, tv.mu_tilde, tol)
        pos = fit.positive
        identity = max(identity, float(np.max(np.abs(fit.beta * fit.c_mm - fit.c_im)[:, pos], initial=0.0)))
        res = capm_mod.residual_orthogonality(inc, fit.beta, rv, tv.mu_tilde, resid_tol)
        rb = capm_mod.realized_beta(inc, rv, tv.mu_tilde)
        pb = capm_mod.pooled_beta(fit, rv, inc.steps)
        ok = np.isfinite(rb) & np.isfinite(pb)
        beta_rmse = float(np.sqrt(np.mean((rb[ok] - pb[ok]) ** 2))) if np.any(ok) else 0.0
        in_capm &= fit.in_capm
        worst_ratio = max(worst_ratio, res.ratio)
        worst_beta = max(worst_beta, beta_rmse)
        rows.append((i, float(np.mean(fit.b)), fit.verdictA, fit.verdictB, res.ratio, beta_rmse, fit.integrability))
        if i == 0:
            fit.write_csv(path.t, out / "capm.csv")
    write_table(
        out / "capm_summary.csv",
        ["path", "b_mean", "verdictA", "verdictB", "resid_ratio", "beta_rmse", "integrability"],
        rows,
    )
    report.artifacts += ["capm.csv", "capm_summary.csv"]
    report.add("capm.beta_identity", identity <= 1e-10, f"max |beta c_mm - c_im| = {identity:.2e}", "capm")
    report.add(
        "capm.conditions",
        "PASS" if in_capm else "HYPOTHESIS-UNMET",
        "conditions (A) and (B) hold on every path" if in_capm else "market is not in the realm of the CAPM",
        "capm",
    )
    report.scalar("resid_ratio_max", worst_ratio)
    report.scalar("beta_rmse_max", worst_beta)
    report.scalar("b_mean", float(np.mean([r[1] for r in rows])))
    hyp = None if in_capm else "HYPOTHESIS-UNMET"
    report.add(
        "capm.residual_orthogonality",
        hyp or worst_ratio <= resid_tol,
        f"max |[N_i, R_mu](T)| / [R_mu, R_mu](T) = {worst_ratio:.2e} <= {resid_tol}",
        "capm",
    )
    report.add(
        "capm.realized_beta",
        hyp or worst_beta <= beta_tol,
        f"RMSE(realized beta - fitted beta) = {worst_beta:.2e} <= {beta_tol}",
        "capm",
    )


def run_viability(cfg: ExperimentConfig, out: Path, report: RunReport) -> None:
    tol = cfg.param("tol", 1e-10, float)
    samples = cfg.param("samples", 100, int)
    rng = np.random.default_rng([cfg.seed, 202])
    verdicts = []
    resid_max, excess_max, qv_max = 0.0, -np.inf, 0.0
    witness_ok, gap_ok = True, True
    for i, path in enumerate(simulate_ensemble(cfg.model, cfg.grid, cfg.seed, cfg.paths)):
        rv, _ = rank_path(path, cfg.n)
        inc = increments(path)
        chars = analytic_characteristics(cfg.model, path, rv)
        cc = censor(chars, rv)
        gr = growth_report(chars, cc, tol)
        rho, ok = numeraire_portfolio(cc, tol)
        res = numeraire_residual(cc, rho, ok)
        if np.any(ok):
            resid_max = max(resid_max, float(np.nanmax(res)))
        excess_max = max(excess_max, growth_supremum_excess(cc, gr.g_tilde, samples, rng))
        verdicts.append(gr.verdict)
        if gr.verdict == "nonviable(case A)":
            wc = witness_check(gr.witness, inc, cc)
            witness_ok &= wc.nondecreasing
            qv_max = max(qv_max, wc.realized_qv)
        elif gr.viable:
            gap_ok &= gr.gap_nondecreasing()
        if i == 0:
            write_characteristics(path.t, chars, out / "characteristics.csv")
            write_table(
                out / "growth.csv",
                ["t", "g_tilde", "G_tilde", "g", "G", "gap", "range_ok"],
                np.column_stack([path.t, gr.g_tilde, gr.G_tilde, gr.g, gr.G, gr.gap, gr.range_ok]),
            )
            report.artifacts += ["characteristics.csv", "growth.csv"]
    write_table(out / "verdicts.csv", ["path", "verdict"], list(enumerate(verdicts)))
    report.artifacts.append("verdicts.csv")
    counts = {v: verdicts.count(v) for v in sorted(set(verdicts))}
    report.add(
        "viability.verdict",
        "PASS",
        ", ".join(f"{v}: {c}" for v, c in counts.items()),
        "viability",
    )
    report.add("numeraire.algebra", resid_max <= 1e-10, f"max ||c~rho - a~|| / ||a~|| = {resid_max:.2e}", "numeraire algebra")
    report.add(
        "numeraire.growth_supremum",
        excess_max <= 1e-10,
        f"max excess of random masked vectors over g~ = {excess_max:.2e}",
        "numeraire algebra",
    )
    report.scalar("numeraire_residual_max", resid_max)
    if "nonviable(case A)" in counts:
        report.add(
            "viability.witness",
            witness_ok and qv_max <= 1e-12,
            f"witness wealth nondecreasing {witness_ok}, realized QV {qv_max:.2e} <= 1e-12",
            "viability witnesses",
        )
    if "viable" in counts:
        report.add("viability.gap_nondecreasing", gap_ok, "whole-market minus top-n growth nondecreasing", "viability")


RUNNERS = {
    "numeraire": run_numeraire,
    "masterformula": run_masterformula,
    "leakage": run_leakage,
    "universal": run_universal,
    "capm": run_capm,
    "viability": run_viability,
}


def run_experiment(cfg: ExperimentConfig, save_paths: bool = True) -> RunReport:
    """Run ``cfg`` and write its artifacts and report into ``cfg.output``."""
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    report = RunReport(cfg.kind, cfg.source)
    start = time.perf_counter()
    RUNNERS[cfg.kind](cfg, out, report)
    if save_paths:
        _save_paths(cfg, out, report)
    report.wall_clock = time.perf_counter() - start
    report.save(out)
    return report
