"""SVG figures rendered from stored CSV artifacts (never from live simulations).

Figures are written with a fixed hash salt and no date stamp so the same CSVs
always give the same SVG bytes.
"""

from __future__ import annotations

import os
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .artifacts import read_table  # noqa: E402

__all__ = ["RCPARAMS", "FIGURES", "render"]

RCPARAMS = {
    "figure.figsize": (6.4, 3.6),
    "axes.grid": True,
    "grid.color": "0.88",
    "grid.linewidth": 0.5,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.linewidth": 0.75,
    "lines.linewidth": 1.25,
    "font.size": 9,
    "legend.fontsize": 8,
    "legend.frameon": False,
    "svg.hashsalt": "openmarket",
    "svg.fonttype": "path",
    "path.simplify": False,
}


def _save(fig, file) -> None:
    file = os.fspath(file)
    tmp = file + ".tmp"
    fig.savefig(tmp, format="svg", metadata={"Date": None}, bbox_inches="tight")
    plt.close(fig)
    os.replace(tmp, file)


def master_overlay(run: Path, out: Path) -> None:
    d = read_table(run / "masterformula.csv")
    fig, (ax, bx) = plt.subplots(2, 1, sharex=True, height_ratios=(3, 1))
    ax.plot(d["t"], d["lhs"], label="log relative wealth")
    ax.plot(d["t"], d["rhs"], ls="--", label="master formula")
    ax.legend(loc="best")
    bx.fill_between(d["t"], -np.abs(d["gap"]), np.abs(d["gap"]), color="0.6", lw=0)
    bx.plot(d["t"], d["gap"], color="k", lw=0.75)
    bx.set_xlabel("t")
    bx.set_ylabel("gap")
    _save(fig, out)


def refinement(run: Path, out: Path) -> None:
    d = read_table(run / "refinement.csv")
    y = d["max_gap_mean"] if "max_gap_mean" in d else d["rel_gap_mean"]
    se = d["max_gap_se"] if "max_gap_se" in d else d["rel_gap_se"]
    fig, ax = plt.subplots()
    ax.errorbar(d["dt"], y, yerr=se, marker="o", capsize=3)
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("step size")
    ax.set_ylabel("mean error")
    _save(fig, out)


def universal_gap(run: Path, out: Path) -> None:
    d = read_table(run / "universal.csv")
    fig, ax = plt.subplots()
    ax.errorbar(d["T"], d["gap_mean"], yerr=d["gap_se"], marker="o", capsize=3)
    ax.axhline(0.0, color="0.5", lw=0.75)
    ax.set_xlabel("horizon T")
    ax.set_ylabel("(log X* - log X_hat) / T")
    _save(fig, out)


def wealth_overlay(run: Path, out: Path, name: str = "wealth.csv") -> None:
    d = read_table(run / name)
    fig, ax = plt.subplots()
    for key, v in d.items():
        if key != "t":
            ax.plot(d["t"], v, label=key, lw=1.0)
    ax.set_yscale("log")
    ax.set_xlabel("t")
    ax.set_ylabel("wealth")
    ax.legend(loc="best", ncol=2)
    _save(fig, out)


def leakage(run: Path, out: Path) -> None:
    d = read_table(run / "leakage.csv")
    fig, ax = plt.subplots()
    ax.plot(d["t"], d["direct"], label="direct")
    ax.plot(d["t"], d["via_leakage"], ls="--", label="via leakage")
    ax.plot(d["t"], d["cap_ratio"], lw=0.75, color="0.5", label="capitalization ratio")
    ax.set_xlabel("t")
    ax.set_ylabel("wealth")
    ax.legend(loc="best")
    _save(fig, out)


def capm_betas(run: Path, out: Path) -> None:
    d = read_table(run / "capm.csv")
    fig, (ax, bx) = plt.subplots(2, 1, sharex=True)
    ax.plot(d["t"], d["b"], color="k")
    ax.set_ylabel("b")
    for key, v in d.items():
        if key.startswith("beta_"):
            bx.plot(d["t"], v, lw=0.75, label=key)
    bx.set_xlabel("t")
    bx.set_ylabel("beta")
    bx.legend(loc="best", ncol=2)
    _save(fig, out)


def growth(run: Path, out: Path) -> None:
    d = read_table(run / "growth.csv")
    fig, ax = plt.subplots()
    for key in ("G_tilde", "G", "gap"):
        v = d[key]
        ok = np.isfinite(v)
        ax.plot(d["t"][ok], v[ok], label=key)
    ax.set_xlabel("t")
    ax.set_ylabel("aggregate growth")
    ax.legend(loc="best")
    _save(fig, out)


# kind -> [(required csv files, renderer, svg name)]
FIGURES = {
    "numeraire": [(("wealth.csv",), wealth_overlay, "wealth.svg")],
    "masterformula": [
        (("masterformula.csv",), master_overlay, "masterformula.svg"),
        (("refinement.csv",), refinement, "refinement.svg"),
    ],
    "leakage": [
        (("leakage.csv",), leakage, "leakage.svg"),
        (("refinement.csv",), refinement, "refinement.svg"),
    ],
    "universal": [
        (("universal.csv",), universal_gap, "universal_gap.svg"),
        (("universal_wealth.csv",), lambda r, o: wealth_overlay(r, o, "universal_wealth.csv"), "universal_wealth.svg"),
    ],
    "capm": [(("capm.csv",), capm_betas, "capm.svg")],
    "viability": [(("growth.csv",), growth, "growth.svg")],
}


def expected_files(kind: str, optional=("universal.csv",)):
    files = ["report.json"]
    for req, _, _ in FIGURES.get(kind, []):
        files += [f for f in req if f not in optional]
    return files


def render(run: Path, kind: str) -> list:
    """Render every figure whose CSVs are present; return the SVG names written."""
    run = Path(run)
    figdir = run / "figures"
    figdir.mkdir(exist_ok=True)
    written = []
    with plt.rc_context(RCPARAMS):
        for req, fn, name in FIGURES.get(kind, []):
            if all((run / f).exists() for f in req):
                fn(run, figdir / name)
                written.append(f"figures/{name}")
    return written
