import json

import numpy as np
import pytest

from openmarket.artifacts import RunReport, read_table, write_table
from openmarket.cli import EXIT_CONFIG, EXIT_FAILED, EXIT_OK, EXIT_RUNTIME, main
from openmarket.config import parse_config
from openmarket.errors import ConfigError
from openmarket.plotting import expected_files

GBM = """
[experiment]
kind = {kind}
seed = 3
paths = {paths}
output = out

[model]
kind = gbm
N = {N}
s0 = 120, 110, 100, 95, 90
drift = 0.08, 0.06, 0.10, 0.04, 0.07
cov = 0.04
corr = 0.3

[market]
n = {n}

[grid]
T = {T}
dt = {dt}
"""


def _write(tmp_path, text, name="exp.cfg"):
    f = tmp_path / name
    f.write_text(text)
    return f


def _cfg(kind="numeraire", paths=100, N=5, n=3, T=0.1, dt=0.01, extra=""):
    return GBM.format(kind=kind, paths=paths, N=N, n=n, T=T, dt=dt) + extra


def test_parse_config_fields(tmp_path):
    cfg = parse_config(_cfg(extra="[numeraire]\ntests = 4 ; inline\n"), base=tmp_path)
    assert cfg.kind == "numeraire" and cfg.seed == 3 and cfg.n == 3 and cfg.N == 5
    assert cfg.output == tmp_path / "out"
    assert cfg.param("tests", cast=int) == 4
    assert cfg.param("missing", 7, int) == 7
    np.testing.assert_allclose(cfg.model.cov[0, 1], 0.3 * 0.04)
    assert len(cfg.grid) == 11


@pytest.mark.parametrize(
    "text,match",
    [
        (_cfg(n=5), "open market requires n < N"),
        (_cfg(n=0), r"\[market\] n"),
        (_cfg().replace("seed = 3\n", ""), "no implicit entropy"),
        (_cfg(kind="portfolio"), r"\[experiment\] kind"),
        (_cfg(dt="abc"), r"\[grid\] dt"),
        (_cfg(dt=1.0, T=0.5), "exceeds"),
        (_cfg().replace("drift = 0.08, 0.06, 0.10, 0.04, 0.07", "drift = 1, 2"), r"\[model\] drift"),
        (_cfg().replace("kind = gbm", "kind = heston"), "unknown model"),
        (_cfg().replace("cov = 0.04", "cov = -0.04"), r"\[model\]"),
        ("not an ini file", "unreadable"),
    ],
)
def test_config_errors_name_the_field(text, match):
    with pytest.raises(ConfigError, match=match):
        parse_config(text)


def test_run_exit_codes(tmp_path, capsys):
    assert main(["run", str(_write(tmp_path, _cfg(n=5)))]) == EXIT_CONFIG
    assert "open market requires n < N" in capsys.readouterr().err
    assert main(["run", str(tmp_path / "nowhere.cfg")]) == EXIT_CONFIG


def test_runtime_failure_exits_3(tmp_path, capsys):
    # the numeraire levers about 40x here, so one step can lose more than everything
    extra = "[numeraire]\ntests = 2\nperturb = 0.5\n"
    text = _cfg(paths=100, extra=extra).replace("drift = 0.08, 0.06, 0.10, 0.04, 0.07", "drift = 2")
    assert main(["run", str(_write(tmp_path, text))]) == EXIT_RUNTIME
    err = capsys.readouterr().err
    assert "runtime failure (step" in err and "<= -1" in err


def test_numeraire_run_and_report(tmp_path, capsys):
    cfg = _write(tmp_path, _cfg(paths=100, extra="[numeraire]\ntests = 10\n"))
    code = main(["run", str(cfg)])
    out = capsys.readouterr().out
    assert code in (EXIT_OK, EXIT_FAILED)
    run = tmp_path / "out"
    rep = RunReport.from_json((run / "report.json").read_text())
    assert rep.kind == "numeraire"
    sm = [c for c in rep.checks if c.name.startswith("supermartingale.") and c.name != "supermartingale.perturbed_rho_detected"]
    assert len(sm) >= 10
    assert "supermartingale" in out
    assert (run / "paths" / "path_0000.csv").exists()
    first = {f.name: f.read_bytes() for f in run.glob("*.csv")}
    assert main(["run", str(cfg)]) == code
    assert {f.name: f.read_bytes() for f in run.glob("*.csv")} == first
    assert main(["report", str(run)]) == EXIT_OK
    svg = (run / "figures" / "wealth.svg").read_bytes()
    assert main(["report", str(run)]) == EXIT_OK
    assert (run / "figures" / "wealth.svg").read_bytes() == svg


def test_masterformula_report_has_overlay(tmp_path):
    extra = "[masterformula]\ngenerator = diversity\np = 0.5\nstrides = 1, 4\ncheck_stride = 1\n"
    cfg = _write(tmp_path, _cfg(kind="masterformula", paths=2, T=0.2, dt=1e-3, extra=extra))
    assert main(["run", str(cfg)]) in (EXIT_OK, EXIT_FAILED)
    assert main(["report", str(tmp_path / "out")]) == EXIT_OK
    assert (tmp_path / "out" / "figures" / "masterformula.svg").exists()
    assert (tmp_path / "out" / "figures" / "refinement.svg").exists()


def test_report_on_empty_directory(tmp_path, capsys):
    assert main(["report", str(tmp_path)]) == EXIT_CONFIG
    err = capsys.readouterr().err
    assert "report.json" in err and "masterformula.csv" in err and "universal_wealth.csv" in err


def test_report_with_missing_artifacts(tmp_path, capsys):
    RunReport("capm", {}, [], {}, [], 0.0).save(tmp_path)
    assert main(["report", str(tmp_path)]) == EXIT_CONFIG
    assert "capm.csv" in capsys.readouterr().err
    assert expected_files("capm") == ["report.json", "capm.csv"]


def test_simulate_writes_paths(tmp_path):
    cfg = _write(tmp_path, _cfg(paths=3).replace("paths = 3", "paths = 3\nsave_paths = 2"))
    assert main(["simulate", str(cfg)]) == EXIT_OK
    files = sorted(f.name for f in (tmp_path / "out" / "paths").iterdir())
    assert files == [
        "mu_tilde_0000.csv", "mu_tilde_0001.csv", "path_0000.csv", "path_0001.csv",
        "ranked_0000.csv", "ranked_0001.csv",
    ]


def test_selftest(capsys):
    assert main(["selftest"]) == EXIT_OK
    out = capsys.readouterr().out
    assert out.count("PASS") == 6 and "FAIL" not in out


def test_table_round_trip(tmp_path):
    write_table(tmp_path / "t.csv", ["name", "x"], [["a", 0.1], ["b", 1e-300]])
    d = read_table(tmp_path / "t.csv")
    assert d["x"].tolist() == [0.1, 1e-300]


def test_report_json_round_trip(tmp_path):
    rep = RunReport("viability", {"seed": 1}, [], {}, [], 1.5)
    rep.add("a", True, "fine")
    rep.add("b", "HYPOTHESIS-UNMET", "premise false")
    assert rep.ok
    rep.add("c", False, "broken")
    assert not rep.ok
    back = RunReport.from_json(rep.to_json())
    assert [c.verdict for c in back.checks] == ["PASS", "HYPOTHESIS-UNMET", "FAIL"]
    assert json.loads(rep.to_json())["kind"] == "viability"
