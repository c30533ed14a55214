"""Experiment configuration: INI-style sections parsed with configparser and
validated field by field."""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Optional

import numpy as np

from .errors import ConfigError, OpenMarketError
from .market import ModelSpec, TimeGrid

__all__ = ["ExperimentConfig", "load_config", "parse_config", "KINDS"]

KINDS = ("numeraire", "masterformula", "leakage", "universal", "capm", "viability")


def _fail(section: str, key: str, msg: str):
    raise ConfigError(f"[{section}] {key}: {msg}")


def _floats(section, key, raw) -> np.ndarray:
    try:
        return np.array([float(v) for v in raw.split(",") if v.strip()])
    except ValueError:
        _fail(section, key, f"expected comma-separated numbers, got {raw!r}")


def _float(section, key, raw) -> float:
    try:
        return float(raw)
    except ValueError:
        _fail(section, key, f"expected a number, got {raw!r}")


def _int(section, key, raw) -> int:
    try:
        return int(raw)
    except ValueError:
        _fail(section, key, f"expected an integer, got {raw!r}")


def _vector(section, key, raw, N) -> np.ndarray:
    v = _floats(section, key, raw)
    if v.size == 1:
        return np.full(N, v[0])
    if v.size != N:
        _fail(section, key, f"expected 1 or {N} values, got {v.size}")
    return v


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated experiment: model, grid, seed, ensemble size, kind and its parameters."""

    kind: str
    seed: int
    paths: int
    output: Path
    model: ModelSpec
    n: int
    horizon: float
    dt: float
    params: Dict[str, str] = field(default_factory=dict)
    save_paths: int = 1
    source: Dict[str, Dict[str, str]] = field(default_factory=dict, repr=False)

    @property
    def N(self) -> int:
        return self.model.N

    @property
    def grid(self) -> TimeGrid:
        return TimeGrid.uniform(self.horizon, self.dt)

    def param(self, key: str, default=None, cast=str):
        raw = self.params.get(key)
        if raw is None:
            return default
        if cast is float:
            return _float(self.kind, key, raw)
        if cast is int:
            return _int(self.kind, key, raw)
        if cast is list:
            return _floats(self.kind, key, raw)
        return raw


def _get(cp, section, key, required=True, default=None):
    if not cp.has_section(section):
        if required:
            raise ConfigError(f"[{section}]: section missing")
        return default
    if key not in cp[section]:
        if required:
            _fail(section, key, "required field missing")
        return default
    return cp[section][key].strip()


def _model(cp) -> ModelSpec:
    s = "model"
    kind = _get(cp, s, "kind").lower()
    N = _int(s, "N", _get(cp, s, "N"))
    if N < 2:
        _fail(s, "N", f"need at least 2 assets, got {N}")
    s0 = _vector(s, "s0", _get(cp, s, "s0"), N)
    if np.any(s0 <= 0):
        _fail(s, "s0", "initial prices must be strictly positive")
    try:
        if kind == "gbm":
            drift = _vector(s, "drift", _get(cp, s, "drift"), N)
            cv = _floats(s, "cov", _get(cp, s, "cov"))
            if cv.size in (1, N):
                cov = np.diag(np.broadcast_to(cv, (N,)))
            elif cv.size == N * N:
                cov = cv.reshape(N, N)
            else:
                _fail(s, "cov", f"expected 1, {N} or {N * N} values, got {cv.size}")
            if np.any(np.diag(cov) < 0):
                _fail(s, "cov", "variances must be nonnegative")
            corr = _get(cp, s, "corr", required=False)
            if corr is not None:
                if cv.size == N * N:
                    _fail(s, "corr", "only combines with a diagonal cov")
                rho = _float(s, "corr", corr)
                sd = np.sqrt(np.diag(cov))
                cov = np.outer(sd, sd) * (rho + (1 - rho) * np.eye(N))
            return ModelSpec.gbm(drift, cov, s0)
        if kind == "atlas":
            g = _vector(s, "rank_drift", _get(cp, s, "rank_drift"), N)
            v = _vector(s, "rank_vol", _get(cp, s, "rank_vol"), N)
            return ModelSpec.atlas(g, v, s0)
        if kind == "factor":
            return ModelSpec.factor(
                _vector(s, "loadings", _get(cp, s, "loadings"), N),
                _float(s, "factor_vol", _get(cp, s, "factor_vol")),
                _vector(s, "idio_vol", _get(cp, s, "idio_vol"), N),
                _float(s, "leverage", _get(cp, s, "leverage")),
                _int("market", "n", _get(cp, "market", "n")),
                s0,
            )
    except ConfigError:
        raise
    except OpenMarketError as exc:
        raise ConfigError(f"[model]: {exc}") from exc
    _fail(s, "kind", f"unknown model {kind!r} (expected gbm, atlas or factor)")


def parse_config(text: str, base: Optional[Path] = None) -> ExperimentConfig:
    """Parse and validate configuration text; relative outputs resolve against ``base``."""
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"unreadable config: {exc}") from exc

    e = "experiment"
    kind = _get(cp, e, "kind").lower()
    if kind not in KINDS:
        _fail(e, "kind", f"unknown kind {kind!r} (expected one of {', '.join(KINDS)})")
    seed = _get(cp, e, "seed", required=False)
    if seed is None:
        _fail(e, "seed", "required field missing (no implicit entropy)")
    seed = _int(e, "seed", seed)
    if seed < 0:
        _fail(e, "seed", "must be nonnegative")
    paths = _int(e, "paths", _get(cp, e, "paths", required=False, default="1"))
    if paths < 1:
        _fail(e, "paths", f"ensemble size must be >= 1, got {paths}")
    save = _int(e, "save_paths", _get(cp, e, "save_paths", required=False, default="1"))
    if save < 0:
        _fail(e, "save_paths", "must be nonnegative")
    out = Path(_get(cp, e, "output"))
    if base is not None and not out.is_absolute():
        out = base / out

    N = _int("model", "N", _get(cp, "model", "N"))
    n = _int("market", "n", _get(cp, "market", "n"))
    if not 1 <= n < N:
        _fail("market", "n", f"open market requires n < N and n >= 1 (n={n}, N={N})")
    model = _model(cp)
    horizon = _float("grid", "T", _get(cp, "grid", "T"))
    dt = _float("grid", "dt", _get(cp, "grid", "dt"))
    if not horizon > 0:
        _fail("grid", "T", "horizon must be positive")
    if not dt > 0:
        _fail("grid", "dt", "step must be positive")
    if dt > horizon:
        _fail("grid", "dt", "step exceeds the horizon")

    params = dict(cp[kind]) if cp.has_section(kind) else {}
    source = {sec: dict(cp[sec]) for sec in cp.sections()}
    return ExperimentConfig(kind, seed, paths, out, model, n, horizon, dt, params, save, source)


def load_config(file) -> ExperimentConfig:
    file = Path(file)
    try:
        text = file.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {file}: {exc.strerror}") from exc
    return parse_config(text, base=file.parent)
