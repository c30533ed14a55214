"""Open-market toolkit: rank machinery, numeraire and viability diagnostics,
functionally generated and universal portfolios, and CAPM checks for the
top-n stocks of an N-stock market.

Set ``OPENMARKET_THREADS`` before the first import to cap the BLAS/OpenMP
thread pools (it fills ``OMP_NUM_THREADS`` and friends unless already set).
"""

import os as _os

_threads = _os.environ.get("OPENMARKET_THREADS")
if _threads:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        _os.environ.setdefault(_var, _threads)

from .errors import BlowThroughError, ConfigError, OpenMarketError, SimulationError  # noqa: E402
from .market import IncrementSeries, MarketPath, ModelSpec, TimeGrid, increments, simulate  # noqa: E402
from .ranks import RankView, TopNView, rank_path  # noqa: E402

__version__ = "0.1.0"

__all__ = [
    "BlowThroughError",
    "ConfigError",
    "OpenMarketError",
    "SimulationError",
    "IncrementSeries",
    "MarketPath",
    "ModelSpec",
    "TimeGrid",
    "increments",
    "simulate",
    "RankView",
    "TopNView",
    "rank_path",
]
