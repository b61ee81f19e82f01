"""Shared fixtures: cache isolation and one reusable simulated run."""
import os

import pytest

from b92sim.analysis import histogram_pair
from b92sim.config import default_config
from b92sim.protocol import run_b92


@pytest.fixture(scope="session", autouse=True)
def _isolated_cache(tmp_path_factory):
    """Point the background-calibration cache at a session-local directory
    so tests neither read nor pollute the user cache."""
    path = tmp_path_factory.mktemp("calibration-cache")
    old = os.environ.get("B92SIM_CACHE_DIR")
    os.environ["B92SIM_CACHE_DIR"] = str(path)
    yield
    if old is None:
        os.environ.pop("B92SIM_CACHE_DIR", None)
    else:
        os.environ["B92SIM_CACHE_DIR"] = old


@pytest.fixture(scope="session")
def fixture_config():
    return default_config()


@pytest.fixture(scope="session")
def fixture_run(fixture_config):
    """One 1 s accumulation of the packaged night fixture, seed 0."""
    return run_b92(fixture_config, seed=0)


@pytest.fixture(scope="session")
def fixture_histograms(fixture_config, fixture_run):
    out = fixture_run
    return histogram_pair(
        out.alice_herald, out.bob_d0, out.bob_d1,
        bin_width_ps=fixture_config.analysis.bin_width_ps,
        range_ps=fixture_config.analysis.range_ps(),
    )


@pytest.fixture(scope="session")
def fixture_windows_a(fixture_config, fixture_histograms):
    from b92sim.analysis import optimize_strategy_a
    hv, hd = fixture_histograms
    ana = fixture_config.analysis
    return optimize_strategy_a(hv, hd, ana.qber_threshold_pct,
                               symmetry_tol_pp=ana.symmetry_tol_pp)


@pytest.fixture(scope="session")
def fixture_windows_b(fixture_config, fixture_histograms):
    from b92sim.analysis import optimize_strategy_b
    hv, hd = fixture_histograms
    return optimize_strategy_b(hv, hd,
                               fixture_config.analysis.qber_threshold_pct)
