import numpy as np
import pandas as pd
import pytest

from netfolio.market_data import ReturnPanel, WindowPair


def panel_from_log_returns(raw, assets=None, start="2020-01-01"):
    raw = np.asarray(raw, dtype=float)
    if raw.ndim == 1:
        raw = raw[:, None]
    t, n = raw.shape
    assets = assets or [f"S{k}" for k in range(n)]
    dates = pd.bdate_range(start, periods=t)
    return ReturnPanel.from_raw(dates, assets, raw)


def window_from_simple(simple, assets=None):
    """WindowPair whose out-of-sample panel has the given simple returns."""
    raw = np.log1p(np.asarray(simple, dtype=float))
    oos = panel_from_log_returns(raw, assets)
    return WindowPair(oos, oos, "2020-01-01", 0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import ACCEPTANCE_LINES
    except ImportError:
        return
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
