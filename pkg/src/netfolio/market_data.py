"""Price ingestion, log-returns and calendar-month windows.

Prices are held in a :class:`PricePanel` (dates x assets). Returns are the
log-returns ``ln(p[t+1] / p[t])`` together with their per-column z-scores,
normalized with the population standard deviation (``ddof=0``).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np
import pandas as pd

from .errors import DataError

logger = logging.getLogger(__name__)

DEFAULT_COVERAGE = 0.99

# Standard deviations at or below this (relative to the column scale) are
# treated as exactly zero.
_ZERO_STD_RTOL = 1e-12


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float, copy=True)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class PricePanel:
    dates: pd.DatetimeIndex
    assets: tuple
    prices: np.ndarray
    caps: Optional[np.ndarray] = None

    def __post_init__(self):
        dates = pd.DatetimeIndex(self.dates)
        object.__setattr__(self, "dates", dates)
        object.__setattr__(self, "assets", tuple(str(a) for a in self.assets))
        object.__setattr__(self, "prices", _frozen(self.prices))
        if self.caps is not None:
            object.__setattr__(self, "caps", _frozen(self.caps))
        if self.prices.shape != (len(dates), len(self.assets)):
            raise DataError(
                f"prices shape {self.prices.shape} does not match "
                f"{len(dates)} dates x {len(self.assets)} assets"
            )
        if len(dates) > 1 and not (np.diff(dates.asi8) > 0).all():
            raise DataError("dates must be strictly increasing")
        if len(set(self.assets)) != len(self.assets):
            raise DataError("duplicate asset symbols")
        if self.caps is not None and self.caps.shape != (len(self.assets),):
            raise DataError("caps must have one entry per asset")

    @property
    def n_assets(self) -> int:
        return len(self.assets)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(np.array(self.prices), index=self.dates, columns=list(self.assets))


def zscore(x: np.ndarray):
    """Column-wise z-score with population std.

    Returns ``(z, flat)`` where ``flat`` marks zero-variance columns; those
    columns come back as all zeros.
    """
    x = np.asarray(x, dtype=float)
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    scale = np.maximum(1.0, np.abs(mean))
    flat = std <= _ZERO_STD_RTOL * scale
    safe = np.where(flat, 1.0, std)
    z = (x - mean) / safe
    z[:, flat] = 0.0
    return z, flat


@dataclass(frozen=True)
class ReturnPanel:
    """Log-returns and their z-scores over ``dates`` (one row per return day)."""

    dates: pd.DatetimeIndex
    assets: tuple
    returns: np.ndarray
    raw_returns: np.ndarray
    zero_variance: tuple = field(default=())

    def __post_init__(self):
        object.__setattr__(self, "dates", pd.DatetimeIndex(self.dates))
        object.__setattr__(self, "assets", tuple(self.assets))
        object.__setattr__(self, "returns", _frozen(self.returns))
        object.__setattr__(self, "raw_returns", _frozen(self.raw_returns))
        if self.returns.shape != self.raw_returns.shape:
            raise DataError("returns and raw_returns must share dimensions")
        if self.returns.shape != (len(self.dates), len(self.assets)):
            raise DataError("return matrix does not match dates x assets")
        if not self.zero_variance:
            object.__setattr__(self, "zero_variance", (False,) * len(self.assets))
        else:
            object.__setattr__(self, "zero_variance", tuple(bool(f) for f in self.zero_variance))

    @classmethod
    def from_raw(cls, dates, assets, raw_returns) -> "ReturnPanel":
        z, flat = zscore(raw_returns)
        return cls(dates, assets, z, raw_returns, tuple(flat))

    @property
    def n_assets(self) -> int:
        return len(self.assets)

    @property
    def n_obs(self) -> int:
        return len(self.dates)

    def simple_returns(self) -> np.ndarray:
        return np.expm1(self.raw_returns)

    def take_rows(self, mask) -> "ReturnPanel":
        """Sub-panel on the selected rows, re-normalized on those rows."""
        raw = np.array(self.raw_returns)[mask]
        return ReturnPanel.from_raw(self.dates[mask], self.assets, raw)

    def months(self) -> pd.PeriodIndex:
        return self.dates.to_period("M")

    def split_months(self) -> List[tuple]:
        """``[(period, sub_panel), ...]`` for every calendar month present."""
        periods = self.months()
        out = []
        for p in periods.unique():
            out.append((p, self.take_rows(np.asarray(periods == p))))
        return out


@dataclass(frozen=True)
class WindowPair:
    in_sample: ReturnPanel
    out_of_sample: ReturnPanel
    label: str
    index: int = 0


def _read_frame(path) -> pd.DataFrame:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"price file not found: {path}")
    try:
        df = pd.read_csv(path, index_col=0, float_precision="round_trip")
    except Exception as exc:  # pandas raises a zoo of parser errors
        raise DataError(f"cannot read price file {path}: {exc}") from exc
    if df.shape[1] == 0:
        raise DataError(f"price file {path} has no asset columns")
    try:
        df.index = pd.to_datetime(df.index, format="ISO8601")
    except (ValueError, TypeError) as exc:
        raise DataError(f"first column of {path} is not ISO-8601 dates: {exc}") from exc
    try:
        df = df.apply(pd.to_numeric, errors="raise").astype(float)
    except (ValueError, TypeError) as exc:
        raise DataError(f"non-numeric price cell in {path}: {exc}") from exc
    df.columns = [str(c) for c in df.columns]
    return df


def load_caps(path, assets: Sequence[str]) -> np.ndarray:
    """Market caps aligned to ``assets`` from a ``symbol,cap`` CSV."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"caps file not found: {path}")
    try:
        df = pd.read_csv(path, dtype={"symbol": str}, float_precision="round_trip")
    except Exception as exc:
        raise DataError(f"cannot read caps file {path}: {exc}") from exc
    if list(df.columns[:2]) != ["symbol", "cap"]:
        raise DataError(f"caps file {path} must have header 'symbol,cap'")
    caps = dict(zip(df["symbol"].astype(str), df["cap"].astype(float)))
    missing = [a for a in assets if a not in caps]
    if missing:
        raise DataError(f"caps file {path} lacks symbols: {', '.join(missing[:10])}")
    out = np.array([caps[a] for a in assets], dtype=float)
    if not np.isfinite(out).all() or (out < 0).any():
        raise DataError("market caps must be finite and non-negative")
    return out


def panel_from_frame(df: pd.DataFrame, coverage_threshold: float = DEFAULT_COVERAGE, caps=None) -> PricePanel:
    """Apply the coverage filter and gap filling to a raw date x asset frame.

    ``caps``, when given, is aligned with ``df.columns``.
    """
    if not 0.0 <= coverage_threshold <= 1.0:
        raise DataError("coverage_threshold must lie in [0, 1]")
    df = df.sort_index()
    if df.index.has_duplicates:
        dup = df.index[df.index.duplicated()][0]
        raise DataError(f"duplicate date {dup.date()}")
    coverage = df.notna().mean(axis=0)
    dropped = [c for c in df.columns if coverage[c] < coverage_threshold]
    if dropped:
        logger.warning(
            "dropping %d asset(s) below %.2f%% coverage: %s",
            len(dropped), 100 * coverage_threshold, ", ".join(dropped[:20]),
        )
    keep_mask = np.array([c not in dropped for c in df.columns])
    kept = [c for c, k in zip(df.columns, keep_mask) if k]
    if not kept:
        raise DataError("no asset survives the coverage filter")
    df = df[kept].ffill()
    if df.isna().any().any():
        # leading gaps have no prior price; take the first observed one
        logger.warning("back-filling leading missing prices")
        df = df.bfill()
    values = df.to_numpy(dtype=float)
    if not np.isfinite(values).all() or (values <= 0).any():
        bad = df.columns[((values <= 0) | ~np.isfinite(values)).any(axis=0)]
        raise DataError(f"non-positive price after fill for: {', '.join(bad[:10])}")
    if caps is not None:
        caps = np.asarray(caps, dtype=float)[keep_mask]
    return PricePanel(df.index, tuple(df.columns), values, caps)


def load_price_panel(path, coverage_threshold: float = DEFAULT_COVERAGE, caps_path=None) -> PricePanel:
    """Read a ``date,SYM1,SYM2,...`` CSV into a clean :class:`PricePanel`.

    Assets observed on fewer than ``coverage_threshold`` of the dates are
    dropped (with a warning); remaining gaps are forward-filled.
    """
    df = _read_frame(path)
    panel = panel_from_frame(df, coverage_threshold)
    if caps_path is not None:
        caps = load_caps(caps_path, panel.assets)
        panel = PricePanel(panel.dates, panel.assets, panel.prices, caps)
    return panel


def price_panel_csv(panel: PricePanel) -> str:
    df = panel.to_frame()
    df.index = df.index.strftime("%Y-%m-%d")
    df.index.name = "date"
    return df.to_csv(lineterminator="\n")


def caps_csv(panel: PricePanel) -> str:
    if panel.caps is None:
        raise DataError("panel has no market caps")
    return pd.DataFrame({"symbol": panel.assets, "cap": panel.caps}).to_csv(index=False, lineterminator="\n")


def write_price_panel(panel: PricePanel, path) -> None:
    Path(path).write_text(price_panel_csv(panel))


def write_caps(panel: PricePanel, path) -> None:
    Path(path).write_text(caps_csv(panel))


def compute_returns(panel: PricePanel) -> ReturnPanel:
    """Log-returns of every asset and their population z-scores."""
    if len(panel.dates) < 3:
        raise DataError("need at least 3 dates to compute returns")
    p = np.asarray(panel.prices)
    raw = np.log(p[1:] / p[:-1])
    rp = ReturnPanel.from_raw(panel.dates[1:], panel.assets, raw)
    flat = [a for a, f in zip(rp.assets, rp.zero_variance) if f]
    if flat:
        logger.warning("zero-variance return series: %s", ", ".join(flat[:20]))
    return rp


def calendar_months(dates: pd.DatetimeIndex) -> pd.PeriodIndex:
    """Every calendar month from the first to the last date, inclusive."""
    periods = pd.DatetimeIndex(dates).to_period("M")
    return pd.period_range(periods.min(), periods.max(), freq="M")


def make_windows(panel: ReturnPanel, in_months: int = 12, out_months: int = 12, step_months: int = 1) -> List[WindowPair]:
    """Sliding (in-sample, out-of-sample) pairs on calendar-month boundaries."""
    if min(in_months, out_months, step_months) < 1:
        raise ValueError("window lengths and step must be >= 1 month")
    if panel.n_obs == 0:
        logger.warning("empty return panel; no windows")
        return []
    months = calendar_months(panel.dates)
    span = len(months)
    need = in_months + out_months
    if span < need:
        logger.warning("panel spans %d months, need %d; no windows", span, need)
        return []
    periods = panel.months()
    windows = []
    for k, start in enumerate(range(0, span - need + 1, step_months)):
        in_set = months[start:start + in_months]
        out_set = months[start + in_months:start + need]
        in_mask = np.asarray(periods.isin(in_set))
        out_mask = np.asarray(periods.isin(out_set))
        ins = panel.take_rows(in_mask)
        oos = panel.take_rows(out_mask)
        label = ins.dates[0].strftime("%Y-%m-%d") if ins.n_obs else str(in_set[0])
        windows.append(WindowPair(ins, oos, label, k))
    return windows


def slice_months(panel: ReturnPanel, start: str, months: int) -> ReturnPanel:
    """Rows of ``panel`` in ``months`` calendar months starting at ``start`` (``YYYY-MM``)."""
    first = pd.Period(start, freq="M")
    wanted = pd.period_range(first, periods=months, freq="M")
    mask = np.asarray(panel.months().isin(wanted))
    if not mask.any():
        raise DataError(f"no data in the {months} month(s) starting {start}")
    return panel.take_rows(mask)
