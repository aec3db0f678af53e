"""Synthetic price panels with planted block (community) structure.

Asset ``i`` in block ``b`` has daily log-return::

    r_i(t) = drift_b + beta_b * f_b(t) + idio * eps_i(t)

with independent standard-normal block factors ``f_b`` and noise ``eps_i``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .market_data import PricePanel


@dataclass(frozen=True)
class FactorModelSpec:
    blocks: Tuple[Tuple[int, float], ...]
    days: int = 500
    idiosyncratic_vol: float = 0.3
    drift: Optional[Tuple[float, ...]] = None
    seed: int = 0
    start: str = "2019-01-01"
    scale: float = 0.01

    def __post_init__(self):
        object.__setattr__(self, "blocks", tuple((int(s), float(b)) for s, b in self.blocks))
        if not self.blocks:
            raise ValueError("at least one block required")
        for size, beta in self.blocks:
            if size < 1:
                raise ValueError("block sizes must be >= 1")
            if not 0.0 <= beta <= 1.0:
                raise ValueError("factor loadings must lie in [0, 1]")
        if self.days < 30:
            raise ValueError("days must be >= 30")
        if self.idiosyncratic_vol < 0:
            raise ValueError("idiosyncratic_vol must be >= 0")
        if self.drift is not None and len(self.drift) != len(self.blocks):
            raise ValueError("one drift per block required")

    @property
    def n_assets(self) -> int:
        return sum(s for s, _ in self.blocks)

    def truth(self) -> np.ndarray:
        """Block index of every asset."""
        return np.repeat(np.arange(len(self.blocks)), [s for s, _ in self.blocks])


def generate_log_returns(spec: FactorModelSpec) -> np.ndarray:
    """``days x N`` matrix of factor-model log-returns (unit-free, before ``scale``)."""
    rng = np.random.default_rng(spec.seed)
    nb = len(spec.blocks)
    factors = rng.standard_normal((spec.days, nb))
    noise = rng.standard_normal((spec.days, spec.n_assets))
    block = spec.truth()
    beta = np.array([b for _, b in spec.blocks])[block]
    drift = np.zeros(nb) if spec.drift is None else np.asarray(spec.drift, dtype=float)
    return drift[block] + beta * factors[:, block] + spec.idiosyncratic_vol * noise


def generate_block_panel(spec: FactorModelSpec, symbols: Optional[Sequence[str]] = None,
                         caps: Optional[Sequence[float]] = None) -> PricePanel:
    """Business-day price panel starting at 100 with ``spec.days`` returns.

    ``scale`` converts the unit-variance model returns into daily magnitudes;
    it multiplies the whole log-return so correlations are unaffected.
    """
    r = spec.scale * generate_log_returns(spec)
    prices = 100.0 * np.exp(np.vstack([np.zeros((1, spec.n_assets)), np.cumsum(r, axis=0)]))
    dates = pd.bdate_range(spec.start, periods=spec.days + 1)
    if symbols is None:
        width = len(str(spec.n_assets - 1))
        symbols = [f"A{k:0{width}d}" for k in range(spec.n_assets)]
    return PricePanel(dates, tuple(symbols), prices, None if caps is None else np.asarray(caps, float))


def months_panel(months: int, blocks=((10, 0.8), (10, 0.8)), idio: float = 0.5, seed: int = 0,
                 start: str = "2019-01-01", drift=None) -> PricePanel:
    """Panel covering exactly ``months`` calendar months of business days."""
    first = pd.Timestamp(start)
    last = (first + pd.DateOffset(months=months)) - pd.Timedelta(days=1)
    days = len(pd.bdate_range(first, last)) - 1
    spec = FactorModelSpec(tuple(blocks), days=days, idiosyncratic_vol=idio, drift=drift, seed=seed, start=start)
    return generate_block_panel(spec)
