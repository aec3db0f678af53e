"""Strategy grid, out-of-sample evaluation, baselines and reports."""

from __future__ import annotations

import itertools
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence, Union

import numpy as np

from .community import AP, CLUSTERERS, LV, Partition, detect_with_retries
from .errors import ConvergenceError, DataError
from .graphrep import build_full_graph, build_mst, to_distance
from .market_data import ReturnPanel, WindowPair
from .relational import BASE_KIND, DEFAULT_BINS, KINDS, RelationalMatrix, base_relation, cooccurrence_matrix
from .seeding import rng_for, sub_seed
from .selection import METRICS, RANGES, SelectionSpec, compute_scores, select_indices

logger = logging.getLogger(__name__)

RANDOM = "RANDOM"
INDEX = "INDEX"
BASELINES = (RANDOM, INDEX)

# stream ids for sub-seeds
_STREAM_PARTITION = 1
_STREAM_COOC = 2
_STREAM_RANDOM = 3


@dataclass(frozen=True, order=True)
class StrategySpec:
    clusterer: str
    relation: str
    metric: str
    range: str

    def __post_init__(self):
        if self.clusterer not in CLUSTERERS or self.relation not in KINDS \
                or self.metric not in METRICS or self.range not in RANGES:
            raise ValueError(f"invalid strategy {self.clusterer}-{self.relation}-{self.metric}-{self.range}")

    @property
    def id(self) -> str:
        return f"{self.clusterer}-{self.relation}-{self.metric}-{self.range}"

    @classmethod
    def parse(cls, text: str) -> "StrategySpec":
        parts = text.strip().split("-")
        if len(parts) != 4:
            raise ValueError(f"strategy id {text!r} is not CLUSTERER-RELATION-METRIC-RANGE")
        return cls(*parts)


def strategy_grid() -> List[StrategySpec]:
    """All 2 x 4 x 5 x 3 = 120 strategies in canonical order."""
    return [StrategySpec(*cell) for cell in itertools.product(CLUSTERERS, KINDS, METRICS, RANGES)]


@dataclass
class PortfolioResult:
    strategy: str
    window: str
    dates: tuple
    daily_returns: np.ndarray
    cumulative_return: float
    volatility: float
    ratio: float
    symbols: tuple = ()

    def value_series(self) -> np.ndarray:
        return np.cumprod(1.0 + self.daily_returns)


def _performance(daily: np.ndarray):
    daily = np.asarray(daily, dtype=float)
    cum = (float(np.prod(1.0 + daily)) - 1.0) * 100.0
    vol = float(daily.std()) if daily.size else 0.0
    ratio = cum / vol if vol > 0 else 0.0
    return cum, vol, ratio


def portfolio_returns(simple: np.ndarray, weights: np.ndarray, rebalance: str = "daily") -> np.ndarray:
    """Daily portfolio returns from constituent simple returns (T x n)."""
    if rebalance == "daily":
        return simple @ weights
    if rebalance == "buy_and_hold":
        value = np.cumprod(1.0 + simple, axis=0) @ weights
        prev = np.concatenate([[float(np.sum(weights))], value[:-1]])
        return value / prev - 1.0
    raise ValueError(f"unknown rebalance mode {rebalance!r}")


def _evaluate(panel: ReturnPanel, idx: Sequence[int], weights: np.ndarray, tag: str, label: str,
              rebalance: str) -> PortfolioResult:
    simple = panel.simple_returns()[:, list(idx)]
    daily = portfolio_returns(simple, weights, rebalance)
    cum, vol, ratio = _performance(daily)
    return PortfolioResult(tag, label, tuple(d.strftime("%Y-%m-%d") for d in panel.dates), daily,
                           cum, vol, ratio, tuple(panel.assets[i] for i in idx))


def _oos(window: Union[WindowPair, ReturnPanel]):
    if isinstance(window, WindowPair):
        return window.out_of_sample, window.label
    return window, ""


def evaluate_portfolio(symbols: Sequence[str], window: Union[WindowPair, ReturnPanel], tag: str = "",
                       rebalance: str = "daily") -> PortfolioResult:
    """Equal-weight portfolio of ``symbols`` over the out-of-sample period.

    Cumulative return is compounded and in percent; volatility is the
    population std of daily simple returns (not annualized).
    """
    panel, label = _oos(window)
    if not symbols:
        raise ValueError("portfolio has no symbols")
    pos = {a: k for k, a in enumerate(panel.assets)}
    missing = [s for s in symbols if s not in pos]
    if missing:
        raise DataError(f"symbol(s) not in the out-of-sample panel: {', '.join(missing)}")
    idx = sorted({pos[s] for s in symbols})
    weights = np.full(len(idx), 1.0 / len(idx))
    return _evaluate(panel, idx, weights, tag, label, rebalance)


def run_index_baseline(window: Union[WindowPair, ReturnPanel], caps: Optional[Sequence[float]] = None,
                       rebalance: str = "daily") -> PortfolioResult:
    """All-asset portfolio weighted by market cap (equal weights without caps)."""
    panel, label = _oos(window)
    n = panel.n_assets
    if caps is None:
        weights = np.full(n, 1.0 / n)
    else:
        caps = np.asarray(caps, dtype=float)
        if caps.shape != (n,):
            raise DataError("one market cap per asset required")
        if (caps < 0).any() or not np.isfinite(caps).all():
            raise DataError("market caps must be finite and non-negative")
        if caps.sum() <= 0:
            raise DataError("market caps sum to zero")
        weights = np.full(n, 1.0 / n) if (caps == caps[0]).all() else caps / caps.sum()
    return _evaluate(panel, range(n), weights, INDEX, label, rebalance)


def run_random_baseline(window: Union[WindowPair, ReturnPanel], portfolio_size: int, repetitions: int = 100,
                        seed: int = 0, rebalance: str = "daily") -> PortfolioResult:
    """Average of ``repetitions`` equal-weight portfolios of uniformly drawn assets."""
    panel, label = _oos(window)
    n = panel.n_assets
    if portfolio_size > n:
        raise ValueError(f"portfolio size {portfolio_size} exceeds universe of {n}")
    w_index = window.index if isinstance(window, WindowPair) else 0
    cums, vols, series = [], [], []
    weights = np.full(portfolio_size, 1.0 / portfolio_size)
    for rep in range(repetitions):
        rng = rng_for(seed, _STREAM_RANDOM, w_index, rep)
        idx = sorted(int(i) for i in rng.choice(n, size=portfolio_size, replace=False))
        res = _evaluate(panel, idx, weights, RANDOM, label, rebalance)
        cums.append(res.cumulative_return)
        vols.append(res.volatility)
        series.append(res.daily_returns)
    cum = float(np.mean(cums))
    vol = float(np.mean(vols))
    return PortfolioResult(RANDOM, label, tuple(d.strftime("%Y-%m-%d") for d in panel.dates),
                           np.mean(series, axis=0), cum, vol, cum / vol if vol > 0 else 0.0)


# -- strategy pipeline ---------------------------------------------------------

@dataclass(frozen=True)
class BacktestConfig:
    portfolio_size: int = 25
    bins: int = DEFAULT_BINS
    damping: float = 0.9
    preference: Union[str, float] = "median"
    max_iter: int = 1000
    stable_iter: int = 100
    seed: int = 0
    repetitions: int = 100
    rebalance: str = "daily"
    cooc_clusterer: Optional[str] = None  # None: same clusterer as the strategy
    top_k: int = 10
    ap_retries: int = 3

    def cluster_kw(self) -> dict:
        return {"damping": self.damping, "preference": self.preference,
                "max_iter": self.max_iter, "stable_iter": self.stable_iter}


_CLUSTER_CODE = {LV: 0, AP: 1}
_KIND_CODE = {k: i for i, k in enumerate(KINDS)}


class WindowContext:
    """Memoizes the in-sample pipeline pieces shared between strategies."""

    def __init__(self, window: WindowPair, config: BacktestConfig):
        self.window = window
        self.config = config
        self._cache: Dict[tuple, object] = {}

    def _memo(self, key, fn):
        if key not in self._cache:
            self._cache[key] = fn()
        return self._cache[key]

    def _rel_key(self, kind: str, clusterer: str) -> tuple:
        if kind in BASE_KIND:
            return ("rel", kind, self.config.cooc_clusterer or clusterer)
        return ("rel", kind)

    def relation(self, kind: str, clusterer: str) -> RelationalMatrix:
        cfg = self.config
        panel = self.window.in_sample
        if kind in BASE_KIND:
            cc = cfg.cooc_clusterer or clusterer
            seed = sub_seed(cfg.seed, _STREAM_COOC, self.window.index, _CLUSTER_CODE[cc], _KIND_CODE[kind])
            return self._memo(self._rel_key(kind, clusterer), lambda: cooccurrence_matrix(
                panel, cc, BASE_KIND[kind], bins=cfg.bins, seed=seed, label=self.window.label, **cfg.cluster_kw()))
        return self._memo(self._rel_key(kind, clusterer), lambda: base_relation(panel, kind, cfg.bins, self.window.label))

    def graphs(self, kind: str, clusterer: str):
        rel = self.relation(kind, clusterer)

        def build():
            d = to_distance(rel)
            return build_full_graph(d), build_mst(d)
        return self._memo(("graphs",) + self._rel_key(kind, clusterer), build)

    def partition(self, kind: str, clusterer: str) -> Partition:
        cfg = self.config
        rel = self.relation(kind, clusterer)
        seed = sub_seed(cfg.seed, _STREAM_PARTITION, self.window.index, _CLUSTER_CODE[clusterer], _KIND_CODE[kind])
        return self._memo(("part", kind, clusterer), lambda: detect_with_retries(
            rel, clusterer, seed=seed, retries=cfg.ap_retries, **cfg.cluster_kw()))

    def scores(self, spec: StrategySpec):
        def build():
            rel = self.relation(spec.relation, spec.clusterer)
            fg, mst = self.graphs(spec.relation, spec.clusterer)
            return compute_scores(spec.metric, rel, fg, mst, self.partition(spec.relation, spec.clusterer))
        return self._memo(("scores", spec.clusterer, spec.relation, spec.metric), build)


def select_for_strategy(spec: StrategySpec, ctx: WindowContext) -> List[tuple]:
    part = ctx.partition(spec.relation, spec.clusterer)
    scores = ctx.scores(spec)
    chosen = select_indices(part, scores, SelectionSpec(spec.metric, spec.range, ctx.config.portfolio_size))
    return [(part.assets[i], c, float(scores.values[i])) for i, c in chosen]


def run_strategy(spec: StrategySpec, window: WindowPair, portfolio_size: int = 25, seed: int = 0,
                 config: Optional[BacktestConfig] = None, context: Optional[WindowContext] = None) -> PortfolioResult:
    """Build the portfolio on the in-sample year and evaluate it out of sample."""
    if config is None:
        config = BacktestConfig(portfolio_size=portfolio_size, seed=seed)
    ctx = context if context is not None else WindowContext(window, config)
    try:
        chosen = select_for_strategy(spec, ctx)
    except ConvergenceError as exc:
        raise ConvergenceError(f"strategy {spec.id}, window {window.label}: {exc}",
                               exemplars=exc.exemplars, iterations=exc.iterations) from exc
    return evaluate_portfolio([s for s, _, _ in chosen], window, spec.id, config.rebalance)


@dataclass
class WindowRun:
    label: str
    results: List[PortfolioResult]
    selections: Dict[str, List[tuple]] = field(default_factory=dict)


def run_window(window: WindowPair, strategies: Sequence[StrategySpec], config: BacktestConfig,
               caps=None) -> WindowRun:
    ctx = WindowContext(window, config)
    results, selections = [], {}
    for spec in strategies:
        try:
            chosen = select_for_strategy(spec, ctx)
        except ConvergenceError as exc:
            raise ConvergenceError(f"strategy {spec.id}, window {window.label}: {exc}",
                                   exemplars=exc.exemplars, iterations=exc.iterations) from exc
        selections[spec.id] = chosen
        results.append(evaluate_portfolio([s for s, _, _ in chosen], window, spec.id, config.rebalance))
    p = min(config.portfolio_size, window.out_of_sample.n_assets)
    results.append(run_random_baseline(window, p, config.repetitions, config.seed, config.rebalance))
    results.append(run_index_baseline(window, caps, config.rebalance))
    return WindowRun(window.label, results, selections)


def _run_window_job(args):
    return run_window(*args)


def run_backtest(windows: Sequence[WindowPair], strategies: Sequence[StrategySpec], config: BacktestConfig,
                 caps=None, jobs: int = 1) -> List[WindowRun]:
    """Every strategy plus both baselines on every window, in window order."""
    tasks = [(w, list(strategies), config, caps) for w in windows]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            runs = list(pool.map(_run_window_job, tasks))
    else:
        runs = [_run_window_job(t) for t in tasks]
    for run in runs:
        logger.info("window %s: %d portfolios", run.label, len(run.results))
    return runs


# -- aggregation ---------------------------------------------------------------

def _mean_se(values):
    v = np.asarray(values, dtype=float)
    se = float(v.std(ddof=1) / np.sqrt(v.size)) if v.size > 1 else 0.0
    return float(v.mean()), se


def aggregate_and_rank(results: Sequence[PortfolioResult], top_k: int = 10) -> dict:
    """Mean and standard error per strategy across windows, plus top-k tables.

    The standard error is the sample std (``ddof=1``) over ``sqrt(n)``.
    Rankings cover strategies only; baselines are reported alongside.
    """
    by_tag: Dict[str, List[PortfolioResult]] = {}
    for r in results:
        by_tag.setdefault(r.strategy, []).append(r)
    rows = {}
    for tag, rs in by_tag.items():
        mr, sr = _mean_se([r.cumulative_return for r in rs])
        mv, sv = _mean_se([r.volatility for r in rs])
        rows[tag] = {
            "n_windows": len(rs),
            "mean_return": mr, "se_return": sr,
            "mean_volatility": mv, "se_volatility": sv,
            "ratio": mr / mv if mv > 0 else 0.0,
        }
    strategies = {k: v for k, v in rows.items() if k not in BASELINES}
    baselines = {k: v for k, v in rows.items() if k in BASELINES}

    def top(key, descending):
        sign = -1.0 if descending else 1.0
        return [k for k in sorted(strategies, key=lambda s: (sign * strategies[s][key], s))][:top_k]

    return {
        "strategies": strategies,
        "baselines": baselines,
        "top_k": top_k,
        "rankings": {
            "return": top("mean_return", True),
            "volatility": top("mean_volatility", False),
            "ratio": top("ratio", True),
        },
    }


# -- report files ----------------------------------------------------------------

_TABLE_METRIC_NAMES = {"PCA": "PCA", "DegFG": "Degree (FG)", "CloFG": "Closeness (FG)",
                       "DegMST": "Degree (MST)", "CloMST": "Closeness (MST)"}


def results_csv(runs: Sequence[WindowRun]) -> str:
    lines = ["strategy_id,window_start,cum_return_pct,volatility,ratio"]
    for run in runs:
        for r in run.results:
            lines.append(f"{r.strategy},{r.window},{r.cumulative_return!r},{r.volatility!r},{r.ratio!r}")
    return "\n".join(lines) + "\n"


def selections_csv(runs: Sequence[WindowRun]) -> str:
    lines = ["strategy_id,window_start,symbol,community_id,score"]
    for run in runs:
        for sid, chosen in run.selections.items():
            for sym, comm, score in chosen:
                lines.append(f"{sid},{run.label},{sym},{comm},{score!r}")
    return "\n".join(lines) + "\n"


def value_in_time_csv(run: WindowRun, tags: Sequence[str]) -> str:
    """``date,strategy_id,portfolio_value`` with value 1.0 invested at the window start."""
    lines = ["date,strategy_id,portfolio_value"]
    by_tag = {r.strategy: r for r in run.results}
    for tag in tags:
        r = by_tag.get(tag)
        if r is None:
            continue
        for d, v in zip(r.dates, r.value_series()):
            lines.append(f"{d},{tag},{float(v)!r}")
    return "\n".join(lines) + "\n"


def grid_table_csv(report: dict, quantity: str) -> str:
    """Metric x range rows, clusterer x relation columns, cells ``mean ± SE``."""
    mean_key, se_key = {"return": ("mean_return", "se_return"),
                        "volatility": ("mean_volatility", "se_volatility")}[quantity]
    cols = [(c, k) for c in CLUSTERERS for k in KINDS]
    lines = ["metric,range," + ",".join(f"{c}-{k}" for c, k in cols)]
    stats = report["strategies"]
    digits = 2 if quantity == "return" else 4
    for metric in METRICS:
        for rng in RANGES:
            cells = []
            for c, k in cols:
                row = stats.get(f"{c}-{k}-{metric}-{rng}")
                cells.append("" if row is None else
                             f"{row[mean_key]:.{digits}f} ± {row[se_key]:.{digits + 2}f}")
            lines.append(f"{_TABLE_METRIC_NAMES[metric]},{rng}," + ",".join(cells))
    base = report["baselines"]
    for tag in BASELINES:
        if tag in base:
            row = base[tag]
            lines.append(f"{tag},," + f"{row[mean_key]:.{digits}f} ± {row[se_key]:.{digits + 2}f}"
                         + "," * (len(cols) - 1))
    return "\n".join(lines) + "\n"


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    raise TypeError(f"not JSON serializable: {type(o)}")


def dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, default=_json_default, ensure_ascii=False) + "\n"


def report_files(runs: Sequence[WindowRun], top_k: int = 10) -> Dict[str, str]:
    """All backtest report files as ``{relative path: text}``."""
    all_results = [r for run in runs for r in run.results]
    report = aggregate_and_rank(all_results, top_k)
    files = {
        "results.csv": results_csv(runs),
        "selections.csv": selections_csv(runs),
        "summary.json": dump_json(report),
        "table_return.csv": grid_table_csv(report, "return"),
        "table_volatility.csv": grid_table_csv(report, "volatility"),
    }
    tags = list(report["rankings"]["ratio"]) + list(BASELINES)
    for run in runs:
        files[f"value_in_time/{run.label}.csv"] = value_in_time_csv(run, tags)
    return files


def config_dict(config: BacktestConfig) -> dict:
    return asdict(config)
