"""Command line entry point: ``netfolio {matrix,communities,backtest,synth}``.

Settings come from an optional YAML config (``--config``) with command-line
flags taking precedence. Every command renders its outputs in memory first
and only then writes them under ``--out-dir``, so a failing run leaves no
partial files behind.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 convergence error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Dict, List, Optional

import yaml

from . import __version__
from .backtest import BacktestConfig, StrategySpec, dump_json, report_files, run_backtest, strategy_grid
from .community import CLUSTERERS, detect_with_retries, partition_csv, partition_manifest
from .errors import ConfigError, ConvergenceError, DataError
from .graphrep import build_mst, to_distance, to_dot, to_edge_csv
from .market_data import (DEFAULT_COVERAGE, caps_csv, compute_returns, load_price_panel, make_windows,
                          price_panel_csv, slice_months)
from .relational import BASE_KIND, KINDS, base_relation, cooccurrence_matrix, matrix_csv, matrix_manifest
from .synthetic import FactorModelSpec, generate_block_panel

logger = logging.getLogger("netfolio")

UNIVERSE_SIZE = {"stocks": 25, "crypto": 20}
EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_CONVERGENCE = 0, 2, 3, 4


@dataclass
class RunConfig:
    prices: Optional[str] = None
    caps: Optional[str] = None
    universe: str = "stocks"
    portfolio_size: Optional[int] = None
    in_months: int = 12
    out_months: int = 12
    step_months: int = 1
    bins: int = 8
    damping: float = 0.9
    preference: object = "median"
    max_iter: int = 1000
    stable_iter: int = 100
    seed: int = 0
    repetitions: int = 100
    rebalance: str = "daily"
    coverage: float = DEFAULT_COVERAGE
    strategies: List[str] = field(default_factory=list)
    out_dir: str = "netfolio-out"
    top_k: int = 10
    jobs: int = 1
    # matrix / communities
    kinds: List[str] = field(default_factory=lambda: ["Cor", "MI"])
    start: Optional[str] = None
    months: Optional[int] = None
    clusterer: str = "LV"
    relation: str = "Cor"

    def validate(self) -> "RunConfig":
        if not self.prices:
            raise ConfigError("--prices is required")
        for label, path in (("prices", self.prices), ("caps", self.caps)):
            if path is not None and not Path(path).is_file():
                raise ConfigError(f"{label} file not found: {path}")
        if self.universe not in ("stocks", "crypto", "custom"):
            raise ConfigError("universe must be stocks, crypto or custom")
        if self.portfolio_size is None:
            if self.universe == "custom":
                raise ConfigError("--portfolio-size is required for a custom universe")
            self.portfolio_size = UNIVERSE_SIZE[self.universe]
        if int(self.portfolio_size) < 1:
            raise ConfigError("portfolio size must be >= 1")
        for name in ("in_months", "out_months", "step_months", "max_iter", "stable_iter", "top_k", "jobs"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name.replace('_', '-')} must be >= 1")
        if self.repetitions < 1:
            raise ConfigError("repetitions must be >= 1")
        if self.bins < 2:
            raise ConfigError("bins must be >= 2")
        if not 0.5 <= self.damping < 1.0:
            raise ConfigError("damping must lie in [0.5, 1)")
        if self.preference != "median":
            try:
                self.preference = float(self.preference)
            except (TypeError, ValueError):
                raise ConfigError("preference must be 'median' or a number") from None
        if self.rebalance not in ("daily", "buy_and_hold"):
            raise ConfigError("rebalance must be daily or buy_and_hold")
        if self.clusterer not in CLUSTERERS:
            raise ConfigError(f"clusterer must be one of {', '.join(CLUSTERERS)}")
        if self.relation not in KINDS:
            raise ConfigError(f"relation must be one of {', '.join(KINDS)}")
        bad = [k for k in self.kinds if k not in KINDS]
        if bad:
            raise ConfigError(f"unknown relation kind(s): {', '.join(bad)}")
        self.strategy_specs()
        return self

    def strategy_specs(self) -> List[StrategySpec]:
        if not self.strategies or self.strategies == ["all"]:
            return strategy_grid()
        grid = {s.id: s for s in strategy_grid()}
        unknown = [s for s in self.strategies if s not in grid]
        if unknown:
            raise ConfigError(f"strategies not in the grid: {', '.join(unknown)}")
        wanted = set(self.strategies)
        return [s for s in strategy_grid() if s.id in wanted]

    def backtest_config(self) -> BacktestConfig:
        return BacktestConfig(portfolio_size=int(self.portfolio_size), bins=self.bins, damping=self.damping,
                              preference=self.preference, max_iter=self.max_iter, stable_iter=self.stable_iter,
                              seed=self.seed, repetitions=self.repetitions, rebalance=self.rebalance,
                              top_k=self.top_k)


def _split_list(text):
    return [t for t in (s.strip() for s in text.split(",")) if t]


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML file with run settings (flags override it)")
    common.add_argument("--prices", help="price CSV: date,SYM1,SYM2,...")
    common.add_argument("--caps", help="market-cap CSV: symbol,cap")
    common.add_argument("--universe", choices=["stocks", "crypto", "custom"])
    common.add_argument("--portfolio-size", type=int)
    common.add_argument("--in-months", type=int)
    common.add_argument("--out-months", type=int)
    common.add_argument("--step-months", type=int)
    common.add_argument("--bins", type=int, help="quantile bins for mutual information")
    common.add_argument("--damping", type=float, help="affinity propagation damping")
    common.add_argument("--preference", help="affinity propagation preference ('median' or a number)")
    common.add_argument("--seed", type=int)
    common.add_argument("--coverage", type=float, help="minimum fraction of dates an asset must be priced")
    common.add_argument("--out-dir")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="netfolio", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"netfolio {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("matrix", parents=[common], help="write relational matrices for one window")
    p.add_argument("--kinds", type=_split_list, help="comma list of Cor,MI,cCor,cMI")
    p.add_argument("--start", help="first month of the window, YYYY-MM (default: first month)")
    p.add_argument("--months", type=int, help="window length in months (default: --in-months)")
    p.add_argument("--clusterer", choices=CLUSTERERS, help="clusterer for co-occurrence months")

    p = sub.add_parser("communities", parents=[common], help="partition assets and export the MST")
    p.add_argument("--clusterer", choices=CLUSTERERS)
    p.add_argument("--relation", choices=KINDS)
    p.add_argument("--start")
    p.add_argument("--months", type=int)

    p = sub.add_parser("backtest", parents=[common], help="run the strategy grid and baselines")
    p.add_argument("--strategies", type=_split_list, help="comma list of strategy ids (default: all 120)")
    p.add_argument("--top-k", type=int)
    p.add_argument("--repetitions", type=int, help="RANDOM baseline repetitions")
    p.add_argument("--rebalance", choices=["daily", "buy_and_hold"])
    p.add_argument("--jobs", type=int, help="worker processes over windows")

    p = sub.add_parser("synth", help="write a synthetic block-factor price panel")
    p.add_argument("--blocks", default="20:0.9,20:0.9", help="comma list of SIZE:BETA")
    p.add_argument("--days", type=int, default=500)
    p.add_argument("--idio", type=float, default=0.3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--start", default="2019-01-01")
    p.add_argument("--with-caps", action="store_true", help="also write caps.csv (all ones)")
    p.add_argument("--out-dir", default=".")
    p.add_argument("-v", "--verbose", action="store_true")
    return parser


def load_config(args: argparse.Namespace) -> RunConfig:
    values: Dict[str, object] = {}
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        try:
            loaded = yaml.safe_load(path.read_text()) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from exc
        if not isinstance(loaded, dict):
            raise ConfigError(f"{path} must contain a mapping")
        values.update({k.replace("-", "_"): v for k, v in loaded.items()})
    known = {f.name for f in fields(RunConfig)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
    for name in known:
        v = getattr(args, name, None)
        if v is not None:
            values[name] = v
    for key in ("strategies", "kinds"):
        if isinstance(values.get(key), str):
            values[key] = _split_list(values[key])
    try:
        return RunConfig(**values).validate()
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc


def write_outputs(out_dir, files: Dict[str, str]) -> None:
    out = Path(out_dir)
    for rel, text in sorted(files.items()):
        path = out / rel
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")


def _manifest(command: str, cfg: RunConfig, extra: Optional[dict] = None) -> str:
    body = {"command": command, "version": __version__, "seed": cfg.seed, "config": asdict(cfg)}
    body.update(extra or {})
    return dump_json(body)


def _returns_for(cfg: RunConfig):
    panel = load_price_panel(cfg.prices, cfg.coverage, cfg.caps)
    returns = compute_returns(panel)
    return panel, returns


def _window_panel(cfg: RunConfig, returns):
    months = cfg.months or cfg.in_months
    start = cfg.start or str(returns.months()[0])
    return slice_months(returns, start, months), start


def _relation(cfg: RunConfig, sub, kind: str, label: str):
    if kind in BASE_KIND:
        return cooccurrence_matrix(sub, cfg.clusterer, BASE_KIND[kind], months=12, bins=cfg.bins, seed=cfg.seed,
                                   label=label, **_cluster_kw(cfg))
    return base_relation(sub, kind, cfg.bins, label)


def _cluster_kw(cfg: RunConfig) -> dict:
    return dict(damping=cfg.damping, preference=cfg.preference, max_iter=cfg.max_iter, stable_iter=cfg.stable_iter)


def cmd_matrix(cfg: RunConfig) -> Dict[str, str]:
    _, returns = _returns_for(cfg)
    sub, start = _window_panel(cfg, returns)
    files = {}
    for kind in cfg.kinds:
        rel = _relation(cfg, sub, kind, start)
        files[f"matrix_{kind}.csv"] = matrix_csv(rel)
        files[f"matrix_{kind}.json"] = matrix_manifest(rel)
    files["run_manifest.json"] = _manifest("matrix", cfg, {"window_start": start, "n_days": sub.n_obs})
    return files


def cmd_communities(cfg: RunConfig) -> Dict[str, str]:
    _, returns = _returns_for(cfg)
    sub, start = _window_panel(cfg, returns)
    rel = _relation(cfg, sub, cfg.relation, start)
    part = detect_with_retries(rel, cfg.clusterer, seed=cfg.seed, **_cluster_kw(cfg))
    mst = build_mst(to_distance(rel))
    stem = f"partition_{cfg.clusterer}_{cfg.relation}"
    files = {
        f"{stem}.csv": partition_csv(part),
        f"{stem}.json": partition_manifest(part),
        f"mst_{cfg.relation}.dot": to_dot(mst, part.labels, name=f"MST {cfg.relation} {start}"),
        f"mst_{cfg.relation}_edges.csv": to_edge_csv(mst),
    }
    files["run_manifest.json"] = _manifest("communities", cfg, {
        "window_start": start, "n_communities": part.n_communities, "quality": part.quality})
    return files


def cmd_backtest(cfg: RunConfig) -> Dict[str, str]:
    panel, returns = _returns_for(cfg)
    windows = make_windows(returns, cfg.in_months, cfg.out_months, cfg.step_months)
    if not windows:
        raise DataError(f"data spans too few months for a {cfg.in_months}+{cfg.out_months} month window")
    runs = run_backtest(windows, cfg.strategy_specs(), cfg.backtest_config(), panel.caps, cfg.jobs)
    files = report_files(runs, cfg.top_k)
    files["run_manifest.json"] = _manifest("backtest", cfg, {
        "windows": [w.label for w in windows], "n_assets": panel.n_assets,
        "strategies": [s.id for s in cfg.strategy_specs()]})
    return files


def cmd_synth(args) -> Dict[str, str]:
    try:
        blocks = tuple((int(sz), float(b)) for sz, b in (item.split(":") for item in _split_list(args.blocks)))
        spec = FactorModelSpec(blocks, days=args.days, idiosyncratic_vol=args.idio, seed=args.seed, start=args.start)
    except ValueError as exc:
        raise ConfigError(f"bad synthetic spec: {exc}") from exc
    caps = [1.0] * spec.n_assets if args.with_caps else None
    panel = generate_block_panel(spec, caps=caps)
    files = {"prices.csv": price_panel_csv(panel)}
    if caps is not None:
        files["caps.csv"] = caps_csv(panel)
    return files


def _print_top(files: Dict[str, str]) -> None:
    report = json.loads(files["summary.json"])
    stats = report["strategies"]
    for name, ids in report["rankings"].items():
        print(f"top {len(ids)} by {name}:")
        for rank, sid in enumerate(ids, 1):
            s = stats[sid]
            print(f"  {rank:2d}. {sid:24s} return {s['mean_return']:9.3f}%  "
                  f"volatility {s['mean_volatility']:.5f}  ratio {s['ratio']:.2f}")
    for tag, s in sorted(report["baselines"].items()):
        print(f"baseline {tag:8s} return {s['mean_return']:9.3f}%  volatility {s['mean_volatility']:.5f}")


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "synth":
            files = cmd_synth(args)
            write_outputs(args.out_dir, files)
            return EXIT_OK
        cfg = load_config(args)
        handler = {"matrix": cmd_matrix, "communities": cmd_communities, "backtest": cmd_backtest}[args.command]
        files = handler(cfg)
        write_outputs(cfg.out_dir, files)
        if args.command == "backtest":
            _print_top(files)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ConvergenceError as exc:
        print(f"convergence error: {exc}", file=sys.stderr)
        return EXIT_CONVERGENCE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
