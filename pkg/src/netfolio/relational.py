"""Relational (similarity) matrices between assets.

Four kinds are produced:

``Cor``   Pearson correlation of the normalized log-returns.
``MI``    Mutual information (nats) from a plug-in joint histogram on
          equal-frequency bins; the diagonal holds each asset's entropy.
``cCor``  / ``cMI``  fraction of calendar months in which two assets fall
          in the same community, when the monthly communities are detected
          on ``Cor`` / ``MI`` respectively.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd

from .errors import ConvergenceError, DataError
from .market_data import ReturnPanel
from .seeding import sub_seed

logger = logging.getLogger(__name__)

KINDS = ("Cor", "MI", "cCor", "cMI")
BASE_KIND = {"cCor": "Cor", "cMI": "MI"}
DEFAULT_BINS = 8
MIN_MONTH_DAYS = 15


@dataclass(frozen=True)
class RelationalMatrix:
    kind: str
    assets: tuple
    values: np.ndarray
    source_window: str = ""

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown relation kind {self.kind!r}")
        values = np.array(self.values, dtype=float, copy=True)
        values.flags.writeable = False
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "assets", tuple(self.assets))
        n = len(self.assets)
        if values.shape != (n, n):
            raise ValueError(f"values must be {n}x{n}, got {values.shape}")

    @property
    def n(self) -> int:
        return len(self.assets)

    @property
    def is_cooccurrence(self) -> bool:
        return self.kind in BASE_KIND


def _symmetrize_upper(m: np.ndarray) -> np.ndarray:
    """Mirror the upper triangle so ``m[i, j] == m[j, i]`` bit for bit."""
    upper = np.triu(m, 1)
    return upper + upper.T + np.diag(np.diag(m))


def correlation_matrix(returns: ReturnPanel, label: str = "") -> RelationalMatrix:
    """Pearson correlation matrix of the return panel's normalized returns.

    Off-diagonal entries involving a zero-variance column are 0.
    """
    x = np.asarray(returns.returns, dtype=float)
    if x.shape[0] < 2:
        raise DataError("correlation needs at least 2 observations per asset")
    xc = x - x.mean(axis=0)
    ss = np.einsum("ij,ij->j", xc, xc)
    flat = (ss <= 0) | np.asarray(returns.zero_variance, dtype=bool)
    norm = np.sqrt(np.where(flat, 1.0, ss))
    c = (xc.T @ xc) / np.outer(norm, norm)
    c = np.clip(c, -1.0, 1.0)
    c[flat, :] = 0.0
    c[:, flat] = 0.0
    c = _symmetrize_upper(c)
    np.fill_diagonal(c, 1.0)
    return RelationalMatrix("Cor", returns.assets, c, label)


# -- mutual information ----------------------------------------------------

def quantile_bins(x, bins: int = DEFAULT_BINS) -> np.ndarray:
    """Equal-frequency bin codes in ``0..bins-1``.

    Bins are assigned by rank; tied values are ordered by position, so
    every bin gets ``floor`` or ``ceil`` of ``len(x) / bins`` members. A
    constant series is degenerate and lands entirely in bin 0.
    """
    x = np.asarray(x, dtype=float)
    n = len(x)
    if n == 0 or x.max() == x.min():
        return np.zeros(n, dtype=np.int64)
    order = np.argsort(x, kind="stable")
    ranks = np.empty(n, dtype=np.int64)
    ranks[order] = np.arange(n)
    return ranks * bins // n


def _xlogx_sum(counts, total) -> float:
    p = np.asarray(counts, dtype=float) / total
    p = p[p > 0]
    return float(-(p * np.log(p)).sum())


def entropy(codes, bins: int) -> float:
    codes = np.asarray(codes)
    return _xlogx_sum(np.bincount(codes, minlength=bins), len(codes))


def mutual_information(x, y, bins: int = DEFAULT_BINS) -> float:
    """Plug-in mutual information (nats) of two series on quantile bins."""
    bx = quantile_bins(x, bins)
    by = quantile_bins(y, bins)
    return mutual_information_codes(bx, by, bins)


def mutual_information_codes(bx, by, bins: int) -> float:
    n = len(bx)
    hx = entropy(bx, bins)
    hy = entropy(by, bins)
    if hx == 0.0 or hy == 0.0:
        return 0.0
    hxy = _xlogx_sum(np.bincount(bx * bins + by, minlength=bins * bins), n)
    return max(hx + hy - hxy, 0.0)


def mutual_information_matrix(returns: ReturnPanel, bins: int = DEFAULT_BINS, label: str = "") -> RelationalMatrix:
    """All-pairs mutual information; the diagonal is each asset's entropy."""
    if bins < 2:
        raise ValueError("bins must be >= 2")
    x = np.asarray(returns.returns, dtype=float)
    t, n = x.shape
    if t < bins:
        raise DataError(f"mutual information with {bins} bins needs >= {bins} observations, got {t}")
    codes = np.column_stack([quantile_bins(x[:, i], bins) for i in range(n)]) if n else np.zeros((t, 0), int)
    h = np.array([entropy(codes[:, i], bins) for i in range(n)])

    onehot = np.zeros((t, n * bins))
    onehot[np.arange(t)[:, None], np.arange(n) * bins + codes] = 1.0
    joint_h = np.empty((n, n))
    # row blocks bound the size of the joint count tensor
    block = max(1, 2_000_000 // max(1, n * bins * bins))
    for lo in range(0, n, block):
        hi = min(n, lo + block)
        counts = onehot[:, lo * bins:hi * bins].T @ onehot  # exact integer counts
        p = counts.reshape(hi - lo, bins, n, bins) / t
        with np.errstate(divide="ignore", invalid="ignore"):
            plogp = np.where(p > 0, p * np.log(p), 0.0)
        joint_h[lo:hi] = -plogp.sum(axis=(1, 3))

    m = h[:, None] + h[None, :] - joint_h
    m = np.maximum(m, 0.0)
    degenerate = h == 0.0
    m[degenerate, :] = 0.0
    m[:, degenerate] = 0.0
    m = _symmetrize_upper(m)
    np.fill_diagonal(m, h)
    return RelationalMatrix("MI", returns.assets, m, label)


def base_relation(returns: ReturnPanel, kind: str, bins: int = DEFAULT_BINS, label: str = "") -> RelationalMatrix:
    if kind == "Cor":
        return correlation_matrix(returns, label)
    if kind == "MI":
        return mutual_information_matrix(returns, bins, label)
    raise ValueError(f"{kind!r} is not a base relation kind")


# -- co-occurrence ---------------------------------------------------------

def monthly_partitions(panel: ReturnPanel, clusterer: str, base_kind: str, months: int = 12,
                       bins: int = DEFAULT_BINS, seed: int = 0, **cluster_kw) -> list:
    """One partition per calendar month; months whose clustering fails are skipped."""
    from .community import detect_communities

    parts = panel.split_months()
    if len(parts) != months:
        raise DataError(f"co-occurrence needs {months} calendar months of data, panel has {len(parts)}")
    short = [f"{p} ({sub.n_obs} days)" for p, sub in parts if sub.n_obs < MIN_MONTH_DAYS]
    if short:
        raise DataError(
            f"co-occurrence needs >= {MIN_MONTH_DAYS} trading days per month; short: {', '.join(short)}"
        )
    out = []
    for m, (period, sub) in enumerate(parts):
        rel = base_relation(sub, base_kind, bins, str(period))
        try:
            out.append(detect_communities(rel, clusterer, seed=sub_seed(seed, m), **cluster_kw))
        except ConvergenceError as exc:
            logger.warning("skipping month %s in co-occurrence: %s", period, exc)
    if not out:
        raise ConvergenceError(f"clustering failed in every month ({clusterer} on {base_kind})")
    return out


def cooccurrence_from_partitions(partitions: Sequence, kind: str, assets: Sequence[str], label: str = "") -> RelationalMatrix:
    """Fraction of partitions in which each pair shares a community."""
    if kind not in BASE_KIND:
        raise ValueError(f"{kind!r} is not a co-occurrence kind")
    n = len(assets)
    counts = np.zeros((n, n))
    for part in partitions:
        labels = np.asarray(part.labels)
        if len(labels) != n:
            raise ValueError("partition does not cover the asset set")
        counts += labels[:, None] == labels[None, :]
    values = counts / len(partitions)
    np.fill_diagonal(values, 1.0)
    return RelationalMatrix(kind, assets, values, label)


def cooccurrence_matrix(panel: ReturnPanel, clusterer: str, base_kind: str, months: int = 12,
                        bins: int = DEFAULT_BINS, seed: int = 0, label: str = "", **cluster_kw) -> RelationalMatrix:
    """Monthly community co-membership frequency over a one-year panel."""
    kind = {"Cor": "cCor", "MI": "cMI"}[base_kind]
    parts = monthly_partitions(panel, clusterer, base_kind, months, bins, seed, **cluster_kw)
    if len(parts) < months:
        logger.warning("co-occurrence %s/%s uses %d of %d months", clusterer, kind, len(parts), months)
    return cooccurrence_from_partitions(parts, kind, panel.assets, label)


def yearly_overlap_coefficient(partitions: Sequence) -> float:
    """Mean month-to-month stability of community co-membership.

    For each consecutive pair of partitions, take the asset pairs that share
    a community in at least one of the two months and return the fraction
    that share one in both; average over consecutive pairs.
    """
    if len(partitions) < 2:
        raise ValueError("need at least two partitions")
    scores = []
    for a, b in zip(partitions[:-1], partitions[1:]):
        la, lb = np.asarray(a.labels), np.asarray(b.labels)
        if len(la) != len(lb):
            raise ValueError("partitions cover different asset sets")
        iu = np.triu_indices(len(la), 1)
        sa = (la[:, None] == la[None, :])[iu]
        sb = (lb[:, None] == lb[None, :])[iu]
        either = (sa | sb).sum()
        scores.append(1.0 if either == 0 else float((sa & sb).sum() / either))
    return float(np.mean(scores))


# -- export ----------------------------------------------------------------

def matrix_csv(rel: RelationalMatrix) -> str:
    df = pd.DataFrame(np.array(rel.values), index=list(rel.assets), columns=list(rel.assets))
    df.index.name = "symbol"
    return df.to_csv(lineterminator="\n")


def matrix_manifest(rel: RelationalMatrix) -> str:
    manifest = {"kind": rel.kind, "window": rel.source_window, "n_assets": rel.n}
    return json.dumps(manifest, indent=2, sort_keys=True) + "\n"


def write_matrix(rel: RelationalMatrix, path) -> None:
    """CSV with symbol header row/column, plus a ``.json`` sidecar manifest."""
    path = Path(path)
    path.write_text(matrix_csv(rel))
    path.with_suffix(".json").write_text(matrix_manifest(rel))


def read_matrix(path) -> RelationalMatrix:
    path = Path(path)
    df = pd.read_csv(path, index_col=0, float_precision="round_trip")
    meta = json.loads(path.with_suffix(".json").read_text())
    if list(df.index.astype(str)) != list(df.columns.astype(str)):
        raise DataError(f"matrix {path} has mismatched row/column symbols")
    return RelationalMatrix(meta["kind"], tuple(df.columns.astype(str)), df.to_numpy(float), meta.get("window", ""))
