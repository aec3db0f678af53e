"""Asset scoring (PCA, degree, closeness) and quota-based portfolio selection."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import List, Sequence

import numpy as np

from .community import Partition
from .graphrep import AssetGraph, all_pairs_shortest_paths
from .relational import RelationalMatrix

logger = logging.getLogger(__name__)

METRICS = ("PCA", "DegFG", "CloFG", "DegMST", "CloMST")
RANGES = ("max", "med", "min")
WHOLE_GRAPH = "whole_graph"
PER_COMMUNITY = "per_community"


@dataclass(frozen=True)
class AssetScores:
    metric: str
    assets: tuple
    values: np.ndarray
    scope: str = WHOLE_GRAPH

    def __post_init__(self):
        v = np.array(self.values, dtype=float, copy=True)
        v.flags.writeable = False
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "assets", tuple(self.assets))
        if not np.isfinite(v).all():
            raise ValueError(f"non-finite {self.metric} scores")


@dataclass(frozen=True)
class SelectionSpec:
    metric: str
    range: str
    portfolio_size: int

    def __post_init__(self):
        if self.metric not in METRICS:
            raise ValueError(f"unknown metric {self.metric!r}")
        if self.range not in RANGES:
            raise ValueError(f"range must be one of {RANGES}")
        if self.portfolio_size < 1:
            raise ValueError("portfolio size must be >= 1")


def pca_scores(rel: RelationalMatrix, components: int = 3) -> AssetScores:
    """Norm of each asset's projection on the leading principal components.

    Each asset's row of the relational matrix is its feature vector. When
    the eigenvalue at the cut is degenerate, the whole tied eigenspace is
    used with its squared projection scaled by (slots left / space size),
    which keeps the score independent of the basis chosen inside the space.
    """
    x = np.asarray(rel.values, dtype=float)
    n = x.shape[0]
    if n < components:
        logger.warning("PCA on %d assets: using %d component(s)", n, n)
    xc = x - x.mean(axis=0)
    cov = xc.T @ xc / max(n, 1)
    evals, evecs = np.linalg.eigh(cov)
    evals, evecs = evals[::-1], evecs[:, ::-1]
    top = evals[0] if n else 0.0
    if top <= 0:
        logger.warning("PCA: relational matrix has rank 0; all scores are 0")
        return AssetScores("PCA", rel.assets, np.zeros(n))
    rank = int((evals > 1e-12 * top).sum())
    m = min(components, rank)
    if m < components:
        logger.warning("PCA: rank %d < %d components; using %d", rank, components, m)
    proj2 = (xc @ evecs[:, :rank]) ** 2
    cut = evals[m - 1]
    tied = np.abs(evals[:rank] - cut) <= 1e-9 * top
    full = np.flatnonzero(~tied[:m])
    block = np.flatnonzero(tied)
    slots = m - full.size
    score2 = proj2[:, full].sum(axis=1) + slots / block.size * proj2[:, block].sum(axis=1)
    return AssetScores("PCA", rel.assets, np.sqrt(score2))


def degree_scores(g: AssetGraph, partition: Partition, metric: str = "") -> AssetScores:
    """Weighted degree (sum of incident distances) inside each community's sub-graph."""
    labels = partition.labels
    s = np.zeros(g.n)
    for i, j, w in g.edges:
        if labels[i] == labels[j]:
            s[i] += w
            s[j] += w
    return AssetScores(metric or f"Deg{g.shape}", g.nodes, s, PER_COMMUNITY)


def closeness_scores(g: AssetGraph, metric: str = "") -> AssetScores:
    """``(N - 1) / sum of shortest-path distances`` on the whole graph."""
    n = g.n
    metric = metric or f"Clo{g.shape}"
    if n < 2:
        return AssetScores(metric, g.nodes, np.zeros(n))
    total = all_pairs_shortest_paths(g).sum(axis=1)
    if not np.isfinite(total).all():
        raise ValueError("closeness needs a connected graph")
    zero = total <= 0
    if zero.any():
        logger.warning("closeness: %d node(s) at zero distance from all others; set to 0", zero.sum())
    vals = np.where(zero, 0.0, (n - 1) / np.where(zero, 1.0, total))
    return AssetScores(metric, g.nodes, vals)


def compute_scores(metric: str, rel: RelationalMatrix, fg: AssetGraph, mst: AssetGraph,
                   partition: Partition) -> AssetScores:
    if metric == "PCA":
        return pca_scores(rel)
    if metric == "DegFG":
        return degree_scores(fg, partition, metric)
    if metric == "DegMST":
        return degree_scores(mst, partition, metric)
    if metric == "CloFG":
        return closeness_scores(fg, metric)
    if metric == "CloMST":
        return closeness_scores(mst, metric)
    raise ValueError(f"unknown metric {metric!r}")


def pick_range(values: Sequence[float], k: int, range_: str) -> List[int]:
    """Indices of the ``k`` largest / smallest / closest-to-median values.

    Ties are broken by ascending index; the result is in selection order.
    """
    v = np.asarray(values, dtype=float)
    if k > v.size:
        raise ValueError(f"cannot pick {k} of {v.size} values")
    idx = np.arange(v.size)
    if range_ == "max":
        order = np.lexsort((idx, -v))
    elif range_ == "min":
        order = np.lexsort((idx, v))
    elif range_ == "med":
        order = np.lexsort((idx, np.abs(v - np.median(v))))
    else:
        raise ValueError(f"range must be one of {RANGES}")
    return [int(i) for i in order[:k]]


def community_quotas(sizes: Sequence[int], p: int) -> np.ndarray:
    """Assets to draw from each community.

    ``p // Q`` each, plus one for the ``p % Q`` largest communities (ties by
    id). A community smaller than its quota gives everything it has and the
    shortfall is handed out one asset at a time to the other communities,
    largest first, while they have members to spare.
    """
    sizes = np.asarray(sizes, dtype=int)
    q = sizes.size
    target = min(p, int(sizes.sum()))
    order = sorted(range(q), key=lambda c: (-sizes[c], c))
    quota = np.full(q, p // q, dtype=int)
    for c in order[: p % q]:
        quota[c] += 1
    quota = np.minimum(quota, sizes)
    deficit = target - int(quota.sum())
    while deficit > 0:
        for c in order:
            if deficit and quota[c] < sizes[c]:
                quota[c] += 1
                deficit -= 1
    return quota


def select_indices(partition: Partition, scores: AssetScores, spec: SelectionSpec) -> List[tuple]:
    """``[(asset index, community id), ...]`` chosen for the portfolio."""
    if scores.assets != partition.assets:
        raise ValueError("scores and partition cover different assets")
    n = len(partition.assets)
    if spec.portfolio_size > n:
        logger.warning("portfolio size %d exceeds universe of %d; taking all", spec.portfolio_size, n)
    sizes = partition.sizes()
    quota = community_quotas(sizes, spec.portfolio_size)
    chosen = []
    for c in sorted(range(len(sizes)), key=lambda c: (-sizes[c], c)):
        if quota[c] == 0:
            continue
        members = partition.members(c)
        for k in pick_range(scores.values[members], int(quota[c]), spec.range):
            chosen.append((int(members[k]), c))
    return chosen


def select_portfolio(partition: Partition, scores: AssetScores, spec: SelectionSpec) -> List[str]:
    """Symbols drawn across communities per the quota rule and score range."""
    return [partition.assets[i] for i, _ in select_indices(partition, scores, spec)]
