"""Community detection: Louvain on the inverted-weight MST, and Affinity Propagation.

The Louvain route never sees the raw relational matrix. The relation is
turned into a distance matrix, reduced to its MST, and the tree's distance
weights are reflected into similarities before the modularity optimization.
Affinity Propagation takes the relational matrix unchanged as its
similarity matrix.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, Optional, Sequence, Union

import numpy as np

from .errors import ConvergenceError
from .graphrep import AssetGraph, build_mst, to_distance
from .relational import RelationalMatrix

logger = logging.getLogger(__name__)

LV = "LV"
AP = "AP"
CLUSTERERS = (LV, AP)


@dataclass(frozen=True)
class Partition:
    assets: tuple
    labels: np.ndarray
    clusterer: str
    relation_kind: str = ""
    quality: float = 0.0
    meta: Dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        labels = np.array(self.labels, dtype=np.int64, copy=True)
        labels.flags.writeable = False
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "assets", tuple(self.assets))
        if len(labels) != len(self.assets):
            raise ValueError("one label per asset required")
        if len(labels):
            q = labels.max() + 1
            if labels.min() != 0 or len(np.unique(labels)) != q:
                raise ValueError("labels must be contiguous from 0")

    @property
    def n_communities(self) -> int:
        return int(self.labels.max() + 1) if len(self.labels) else 0

    def members(self, c: int) -> np.ndarray:
        return np.flatnonzero(self.labels == c)

    def sizes(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.n_communities)


def canonical_labels(labels: Sequence[int]) -> np.ndarray:
    """Renumber communities in order of their smallest member index."""
    mapping: Dict[int, int] = {}
    out = np.empty(len(labels), dtype=np.int64)
    for k, lab in enumerate(labels):
        lab = int(lab)
        if lab not in mapping:
            mapping[lab] = len(mapping)
        out[k] = mapping[lab]
    return out


# -- Louvain ---------------------------------------------------------------

def invert_mst_weights(mst: AssetGraph) -> AssetGraph:
    """Reflect distances into similarities: ``w' = (w_max - w) + eps``."""
    if not mst.edges:
        return mst.with_weights([], shape="MST-similarity")
    w = np.array([e[2] for e in mst.edges])
    w_max = float(w.max())
    eps = 1e-6 * w_max if w_max > 0 else 1e-6
    return mst.with_weights(list((w_max - w) + eps), shape="MST-similarity")


def modularity(g: AssetGraph, labels: Sequence[int], resolution: float = 1.0) -> float:
    """Weighted Newman modularity of ``labels`` on ``g``."""
    labels = np.asarray(labels)
    m = g.total_weight()
    if m == 0:
        return 0.0
    q = labels.max() + 1 if len(labels) else 0
    internal = np.zeros(q)
    strength = np.zeros(q)
    for i, j, w in g.edges:
        strength[labels[i]] += w
        strength[labels[j]] += w
        if labels[i] == labels[j]:
            internal[labels[i]] += w
    return float((internal / m).sum() - resolution * ((strength / (2 * m)) ** 2).sum())


def _one_level(adj, k, m2, resolution, rng, comm=None):
    """Local node moves on one aggregation level; returns (communities, moved).

    Starts from singletons unless an initial assignment ``comm`` is given.
    """
    n = len(adj)
    if comm is None:
        comm = list(range(n))
        tot = list(k)
    else:
        comm = list(comm)
        tot = [0.0] * n
        for i, c in enumerate(comm):
            tot[c] += k[i]
    order = rng.permutation(n)
    tol = 1e-13 * m2
    moved = False
    for _ in range(10_000):
        changed = False
        for i in order:
            i = int(i)
            ci = comm[i]
            links: Dict[int, float] = {}
            for j, w in adj[i].items():
                cj = comm[j]
                links[cj] = links.get(cj, 0.0) + w
            tot[ci] -= k[i]
            factor = resolution * k[i] / m2
            best, best_gain = ci, links.get(ci, 0.0) - tot[ci] * factor
            for c in sorted(links):
                gain = links[c] - tot[c] * factor
                if gain > best_gain + tol:
                    best, best_gain = c, gain
            tot[best] += k[i]
            if best != ci:
                comm[i] = best
                changed = moved = True
        if not changed:
            break
    return comm, moved


def louvain(g: AssetGraph, seed=0, resolution: float = 1.0,
            callback: Optional[Callable[[int, float], None]] = None) -> Partition:
    """Louvain modularity optimization on a positively weighted graph.

    Node sweep order in every pass is drawn from ``seed``. ``callback`` is
    called with ``(pass_index, modularity)`` after each aggregation pass.
    """
    n = g.n
    if any(w <= 0 for _, _, w in g.edges):
        raise ValueError("louvain needs strictly positive edge weights")
    if n == 0:
        return Partition((), [], LV, quality=0.0)
    rng = np.random.default_rng(seed)
    node_comm = np.arange(n)
    adj = [dict() for _ in range(n)]
    for i, j, w in g.edges:
        adj[i][j] = adj[i].get(j, 0.0) + w
        adj[j][i] = adj[j].get(i, 0.0) + w
    loops = [0.0] * n
    m2 = 2.0 * g.total_weight()
    passes = 0
    history = []
    if m2 > 0:
        while True:
            k = [sum(a.values()) + 2.0 * loops[i] for i, a in enumerate(adj)]
            comm, moved = _one_level(adj, k, m2, resolution, rng)
            if not moved:
                break
            passes += 1
            remap = {c: r for r, c in enumerate(sorted(set(comm)))}
            comm = [remap[c] for c in comm]
            node_comm = np.array([comm[c] for c in node_comm])
            q_now = modularity(g, canonical_labels(node_comm), resolution)
            history.append(q_now)
            if callback is not None:
                callback(passes, q_now)
            size = len(remap)
            new_adj = [dict() for _ in range(size)]
            new_loops = [0.0] * size
            for i, a in enumerate(adj):
                ci = comm[i]
                new_loops[ci] += loops[i]
                for j, w in a.items():
                    if j < i:
                        continue
                    cj = comm[j]
                    if ci == cj:
                        new_loops[ci] += w
                    else:
                        new_adj[ci][cj] = new_adj[ci].get(cj, 0.0) + w
                        new_adj[cj][ci] = new_adj[cj].get(ci, 0.0) + w
            adj, loops = new_adj, new_loops
            if size == 1:
                break
        if passes > 1:
            # aggregated moves can leave single-node improvements behind
            base_adj = [dict() for _ in range(n)]
            for i, j, w in g.edges:
                base_adj[i][j] = base_adj[i].get(j, 0.0) + w
                base_adj[j][i] = base_adj[j].get(i, 0.0) + w
            k0 = [sum(a.values()) for a in base_adj]
            polished, moved = _one_level(base_adj, k0, m2, resolution, rng, canonical_labels(node_comm))
            if moved:
                node_comm = np.array(polished)
                history.append(modularity(g, canonical_labels(node_comm), resolution))
                if callback is not None:
                    callback(passes + 1, history[-1])
    labels = canonical_labels(node_comm)
    q = modularity(g, labels, resolution)
    return Partition(g.nodes, labels, LV, quality=q,
                     meta={"seed": seed, "passes": passes, "history": history})


# -- Affinity propagation ----------------------------------------------------

def _prepare_similarity(s, preference):
    s = np.array(s, dtype=float, copy=True)
    n = s.shape[0]
    if s.shape != (n, n):
        raise ValueError("similarity matrix must be square")
    if isinstance(preference, str):
        if preference != "median":
            raise ValueError(f"unknown preference {preference!r}")
        off = s[~np.eye(n, dtype=bool)]
        pref = float(np.median(off)) if off.size else 0.0
    else:
        pref = float(preference)
    np.fill_diagonal(s, pref)
    return s, pref


def affinity_propagation(s: Union[RelationalMatrix, np.ndarray], preference="median",
                         damping: float = 0.9, max_iter: int = 1000, stable_iter: int = 100,
                         seed=0, jitter: float = 1e-12, assets=None) -> Partition:
    """Exemplar clustering by responsibility/availability message passing.

    ``s`` is used as a similarity matrix as given; its diagonal is replaced
    by ``preference`` (the median off-diagonal similarity by default).
    Iteration stops once the exemplar set has been unchanged for
    ``stable_iter`` consecutive iterations. Noise of relative size ``jitter``
    (scaled by the similarity range, drawn from ``seed``) breaks exact ties.

    Raises :class:`ConvergenceError` after ``max_iter`` iterations without a
    stable exemplar set.
    """
    if not 0.5 <= damping < 1.0:
        raise ValueError("damping must be in [0.5, 1)")
    kind = ""
    if isinstance(s, RelationalMatrix):
        kind, assets, s = s.kind, s.assets, s.values
    s = np.asarray(s, dtype=float)
    n = s.shape[0]
    if assets is None:
        assets = tuple(str(i) for i in range(n))
    if not np.array_equal(s, s.T):
        raise ValueError("similarity matrix must be symmetric")
    sim, pref = _prepare_similarity(s, preference)
    if n == 0:
        return Partition((), [], AP, kind)
    if n == 1:
        return Partition(assets, [0], AP, kind, quality=pref,
                         meta={"exemplars": [0], "iterations": 0, "preference": pref})

    work = sim.copy()
    spread = float(work.max() - work.min())
    if jitter and spread > 0:
        work += jitter * spread * np.random.default_rng(seed).standard_normal((n, n))

    exemplars, iterations = ap_messages(work, damping, max_iter, stable_iter)
    if exemplars.size == 0:
        if spread > 0:
            raise ConvergenceError(f"affinity propagation found no exemplar in {max_iter} iterations",
                                   exemplars=[], iterations=iterations)
        # constant similarities: no point can ever stand out
        logger.warning("affinity propagation on constant similarities; using a single cluster")
        exemplars = np.array([0])
    assign = np.argmax(work[:, exemplars], axis=1)
    assign[exemplars] = np.arange(exemplars.size)
    ex_of = exemplars[assign]
    net = float(sim[np.arange(n), ex_of].sum())
    labels = canonical_labels(assign)
    return Partition(assets, labels, AP, kind, quality=net,
                     meta={"exemplars": [int(e) for e in exemplars], "iterations": iterations,
                           "preference": pref, "damping": damping, "seed": seed})


def ap_messages(sim: np.ndarray, damping: float, max_iter: int, stable_iter: int):
    """Run the message updates; returns (exemplar indices, iterations used).

    Converged once a non-empty exemplar set repeats for ``stable_iter``
    consecutive iterations. If no exemplar ever emerges the empty set is
    returned after ``max_iter`` iterations.
    """
    n = sim.shape[0]
    ind = np.arange(n)
    r = np.zeros((n, n))
    a = np.zeros((n, n))
    last = None
    stable = 0
    for it in range(1, max_iter + 1):
        # responsibilities
        tmp = a + sim
        first = np.argmax(tmp, axis=1)
        y1 = tmp[ind, first]
        tmp[ind, first] = -np.inf
        y2 = tmp.max(axis=1)
        r_new = sim - y1[:, None]
        r_new[ind, first] = sim[ind, first] - y2
        r = damping * r + (1 - damping) * r_new
        # availabilities
        rp = np.maximum(r, 0)
        rp[ind, ind] = r[ind, ind]
        a_new = rp.sum(axis=0)[None, :] - rp
        self_avail = a_new[ind, ind].copy()
        a_new = np.minimum(a_new, 0)
        a_new[ind, ind] = self_avail
        a = damping * a + (1 - damping) * a_new

        e = (np.diag(a) + np.diag(r)) > 0
        # an empty exemplar set is where the messages start, not a fixed point
        if e.any() and last is not None and np.array_equal(e, last):
            stable += 1
        else:
            stable = 1 if e.any() else 0
        last = e
        if stable >= stable_iter:
            return np.flatnonzero(e), it
    if not last.any():
        return np.flatnonzero(last), max_iter
    raise ConvergenceError(
        f"affinity propagation did not converge in {max_iter} iterations (damping={damping})",
        exemplars=np.flatnonzero(last).tolist(), iterations=max_iter,
    )


# -- dispatch ----------------------------------------------------------------

def detect_communities(relation: RelationalMatrix, clusterer: str, seed=0, damping: float = 0.9,
                       preference="median", max_iter: int = 1000, stable_iter: int = 100,
                       resolution: float = 1.0) -> Partition:
    """Partition the assets of ``relation`` with Louvain (``"LV"``) or AP (``"AP"``)."""
    if clusterer == LV:
        sim_tree = invert_mst_weights(build_mst(to_distance(relation)))
        part = louvain(sim_tree, seed=seed, resolution=resolution)
    elif clusterer == AP:
        part = affinity_propagation(relation, preference=preference, damping=damping,
                                    max_iter=max_iter, stable_iter=stable_iter, seed=seed)
    else:
        raise ValueError(f"unknown clusterer {clusterer!r}")
    return Partition(relation.assets, part.labels, clusterer, relation.kind, part.quality, part.meta)


def partition_csv(part: Partition) -> str:
    lines = ["symbol,community_id"] + [f"{a},{int(c)}" for a, c in zip(part.assets, part.labels)]
    return "\n".join(lines) + "\n"


def partition_manifest(part: Partition) -> str:
    meta = part.meta
    manifest = {
        "clusterer": part.clusterer,
        "relation": part.relation_kind,
        "quality": part.quality,
        "n_communities": part.n_communities,
        "seed": meta.get("seed"),
        "iterations": meta.get("iterations", meta.get("passes")),
    }
    return json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n"


def write_partition(part: Partition, path) -> None:
    """``symbol,community_id`` CSV plus a ``.json`` manifest next to it."""
    path = Path(path)
    path.write_text(partition_csv(part))
    path.with_suffix(".json").write_text(partition_manifest(part))


def detect_with_retries(relation: RelationalMatrix, clusterer: str, seed=0, damping: float = 0.9,
                        retries: int = 3, **kw) -> Partition:
    """:func:`detect_communities`, retrying AP non-convergence with higher damping.

    Each retry moves damping halfway to 1 (0.9, 0.95, 0.975, ...). The last
    failure is re-raised.
    """
    for attempt in range(retries + 1):
        try:
            return detect_communities(relation, clusterer, seed=seed, damping=damping, **kw)
        except ConvergenceError as exc:
            if clusterer != AP or attempt == retries:
                raise
            logger.warning("%s; retrying with damping %.4g", exc, (1 + damping) / 2)
            damping = (1 + damping) / 2
