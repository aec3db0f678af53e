"""Distance matrices and the two network representations (full graph, MST)."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .relational import RelationalMatrix

FG = "FG"
MST = "MST"


@dataclass(frozen=True)
class DistanceMatrix:
    kind: str
    assets: tuple
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float, copy=True)
        v.flags.writeable = False
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "assets", tuple(self.assets))

    @property
    def n(self) -> int:
        return len(self.assets)


Edge = Tuple[int, int, float]


@dataclass(frozen=True)
class AssetGraph:
    """Undirected weighted graph over assets; edges are ``(i, j, w)`` with ``i < j``."""

    shape: str
    nodes: tuple
    edges: tuple
    adjacency: Dict[int, Dict[int, float]] = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))
        edges = tuple((min(i, j), max(i, j), float(w)) for i, j, w in self.edges)
        object.__setattr__(self, "edges", edges)
        adj: Dict[int, Dict[int, float]] = {k: {} for k in range(len(self.nodes))}
        for i, j, w in edges:
            adj[i][j] = w
            adj[j][i] = w
        object.__setattr__(self, "adjacency", adj)

    @property
    def n(self) -> int:
        return len(self.nodes)

    def total_weight(self) -> float:
        return float(sum(w for _, _, w in self.edges))

    def weight_matrix(self, missing: float = 0.0) -> np.ndarray:
        m = np.full((self.n, self.n), missing, dtype=float)
        for i, j, w in self.edges:
            m[i, j] = m[j, i] = w
        return m

    def with_weights(self, weights: Sequence[float], shape: Optional[str] = None) -> "AssetGraph":
        edges = [(i, j, w) for (i, j, _), w in zip(self.edges, weights)]
        return AssetGraph(shape or self.shape, self.nodes, edges)


def correlation_distance(rel: RelationalMatrix) -> DistanceMatrix:
    """``sqrt(2 (1 - C))`` for correlations; ``1 - f`` for co-occurrence frequencies."""
    c = np.asarray(rel.values, dtype=float)
    if rel.kind == "Cor":
        d = np.sqrt(np.maximum(2.0 * (1.0 - c), 0.0))
    elif rel.kind in ("cCor", "cMI"):
        d = 1.0 - c
    else:
        raise ValueError(f"correlation_distance does not apply to {rel.kind!r}; use mi_distance")
    np.fill_diagonal(d, 0.0)
    return DistanceMatrix(rel.kind, rel.assets, d)


def mi_distance(rel: RelationalMatrix) -> DistanceMatrix:
    """``|M_ij - max M|`` with the max over off-diagonal entries; zero diagonal."""
    if rel.kind != "MI":
        raise ValueError(f"mi_distance expects an MI matrix, got {rel.kind!r}")
    m = np.asarray(rel.values, dtype=float)
    n = rel.n
    if n < 2:
        return DistanceMatrix("MI", rel.assets, np.zeros((n, n)))
    off = ~np.eye(n, dtype=bool)
    d = np.abs(m - m[off].max())
    np.fill_diagonal(d, 0.0)
    return DistanceMatrix("MI", rel.assets, d)


def to_distance(rel: RelationalMatrix) -> DistanceMatrix:
    return mi_distance(rel) if rel.kind == "MI" else correlation_distance(rel)


def build_full_graph(d: DistanceMatrix) -> AssetGraph:
    v = d.values
    iu, ju = np.triu_indices(d.n, 1)
    return AssetGraph(FG, d.assets, [(int(i), int(j), float(v[i, j])) for i, j in zip(iu, ju)])


class _DisjointSet:
    def __init__(self, n):
        self.parent = list(range(n))

    def find(self, x):
        while self.parent[x] != x:
            self.parent[x] = self.parent[self.parent[x]]
            x = self.parent[x]
        return x

    def union(self, a, b) -> bool:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return False
        self.parent[max(ra, rb)] = min(ra, rb)
        return True


def build_mst(d: DistanceMatrix) -> AssetGraph:
    """Kruskal MST; ties broken by ``(weight, min index, max index)``."""
    n = d.n
    v = d.values
    iu, ju = np.triu_indices(n, 1)
    w = v[iu, ju]
    # lexsort keys: last is primary
    order = np.lexsort((ju, iu, w))
    ds = _DisjointSet(n)
    edges: List[Edge] = []
    for k in order:
        i, j = int(iu[k]), int(ju[k])
        if ds.union(i, j):
            edges.append((i, j, float(w[k])))
            if len(edges) == n - 1:
                break
    edges.sort(key=lambda e: (e[0], e[1]))
    return AssetGraph(MST, d.assets, edges)


def all_pairs_shortest_paths(g: AssetGraph) -> np.ndarray:
    """Floyd-Warshall on the weighted graph; unreachable pairs are ``inf``."""
    sp = g.weight_matrix(missing=np.inf)
    np.fill_diagonal(sp, 0.0)
    for k in range(g.n):
        np.minimum(sp, sp[:, k:k + 1] + sp[k:k + 1, :], out=sp)
    return sp


def _dot_id(s: str) -> str:
    return '"' + str(s).replace("\\", "\\\\").replace('"', '\\"') + '"'


def to_dot(g: AssetGraph, communities: Optional[Sequence[int]] = None, name: str = "assets") -> str:
    lines = [f"graph {_dot_id(name)} {{"]
    for k, node in enumerate(g.nodes):
        attr = f" [community={int(communities[k])}]" if communities is not None else ""
        lines.append(f"  {_dot_id(node)}{attr};")
    for i, j, w in g.edges:
        lines.append(f"  {_dot_id(g.nodes[i])} -- {_dot_id(g.nodes[j])} [weight={w!r}];")
    lines.append("}")
    return "\n".join(lines) + "\n"


def to_edge_csv(g: AssetGraph) -> str:
    rows = ["i,j,weight"] + [f"{g.nodes[i]},{g.nodes[j]},{w!r}" for i, j, w in g.edges]
    return "\n".join(rows) + "\n"
