"""Hierarchical density clustering with persistence-driven parameter selection.

The pipeline is the usual HDBSCAN* one, computed exactly in O(n^2):

1. core distance of every point (distance to its ``min_samples``-th neighbour),
2. mutual reachability ``max(core(a), core(b), d(a, b))`` as edge weight,
3. minimum spanning tree of the complete mutual reachability graph,
4. top-down condensation: edges are removed from the heaviest down; all
   edges sharing one weight are removed together, so the hierarchy does not
   depend on which of several equal-weight MSTs was found,
5. cluster scoring ``min_cluster_size * (death_density - birth_density)``
   with density ``1 / weight``, and excess-of-mass selection.

Parameter search scores a grid point by the mass-persistence of its
selected clusters: cluster size integrated over log density, so a point
that leaves at density ``s`` adds ``log(s / birth)``. Integrating over raw
``1 / weight`` instead lets the closest pair of points dominate in low
dimensions, and the finest grid point wins with dozens of tiny clusters.
The log measure is also unchanged when all distances are rescaled.

The root cluster is eligible for selection. When it is selected only the
points that stay in it until its death are labelled; earlier fall-out is
noise. Zero-weight edges (duplicate points) get the density of the lightest
positive edge so densities stay finite.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

from uiopt.features import FEATURE_NAMES

NOISE = -1


@dataclass(frozen=True)
class ClusterParams:
    min_cluster_size: int
    min_samples: int

    def __post_init__(self) -> None:
        if self.min_cluster_size < 2:
            raise ValueError(f"min_cluster_size must be >= 2, got {self.min_cluster_size}")
        if self.min_samples < 1:
            raise ValueError(f"min_samples must be >= 1, got {self.min_samples}")


def pairwise_distances(points: np.ndarray, chunk: int = 1024) -> np.ndarray:
    """Exact Euclidean distance matrix (row-chunked, no Gram-matrix shortcut)."""
    points = np.asarray(points, dtype=float)
    n = points.shape[0]
    out = np.empty((n, n))
    for start in range(0, n, chunk):
        block = points[start : start + chunk]
        out[start : start + chunk] = np.sqrt(((block[:, None, :] - points[None, :, :]) ** 2).sum(axis=-1))
    return out


def _sorted_neighbour_distances(dist: np.ndarray) -> np.ndarray:
    d = dist.copy()
    np.fill_diagonal(d, np.inf)
    d.sort(axis=1)
    return d


def core_distances(points: np.ndarray, min_samples: int, dist: np.ndarray | None = None) -> np.ndarray:
    """Distance from each point to its ``min_samples``-th nearest other point."""
    points = np.asarray(points, dtype=float)
    n = points.shape[0]
    if min_samples < 1 or min_samples > n - 1:
        raise ValueError(f"min_samples={min_samples} needs 1 <= min_samples <= n-1 (n={n})")
    if dist is None:
        dist = pairwise_distances(points)
    return _sorted_neighbour_distances(dist)[:, min_samples - 1].copy()


def mutual_reachability(a: int, b: int, core: np.ndarray, dist: np.ndarray) -> float:
    return float(max(core[a], core[b], dist[a, b]))


@dataclass
class MutualReachabilityGraph:
    """Complete graph over ``n`` points; edge weights are produced row by row."""

    points: np.ndarray
    core_distances: np.ndarray
    dist: np.ndarray | None = None

    @property
    def n(self) -> int:
        return int(self.points.shape[0])

    def row(self, i: int) -> np.ndarray:
        if self.dist is not None:
            d = self.dist[i]
        else:
            d = np.sqrt(((self.points - self.points[i]) ** 2).sum(axis=1))
        return np.maximum(np.maximum(d, self.core_distances[i]), self.core_distances)

    @property
    def weights(self) -> np.ndarray:
        return np.array([self.row(i) for i in range(self.n)])

    def weight(self, a: int, b: int) -> float:
        return float(self.row(a)[b])


def mutual_reachability_graph(points: np.ndarray, min_samples: int, dist: np.ndarray | None = None) -> MutualReachabilityGraph:
    points = np.asarray(points, dtype=float)
    if dist is None and points.shape[0] <= 4096:
        dist = pairwise_distances(points)
    core = core_distances(points, min_samples, dist=dist)
    return MutualReachabilityGraph(points=points, core_distances=core, dist=dist)


def build_mst(graph: MutualReachabilityGraph) -> np.ndarray:
    """Prim's algorithm on the dense graph.

    Returns an ``(n-1, 3)`` array of ``(u, v, weight)`` with ``u < v``,
    sorted ascending by weight then by endpoints. Ties pick the lowest index.
    """
    n = graph.n
    if n < 2:
        return np.empty((0, 3))
    in_tree = np.zeros(n, dtype=bool)
    key = np.full(n, np.inf)
    parent = np.full(n, -1, dtype=np.int64)
    current = 0
    in_tree[0] = True
    edges = []
    for _ in range(n - 1):
        row = graph.row(current)
        better = (~in_tree) & (row < key)
        key[better] = row[better]
        parent[better] = current
        masked = np.where(in_tree, np.inf, key)
        nxt = int(np.argmin(masked))
        u, v = sorted((int(parent[nxt]), nxt))
        edges.append((u, v, float(key[nxt])))
        in_tree[nxt] = True
        current = nxt
    edges.sort(key=lambda e: (e[2], e[0], e[1]))
    return np.array(edges, dtype=float)


@dataclass
class CondensedNode:
    id: int
    parent: int | None
    birth: float  # density at which the cluster appears (S_k)
    death: float  # density at which it splits or dissolves (S_K)
    size: int
    stability: float = 0.0
    selected: bool = False
    children: list[int] = field(default_factory=list)

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "parent": self.parent,
            "birth": self.birth,
            "death": self.death,
            "size": self.size,
            "stability": self.stability,
            "selected": self.selected,
            "children": list(self.children),
        }


@dataclass
class ClusterHierarchy:
    mst_edges: np.ndarray
    condensed_nodes: list[CondensedNode]
    params: ClusterParams
    point_cluster: np.ndarray  # condensed node each point last belonged to (-1: never clustered)
    point_density: np.ndarray  # density at which the point left that node

    @property
    def persistence(self) -> float:
        """Total ``death - birth`` over the selected clusters."""
        return float(sum(c.death - c.birth for c in self.condensed_nodes if c.selected))

    @property
    def total_stability(self) -> float:
        return float(sum(c.stability for c in self.condensed_nodes if c.selected))

    def log_mass(self) -> dict[int, float]:
        """Per node, the integral of its size over log density.

        The root is taken to appear at the density of the heaviest MST edge.
        """
        nodes = self.condensed_nodes
        if not nodes:
            return {}
        density = _density_fn(self.mst_edges)
        root_birth = density(float(self.mst_edges[:, 2].max())) if len(self.mst_edges) else 1.0
        births = [root_birth if c.parent is None else c.birth for c in nodes]
        own = np.zeros(len(nodes))
        left = np.zeros(len(nodes), dtype=np.int64)
        for c, s in zip(self.point_cluster, self.point_density):
            if c >= 0:
                k = int(c)
                own[k] += math.log(max(min(s, nodes[k].death), births[k]) / births[k])
                left[k] += 1
        return {
            c.id: float(own[c.id] + (c.size - left[c.id]) * math.log(max(c.death, births[c.id]) / births[c.id]))
            for c in nodes
        }

    @property
    def selected_log_mass(self) -> float:
        mass = self.log_mass()
        return float(sum(mass[c.id] for c in self.condensed_nodes if c.selected))

    def to_json(self) -> str:
        return json.dumps(
            {
                "params": {"min_cluster_size": self.params.min_cluster_size, "min_samples": self.params.min_samples},
                "mst_edges": [[int(u), int(v), float(w)] for u, v, w in self.mst_edges],
                "nodes": [c.to_dict() for c in self.condensed_nodes],
                "point_cluster": [int(c) for c in self.point_cluster],
                "point_density": [float(d) for d in self.point_density],
            },
            indent=1,
            sort_keys=True,
        )


@dataclass(frozen=True)
class ClusterSummary:
    size: int
    mean_scroll_rate: float
    mean_click_depth: float


@dataclass
class BehaviorClusterSet:
    labels: np.ndarray
    summaries: dict[int, ClusterSummary] = field(default_factory=dict)

    @property
    def n_clusters(self) -> int:
        return int(len(set(self.labels.tolist()) - {NOISE}))

    @property
    def noise_count(self) -> int:
        return int(np.sum(self.labels == NOISE))


class _Dendrogram:
    """Single-linkage merge tree; equal-weight edges merge in one step."""

    def __init__(self, n: int, mst_edges: np.ndarray):
        self.n = n
        self.children: list[list[int]] = [[] for _ in range(n)]
        self.level: list[float] = [0.0] * n
        self.size: list[int] = [1] * n
        self._minpt: list[int] = []  # smallest point index under each internal node
        uf = list(range(n))

        def find(x: int) -> int:
            while uf[x] != x:
                uf[x] = uf[uf[x]]
                x = uf[x]
            return x

        comp_node = list(range(n))  # union-find root -> dendrogram node
        i = 0
        m = len(mst_edges)
        while i < m:
            w = mst_edges[i, 2]
            j = i
            while j < m and mst_edges[j, 2] == w:
                j += 1
            groups: dict[int, set[int]] = {}
            roots_before = {}
            for u, v, _ in mst_edges[i:j]:
                ru, rv = find(int(u)), find(int(v))
                roots_before.setdefault(ru, comp_node[ru])
                roots_before.setdefault(rv, comp_node[rv])
                if ru != rv:
                    uf[rv] = ru
            for r, node in roots_before.items():
                groups.setdefault(find(r), set()).add(node)
            for rep in sorted(groups, key=lambda r: min(self._min_point(nd) for nd in groups[r])):
                kids = sorted(groups[rep], key=self._min_point)
                if len(kids) < 2:
                    continue
                nid = len(self.children)
                self.children.append(kids)
                self.level.append(float(w))
                self.size.append(sum(self.size[k] for k in kids))
                self._minpt.append(min(self._min_point(k) for k in kids))
                comp_node[rep] = nid
            i = j
        self.root = len(self.children) - 1

    def _min_point(self, node: int) -> int:
        if node < self.n:
            return node
        return self._minpt[node - self.n]

    def leaves(self, node: int) -> list[int]:
        out, stack = [], [node]
        while stack:
            x = stack.pop()
            if x < self.n:
                out.append(x)
            else:
                stack.extend(self.children[x])
        return out


def _density_fn(mst_edges: np.ndarray):
    positive = mst_edges[:, 2][mst_edges[:, 2] > 0] if len(mst_edges) else np.empty(0)
    cap = 1.0 / positive.min() if positive.size else 1.0

    def density(w: float) -> float:
        return 1.0 / w if w > 0 else cap

    return density


def condense_and_extract(
    mst_edges: np.ndarray,
    params: ClusterParams,
    n: int | None = None,
    features: np.ndarray | None = None,
) -> tuple[ClusterHierarchy, BehaviorClusterSet]:
    """Condense the MST hierarchy with ``min_cluster_size`` and pick clusters.

    ``features`` (unweighted, one row per point) is only used for the
    per-cluster summaries.
    """
    mst_edges = np.asarray(mst_edges, dtype=float).reshape(-1, 3)
    if n is None:
        n = len(mst_edges) + 1
    mcs = params.min_cluster_size
    point_cluster = np.full(n, -1, dtype=np.int64)
    point_density = np.zeros(n)
    nodes: list[CondensedNode] = []

    if n >= mcs and n >= 2:
        dendro = _Dendrogram(n, mst_edges)
        density = _density_fn(mst_edges)
        nodes.append(CondensedNode(id=0, parent=None, birth=0.0, death=0.0, size=n))
        stack = [(dendro.root, 0)]
        while stack:
            node, cid = stack.pop()
            while True:
                s = density(dendro.level[node])
                kids = dendro.children[node]
                big = [k for k in kids if dendro.size[k] >= mcs]
                for k in kids:
                    if len(big) >= 2 and k in big or len(big) == 1 and k == big[0]:
                        continue
                    for p in dendro.leaves(k):
                        point_cluster[p] = cid
                        point_density[p] = s
                if len(big) == 1:
                    node = big[0]
                    continue
                nodes[cid].death = s
                for k in big:
                    child = CondensedNode(id=len(nodes), parent=cid, birth=s, death=s, size=dendro.size[k])
                    nodes.append(child)
                    nodes[cid].children.append(child.id)
                # process in ascending id order
                for k, child_id in reversed(list(zip(big, nodes[cid].children))):
                    stack.append((k, child_id))
                break

    for c in nodes:
        c.stability = mcs * (c.death - c.birth)
    # excess of mass: children always have larger ids than their parent
    best = [0.0] * len(nodes)
    for c in reversed(nodes):
        if not c.children:
            c.selected = True
            best[c.id] = c.stability
            continue
        child_sum = sum(best[k] for k in c.children)
        if c.stability > child_sum:
            c.selected = True
            best[c.id] = c.stability
            _deselect_below(nodes, c.id)
        else:
            best[c.id] = child_sum

    labels = np.full(n, NOISE, dtype=np.int64)
    if nodes:
        owner = _selected_owner(nodes)
        root = nodes[0]
        members: dict[int, list[int]] = {}
        for p in range(n):
            c = int(point_cluster[p])
            if c < 0:
                continue
            sel = owner[c]
            if sel is None:
                continue
            if sel == 0 and point_density[p] < root.death:
                continue
            members.setdefault(sel, []).append(p)
        ordered = sorted(members.values(), key=min)
        for lab, pts in enumerate(ordered):
            labels[pts] = lab

    hierarchy = ClusterHierarchy(
        mst_edges=mst_edges, condensed_nodes=nodes, params=params, point_cluster=point_cluster, point_density=point_density
    )
    clusters = BehaviorClusterSet(labels=labels)
    if features is not None:
        clusters.summaries = summarize_clusters(labels, features)
    return hierarchy, clusters


def _deselect_below(nodes: list[CondensedNode], cid: int) -> None:
    stack = list(nodes[cid].children)
    while stack:
        k = stack.pop()
        nodes[k].selected = False
        stack.extend(nodes[k].children)


def _selected_owner(nodes: list[CondensedNode]) -> list[int | None]:
    owner: list[int | None] = [None] * len(nodes)
    for c in nodes:  # parents precede children
        if c.selected:
            owner[c.id] = c.id
        elif c.parent is not None:
            owner[c.id] = owner[c.parent]
    return owner


def summarize_clusters(labels: np.ndarray, features: np.ndarray) -> dict[int, ClusterSummary]:
    features = np.asarray(features, dtype=float)
    i_scroll = FEATURE_NAMES.index("scroll_rate_per_min")
    i_depth = FEATURE_NAMES.index("click_depth_mean")
    out = {}
    for lab in sorted(set(labels.tolist()) - {NOISE}):
        rows = features[labels == lab]
        out[lab] = ClusterSummary(
            size=int(rows.shape[0]),
            mean_scroll_rate=float(rows[:, i_scroll].mean()),
            mean_click_depth=float(rows[:, i_depth].mean()),
        )
    return out


def cluster(points: np.ndarray, params: ClusterParams, features: np.ndarray | None = None) -> tuple[ClusterHierarchy, BehaviorClusterSet]:
    points = np.asarray(points, dtype=float)
    if params.min_samples > points.shape[0]:
        raise ValueError("min_samples exceeds dataset size")
    graph = mutual_reachability_graph(points, params.min_samples)
    return condense_and_extract(build_mst(graph), params, n=points.shape[0], features=features)


def parameter_grid(n: int) -> list[ClusterParams]:
    sizes = range(2, max(2, min(25, n // 4)) + 1)
    samples = range(1, min(10, n - 1) + 1)
    return [ClusterParams(x, y) for x in sizes for y in samples]


@dataclass
class ParamSearch:
    best: ClusterParams
    scores: dict[tuple[int, int], float]


def persistence_search(points: np.ndarray, grid: Iterable[ClusterParams] | None = None) -> ParamSearch:
    """Score every grid point by the log-density mass of its selected clusters.

    See the module docstring for why the measure is logarithmic. Ties
    resolve to the smaller ``min_cluster_size``, then the smaller
    ``min_samples``.
    """
    points = np.asarray(points, dtype=float)
    n = points.shape[0]
    if n < 4:
        raise ValueError("insufficient data")
    grid = sorted(parameter_grid(n) if grid is None else grid, key=lambda p: (p.min_cluster_size, p.min_samples))
    if not np.any(np.ptp(points, axis=0) > 0):
        return ParamSearch(best=grid[0], scores={})
    dist = pairwise_distances(points) if n <= 4096 else None
    msts: dict[int, np.ndarray] = {}
    scores: dict[tuple[int, int], float] = {}
    best, best_score = grid[0], -np.inf
    for p in grid:
        if p.min_samples not in msts:
            msts[p.min_samples] = build_mst(mutual_reachability_graph(points, p.min_samples, dist=dist))
        hierarchy, _ = condense_and_extract(msts[p.min_samples], p, n=n)
        score = hierarchy.selected_log_mass
        scores[(p.min_cluster_size, p.min_samples)] = score
        if score > best_score:
            best, best_score = p, score
    return ParamSearch(best=best, scores=scores)


def persistence_select_params(points: np.ndarray) -> ClusterParams:
    return persistence_search(points).best


def export_clusters(session_ids: Sequence[str], clusters: BehaviorClusterSet, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["session_id", "cluster_label"])
        for sid, lab in zip(session_ids, clusters.labels):
            writer.writerow([sid, int(lab)])


def load_clusters(path: str | Path) -> tuple[list[str], np.ndarray]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        next(reader)
        rows = list(reader)
    return [r[0] for r in rows], np.array([int(r[1]) for r in rows], dtype=np.int64)
