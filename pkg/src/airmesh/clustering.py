"""Bounded agglomerative clustering of sensor embeddings.

Singleton clusters (one per sensor) are connected by exact edges to their k
nearest neighbors within the merge threshold ``theta``; every other pair is
implicit, carrying only a lower bound on its distance. Connected components
of the explicit sub-theta edges form partitions; inside each partition,
pairs that are provably mutual nearest neighbors merge, with distances and
bounds updated by size-weighted averages (so an explicit distance is always
the exact average-linkage distance between member sets). When bound
intervals overlap and no merge can be proven, the stalled bounds are
replaced by exact distances computed from the member embeddings, and the
sweep retries. The final grouping equals sequential average-linkage
clustering cut at ``theta``.

Determinism: all scans run in sorted-label order and ties on bounds break
toward the smaller cluster label, so shuffling the input embeddings never
changes the result.

A note on implicit-pair bounds: each cluster carries a scalar lower bound
``hidden_floor`` on its distance to any cluster it has no explicit edge to.
For a singleton this is min(distance to its k-th nearest neighbor, theta):
anything closer would have been an explicit edge candidate. Merging
averages the floors with size weights, which keeps the bound valid for the
mean pairwise distance. A plain ``theta`` floor (valid only when the k-NN
truncation hides nothing closer than theta) is the special case of an
unfilled neighbor list.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, Iterable, List, Optional, Sequence, Set, Tuple

import numpy as np

from .sensing import Embedding

_INF = math.inf


class ClusteringError(ValueError):
    """Bad inputs: mismatched dimensions or duplicate sensor ids."""


class MergeContractError(RuntimeError):
    """A merge was requested for a pair that is not provably mutual-NN."""


@dataclass(frozen=True)
class Bounds:
    """Edge annotation: bracketing interval and, when known, the exact distance."""

    b_l: float
    b_u: float
    dist: Optional[float]

    @property
    def exact(self) -> bool:
        return self.dist is not None

    @classmethod
    def of(cls, dist: float) -> "Bounds":
        return cls(dist, dist, dist)


@dataclass(frozen=True)
class Partition:
    """One connected component: its cluster labels and their neighbor lists."""

    clusters: Tuple[int, ...]
    nn_lists: Dict[int, Tuple[Tuple[int, float, float], ...]]


@dataclass
class ClusterTrace:
    rounds: int = 0
    refines: int = 0
    merges: List[Tuple[int, int, int, int, float]] = field(default_factory=list)
    bound_snapshots: List[List[Tuple[Tuple[int, ...], Tuple[int, ...], float, float]]] = \
        field(default_factory=list)


@dataclass
class ClusterResult:
    clusters: Tuple[Tuple[int, ...], ...]  # member ids per cluster, each sorted
    labels: Tuple[int, ...]                # cluster label (max member id) per cluster
    iterations: int                        # outer partition/merge sweeps
    trace: ClusterTrace

    def groups(self) -> FrozenSet[FrozenSet[int]]:
        return frozenset(frozenset(c) for c in self.clusters)


def _pair(a: int, b: int) -> Tuple[int, int]:
    return (a, b) if a < b else (b, a)


class ClusterGraph:
    """Clusters, explicit bounded edges, and the embedding geometry behind them."""

    def __init__(self, ids: Sequence[int], matrix: np.ndarray, theta: float, k: int):
        self.theta = float(theta)
        self.k = int(k)
        self.ids = list(ids)
        self._row = {sensor_id: i for i, sensor_id in enumerate(self.ids)}
        self.point_dist = matrix
        self.clusters: Dict[int, FrozenSet[int]] = {i: frozenset([i]) for i in self.ids}
        self.edges: Dict[Tuple[int, int], Bounds] = {}
        self.adjacency: Dict[int, Set[int]] = {i: set() for i in self.ids}
        self.hidden_floor: Dict[int, float] = {}

    def size(self, label: int) -> int:
        return len(self.clusters[label])

    def edge(self, a: int, b: int) -> Optional[Bounds]:
        return self.edges.get(_pair(a, b))

    def _set_edge(self, a: int, b: int, bounds: Bounds) -> None:
        self.edges[_pair(a, b)] = bounds
        self.adjacency[a].add(b)
        self.adjacency[b].add(a)

    def _drop_cluster_edges(self, label: int) -> None:
        for other in list(self.adjacency[label]):
            self.edges.pop(_pair(label, other), None)
            self.adjacency[other].discard(label)
        self.adjacency[label].clear()

    def hidden_bound(self, a: int, b: int) -> float:
        """Sound lower bound on the distance of an implicit pair."""
        return max(self.hidden_floor[a], self.hidden_floor[b])

    def exact_distance(self, a: int, b: int) -> float:
        """Average-linkage distance recomputed from the member embeddings."""
        rows_a = [self._row[m] for m in self.clusters[a]]
        rows_b = [self._row[m] for m in self.clusters[b]]
        return float(self.point_dist[np.ix_(rows_a, rows_b)].mean())

    def nn_list(self, label: int) -> Tuple[Tuple[int, float, float], ...]:
        """Up to k nearest explicit neighbors (by upper bound) still within theta."""
        entries = []
        for other in self.adjacency[label]:
            bounds = self.edges[_pair(label, other)]
            if bounds.b_l <= self.theta:
                entries.append((bounds.b_u, other, bounds.b_l))
        entries.sort()
        return tuple((other, b_l, b_u) for b_u, other, b_l in entries[: self.k])

    def edge_snapshot(self) -> List[Tuple[Tuple[int, ...], Tuple[int, ...], float, float]]:
        rows = []
        for (a, b), bounds in sorted(self.edges.items()):
            rows.append((tuple(sorted(self.clusters[a])), tuple(sorted(self.clusters[b])),
                         bounds.b_l, bounds.b_u))
        return rows


def _as_id_vectors(embeddings) -> List[Tuple[int, np.ndarray]]:
    pairs = []
    for item in embeddings:
        if isinstance(item, Embedding):
            pairs.append((int(item.sensor_id), np.asarray(item.vector, dtype=float)))
        else:
            sensor_id, vector = item
            pairs.append((int(sensor_id), np.asarray(vector, dtype=float)))
    return pairs


def build_graph(embeddings, theta: float, k: int = 3) -> ClusterGraph:
    """Singleton clusters plus exact edges for each sensor's k nearest
    neighbors within theta; everything else stays implicit."""
    pairs = _as_id_vectors(embeddings)
    if not pairs:
        raise ClusteringError("no embeddings given")
    ids = [p[0] for p in pairs]
    if len(ids) != len(set(ids)):
        raise ClusteringError("duplicate sensor ids")
    dims = {p[1].shape for p in pairs}
    if len(dims) != 1 or pairs[0][1].ndim != 1:
        raise ClusteringError(f"embeddings must share one dimension, got {sorted(dims)}")
    pairs.sort(key=lambda p: p[0])
    ids = [p[0] for p in pairs]
    X = np.vstack([p[1] for p in pairs])
    sq = np.maximum(
        np.sum(X * X, axis=1)[:, None] + np.sum(X * X, axis=1)[None, :] - 2.0 * (X @ X.T),
        0.0)
    matrix = np.sqrt(sq)
    np.fill_diagonal(matrix, 0.0)

    graph = ClusterGraph(ids, matrix, theta, k)
    n = len(ids)
    for i, label in enumerate(ids):
        if n == 1:
            graph.hidden_floor[label] = graph.theta
            continue
        order = sorted((matrix[i, j], ids[j]) for j in range(n) if j != i)
        kth = order[k - 1][0] if len(order) >= k else _INF
        graph.hidden_floor[label] = min(kth, graph.theta)
        for dist, other in order[:k]:
            if dist <= graph.theta:
                graph._set_edge(label, other, Bounds.of(dist))
    return graph


def partition(graph: ClusterGraph) -> List[Partition]:
    """Connected components of the explicit edges with upper bound <= theta."""
    parent = {label: label for label in graph.clusters}

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for (a, b), bounds in graph.edges.items():
        if bounds.b_u <= graph.theta:
            ra, rb = find(a), find(b)
            if ra != rb:
                parent[max(ra, rb)] = min(ra, rb)
    components: Dict[int, List[int]] = {}
    for label in graph.clusters:
        components.setdefault(find(label), []).append(label)
    parts = []
    for root in sorted(components):
        labels = tuple(sorted(components[root]))
        parts.append(Partition(labels, {l: graph.nn_list(l) for l in labels}))
    return parts


def _combine(side_a: Optional[Bounds], side_b: Optional[Bounds],
             w_a: int, w_b: int, hidden_a: float, hidden_b: float) -> Bounds:
    """Size-weighted average of two components of a merged edge; a missing
    component contributes its implicit-pair bounds (hidden floor, +inf)."""
    bl_a, bu_a, d_a = (side_a.b_l, side_a.b_u, side_a.dist) if side_a else (hidden_a, _INF, None)
    bl_b, bu_b, d_b = (side_b.b_l, side_b.b_u, side_b.dist) if side_b else (hidden_b, _INF, None)
    total = w_a + w_b
    b_l = (bl_a * w_a + bl_b * w_b) / total
    b_u = _INF if _INF in (bu_a, bu_b) else (bu_a * w_a + bu_b * w_b) / total
    dist = None if d_a is None or d_b is None else (d_a * w_a + d_b * w_b) / total
    return Bounds(b_l, b_u, dist)


def _merge(graph: ClusterGraph, a: int, b: int) -> int:
    """Fuse two clusters; new label is the max of the pair (the max member id)."""
    members = graph.clusters[a] | graph.clusters[b]
    w_a, w_b = graph.size(a), graph.size(b)
    merged = max(a, b)
    others = [x for x in graph.clusters if x not in (a, b)]
    new_edges = []
    for x in others:
        side_a, side_b = graph.edge(a, x), graph.edge(b, x)
        if side_a is None and side_b is None:
            continue
        hidden_a = max(graph.hidden_floor[a], graph.hidden_floor[x])
        hidden_b = max(graph.hidden_floor[b], graph.hidden_floor[x])
        new_edges.append((x, _combine(side_a, side_b, w_a, w_b, hidden_a, hidden_b)))
    graph._drop_cluster_edges(a)
    graph._drop_cluster_edges(b)
    floor = (graph.hidden_floor[a] * w_a + graph.hidden_floor[b] * w_b) / (w_a + w_b)
    for label in (a, b):
        del graph.clusters[label]
        del graph.hidden_floor[label]
        graph.adjacency.pop(label, None)
    graph.clusters[merged] = members
    graph.hidden_floor[merged] = floor
    graph.adjacency.setdefault(merged, set())
    for x, bounds in new_edges:
        graph._set_edge(merged, x, bounds)
    return merged


def _beats(graph: ClusterGraph, cand: Bounds, cand_label: int,
           other: Optional[Bounds], other_label: int, hidden: float) -> bool:
    """Can the candidate edge be proven nearer than this rival?"""
    if other is None:
        return cand.b_u < hidden
    if cand.exact and other.exact:
        return (cand.dist, cand_label) < (other.dist, other_label)
    return cand.b_u < other.b_l


def compute_nn(graph: ClusterGraph, label: int,
               scope: Optional[Set[int]] = None,
               cross_check=None) -> Optional[int]:
    """Provable nearest neighbor of a cluster, or None.

    The winner's upper bound must beat the lower bound of every rival,
    explicit or implicit (exact ties break toward the smaller label).
    ``scope`` restricts candidates and live rivals to one partition;
    ``cross_check`` is the extra validity predicate against clusters
    outside it.
    """
    live = scope if scope is not None else set(graph.clusters)
    candidates = sorted(
        (graph.edges[_pair(label, other)].b_u, other)
        for other in graph.adjacency[label] if other in live)
    if not candidates:
        return None
    best = candidates[0][1]
    cand = graph.edge(label, best)
    for x in live:
        if x == label or x == best:
            continue
        if not _beats(graph, cand, best, graph.edge(label, x), x, graph.hidden_bound(label, x)):
            return None
    if cross_check is not None and not cross_check(label, cand):
        return None
    return best


def merge_pair(graph: ClusterGraph, a: int, b: int) -> int:
    """Merge a provably mutual-NN pair within theta; anything else is a
    contract violation (it could corrupt the clustering)."""
    bounds = graph.edge(a, b)
    if bounds is None or bounds.b_u > graph.theta:
        raise MergeContractError(f"({a},{b}) has no edge with upper bound <= theta")
    if compute_nn(graph, a) != b or compute_nn(graph, b) != a:
        raise MergeContractError(f"({a},{b}) are not mutual nearest neighbors")
    return _merge(graph, a, b)


def refine_bounds(graph: ClusterGraph, label: int) -> bool:
    """Replace this cluster's unresolved sub-theta bounds with exact distances.

    Covers explicit edges still carrying an interval, and implicit pairs
    whose floor does not yet rule out theta. Already-exact edges are left
    untouched. Returns True when anything changed.
    """
    changed = False
    for other in sorted(graph.clusters):
        if other == label:
            continue
        bounds = graph.edge(label, other)
        if bounds is not None:
            if not bounds.exact and bounds.b_l <= graph.theta:
                graph._set_edge(label, other, Bounds.of(graph.exact_distance(label, other)))
                changed = True
        elif graph.hidden_bound(label, other) <= graph.theta:
            graph._set_edge(label, other, Bounds.of(graph.exact_distance(label, other)))
            changed = True
    return changed


def cluster(embeddings, theta: float, k: int = 3,
            record_bounds: bool = False) -> ClusterResult:
    """Full agglomeration: partition, merge mutual-NN pairs, integrate,
    refine on stall; stops when no pair can still be within theta."""
    graph = build_graph(embeddings, theta, k)
    trace = ClusterTrace()
    if record_bounds:
        trace.bound_snapshots.append(graph.edge_snapshot())

    while True:
        parts = partition(graph)
        pre_round = _freeze(graph, parts)
        merged_any = False
        for part in parts:
            live: Set[int] = set(part.clusters)
            if len(live) < 2:
                continue
            cross = _cross_checker(graph, pre_round, part.clusters[0])
            components = {label: (label,) for label in live}
            while True:
                nn = {label: compute_nn(graph, label, scope=live,
                                        cross_check=cross(components))
                      for label in sorted(live)}
                mergeable = []
                for label in live:
                    mate = nn.get(label)
                    if mate is not None and label < mate and nn.get(mate) == label:
                        bounds = graph.edge(label, mate)
                        if bounds.b_u <= graph.theta:
                            mergeable.append((bounds.b_u, label, mate))
                if not mergeable:
                    break
                _, a, b = min(mergeable)
                size_a, size_b = graph.size(a), graph.size(b)
                b_u = graph.edge(a, b).b_u
                merged = _merge(graph, a, b)
                components[merged] = components.pop(a) + components.pop(b)
                live.difference_update((a, b))
                live.add(merged)
                trace.merges.append((trace.rounds, a, b, merged, b_u))
                if record_bounds:
                    trace.bound_snapshots.append(graph.edge_snapshot())
                merged_any = True
        trace.rounds += 1
        if merged_any:
            continue
        refined = False
        for label in sorted(graph.clusters):
            refined |= refine_bounds(graph, label)
        if refined:
            trace.refines += 1
            if record_bounds:
                trace.bound_snapshots.append(graph.edge_snapshot())
            continue
        break

    for (a, b), bounds in graph.edges.items():
        assert not (bounds.exact and bounds.dist <= graph.theta), \
            f"terminated with mergeable pair ({a},{b})"
    ordered = sorted(graph.clusters.items(), key=lambda kv: min(kv[1]))
    return ClusterResult(
        clusters=tuple(tuple(sorted(members)) for _, members in ordered),
        labels=tuple(label for label, _ in ordered),
        iterations=trace.rounds,
        trace=trace,
    )


def _freeze(graph: ClusterGraph, parts: List[Partition]):
    """Round-start view used to validate merges against other partitions.

    Partitions may conceptually merge in parallel, so mid-round state of a
    foreign partition must not influence decisions; bounds against foreign
    clusters are evaluated on this frozen snapshot instead.
    """
    part_of = {}
    for index, part in enumerate(parts):
        for label in part.clusters:
            part_of[label] = index
    return {
        "part_of": part_of,
        "parts": [part.clusters for part in parts],
        "edges": dict(graph.edges),
        "floor": dict(graph.hidden_floor),
    }


def _cross_checker(graph: ClusterGraph, pre_round, any_member: int):
    my_part = pre_round["part_of"][any_member]
    foreign = [label
               for index, labels in enumerate(pre_round["parts"]) if index != my_part
               for label in labels]
    pre_edges = pre_round["edges"]
    pre_floor = pre_round["floor"]

    def for_components(components: Dict[int, Tuple[int, ...]]):
        def check(label: int, cand: Bounds) -> bool:
            comps = components[label]
            for x in foreign:
                floor_x = pre_floor[x]
                bound = _INF
                for c in comps:
                    e = pre_edges.get(_pair(c, x))
                    bound = min(bound, e.b_l if e is not None else max(pre_floor[c], floor_x))
                if not cand.b_u < bound:
                    return False
            return True
        return check

    return for_components
