"""Hierarchical density-based clustering (HDBSCAN).

The implementation follows the usual construction: core distances from the
``min_samples``-th neighbour, mutual-reachability distances, a minimum
spanning tree (Prim, with distance rows computed on demand so memory
stays linear in the number of points), the single-linkage hierarchy, a condensed tree
that drops clusters smaller than ``min_cluster_size``, and cluster selection
by excess of mass.  The number of clusters is an output.

Ties are always broken toward the lowest point index so labelings are
reproducible.
"""
from __future__ import annotations

import csv
from collections import deque
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist, pdist, squareform

from .errors import ParameterError

NOISE = -1


@dataclass(frozen=True)
class ClusterResult:
    """Labels (``-1`` is noise), cluster count, and per-cluster stability."""

    labels: np.ndarray
    num_clusters: int
    stability: np.ndarray

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=int)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "stability", np.asarray(self.stability, dtype=float))
        if labels.size and (labels.min() < NOISE or labels.max() >= self.num_clusters):
            raise ParameterError("cluster label out of range")

    @property
    def noise_fraction(self) -> float:
        return float(np.mean(self.labels == NOISE)) if self.labels.size else 0.0

    def counts(self) -> list[int]:
        return [int(np.sum(self.labels == c)) for c in range(self.num_clusters)]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["point_index", "label", "stability"])
            for i, lab in enumerate(self.labels):
                stab = self.stability[lab] if lab >= 0 else 0.0
                w.writerow([i, int(lab), repr(float(stab))])


def _as_points(points) -> np.ndarray:
    P = np.asarray(points, dtype=float)
    if P.ndim == 1:
        P = P[:, None]
    if P.ndim != 2:
        P = P.reshape(P.shape[0], -1)
    if P.shape[0] < 1:
        raise ParameterError("need at least one point")
    if not np.all(np.isfinite(P)):
        raise ParameterError("points must be finite")
    return P


def pairwise_distance(points, metric: str = "euclidean") -> np.ndarray:
    """Symmetric matrix of Euclidean distances between flattened points."""
    if metric != "euclidean":
        raise ParameterError(f"unsupported metric {metric!r}")
    P = _as_points(points)
    if len(P) == 1:
        return np.zeros((1, 1))
    return squareform(pdist(P, "euclidean"))


def core_distances(dist: np.ndarray, min_samples: int) -> np.ndarray:
    """Distance from each point to its ``min_samples``-th nearest other point."""
    S = dist.shape[0]
    if min_samples < 1 or min_samples >= S:
        raise ParameterError(f"min_samples must be in [1, {S - 1}], got {min_samples}")
    # column 0 of the partitioned row is the point itself (distance 0)
    return np.partition(dist, min_samples, axis=1)[:, min_samples]


def mutual_reachability(dist, min_samples: int) -> np.ndarray:
    dist = np.asarray(dist, dtype=float)
    core = core_distances(dist, min_samples)
    mr = np.maximum(dist, np.maximum(core[:, None], core[None, :]))
    np.fill_diagonal(mr, 0.0)
    return mr


def minimum_spanning_tree(weights: np.ndarray) -> np.ndarray:
    """Dense Prim's algorithm starting from point 0.

    Returns an ``(S-1, 3)`` array of ``(u, v, w)`` edges in insertion order.
    """
    S = weights.shape[0]
    in_tree = np.zeros(S, dtype=bool)
    best = np.full(S, np.inf)
    parent = np.zeros(S, dtype=int)
    edges = np.empty((S - 1, 3))
    current = 0
    in_tree[0] = True
    for k in range(S - 1):
        row = weights[current]
        closer = (~in_tree) & (row < best)
        best[closer] = row[closer]
        parent[closer] = current
        cand = np.where(in_tree, np.inf, best)
        nxt = int(np.argmin(cand))  # argmin returns the lowest index on ties
        edges[k] = (parent[nxt], nxt, best[nxt])
        in_tree[nxt] = True
        current = nxt
    return edges


def _core_and_max(P: np.ndarray, min_samples: int, chunk: int = 512) -> tuple[np.ndarray, float]:
    """Core distances and the largest pairwise distance without an S x S matrix."""
    S = P.shape[0]
    if min_samples < 1 or min_samples >= S:
        raise ParameterError(f"min_samples must be in [1, {S - 1}], got {min_samples}")
    core = np.empty(S)
    dmax = 0.0
    for a in range(0, S, chunk):
        D = cdist(P[a : a + chunk], P)
        core[a : a + chunk] = np.partition(D, min_samples, axis=1)[:, min_samples]
        dmax = max(dmax, float(D.max()))
    return core, dmax


def _streaming_mst(P: np.ndarray, core: np.ndarray) -> np.ndarray:
    """Prim's algorithm over mutual reachability with rows computed on demand."""
    S = P.shape[0]
    in_tree = np.zeros(S, dtype=bool)
    best = np.full(S, np.inf)
    parent = np.zeros(S, dtype=int)
    edges = np.empty((S - 1, 3))
    current = 0
    in_tree[0] = True
    for k in range(S - 1):
        row = np.maximum(cdist(P[current : current + 1], P)[0], np.maximum(core[current], core))
        closer = (~in_tree) & (row < best)
        best[closer] = row[closer]
        parent[closer] = current
        cand = np.where(in_tree, np.inf, best)
        nxt = int(np.argmin(cand))
        edges[k] = (parent[nxt], nxt, best[nxt])
        in_tree[nxt] = True
        current = nxt
    return edges


def single_linkage(edges: np.ndarray, S: int) -> np.ndarray:
    """Merge MST edges in weight order into a scipy-style linkage array.

    Row ``r`` merges nodes ``left`` and ``right`` at distance ``d`` into
    node ``S + r`` of size ``n``.
    """
    order = np.argsort(edges[:, 2], kind="stable")
    parent = np.arange(2 * S - 1)
    size = np.concatenate([np.ones(S, dtype=int), np.zeros(S - 1, dtype=int)])

    def find(a):
        root = a
        while parent[root] != root:
            root = parent[root]
        while parent[a] != root:
            parent[a], a = root, parent[a]
        return root

    out = np.empty((S - 1, 4))
    for r, e in enumerate(order):
        u, v, w = int(edges[e, 0]), int(edges[e, 1]), edges[e, 2]
        a, b = find(u), find(v)
        if a > b:
            a, b = b, a
        node = S + r
        parent[a] = parent[b] = node
        size[node] = size[a] + size[b]
        out[r] = (a, b, w, size[node])
    return out


def _leaves_under(linkage: np.ndarray, node: int, S: int) -> list[int]:
    out, stack = [], [node]
    while stack:
        n = stack.pop()
        if n < S:
            out.append(n)
        else:
            left, right = linkage[n - S, :2].astype(int)
            stack.append(right)
            stack.append(left)
    return out


def condense_tree(linkage: np.ndarray, S: int, min_cluster_size: int, lam_cap: float):
    """Collapse the single-linkage hierarchy into clusters of at least ``min_cluster_size``.

    Returns records ``(parent_cluster, child, lambda, child_size)``.  Cluster
    ids start at ``S`` (the root); children with id ``< S`` are points.
    """

    def lam(d):
        return lam_cap if d <= 1.0 / lam_cap else 1.0 / d

    root = 2 * S - 2
    relabel = {root: S}
    next_label = S + 1
    records = []
    queue = deque([root])
    while queue:
        node = queue.popleft()
        left, right, d, _ = linkage[node - S]
        left, right = int(left), int(right)
        lv = lam(d)
        size = lambda n: 1 if n < S else int(linkage[n - S, 3])  # noqa: E731
        ls, rs = size(left), size(right)
        me = relabel[node]
        if ls >= min_cluster_size and rs >= min_cluster_size:
            for child, cs in ((left, ls), (right, rs)):
                relabel[child] = next_label
                records.append((me, next_label, lv, cs))
                next_label += 1
                queue.append(child)
        else:
            for child, cs in ((left, ls), (right, rs)):
                if cs >= min_cluster_size:
                    relabel[child] = me
                    queue.append(child)
                else:
                    for leaf in _leaves_under(linkage, child, S):
                        records.append((me, leaf, lv, 1))
    return records


def _stabilities(records, S):
    birth = {S: 0.0}
    for parent, child, lv, _ in records:
        if child >= S:
            birth[child] = lv
    stab = {c: 0.0 for c in birth}
    for parent, child, lv, cs in records:
        stab[parent] += (lv - birth[parent]) * cs
    return stab


def _select_clusters(records, S, stab, method, allow_single_cluster):
    children = {c: [] for c in stab}
    for parent, child, _, _ in records:
        if child >= S:
            children[parent].append(child)
    nodes = sorted(stab, reverse=True)
    if method == "leaf":
        leaves = [c for c in nodes if not children[c] and c != S]
        if leaves:
            return set(leaves)
        return {S} if allow_single_cluster else set()
    if method != "eom":
        raise ParameterError(f"unknown cluster selection method {method!r}")
    if not allow_single_cluster:
        nodes = [c for c in nodes if c != S]
    selected = {c: True for c in nodes}
    total = dict(stab)
    for node in nodes:
        sub = sum(total[c] for c in children[node])
        if children[node] and sub > total[node]:
            selected[node] = False
            total[node] = sub
        else:
            stack = list(children[node])
            while stack:
                c = stack.pop()
                selected[c] = False
                stack.extend(children[c])
    return {c for c, keep in selected.items() if keep}


def hdbscan(
    points,
    min_cluster_size: int | None = None,
    min_samples: int | None = None,
    *,
    cluster_selection: str = "eom",
    allow_single_cluster: bool = True,
    dist: np.ndarray | None = None,
) -> ClusterResult:
    """Cluster ``points`` without specifying the number of clusters.

    Parameters
    ----------
    points : array_like, shape (S, ...)
        Points; trailing dimensions are flattened.
    min_cluster_size : int, optional
        Smallest group reported as a cluster.  Defaults to 5% of ``S`` with
        a floor of 5.
    min_samples : int, optional
        Neighbour rank used for core distances; defaults to
        ``min_cluster_size`` and is clipped to ``S - 1``.
    cluster_selection : {"eom", "leaf"}
        Excess-of-mass (default) or leaf selection.
    allow_single_cluster : bool
        Whether the root may be returned as the only cluster, which makes a
        single homogeneous group come back as one cluster instead of noise.
    dist : ndarray, optional
        Precomputed pairwise distances.
    """
    P = _as_points(points)
    S = P.shape[0]
    if min_cluster_size is None:
        min_cluster_size = max(5, int(round(0.05 * S)))
    if min_cluster_size < 2:
        raise ParameterError("min_cluster_size must be at least 2")
    if min_samples is None:
        min_samples = min_cluster_size
    if min_samples < 1:
        raise ParameterError("min_samples must be positive")
    if S < min_cluster_size or S < 2:
        return ClusterResult(np.full(S, NOISE), 0, np.zeros(0))
    ms = min(min_samples, S - 1)
    if dist is None:
        # memory stays O(S); rows of the distance matrix are recomputed as needed
        core, dmax = _core_and_max(P, ms)
    else:
        D = np.asarray(dist, dtype=float)
        if D.shape != (S, S):
            raise ParameterError("distance matrix shape does not match the points")
        dmax = D.max()
    if dmax == 0.0:
        # identical points: one cluster by definition
        return ClusterResult(np.zeros(S, dtype=int), 1, np.array([np.inf]))
    edges = _streaming_mst(P, core) if dist is None else minimum_spanning_tree(mutual_reachability(D, ms))
    link = single_linkage(edges, S)
    # distances at or below this floor count as coincident; scales with the data
    lam_cap = 1.0 / (1e-12 * dmax)
    records = condense_tree(link, S, min_cluster_size, lam_cap)
    stab = _stabilities(records, S)
    chosen = _select_clusters(records, S, stab, cluster_selection, allow_single_cluster)

    if chosen == {S}:
        return ClusterResult(np.zeros(S, dtype=int), 1, np.array([stab[S]]))

    cluster_parent = {}
    point_parent = np.empty(S, dtype=int)
    for parent, child, _, _ in records:
        if child >= S:
            cluster_parent[child] = parent
        else:
            point_parent[child] = parent
    owner = {}
    for c in stab:
        n = c
        while n not in chosen and n != S:
            n = cluster_parent[n]
        owner[c] = n if n in chosen else None
    raw = np.array([owner[point_parent[i]] if owner[point_parent[i]] is not None else -1 for i in range(S)])
    # number clusters by their lowest member index
    firsts = sorted((int(np.flatnonzero(raw == c)[0]), c) for c in chosen if np.any(raw == c))
    mapping = {c: k for k, (_, c) in enumerate(firsts)}
    labels = np.array([mapping.get(r, NOISE) for r in raw], dtype=int)
    stability = np.array([stab[c] for _, c in firsts])
    return ClusterResult(labels, len(firsts), stability)


def adjusted_rand_index(a, b) -> float:
    """Adjusted Rand index between two labelings (noise treated as its own label)."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ParameterError("labelings differ in length")
    n = a.size
    if n < 2:
        return 1.0
    _, ai = np.unique(a, return_inverse=True)
    _, bi = np.unique(b, return_inverse=True)
    table = np.zeros((ai.max() + 1, bi.max() + 1))
    np.add.at(table, (ai, bi), 1)
    comb = lambda x: x * (x - 1) / 2  # noqa: E731
    sum_ij = comb(table).sum()
    sum_a = comb(table.sum(1)).sum()
    sum_b = comb(table.sum(0)).sum()
    expected = sum_a * sum_b / comb(n)
    top = (sum_a + sum_b) / 2
    if top == expected:
        return 1.0
    return float((sum_ij - expected) / (top - expected))
