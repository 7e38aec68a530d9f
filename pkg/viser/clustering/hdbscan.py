"""HDBSCAN* clustering for fixation denoising.

The hierarchy is built from the mutual reachability graph (core distance taken at the
`min_samples`-th neighbour, the point itself included), condensed with `min_cluster_size`,
and flat clusters are selected by excess of mass. Sessions hold tens of fixations, so
distances are computed densely.

References:
    Ricardo J. G. B. Campello, Davoud Moulavi, and Joerg Sander. Density-based clustering
    based on hierarchical density estimates. In Pacific-Asia Conference on Knowledge
    Discovery and Data Mining, pages 160-172. Springer, 2013.
"""
import logging
from dataclasses import dataclass
from typing import List, Tuple

import numba
import numpy as np
from scipy.spatial.distance import pdist, squareform

logger = logging.getLogger(__name__)

NOISE = -1


@dataclass(frozen=True, eq=False)
class ClusterLabeling:
    """Flat clustering of a set of points.

    Arguments:
        labels {np.ndarray} -- Per-point cluster id, `-1` for noise.
        n_clusters {int} -- Number of clusters.

    Keyword Arguments:
        lambdas {np.ndarray} -- Per-point density level (1 / distance) at which the point
            left the cluster tree. Higher means more deeply embedded. (default: {None})
    """
    labels: np.ndarray
    n_clusters: int
    lambdas: np.ndarray = None

    @property
    def kept(self):
        return self.labels >= 0

    def __len__(self):
        return len(self.labels)


@numba.njit
def _core_distances(dist, min_samples):
    n = dist.shape[0]
    k = min(min_samples, n) - 1
    core = np.empty(n)
    for i in range(n):
        core[i] = np.sort(dist[i])[k]
    return core


@numba.njit
def _mutual_reachability(dist, core):
    n = dist.shape[0]
    mr = np.empty_like(dist)
    for i in range(n):
        for j in range(n):
            mr[i, j] = max(dist[i, j], core[i], core[j])
    return mr


@numba.njit
def _prim_mst(mr):
    """Prim's algorithm from node 0 on a dense graph. Ties go to the lowest index.
    Returns rows `(from, to, weight)` in insertion order.
    """
    n = mr.shape[0]
    in_tree = np.zeros(n, dtype=np.bool_)
    best = np.full(n, np.inf)
    edges = np.empty((n - 1, 3))
    current = 0
    for i in range(n - 1):
        in_tree[current] = True
        new = -1
        new_dist = np.inf
        for j in range(n):
            if in_tree[j]:
                continue
            if mr[current, j] < best[j]:
                best[j] = mr[current, j]
            if new == -1 or best[j] < new_dist:
                new = j
                new_dist = best[j]
        edges[i, 0] = current
        edges[i, 1] = new
        edges[i, 2] = new_dist
        current = new
    return edges


@numba.njit
def _find(parent, x):
    root = x
    while parent[root] != root:
        root = parent[root]
    while parent[x] != root:
        nxt = parent[x]
        parent[x] = root
        x = nxt
    return root


@numba.njit
def _single_linkage(edges, n):
    """Single-linkage tree from MST edges sorted by weight. Row `i` creates node `n + i`
    with columns `(left, right, distance, size)`.
    """
    parent = np.arange(2 * n - 1)
    size = np.zeros(2 * n - 1, dtype=np.int64)
    size[:n] = 1
    tree = np.empty((n - 1, 4))
    for i in range(n - 1):
        a = _find(parent, int(edges[i, 0]))
        b = _find(parent, int(edges[i, 1]))
        node = n + i
        tree[i, 0] = a
        tree[i, 1] = b
        tree[i, 2] = edges[i, 2]
        tree[i, 3] = size[a] + size[b]
        size[node] = size[a] + size[b]
        parent[a] = node
        parent[b] = node
    return tree


def _bfs(tree, root, n):
    out = []
    queue = [root]
    while queue:
        out.extend(queue)
        queue = [int(c) for node in queue if node >= n for c in tree[node - n, :2]]
    return out


def _condense(tree, n, min_cluster_size):
    """Walk the single-linkage tree from the root, keeping a split only when both sides
    have at least `min_cluster_size` points. Points falling off a cluster become leaf rows.

    Returns:
        list -- Rows `(parent, child, lambda, child_size)`; clusters are numbered from `n`
            (the root) upwards and children always have larger ids than parents.
    """
    root = 2 * (n - 1)
    relabel = {root: n}
    next_label = n + 1
    rows = []
    ignore = set()

    def size_of(node):
        return int(tree[node - n, 3]) if node >= n else 1

    def drop(node, parent_label, lam):
        for sub in _bfs(tree, node, n):
            if sub < n:
                rows.append((parent_label, sub, lam, 1))
            ignore.add(sub)

    for node in _bfs(tree, root, n):
        if node in ignore or node < n:
            continue
        left, right, distance, _ = tree[node - n]
        left, right = int(left), int(right)
        lam = 1. / distance if distance > 0 else np.inf
        left_size, right_size = size_of(left), size_of(right)
        label = relabel[node]
        if left_size >= min_cluster_size and right_size >= min_cluster_size:
            for child, child_size in ((left, left_size), (right, right_size)):
                relabel[child] = next_label
                rows.append((label, next_label, lam, child_size))
                next_label += 1
        elif left_size < min_cluster_size and right_size < min_cluster_size:
            drop(left, label, lam)
            drop(right, label, lam)
        elif left_size < min_cluster_size:
            relabel[right] = label
            drop(left, label, lam)
        else:
            relabel[left] = label
            drop(right, label, lam)
    return rows


def _stability(rows, n):
    birth = {n: 0.}
    for parent, child, lam, size in rows:
        if child >= n:
            birth[child] = lam
    stability = {}
    for parent, child, lam, size in rows:
        stability[parent] = stability.get(parent, 0.) + (lam - birth[parent]) * size
    return stability


def _select_eom(rows, n, stability, allow_single_cluster):
    """Excess-of-mass selection. Clusters are visited leaves first (descending id); a
    cluster is kept when its own stability is at least the summed stability of its
    selected descendants.
    """
    children = {}
    for parent, child, lam, size in rows:
        if child >= n:
            children.setdefault(parent, []).append(child)
    nodes = sorted(stability, reverse=True)
    if not allow_single_cluster:
        nodes = [c for c in nodes if c != n]
    stability = dict(stability)
    selected = {c: True for c in nodes}
    for node in nodes:
        subtree = sum(stability[c] for c in children.get(node, []))
        if subtree > stability[node]:
            selected[node] = False
            stability[node] = subtree
        else:
            queue = list(children.get(node, []))
            while queue:
                sub = queue.pop()
                selected[sub] = False
                queue.extend(children.get(sub, []))
    return sorted(c for c, keep in selected.items() if keep)


def _label_points(rows, n, clusters):
    """Each point takes the label of its nearest selected ancestor in the condensed tree.
    When the root is the only selected cluster, a point is a member only if it left the
    root at the largest lambda among the root's children; earlier leavers are noise.
    """
    parent_of = {}
    lambdas = np.zeros(n)
    for parent, child, lam, size in rows:
        parent_of[child] = parent
        if child < n:
            lambdas[child] = lam
    label_of = {c: i for i, c in enumerate(clusters)}
    root_threshold = max((lam for parent, child, lam, size in rows if parent == n), default=np.inf)
    labels = np.full(n, NOISE, dtype=np.int64)
    for point in range(n):
        node = parent_of[point]
        while node not in label_of and node != n:
            node = parent_of[node]
        if node == n and (n not in label_of or lambdas[point] < root_threshold):
            continue
        labels[point] = label_of[node]
    return labels, lambdas


def hdbscan_labels(points, min_cluster_size=5, min_samples=3, allow_single_cluster=True) -> ClusterLabeling:
    """Cluster points with HDBSCAN* (Euclidean metric, excess-of-mass selection).

    Arguments:
        points {np.ndarray} -- Array of shape (n, d).

    Keyword Arguments:
        min_cluster_size {int} -- Smallest group reported as a cluster (default: {5})
        min_samples {int} -- Neighbour count for the core distance, the point itself
            included (default: {3})
        allow_single_cluster {bool} -- Allow the root to be selected as one cluster. Its members
            are then the points that stay until the root's densest fall-off; points that leave
            earlier are noise. Without it a single dense blob is all noise. (default: {True})

    Returns:
        ClusterLabeling -- Labels with `-1` for noise.
    """
    if min_cluster_size < 2:
        raise ValueError(f"`min_cluster_size` needs to be >= 2, got {min_cluster_size}")
    if min_samples < 1:
        raise ValueError(f"`min_samples` needs to be >= 1, got {min_samples}")
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2:
        raise ValueError(f"`points` needs shape (n, d), got {points.shape}")
    n = len(points)
    if n < min_cluster_size:
        return ClusterLabeling(np.full(n, NOISE, dtype=np.int64), 0, np.zeros(n))
    dist = squareform(pdist(points))
    core = _core_distances(dist, min_samples)
    mr = _mutual_reachability(dist, core)
    edges = _prim_mst(mr)
    edges = edges[np.argsort(edges[:, 2], kind='mergesort')]
    tree = _single_linkage(edges, n)
    rows = _condense(tree, n, min_cluster_size)
    stability = _stability(rows, n)
    clusters = _select_eom(rows, n, stability, allow_single_cluster)
    labels, lambdas = _label_points(rows, n, clusters)
    return ClusterLabeling(labels, len(clusters), lambdas)


def denoise_fixations(fixations, min_cluster_size=5, min_samples=3, allow_single_cluster=True):
    """Drop fixations that HDBSCAN* labels as noise. Clustering uses the (x, y) position
    only; duration is not part of the metric.

    Arguments:
        fixations {list of FixationRecord} -- Fixations of one session.

    Keyword Arguments:
        min_cluster_size {int} -- (default: {5})
        min_samples {int} -- (default: {3})
        allow_single_cluster {bool} -- (default: {True})

    Returns:
        tuple -- `(kept, labeling)`, with `kept` in the original order.
    """
    fixations = list(fixations)
    points = np.array([(f.x, f.y) for f in fixations], dtype=np.float64).reshape(-1, 2)
    labeling = hdbscan_labels(points, min_cluster_size, min_samples, allow_single_cluster)
    kept = [f for f, keep in zip(fixations, labeling.kept) if keep]
    logger.debug("denoised fixations", extra=dict(n_fixations=len(fixations), n_kept=len(kept),
                                                  n_clusters=labeling.n_clusters))
    return kept, labeling
