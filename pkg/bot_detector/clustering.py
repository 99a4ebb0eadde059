"""Density-based and Ward agglomerative clustering over latent data."""
import json
import logging
from collections import deque
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd
from scipy.spatial.distance import pdist, squareform

from .exceptions import ConfigError, InputError, ShapeError

logger = logging.getLogger(__name__)

NOISE = 0
DEFAULT_MIN_PTS = 4


@dataclass(frozen=True)
class DbscanParams:
    eps: float
    min_pts: int = DEFAULT_MIN_PTS

    def __post_init__(self):
        if not self.eps > 0:
            raise ConfigError(f'eps must be positive, got {self.eps}')
        if self.min_pts < 1:
            raise ConfigError(f'min_pts must be >= 1, got {self.min_pts}')


@dataclass(frozen=True)
class ClusterAssignment:
    """Cluster id per user; 0 is noise, 1..k are clusters."""
    user_ids: tuple
    labels: np.ndarray

    def __post_init__(self):
        if len(self.user_ids) != len(self.labels):
            raise ShapeError(
                f'{len(self.user_ids)} users but {len(self.labels)} labels'
            )

    @property
    def cluster_ids(self):
        return sorted(int(c) for c in set(self.labels.tolist()) - {NOISE})

    @property
    def n_clusters(self):
        return len(self.cluster_ids)

    @property
    def noise_mask(self):
        return self.labels == NOISE

    def members(self, cluster_id):
        return np.flatnonzero(self.labels == cluster_id)


@dataclass(frozen=True)
class Merge:
    a: int
    b: int
    height: float
    size: int


@dataclass(frozen=True)
class Dendrogram:
    """Merges in order; leaves are 0..n-1, merge k creates id n + k."""
    n_leaves: int
    merges: tuple

    def to_dict(self):
        return {
            'n_leaves': self.n_leaves,
            'merges': [
                [m.a, m.b, m.height, m.size] for m in self.merges
            ],
        }

    @classmethod
    def from_dict(cls, data):
        return cls(
            n_leaves=data['n_leaves'],
            merges=tuple(
                Merge(int(a), int(b), float(h), int(s))
                for a, b, h, s in data['merges']
            ),
        )


def distance_matrix(points):
    """Pairwise Euclidean distances between rows (series are flattened)."""
    data = np.asarray(points, dtype=np.float64)
    if data.ndim < 2:
        raise ShapeError(f'expected N x M points, got {data.shape}')
    data = data.reshape(data.shape[0], -1)
    if data.shape[0] < 2:
        raise ShapeError('distance matrix needs at least two points')
    return squareform(pdist(data, metric='euclidean'))


def check_distance_matrix(dist):
    dist = np.asarray(dist, dtype=np.float64)
    if dist.ndim != 2 or dist.shape[0] != dist.shape[1]:
        raise ShapeError(f'distance matrix must be square, got {dist.shape}')
    if np.any(dist < 0) or np.any(np.diag(dist) != 0):
        raise ShapeError('distances must be non-negative with zero diagonal')
    if not np.allclose(dist, dist.T, rtol=0.0, atol=1e-12):
        raise ShapeError('distance matrix is not symmetric')
    return dist


def k_distances(dist, k):
    """Distance from each point to its k-th nearest other point."""
    dist = check_distance_matrix(dist)
    n = dist.shape[0]
    if not 1 <= k < n:
        raise ConfigError(f'k must satisfy 1 <= k < N={n}, got {k}')
    # Each sorted row starts with the point itself at distance 0.
    return np.sort(dist, axis=1)[:, k]


def kdist_knee_eps(dist, k=DEFAULT_MIN_PTS - 1):
    """Pick eps at the knee of the descending k-distance curve.

    The knee is the point farthest from the chord joining the first and
    last points of the curve.
    """
    curve = np.sort(k_distances(dist, k))[::-1]
    if np.ptp(curve) == 0:
        value = float(curve[0])
        if value == 0.0:
            value = float(np.nextafter(0.0, 1.0))
            logger.warning(
                'all %d-distances are zero; using eps=%g', k, value
            )
        return value
    x = np.arange(curve.size, dtype=np.float64)
    dx = x[-1] - x[0]
    dy = curve[-1] - curve[0]
    offsets = np.abs(dx * (curve - curve[0]) - dy * (x - x[0]))
    offsets /= np.hypot(dx, dy)
    if offsets.max() <= 1e-12 * max(abs(curve[0]), 1.0):
        knee = 0
    else:
        knee = int(np.argmax(offsets))
    eps = float(curve[knee])
    if eps == 0.0:
        eps = float(np.nextafter(0.0, 1.0))
        logger.warning('knee falls on a zero distance; using eps=%g', eps)
    logger.info('k-distance knee at rank %d: eps=%.6g (k=%d)', knee, eps, k)
    return eps


def dbscan(dist, params, user_ids=None):
    """DBSCAN over a precomputed distance matrix.

    A point is core when at least `min_pts` points (itself included) lie
    within `eps`. Clusters are numbered from 1 in order of their lowest
    core index; a border point joins the cluster of its lowest-index core
    neighbour; everything else is noise (0).
    """
    dist = check_distance_matrix(dist)
    n = dist.shape[0]
    neighbours = dist <= params.eps
    core = neighbours.sum(axis=1) >= params.min_pts
    labels = np.full(n, NOISE, dtype=np.int64)
    next_id = 1
    for start in range(n):
        if not core[start] or labels[start] != NOISE:
            continue
        labels[start] = next_id
        queue = deque([start])
        while queue:
            point = queue.popleft()
            for other in np.flatnonzero(neighbours[point] & core):
                if labels[other] == NOISE:
                    labels[other] = next_id
                    queue.append(other)
        next_id += 1
    for point in np.flatnonzero(~core):
        core_neighbours = np.flatnonzero(neighbours[point] & core)
        if core_neighbours.size:
            labels[point] = labels[core_neighbours[0]]
    if user_ids is None:
        user_ids = tuple(str(i) for i in range(n))
    logger.info(
        'DBSCAN(eps=%.6g, min_pts=%d): %d clusters, %d noise points',
        params.eps, params.min_pts, next_id - 1,
        int(np.count_nonzero(labels == NOISE)),
    )
    return ClusterAssignment(user_ids=tuple(user_ids), labels=labels)


def ward_agglomerative(dist):
    """Ward linkage via the Lance-Williams update on squared distances.

    Heights follow the usual convention sqrt(2 * increase in the total
    within-cluster sum of squares), so two singletons merge at their
    distance. Ties go to the lowest (i, j) pair of active slots.
    """
    dist = check_distance_matrix(dist)
    n = dist.shape[0]
    if n < 2:
        raise ShapeError('Ward clustering needs at least two points')
    squared = dist ** 2
    np.fill_diagonal(squared, np.inf)
    sizes = np.ones(n, dtype=np.int64)
    ids = np.arange(n)
    active = np.ones(n, dtype=bool)
    upper = np.triu(np.ones((n, n), dtype=bool), k=1)
    merges = []
    for step in range(n - 1):
        candidates = upper & active[:, np.newaxis] & active[np.newaxis, :]
        masked = np.where(candidates, squared, np.inf)
        flat = int(np.argmin(masked))
        i, j = divmod(flat, n)
        d_ij = squared[i, j]
        size_i, size_j = sizes[i], sizes[j]
        merged = size_i + size_j
        merges.append(Merge(
            a=int(min(ids[i], ids[j])),
            b=int(max(ids[i], ids[j])),
            height=float(np.sqrt(max(d_ij, 0.0))),
            size=int(merged),
        ))
        others = np.flatnonzero(active)
        others = others[(others != i) & (others != j)]
        size_k = sizes[others]
        updated = (
            (size_i + size_k) * squared[i, others]
            + (size_j + size_k) * squared[j, others]
            - size_k * d_ij
        ) / (merged + size_k)
        squared[i, others] = updated
        squared[others, i] = updated
        active[j] = False
        sizes[i] = merged
        ids[i] = n + step
    logger.info('Ward clustering built %d merges', len(merges))
    return Dendrogram(n_leaves=n, merges=tuple(merges))


def cut_dendrogram(dendrogram, k, user_ids=None):
    """Undo the last k-1 merges; clusters numbered 1..k by lowest member."""
    n = dendrogram.n_leaves
    if not 1 <= k <= n:
        raise ConfigError(f'k must satisfy 1 <= k <= {n}, got {k}')
    parent = list(range(2 * n - 1))

    def find(node):
        while parent[node] != node:
            parent[node] = parent[parent[node]]
            node = parent[node]
        return node

    for step, merge in enumerate(dendrogram.merges[:n - k]):
        new_id = n + step
        parent[find(merge.a)] = new_id
        parent[find(merge.b)] = new_id

    labels = np.zeros(n, dtype=np.int64)
    roots = {}
    for leaf in range(n):
        root = find(leaf)
        if root not in roots:
            roots[root] = len(roots) + 1
        labels[leaf] = roots[root]
    if user_ids is None:
        user_ids = tuple(str(i) for i in range(n))
    return ClusterAssignment(user_ids=tuple(user_ids), labels=labels)


def genuine_cluster_by_diameter(assignment, dist):
    """Cluster with the largest mean pairwise distance among its members.

    Human accounts behave more heterogeneously than coordinated bots, so
    the most spread-out cluster is taken as the genuine one.
    """
    dist = np.asarray(dist, dtype=np.float64)
    best_id, best_spread = None, -1.0
    for cluster_id in assignment.cluster_ids:
        members = assignment.members(cluster_id)
        if members.size < 2:
            spread = 0.0
        else:
            block = dist[np.ix_(members, members)]
            spread = block.sum() / (members.size * (members.size - 1))
        if spread > best_spread:
            best_id, best_spread = cluster_id, spread
    return best_id


def write_assignment(assignment, path):
    frame = pd.DataFrame({
        'user_id': list(assignment.user_ids),
        'cluster_id': assignment.labels,
    })
    frame.to_csv(path, index=False)


def read_assignment(path):
    path = Path(path)
    if not path.exists():
        raise InputError(f'cluster file {path} does not exist')
    frame = pd.read_csv(path, dtype={'user_id': str})
    return ClusterAssignment(
        user_ids=tuple(frame['user_id']),
        labels=frame['cluster_id'].to_numpy(dtype=np.int64),
    )


def write_dendrogram(dendrogram, path):
    Path(path).write_text(
        json.dumps(dendrogram.to_dict(), indent=2) + '\n', encoding='utf-8'
    )
