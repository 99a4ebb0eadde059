import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase
from scipy.cluster.hierarchy import linkage
from scipy.spatial.distance import squareform
from sklearn.cluster import DBSCAN

from bot_detector.clustering import (
    NOISE,
    ClusterAssignment,
    DbscanParams,
    cut_dendrogram,
    dbscan,
    distance_matrix,
    genuine_cluster_by_diameter,
    k_distances,
    kdist_knee_eps,
    read_assignment,
    ward_agglomerative,
    write_assignment,
)
from bot_detector.exceptions import ConfigError, InputError, ShapeError


def partition(labels):
    """Clusters as a set of frozensets plus the noise set."""
    labels = np.asarray(labels)
    clusters = {
        frozenset(np.flatnonzero(labels == c).tolist())
        for c in set(labels.tolist()) if c != NOISE
    }
    return clusters, frozenset(np.flatnonzero(labels == NOISE).tolist())


def brute_force_dbscan(dist, eps, min_pts):
    n = dist.shape[0]
    neighbours = [
        [j for j in range(n) if dist[i, j] <= eps] for i in range(n)
    ]
    core = [len(neighbours[i]) >= min_pts for i in range(n)]
    clusters = []
    seen = set()
    for i in range(n):
        if not core[i] or i in seen:
            continue
        component = {i}
        frontier = [i]
        while frontier:
            p = frontier.pop()
            for q in neighbours[p]:
                if core[q] and q not in component:
                    component.add(q)
                    frontier.append(q)
        seen |= component
        clusters.append(component)
    labels = np.zeros(n, dtype=int)
    for cid, component in enumerate(clusters, start=1):
        for p in component:
            labels[p] = cid
    for p in range(n):
        if core[p]:
            continue
        owners = [q for q in neighbours[p] if core[q]]
        if owners:
            labels[p] = labels[min(owners)]
    return labels


def naive_ward(points):
    """Merge the pair whose union grows the within-cluster SSE least."""
    clusters = {i: [i] for i in range(len(points))}
    merges = []
    next_id = len(points)

    def sse(members):
        block = points[members]
        return float(((block - block.mean(axis=0)) ** 2).sum())

    while len(clusters) > 1:
        best = None
        for a in sorted(clusters):
            for b in sorted(clusters):
                if b <= a:
                    continue
                cost = (
                    sse(clusters[a] + clusters[b])
                    - sse(clusters[a]) - sse(clusters[b])
                )
                if best is None or cost < best[0] - 1e-12:
                    best = (cost, a, b)
        cost, a, b = best
        merged = clusters.pop(a) + clusters.pop(b)
        merges.append((a, b, np.sqrt(2 * cost), len(merged)))
        clusters[next_id] = merged
        next_id += 1
    return merges


class DistanceTests(SimpleTestCase):

    def test_small_cases(self):
        dist = distance_matrix(np.array([[0.0], [3.0], [4.0]]))
        self.assertEqual(dist[0, 2], 4.0)
        self.assertEqual(dist[1, 1], 0.0)
        same = distance_matrix(np.ones((2, 3)))
        np.testing.assert_array_equal(same, np.zeros((2, 2)))

    def test_matches_double_loop(self):
        points = np.random.default_rng(0).normal(size=(5, 3))
        dist = distance_matrix(points)
        for i in range(5):
            for j in range(5):
                expected = np.sqrt(((points[i] - points[j]) ** 2).sum())
                self.assertAlmostEqual(dist[i, j], expected, delta=1e-12)

    def test_series_are_flattened(self):
        series = np.random.default_rng(1).normal(size=(4, 6, 1))
        np.testing.assert_array_equal(
            distance_matrix(series), distance_matrix(series[:, :, 0])
        )

    def test_single_point(self):
        with self.assertRaises(ShapeError):
            distance_matrix(np.ones((1, 2)))


class KneeTests(SimpleTestCase):

    def two_lines_with_outliers(self):
        line = np.arange(10) * 0.1
        points = [(x, 0.0) for x in line]
        points += [(50.0 + x, 0.0) for x in line]
        points += [(0.0, 30.0), (50.0, 30.0), (25.0, -30.0)]
        return np.array(points)

    def test_eps_between_blob_scale_and_gap(self):
        dist = distance_matrix(self.two_lines_with_outliers())
        eps = kdist_knee_eps(dist, k=3)
        within = k_distances(dist, 3)[:20]
        self.assertGreaterEqual(eps, within.max() - 1e-9)
        self.assertLess(eps, 25.0)

    def test_knee_clusters_the_fixture(self):
        dist = distance_matrix(self.two_lines_with_outliers())
        eps = kdist_knee_eps(dist, k=3)
        assignment = dbscan(dist, DbscanParams(eps=eps, min_pts=4))
        self.assertEqual(assignment.n_clusters, 2)
        self.assertEqual(
            set(np.flatnonzero(assignment.noise_mask)), {20, 21, 22}
        )

    def test_constant_curve(self):
        dist = distance_matrix(np.array([[0.0], [1.0], [2.0], [3.0]]))
        self.assertEqual(kdist_knee_eps(dist, k=1), 1.0)

    def test_identical_points_fall_back_to_tiny_eps(self):
        with self.assertLogs('bot_detector.clustering', level='WARNING'):
            eps = kdist_knee_eps(np.zeros((4, 4)), k=2)
        self.assertGreater(eps, 0.0)

    def test_k_out_of_range(self):
        with self.assertRaises(ConfigError):
            k_distances(np.zeros((3, 3)), 3)


class DbscanTests(SimpleTestCase):

    def test_two_triplets_and_an_outlier(self):
        points = np.array([
            [0.0, 0.0], [0.1, 0.0], [0.0, 0.1],
            [5.0, 5.0], [5.1, 5.0], [5.0, 5.1],
            [20.0, 20.0],
        ])
        assignment = dbscan(
            distance_matrix(points), DbscanParams(eps=0.5, min_pts=3)
        )
        np.testing.assert_array_equal(
            assignment.labels, [1, 1, 1, 2, 2, 2, 0]
        )

    def test_all_noise_and_single_cluster(self):
        dist = distance_matrix(np.arange(5.0).reshape(-1, 1) * 10)
        self.assertEqual(
            dbscan(dist, DbscanParams(eps=1.0, min_pts=2)).n_clusters, 0
        )
        self.assertEqual(
            set(dbscan(dist, DbscanParams(eps=100.0)).labels.tolist()), {1}
        )

    def test_matches_brute_force_and_sklearn(self):
        rng = np.random.default_rng(7)
        for _ in range(100):
            n = int(rng.integers(5, 51))
            centers = rng.normal(scale=5.0, size=(3, 2))
            points = centers[rng.integers(3, size=n)] + rng.normal(
                size=(n, 2)
            )
            dist = distance_matrix(points)
            eps = float(rng.uniform(0.3, 2.0))
            min_pts = int(rng.integers(2, 6))
            ours = dbscan(dist, DbscanParams(eps=eps, min_pts=min_pts))
            reference = brute_force_dbscan(dist, eps, min_pts)
            np.testing.assert_array_equal(ours.labels, reference)

            sk = DBSCAN(eps=eps, min_samples=min_pts, metric='precomputed')
            sk_labels = sk.fit(dist).labels_ + 1
            ours_clusters, ours_noise = partition(ours.labels)
            sk_clusters, sk_noise = partition(sk_labels)
            # Border points reachable from two clusters may differ.
            self.assertEqual(ours_noise, sk_noise)
            self.assertEqual(len(ours_clusters), len(sk_clusters))

    def test_result_does_not_depend_on_point_order(self):
        rng = np.random.default_rng(8)
        for trial in range(20):
            n = int(rng.integers(8, 40))
            centers = rng.normal(scale=6.0, size=(3, 2))
            points = centers[rng.integers(3, size=n)] + rng.normal(
                size=(n, 2)
            )
            order = rng.permutation(n)
            params = DbscanParams(eps=float(rng.uniform(0.5, 1.5)),
                                  min_pts=3)
            base = dbscan(distance_matrix(points), params)
            shuffled = dbscan(distance_matrix(points[order]), params)
            labels = np.empty(n, dtype=np.int64)
            labels[order] = shuffled.labels
            base_clusters, base_noise = partition(base.labels)
            clusters, noise = partition(labels)
            self.assertEqual(noise, base_noise, msg=trial)
            self.assertEqual(len(clusters), len(base_clusters), msg=trial)

    def test_separated_blobs_give_the_same_partition_in_any_order(self):
        rng = np.random.default_rng(9)
        points = np.vstack([
            rng.normal(scale=0.2, size=(6, 2)),
            rng.normal(scale=0.2, size=(6, 2)) + 10.0,
            [[40.0, -40.0]],
        ])
        params = DbscanParams(eps=2.0, min_pts=3)
        expected = partition(dbscan(distance_matrix(points), params).labels)
        for _ in range(5):
            order = rng.permutation(len(points))
            shuffled = dbscan(distance_matrix(points[order]), params)
            labels = np.empty(len(points), dtype=np.int64)
            labels[order] = shuffled.labels
            self.assertEqual(partition(labels), expected)

    def test_invalid_params(self):
        with self.assertRaises(ConfigError):
            DbscanParams(eps=0.0)
        with self.assertRaises(ConfigError):
            DbscanParams(eps=1.0, min_pts=0)


class WardTests(SimpleTestCase):

    def test_matches_naive_ward(self):
        rng = np.random.default_rng(11)
        for n in (2, 5, 12, 20):
            points = rng.normal(size=(n, 3))
            dendrogram = ward_agglomerative(distance_matrix(points))
            expected = naive_ward(points)
            self.assertEqual(len(dendrogram.merges), n - 1)
            for merge, (a, b, height, size) in zip(
                dendrogram.merges, expected
            ):
                self.assertEqual((merge.a, merge.b, merge.size), (a, b, size))
                self.assertAlmostEqual(merge.height, height, delta=1e-9)

    def test_matches_scipy_heights(self):
        points = np.random.default_rng(12).normal(size=(15, 4))
        dendrogram = ward_agglomerative(distance_matrix(points))
        reference = linkage(points, method='ward')
        np.testing.assert_allclose(
            [m.height for m in dendrogram.merges], reference[:, 2],
            atol=1e-9,
        )

    def test_heights_never_decrease(self):
        rng = np.random.default_rng(13)
        for n in (3, 10, 25):
            dendrogram = ward_agglomerative(
                distance_matrix(rng.normal(size=(n, 3)))
            )
            heights = [merge.height for merge in dendrogram.merges]
            self.assertTrue(
                all(b >= a - 1e-12 for a, b in zip(heights, heights[1:]))
            )

    def test_each_cut_refines_the_previous_one(self):
        points = np.random.default_rng(14).normal(size=(12, 2))
        dendrogram = ward_agglomerative(distance_matrix(points))
        coarser, _ = partition(cut_dendrogram(dendrogram, 1).labels)
        for k in range(2, 13):
            finer, _ = partition(cut_dendrogram(dendrogram, k).labels)
            self.assertEqual(len(finer), k)
            for cluster in finer:
                self.assertTrue(
                    any(cluster <= parent for parent in coarser), msg=k
                )
            coarser = finer

    def test_cut(self):
        points = np.array([
            [0.0, 0.0], [0.2, 0.1], [0.1, 0.3],
            [9.0, 9.0], [9.1, 9.2], [8.9, 9.1],
        ])
        dendrogram = ward_agglomerative(distance_matrix(points))
        np.testing.assert_array_equal(
            cut_dendrogram(dendrogram, 2).labels, [1, 1, 1, 2, 2, 2]
        )
        np.testing.assert_array_equal(
            cut_dendrogram(dendrogram, 1).labels, [1] * 6
        )
        np.testing.assert_array_equal(
            cut_dendrogram(dendrogram, 6).labels, [1, 2, 3, 4, 5, 6]
        )
        with self.assertRaises(ConfigError):
            cut_dendrogram(dendrogram, 7)

    def test_distance_matrix_validation(self):
        with self.assertRaises(ShapeError):
            ward_agglomerative(np.ones((3, 2)))
        with self.assertRaises(ShapeError):
            ward_agglomerative(squareform([1.0, -1.0, 2.0]))


class PolarityAndFileTests(SimpleTestCase):

    def test_genuine_cluster_is_the_widest(self):
        points = np.array([
            [0.0, 0.0], [0.1, 0.0], [0.0, 0.1],
            [10.0, 0.0], [14.0, 3.0], [11.0, 6.0],
        ])
        assignment = ClusterAssignment(
            user_ids=tuple('abcdef'),
            labels=np.array([1, 1, 1, 2, 2, 2]),
        )
        self.assertEqual(
            genuine_cluster_by_diameter(assignment, distance_matrix(points)),
            2,
        )

    def test_assignment_round_trip(self):
        assignment = ClusterAssignment(
            user_ids=('007', 'b', 'c'), labels=np.array([0, 1, 1])
        )
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / 'clusters.csv'
            write_assignment(assignment, path)
            loaded = read_assignment(path)
            with self.assertRaises(InputError):
                read_assignment(Path(tmp) / 'absent.csv')
        self.assertEqual(loaded.user_ids, assignment.user_ids)
        np.testing.assert_array_equal(loaded.labels, assignment.labels)
