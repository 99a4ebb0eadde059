import statistics
import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase

from bot_detector.exceptions import ShapeError
from bot_detector.globalfeats import (
    DEFAULT_CATALOG,
    GlobalFeatureVector,
    concat_features,
    extract_global_features,
    read_global_features,
    write_global_features,
    zscore_standardize,
)


def naive_reference(x):
    """Direct-formula versions of every catalog statistic."""
    n = len(x)
    mean = sum(x) / n
    var = sum((v - mean) ** 2 for v in x) / n
    m2 = var
    m3 = sum((v - mean) ** 3 for v in x) / n
    m4 = sum((v - mean) ** 4 for v in x) / n
    g1 = m3 / m2 ** 1.5
    skew = np.sqrt(n * (n - 1)) / (n - 2) * g1
    g2 = m4 / m2 ** 2 - 3.0
    kurt = (n - 1) / ((n - 2) * (n - 3)) * ((n + 1) * g2 + 6.0)
    diffs = [x[i + 1] - x[i] for i in range(n - 1)]
    above = [v > mean for v in x]
    below = [v < mean for v in x]

    def longest(flags):
        best = run = 0
        for flag in flags:
            run = run + 1 if flag else 0
            best = max(best, run)
        return best

    def autocorr(lag):
        total = sum(
            (x[i] - mean) * (x[i + lag] - mean) for i in range(n - lag)
        )
        return total / ((n - lag) * var)

    median = statistics.median(x)
    return [
        mean, np.sqrt(var), var, skew, kurt, min(x), max(x), median,
        sum(v * v for v in x),
        sum(abs(d) for d in diffs) / (n - 1),
        sum(diffs) / (n - 1),
        sum(above), sum(below),
        sum(1 for i in range(n - 1) if above[i] != above[i + 1]),
        longest(above), longest(below),
        autocorr(1), autocorr(7), autocorr(30),
    ]


class CatalogTests(SimpleTestCase):

    def test_catalog_has_nineteen_named_statistics(self):
        self.assertEqual(len(DEFAULT_CATALOG), 19)
        self.assertEqual(len(set(DEFAULT_CATALOG.names)), 19)

    def test_matches_naive_reference(self):
        rng = np.random.default_rng(0)
        for _ in range(5):
            x = rng.normal(size=50)
            computed = DEFAULT_CATALOG.compute(x)
            expected = naive_reference(list(x))
            for name, got, want in zip(
                DEFAULT_CATALOG.names, computed, expected
            ):
                self.assertAlmostEqual(got, want, delta=1e-9, msg=name)

    def test_constant_series(self):
        values = dict(zip(
            DEFAULT_CATALOG.names, DEFAULT_CATALOG.compute(np.full(40, 2.0))
        ))
        self.assertEqual(values['mean'], 2.0)
        self.assertEqual(values['variance'], 0.0)
        for name in ('skewness', 'kurtosis', 'autocorrelation_lag_1',
                     'count_above_mean', 'number_mean_crossings'):
            self.assertEqual(values[name], 0.0, msg=name)

    def test_lag_longer_than_series(self):
        values = dict(zip(
            DEFAULT_CATALOG.names,
            DEFAULT_CATALOG.compute(np.arange(10.0)),
        ))
        self.assertEqual(values['autocorrelation_lag_30'], 0.0)

    def test_alternating_series(self):
        values = dict(zip(
            DEFAULT_CATALOG.names,
            DEFAULT_CATALOG.compute(np.tile([0.0, 1.0], 20)),
        ))
        self.assertEqual(values['mean'], 0.5)
        self.assertEqual(values['mean_abs_change'], 1.0)
        self.assertEqual(values['number_mean_crossings'], 39.0)
        self.assertAlmostEqual(values['autocorrelation_lag_1'], -1.0)

    def test_shift_and_scale_invariance(self):
        x = np.random.default_rng(4).normal(size=64)
        y = 1e-5 * x + 0.3
        original = dict(zip(DEFAULT_CATALOG.names, DEFAULT_CATALOG.compute(x)))
        moved = dict(zip(DEFAULT_CATALOG.names, DEFAULT_CATALOG.compute(y)))
        self.assertAlmostEqual(
            moved['variance'] / original['variance'], 1e-10, delta=1e-16
        )
        for name in ('skewness', 'kurtosis', 'count_above_mean',
                     'count_below_mean', 'number_mean_crossings',
                     'longest_strike_above_mean', 'longest_strike_below_mean',
                     'autocorrelation_lag_1', 'autocorrelation_lag_7',
                     'autocorrelation_lag_30'):
            self.assertAlmostEqual(
                moved[name], original[name], delta=1e-6, msg=name
            )
        self.assertNotEqual(moved['autocorrelation_lag_1'], 0.0)


class ExtractTests(SimpleTestCase):

    def test_shapes_and_no_nans(self):
        latent = np.random.default_rng(1).normal(size=(4, 12, 1))
        latent[0] = 0.5
        features = extract_global_features(latent, ('a', 'b', 'c', 'd'))
        self.assertEqual(features.values.shape, (4, 19))
        self.assertTrue(np.all(np.isfinite(features.values)))

    def test_short_series_rejected(self):
        with self.assertRaises(ShapeError):
            extract_global_features(np.zeros((2, 1, 1)), ('a', 'b'))

    def test_csv_round_trip(self):
        latent = np.random.default_rng(2).normal(size=(3, 8))
        features = extract_global_features(latent, ('x', 'y', 'z'))
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / 'globals.csv'
            write_global_features(features, path)
            loaded = read_global_features(path)
        self.assertEqual(loaded.names, features.names)
        np.testing.assert_array_equal(loaded.values, features.values)


class StandardizeTests(SimpleTestCase):

    def vector(self, values):
        values = np.asarray(values, dtype=float)
        return GlobalFeatureVector(
            user_ids=tuple(str(i) for i in range(values.shape[0])),
            names=tuple(f'f{j}' for j in range(values.shape[1])),
            values=values,
        )

    def test_hand_column(self):
        result = zscore_standardize(self.vector([[1.0], [2.0], [3.0]]))
        np.testing.assert_allclose(
            result.values[:, 0], [-1.224744871391589, 0.0, 1.224744871391589]
        )

    def test_constant_column_and_zero_means(self):
        rng = np.random.default_rng(3)
        values = np.column_stack([rng.normal(size=6), np.full(6, 7.0)])
        result = zscore_standardize(self.vector(values))
        np.testing.assert_array_equal(result.values[:, 1], np.zeros(6))
        self.assertLess(abs(result.values[:, 0].mean()), 1e-12)

    def test_concat_puts_globals_first(self):
        globals_ = self.vector([[1.0, 2.0], [3.0, 4.0]])
        latent = np.array([[9.0], [8.0]])
        np.testing.assert_array_equal(
            concat_features(globals_, latent),
            [[1.0, 2.0, 9.0], [3.0, 4.0, 8.0]],
        )
        with self.assertRaises(ShapeError):
            concat_features(globals_, np.ones((3, 1)))

    def test_concat_widths(self):
        rng = np.random.default_rng(5)
        globals_ = self.vector(rng.normal(size=(3, 19)))
        latent = rng.normal(size=(3, 300))
        combined = concat_features(globals_, latent)
        self.assertEqual(combined.shape, (3, 319))
        np.testing.assert_array_equal(combined[1, 19:], latent[1])
        empty = GlobalFeatureVector(
            user_ids=('a', 'b', 'c'), names=(), values=np.empty((3, 0))
        )
        np.testing.assert_array_equal(concat_features(empty, latent), latent)
