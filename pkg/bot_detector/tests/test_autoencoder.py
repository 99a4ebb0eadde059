import tempfile
from dataclasses import replace
from datetime import date
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase
from scipy.special import expit

from bot_detector.autoencoder import (
    AutoencoderConfig,
    DenseParams,
    LstmLayerParams,
    clip_gradients,
    dense_backward,
    dense_forward,
    encode,
    forward_autoencoder,
    init_model,
    load_model,
    loss_and_gradients,
    lstm_backward,
    lstm_forward,
    mse_loss,
    save_model,
    split_users,
    train,
)
from bot_detector.exceptions import ConfigError, NormalizationError
from bot_detector.ingest import build_timelines
from bot_detector.mts import (
    SENTINEL,
    MtsTensor,
    extract_mts,
    minmax_normalize,
)
from bot_detector.numerics import finite_diff_grad, seeded_rng
from bot_detector.synth import SynthConfig, generate_dataset


def relative_error(analytic, numeric):
    scale = np.linalg.norm(analytic) + np.linalg.norm(numeric)
    if scale < 1e-12:
        return 0.0
    return np.linalg.norm(analytic - numeric) / scale


def random_lstm(rng, input_size, hidden):
    return LstmLayerParams(
        W=rng.normal(scale=0.5, size=(input_size, 4 * hidden)),
        U=rng.normal(scale=0.5, size=(hidden, 4 * hidden)),
        b=rng.normal(scale=0.1, size=4 * hidden),
    )


def normalized_tensor(values, fingerprint='fixture'):
    return MtsTensor(
        values=values,
        user_ids=tuple(f'u{i}' for i in range(values.shape[0])),
        feature_names=tuple(
            ('num_urls', 'num_hashtags', 'num_mentions',
             'retweet_count', 'reply_count', 'favorite_count')
            [:values.shape[2]]
        ),
        day_min=date(2017, 1, 1),
        normalized=True,
        fingerprint=fingerprint,
    )


def random_batch(rng, n, steps, features):
    batch = rng.uniform(0.0, 1.0, size=(n, steps, features))
    inactive = rng.random((n, steps)) < 0.3
    batch[inactive] = SENTINEL
    return batch


class LstmLayerTests(SimpleTestCase):

    def test_forward_matches_scalar_recurrence(self):
        rng = seeded_rng(3)
        layer = random_lstm(rng, 2, 2)
        x = rng.normal(size=(3, 2))
        output, _ = lstm_forward(layer, x)

        h = [0.0, 0.0]
        c = [0.0, 0.0]
        for t in range(3):
            new_h, new_c = [], []
            for unit in range(2):
                def pre(gate):
                    col = gate * 2 + unit
                    total = layer.b[col]
                    for k in range(2):
                        total += x[t, k] * layer.W[k, col]
                        total += h[k] * layer.U[k, col]
                    return total
                i = expit(pre(0))
                f = expit(pre(1))
                o = expit(pre(2))
                g = np.tanh(pre(3))
                cell = f * c[unit] + i * g
                new_c.append(cell)
                new_h.append(o * np.tanh(cell))
            h, c = new_h, new_c
            for unit in range(2):
                self.assertAlmostEqual(output[t, unit], h[unit], places=12)

    def test_last_step_output(self):
        layer = random_lstm(seeded_rng(4), 3, 2)
        x = seeded_rng(5).normal(size=(4, 6, 3))
        full, _ = lstm_forward(layer, x)
        last, _ = lstm_forward(layer, x, return_sequence=False)
        np.testing.assert_array_equal(last, full[:, -1])

    def test_zero_parameters_give_zero_output(self):
        layer = LstmLayerParams(
            W=np.zeros((3, 8)), U=np.zeros((2, 8)), b=np.zeros(8)
        )
        x = seeded_rng(6).normal(size=(4, 5, 3))
        output, _ = lstm_forward(layer, x)
        np.testing.assert_array_equal(output, np.zeros((4, 5, 2)))

    def test_backward_is_linear_in_upstream(self):
        layer = random_lstm(seeded_rng(7), 3, 2)
        x = seeded_rng(8).normal(size=(2, 6, 3))
        upstream = seeded_rng(9).normal(size=(2, 6, 2))
        _, cache = lstm_forward(layer, x)
        zero, d_x_zero = lstm_backward(layer, cache, np.zeros_like(upstream))
        for name in ('W', 'U', 'b'):
            np.testing.assert_array_equal(zero[name], 0.0)
        np.testing.assert_array_equal(d_x_zero, 0.0)
        single, d_x = lstm_backward(layer, cache, upstream)
        double, d_x_double = lstm_backward(layer, cache, 2.0 * upstream)
        for name in ('W', 'U', 'b'):
            np.testing.assert_allclose(
                double[name], 2.0 * single[name], rtol=1e-12, atol=1e-15
            )
        np.testing.assert_allclose(
            d_x_double, 2.0 * d_x, rtol=1e-12, atol=1e-15
        )

    def test_lstm_gradients_match_finite_differences(self):
        for trial in range(5):
            rng = seeded_rng(100 + trial)
            hidden = 1 + trial % 3
            layer = random_lstm(rng, 3, hidden)
            x = rng.normal(size=(2, 5, 3))
            projection = rng.normal(size=(2, 5, hidden))

            def loss(params):
                out, _ = lstm_forward(LstmLayerParams(**params), x)
                return float(np.sum(out * projection))

            _, cache = lstm_forward(layer, x)
            grads, d_x = lstm_backward(layer, cache, projection)
            base = {'W': layer.W, 'U': layer.U, 'b': layer.b}
            for name in ('W', 'U', 'b'):
                numeric = finite_diff_grad(
                    lambda theta: loss({**base, name: theta}), base[name]
                )
                self.assertLess(relative_error(grads[name], numeric), 1e-4)
            numeric_x = finite_diff_grad(
                lambda theta: float(np.sum(
                    lstm_forward(layer, theta)[0] * projection
                )),
                x,
            )
            self.assertLess(relative_error(d_x, numeric_x), 1e-4)

    def test_dense_gradients_match_finite_differences(self):
        rng = seeded_rng(11)
        layer = DenseParams(W=rng.normal(size=(5, 4)), b=rng.normal(size=4))
        inputs = rng.normal(size=(3, 5))
        projection = rng.normal(size=(3, 4))
        output, cache = dense_forward(layer, inputs)
        grads, d_inputs = dense_backward(layer, cache, projection)
        numeric_w = finite_diff_grad(
            lambda w: float(np.sum(
                dense_forward(DenseParams(W=w, b=layer.b), inputs)[0]
                * projection
            )),
            layer.W,
        )
        numeric_in = finite_diff_grad(
            lambda x: float(np.sum(dense_forward(layer, x)[0] * projection)),
            inputs,
        )
        self.assertLess(relative_error(grads['W'], numeric_w), 1e-4)
        self.assertLess(relative_error(d_inputs, numeric_in), 1e-4)


class AutoencoderGradientTests(SimpleTestCase):

    def check_model(self, variant, seed):
        config = AutoencoderConfig(
            variant=variant, input_dim=3, seq_len=5, latent_dim=4, seed=seed
        )
        model = init_model(config)
        batch = random_batch(seeded_rng(seed + 1), 3, 5, 3)
        _, grads = loss_and_gradients(model, batch)
        self.assertEqual(set(grads), set(model.params))
        for name, value in model.params.items():
            def loss(theta, name=name):
                params = {**model.params, name: theta}
                _, recon = forward_autoencoder(
                    replace(model, params=params), batch
                )
                return mse_loss(recon, batch)

            numeric = finite_diff_grad(loss, value)
            self.assertLess(
                relative_error(grads[name], numeric), 1e-4, msg=name
            )

    def test_uts_gradients(self):
        for seed in (1, 2, 3):
            self.check_model('uts', seed)

    def test_vec_gradients(self):
        for seed in (4, 5):
            self.check_model('vec', seed)


class AutoencoderModelTests(SimpleTestCase):

    def setUp(self):
        self.data = normalized_tensor(random_batch(seeded_rng(9), 10, 8, 3))

    def test_latent_shapes(self):
        uts = AutoencoderConfig(variant='uts', epochs=0).resolve(
            self.data.values
        )
        vec = AutoencoderConfig(
            variant='vec', latent_dim=6, epochs=0
        ).resolve(self.data.values)
        self.assertEqual(
            encode(init_model(uts, 'fixture'), self.data).shape, (10, 8, 1)
        )
        self.assertEqual(
            encode(init_model(vec, 'fixture'), self.data).shape, (10, 6)
        )

    def test_training_lowers_the_loss(self):
        for config in (
            AutoencoderConfig(variant='uts', learning_rate=0.01, epochs=15),
            AutoencoderConfig(variant='vec', latent_dim=6, epochs=15),
        ):
            _, report = train(config, self.data)
            self.assertEqual(report.final_epoch, 15)
            self.assertEqual(len(report.holdout_loss), 15)
            self.assertLess(report.train_loss[-1], report.train_loss[0])

    def test_training_is_deterministic(self):
        config = AutoencoderConfig(variant='uts', epochs=3, seed=5)
        first, report_a = train(config, self.data)
        second, report_b = train(config, self.data)
        for name in first.params:
            np.testing.assert_array_equal(
                first.params[name], second.params[name]
            )
        self.assertEqual(report_a.train_loss, report_b.train_loss)
        self.assertIn('timing', report_a.to_dict())
        self.assertNotIn('wall_time', report_a.to_dict())

    def test_train_requires_normalized_data(self):
        raw = replace(self.data, normalized=False)
        with self.assertRaises(NormalizationError):
            train(AutoencoderConfig(epochs=1), raw)

    def test_encode_checks_normalization_fingerprint(self):
        model, _ = train(AutoencoderConfig(epochs=1), self.data)
        other = replace(self.data, fingerprint='other')
        with self.assertRaises(NormalizationError):
            encode(model, other)

    def test_checkpoint_round_trip(self):
        model, _ = train(
            AutoencoderConfig(variant='vec', latent_dim=5, epochs=2),
            self.data,
        )
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / 'model.bin'
            save_model(model, path)
            loaded = load_model(path)
        self.assertEqual(loaded.config, model.config)
        np.testing.assert_array_equal(
            encode(loaded, self.data), encode(model, self.data)
        )


class HelperTests(SimpleTestCase):

    def test_mse_hand_case(self):
        self.assertEqual(mse_loss([[1.0, 3.0]], [[2.0, 5.0]]), 2.5)
        self.assertEqual(mse_loss(np.ones(4), np.ones(4)), 0.0)

    def test_clip_gradients(self):
        grads = {'a': np.array([3.0]), 'b': np.array([4.0])}
        clipped, norm = clip_gradients(grads, 1.0)
        self.assertEqual(norm, 5.0)
        np.testing.assert_allclose(clipped['a'], [0.6])
        np.testing.assert_allclose(clipped['b'], [0.8])
        unchanged, _ = clip_gradients(grads, 10.0)
        np.testing.assert_array_equal(unchanged['a'], grads['a'])

    def test_split_users(self):
        train_rows, holdout_rows = split_users(10, 0.2, 42)
        self.assertEqual(len(train_rows), 8)
        self.assertEqual(len(holdout_rows), 2)
        self.assertEqual(
            sorted(np.concatenate([train_rows, holdout_rows])), list(range(10))
        )
        with self.assertRaises(ConfigError):
            split_users(1, 0.2, 42)


class MemoryLayoutTests(SimpleTestCase):

    def setUp(self):
        self.values = random_batch(seeded_rng(21), 12, 10, 4)
        self.fortran = np.asfortranarray(self.values)
        self.assertFalse(self.fortran.flags.c_contiguous)

    def test_gradients_ignore_memory_layout(self):
        config = AutoencoderConfig(
            variant='vec', input_dim=4, seq_len=10, latent_dim=5
        )
        model = init_model(config)
        loss, grads = loss_and_gradients(model, self.values)
        loss_f, grads_f = loss_and_gradients(model, self.fortran)
        self.assertEqual(loss, loss_f)
        for name in grads:
            np.testing.assert_array_equal(grads[name], grads_f[name])

    def test_training_ignores_memory_layout(self):
        data = normalized_tensor(self.values)
        strided = normalized_tensor(self.fortran)
        self.assertTrue(strided.values.flags.c_contiguous)
        config = AutoencoderConfig(variant='uts', epochs=20, seed=3)
        first, report = train(config, data)
        second, report_f = train(config, strided)
        self.assertEqual(report.train_loss, report_f.train_loss)
        for name in first.params:
            np.testing.assert_array_equal(
                first.params[name], second.params[name]
            )


class SyntheticTrainingTests(SimpleTestCase):
    """Full-length training on the default synthetic population."""

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        records, _ = generate_dataset(SynthConfig())
        timelines, manifest = build_timelines(records)
        cls.data, _ = minmax_normalize(extract_mts(timelines, manifest))

    def test_training_halves_the_reconstruction_error(self):
        for variant in ('uts', 'vec'):
            _, report = train(AutoencoderConfig(variant=variant), self.data)
            self.assertEqual(report.final_epoch, 250)
            self.assertLess(
                report.train_loss[-1], 0.5 * report.train_loss[0],
                msg=variant,
            )
