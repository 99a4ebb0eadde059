"""LSTM autoencoders mapping daily MTS to a latent space.

Two architectures are supported:

* ``uts``: LSTM(D -> 1) returning sequences gives an N x T x 1 latent
  series; LSTM(1 -> D) returning sequences reconstructs the input.
* ``vec``: the same encoder LSTM, flattened and passed through a tanh
  dense layer T -> L, gives an N x L latent; a tanh dense layer L -> T,
  reshaped to T x 1, feeds the LSTM(1 -> D) decoder.

Gradients are derived by hand (backpropagation through time) and the
models are trained full-batch with RMSProp on the mean squared error.
"""
import json
import logging
import struct
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.special import expit

from .exceptions import (
    ConfigError,
    InputError,
    NormalizationError,
    ShapeError,
    TrainingDivergedError,
)
from .numerics import RmspropState, matmul, rmsprop_step, seeded_rng

logger = logging.getLogger(__name__)

VARIANTS = ('uts', 'vec')
DEFAULT_LEARNING_RATES = {'uts': 0.02, 'vec': 0.001}
DEFAULT_LATENT_DIM = 300
DEFAULT_EPOCHS = 250
DEFAULT_HOLDOUT = 0.2
DEFAULT_CLIP_NORM = 5.0
FORGET_BIAS = 1.0

CHECKPOINT_MAGIC = b'BDAE\x00'
CHECKPOINT_VERSION = 1

# Gate blocks are stored side by side in this order along the last axis.
GATES = ('i', 'f', 'o', 'c')


@dataclass(frozen=True)
class AutoencoderConfig:
    variant: str = 'uts'
    input_dim: int = None
    seq_len: int = None
    latent_dim: int = DEFAULT_LATENT_DIM
    learning_rate: float = None
    epochs: int = DEFAULT_EPOCHS
    holdout_fraction: float = DEFAULT_HOLDOUT
    seed: int = 42
    clip_norm: float = DEFAULT_CLIP_NORM

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f'unknown autoencoder variant {self.variant!r}')
        if self.variant == 'vec' and self.latent_dim <= 0:
            raise ConfigError('latent_dim must be positive')
        if not 0.0 < self.holdout_fraction < 1.0:
            raise ConfigError('holdout_fraction must lie in (0, 1)')
        if self.epochs < 0:
            raise ConfigError('epochs must be non-negative')
        if self.clip_norm is not None and self.clip_norm <= 0:
            raise ConfigError('clip_norm must be positive')

    @property
    def rate(self):
        if self.learning_rate is not None:
            return self.learning_rate
        return DEFAULT_LEARNING_RATES[self.variant]

    def resolve(self, data):
        """Fill the input dimensions from a tensor, checking any set ones."""
        _, seq_len, input_dim = data.shape
        if self.seq_len is not None and self.seq_len != seq_len:
            raise ShapeError(
                f'config expects T={self.seq_len}, data has T={seq_len}'
            )
        if self.input_dim is not None and self.input_dim != input_dim:
            raise ShapeError(
                f'config expects D={self.input_dim}, data has D={input_dim}'
            )
        return replace(self, seq_len=seq_len, input_dim=input_dim)


@dataclass(frozen=True)
class LstmLayerParams:
    """W: input x 4H, U: H x 4H, b: 4H, gate blocks ordered i, f, o, c."""
    W: np.ndarray
    U: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        hidden = self.U.shape[0]
        if self.U.shape != (hidden, 4 * hidden):
            raise ShapeError(f'U must be H x 4H, got {self.U.shape}')
        if self.W.ndim != 2 or self.W.shape[1] != 4 * hidden:
            raise ShapeError(f'W must be input x 4H, got {self.W.shape}')
        if self.b.shape != (4 * hidden,):
            raise ShapeError(f'b must have 4H entries, got {self.b.shape}')

    @property
    def input_size(self):
        return self.W.shape[0]

    @property
    def hidden_size(self):
        return self.U.shape[0]

    def gate(self, name):
        """Return the (W, U, b) slices of a single gate."""
        k = GATES.index(name)
        h = self.hidden_size
        cols = slice(k * h, (k + 1) * h)
        return self.W[:, cols], self.U[:, cols], self.b[cols]


@dataclass(frozen=True)
class DenseParams:
    W: np.ndarray
    b: np.ndarray


@dataclass
class LstmCache:
    inputs: np.ndarray
    gates: np.ndarray
    cells: np.ndarray
    hidden: np.ndarray
    return_sequence: bool


@dataclass
class AutoencoderModel:
    config: AutoencoderConfig
    params: dict
    normalization: str = ''

    def lstm(self, prefix):
        return LstmLayerParams(
            W=self.params[f'{prefix}.W'],
            U=self.params[f'{prefix}.U'],
            b=self.params[f'{prefix}.b'],
        )

    def dense(self, prefix):
        return DenseParams(
            W=self.params[f'{prefix}.W'],
            b=self.params[f'{prefix}.b'],
        )


@dataclass
class TrainReport:
    variant: str
    seed: int
    train_loss: list = field(default_factory=list)
    holdout_loss: list = field(default_factory=list)
    final_epoch: int = 0
    wall_time: float = 0.0
    train_users: int = 0
    holdout_users: int = 0

    def to_dict(self):
        data = asdict(self)
        data['timing'] = {'wall_time_seconds': data.pop('wall_time')}
        return data


# Layers

def lstm_forward(layer, sequence, return_sequence=True):
    """Run an LSTM over `sequence` (T x input or N x T x input).

    h_0 = c_0 = 0. Returns the hidden states (N x T x H, or N x H for the
    last step only) and the cache lstm_backward needs.
    """
    x = np.ascontiguousarray(sequence, dtype=np.float64)
    batched = x.ndim == 3
    if not batched:
        x = x[np.newaxis]
    if x.ndim != 3:
        raise ShapeError(f'LSTM input must be 2-D or 3-D, got {x.shape}')
    n, steps, features = x.shape
    if steps < 1:
        raise ShapeError('LSTM input needs at least one time step')
    if features != layer.input_size:
        raise ShapeError(
            f'LSTM expects {layer.input_size} input features, got {features}'
        )
    h_size = layer.hidden_size
    # Input projections for every step at once; recurrence adds h U.
    projected = matmul(x.reshape(n * steps, features), layer.W)
    projected = projected.reshape(n, steps, 4 * h_size) + layer.b

    gates = np.empty((n, steps, 4 * h_size))
    cells = np.empty((n, steps, h_size))
    hidden = np.empty((n, steps, h_size))
    h = np.zeros((n, h_size))
    c = np.zeros((n, h_size))
    for t in range(steps):
        z = projected[:, t] + matmul(h, layer.U)
        i = expit(z[:, :h_size])
        f = expit(z[:, h_size:2 * h_size])
        o = expit(z[:, 2 * h_size:3 * h_size])
        g = np.tanh(z[:, 3 * h_size:])
        c = f * c + i * g
        h = o * np.tanh(c)
        gates[:, t] = np.concatenate([i, f, o, g], axis=1)
        cells[:, t] = c
        hidden[:, t] = h

    cache = LstmCache(
        inputs=x,
        gates=gates,
        cells=cells,
        hidden=hidden,
        return_sequence=return_sequence,
    )
    output = hidden if return_sequence else hidden[:, -1]
    if not batched:
        output = output[0]
    return output, cache


def lstm_backward(layer, cache, upstream):
    """Backpropagate through time.

    `upstream` matches the forward output. Returns a dict of gradients
    keyed W, U, b and the gradient with respect to the input sequence.
    """
    if cache is None:
        raise ShapeError('lstm_backward needs the cache of a forward pass')
    x = cache.inputs
    n, steps, _ = x.shape
    h_size = layer.hidden_size
    grad = np.asarray(upstream, dtype=np.float64)
    if cache.return_sequence:
        d_hidden = grad.reshape(n, steps, h_size)
    else:
        d_hidden = np.zeros((n, steps, h_size))
        d_hidden[:, -1] = grad.reshape(n, h_size)

    d_W = np.zeros_like(layer.W)
    d_U = np.zeros_like(layer.U)
    d_b = np.zeros_like(layer.b)
    d_x = np.empty_like(x)
    dh_next = np.zeros((n, h_size))
    dc_next = np.zeros((n, h_size))
    for t in reversed(range(steps)):
        gates = cache.gates[:, t]
        i = gates[:, :h_size]
        f = gates[:, h_size:2 * h_size]
        o = gates[:, 2 * h_size:3 * h_size]
        g = gates[:, 3 * h_size:]
        c = cache.cells[:, t]
        c_prev = cache.cells[:, t - 1] if t > 0 else np.zeros_like(c)
        h_prev = cache.hidden[:, t - 1] if t > 0 else np.zeros_like(c)

        dh = d_hidden[:, t] + dh_next
        tanh_c = np.tanh(c)
        do = dh * tanh_c
        dc = dh * o * (1.0 - tanh_c ** 2) + dc_next
        di = dc * g
        dg = dc * i
        df = dc * c_prev
        dz = np.concatenate([
            di * i * (1.0 - i),
            df * f * (1.0 - f),
            do * o * (1.0 - o),
            dg * (1.0 - g ** 2),
        ], axis=1)

        d_W += matmul(x[:, t].T, dz)
        d_U += matmul(h_prev.T, dz)
        d_b += dz.sum(axis=0)
        d_x[:, t] = matmul(dz, layer.W.T)
        dh_next = matmul(dz, layer.U.T)
        dc_next = dc * f

    return {'W': d_W, 'U': d_U, 'b': d_b}, d_x


def dense_forward(layer, inputs):
    if inputs.shape[-1] != layer.W.shape[0]:
        raise ShapeError(
            f'dense layer expects {layer.W.shape[0]} inputs, '
            f'got {inputs.shape[-1]}'
        )
    output = np.tanh(matmul(inputs, layer.W) + layer.b)
    return output, (inputs, output)


def dense_backward(layer, cache, upstream):
    inputs, output = cache
    dz = upstream * (1.0 - output ** 2)
    grads = {'W': matmul(inputs.T, dz), 'b': dz.sum(axis=0)}
    return grads, matmul(dz, layer.W.T)


# Model

def _xavier(rng, fan_in, fan_out, shape):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def _init_lstm(rng, input_size, hidden_size):
    b = np.zeros(4 * hidden_size)
    b[hidden_size:2 * hidden_size] = FORGET_BIAS
    return {
        'W': _xavier(
            rng, input_size, 4 * hidden_size, (input_size, 4 * hidden_size)
        ),
        'U': _xavier(
            rng, hidden_size, 4 * hidden_size, (hidden_size, 4 * hidden_size)
        ),
        'b': b,
    }


def _init_dense(rng, fan_in, fan_out):
    return {
        'W': _xavier(rng, fan_in, fan_out, (fan_in, fan_out)),
        'b': np.zeros(fan_out),
    }


def init_model(config, normalization=''):
    """Xavier-uniform weights from the config seed; forget bias 1."""
    if config.input_dim is None or config.seq_len is None:
        raise ConfigError('resolve the config against data before init')
    rng = seeded_rng(config.seed)
    blocks = {'enc': _init_lstm(rng, config.input_dim, 1)}
    if config.variant == 'vec':
        blocks['enc_dense'] = _init_dense(
            rng, config.seq_len, config.latent_dim
        )
        blocks['dec_dense'] = _init_dense(
            rng, config.latent_dim, config.seq_len
        )
    blocks['dec'] = _init_lstm(rng, 1, config.input_dim)
    params = {
        f'{prefix}.{name}': value
        for prefix, block in blocks.items()
        for name, value in block.items()
    }
    return AutoencoderModel(
        config=config, params=params, normalization=normalization
    )


def _check_batch(model, batch):
    batch = np.ascontiguousarray(batch, dtype=np.float64)
    if batch.ndim != 3:
        raise ShapeError(f'batch must be N x T x D, got {batch.shape}')
    _, steps, features = batch.shape
    if steps != model.config.seq_len:
        raise ShapeError(
            f'model expects T={model.config.seq_len}, batch has T={steps}'
        )
    if features != model.config.input_dim:
        raise ShapeError(
            f'model expects D={model.config.input_dim}, '
            f'batch has D={features}'
        )
    return batch


def _encode(model, batch):
    caches = {}
    series, caches['enc'] = lstm_forward(model.lstm('enc'), batch)
    if model.config.variant == 'uts':
        return series, caches
    flat = series.reshape(series.shape[0], -1)
    latent, caches['enc_dense'] = dense_forward(
        model.dense('enc_dense'), flat
    )
    return latent, caches


def _decode(model, latent, caches):
    if model.config.variant == 'uts':
        decoder_input = latent
    else:
        expanded, caches['dec_dense'] = dense_forward(
            model.dense('dec_dense'), latent
        )
        decoder_input = expanded[..., np.newaxis]
    reconstruction, caches['dec'] = lstm_forward(
        model.lstm('dec'), decoder_input
    )
    return reconstruction


def forward_autoencoder(model, batch):
    """Return (latent, reconstruction) for an N x T x D batch."""
    batch = _check_batch(model, batch)
    latent, caches = _encode(model, batch)
    reconstruction = _decode(model, latent, caches)
    return latent, reconstruction


def mse_loss(reconstruction, target):
    reconstruction = np.asarray(reconstruction, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if reconstruction.shape != target.shape:
        raise ShapeError(
            f'reconstruction {reconstruction.shape} vs target {target.shape}'
        )
    return float(np.mean((reconstruction - target) ** 2))


def loss_and_gradients(model, batch):
    """MSE reconstruction loss and its gradient for every parameter."""
    batch = _check_batch(model, batch)
    latent, caches = _encode(model, batch)
    reconstruction = _decode(model, latent, caches)
    loss = mse_loss(reconstruction, batch)

    grads = {}
    d_recon = 2.0 * (reconstruction - batch) / batch.size
    layer_grads, d_input = lstm_backward(
        model.lstm('dec'), caches['dec'], d_recon
    )
    grads.update({f'dec.{k}': v for k, v in layer_grads.items()})
    if model.config.variant == 'vec':
        layer_grads, d_latent = dense_backward(
            model.dense('dec_dense'), caches['dec_dense'], d_input[..., 0]
        )
        grads.update({f'dec_dense.{k}': v for k, v in layer_grads.items()})
        layer_grads, d_flat = dense_backward(
            model.dense('enc_dense'), caches['enc_dense'], d_latent
        )
        grads.update({f'enc_dense.{k}': v for k, v in layer_grads.items()})
        d_series = d_flat[..., np.newaxis]
    else:
        d_series = d_input
    layer_grads, _ = lstm_backward(model.lstm('enc'), caches['enc'], d_series)
    grads.update({f'enc.{k}': v for k, v in layer_grads.items()})
    return loss, grads


def clip_gradients(grads, max_norm):
    """Scale all gradients together so their global L2 norm <= max_norm."""
    if max_norm is None:
        return grads, None
    norm = float(np.sqrt(sum(np.sum(g * g) for g in grads.values())))
    if norm > max_norm:
        scale = max_norm / norm
        grads = {name: g * scale for name, g in grads.items()}
    return grads, norm


def split_users(n_users, holdout_fraction, seed):
    """Seeded shuffle of user rows into (train, holdout) index arrays."""
    if n_users < 2:
        raise ConfigError('training needs at least two users')
    order = seeded_rng(seed).permutation(n_users)
    n_holdout = int(round(n_users * holdout_fraction))
    n_holdout = min(max(n_holdout, 1), n_users - 1)
    return np.sort(order[n_holdout:]), np.sort(order[:n_holdout])


def train(config, data):
    """Train full-batch for exactly `config.epochs` RMSProp steps."""
    if not data.normalized:
        raise NormalizationError('train on a normalized tensor')
    config = config.resolve(data.values)
    started = time.perf_counter()
    model = init_model(config, normalization=data.fingerprint)
    train_rows, holdout_rows = split_users(
        data.n_users, config.holdout_fraction, config.seed
    )
    train_batch = data.values[train_rows]
    holdout_batch = data.values[holdout_rows]
    report = TrainReport(
        variant=config.variant,
        seed=config.seed,
        train_users=len(train_rows),
        holdout_users=len(holdout_rows),
    )
    state = RmspropState(learning_rate=config.rate)
    params = model.params
    logger.info(
        'Training %s autoencoder: %d train / %d holdout users, '
        'T=%d, D=%d, %d epochs, lr=%g',
        config.variant, len(train_rows), len(holdout_rows),
        config.seq_len, config.input_dim, config.epochs, config.rate,
    )
    for epoch in range(1, config.epochs + 1):
        loss, grads = loss_and_gradients(model, train_batch)
        if not np.isfinite(loss):
            raise TrainingDivergedError(epoch, loss, 'training loss')
        grads, norm = clip_gradients(grads, config.clip_norm)
        if norm is not None and not np.isfinite(norm):
            raise TrainingDivergedError(
                epoch, loss, f'gradient norm {norm}'
            )
        params, state = rmsprop_step(params, grads, state)
        model = replace(model, params=params)
        _, holdout_recon = forward_autoencoder(model, holdout_batch)
        holdout = mse_loss(holdout_recon, holdout_batch)
        if not np.isfinite(holdout):
            raise TrainingDivergedError(epoch, holdout, 'holdout loss')
        report.train_loss.append(loss)
        report.holdout_loss.append(holdout)
        report.final_epoch = epoch
        logger.debug(
            'epoch %d: train %.6f holdout %.6f grad-norm %.4f',
            epoch, loss, holdout, norm or 0.0,
        )
    report.wall_time = time.perf_counter() - started
    if report.train_loss:
        logger.info(
            'Finished %s training: train MSE %.6f -> %.6f, holdout %.6f',
            config.variant, report.train_loss[0], report.train_loss[-1],
            report.holdout_loss[-1],
        )
    return model, report


def encode(model, data):
    """Encoder-only pass: N x T x 1 (uts) or N x L (vec)."""
    if not data.normalized:
        raise NormalizationError('encode a normalized tensor')
    if model.normalization and data.fingerprint != model.normalization:
        raise NormalizationError(
            'tensor was normalized with different statistics than the '
            'model was trained on'
        )
    batch = _check_batch(model, data.values)
    latent, _ = _encode(model, batch)
    return latent


# Checkpoints

def save_model(model, path):
    """Versioned checkpoint: magic, uint32 version, uint32 header length,
    JSON header (config, normalization fingerprint, parameter blocks),
    then each block as little-endian float64 in header order."""
    names = sorted(model.params)
    header = json.dumps({
        'config': asdict(model.config),
        'normalization': model.normalization,
        'blocks': [
            {'name': name, 'shape': list(model.params[name].shape)}
            for name in names
        ],
    }, sort_keys=True).encode('utf-8')
    with open(path, 'wb') as handle:
        handle.write(CHECKPOINT_MAGIC)
        handle.write(struct.pack('<II', CHECKPOINT_VERSION, len(header)))
        handle.write(header)
        for name in names:
            handle.write(
                np.ascontiguousarray(model.params[name], dtype='<f8').tobytes()
            )


def load_model(path):
    data = Path(path).read_bytes()
    if not data.startswith(CHECKPOINT_MAGIC):
        raise InputError(f'{path} is not an autoencoder checkpoint')
    offset = len(CHECKPOINT_MAGIC)
    version, header_size = struct.unpack_from('<II', data, offset)
    if version != CHECKPOINT_VERSION:
        raise InputError(f'{path}: unsupported checkpoint version {version}')
    offset += struct.calcsize('<II')
    header = json.loads(data[offset:offset + header_size].decode('utf-8'))
    offset += header_size
    params = {}
    for block in header['blocks']:
        shape = tuple(block['shape'])
        count = int(np.prod(shape))
        values = np.frombuffer(data, dtype='<f8', count=count, offset=offset)
        params[block['name']] = values.reshape(shape).astype(np.float64)
        offset += count * 8
    return AutoencoderModel(
        config=AutoencoderConfig(**header['config']),
        params=params,
        normalization=header['normalization'],
    )
