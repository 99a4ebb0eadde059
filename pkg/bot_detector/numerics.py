"""Dense float64 kernel, seeded random streams and the RMSProp optimizer."""
import logging
import zlib
from dataclasses import dataclass, field

import numpy as np

from .exceptions import NonFiniteGradientError, NumericalError, ShapeError

logger = logging.getLogger(__name__)

# Matrices are plain row-major float64 numpy arrays.
Matrix = np.ndarray

RMSPROP_RHO = 0.9
RMSPROP_EPSILON = 1e-8


def as_matrix(values):
    matrix = np.asarray(values, dtype=np.float64)
    if matrix.ndim != 2:
        raise ShapeError(f'expected a 2-D matrix, got shape {matrix.shape}')
    return matrix


def matmul(a, b):
    """Product of C-ordered copies, so the BLAS summation order depends on
    the shapes only and never on the memory layout of the operands."""
    if a.shape[-1] != b.shape[0]:
        raise ShapeError(
            f'cannot multiply {a.shape} by {b.shape}: '
            'inner dimensions differ'
        )
    return np.matmul(
        np.ascontiguousarray(a, dtype=np.float64),
        np.ascontiguousarray(b, dtype=np.float64),
    )


def seeded_rng(seed):
    """Return a generator backed by PCG64 (permuted congruential generator,
    64-bit output, 128-bit state).

    The stream for a given seed is fixed by numpy's PCG64 specification:
    multiplier 0x2360ed051fc65da44385df649fccf645 and the XSL-RR output
    permutation, so identical seeds give identical draws on every platform.
    """
    return np.random.Generator(np.random.PCG64(seed))


def derive_seed(seed, *keys):
    """Derive an independent child seed from `seed` and hashable keys."""
    entropy = [int(seed)]
    for key in keys:
        if isinstance(key, str):
            key = zlib.crc32(key.encode('utf-8'))
        entropy.append(int(key))
    return int(np.random.SeedSequence(entropy).generate_state(1)[0])


@dataclass
class RmspropState:
    learning_rate: float
    rho: float = RMSPROP_RHO
    epsilon: float = RMSPROP_EPSILON
    accumulators: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 0.0 < self.rho < 1.0:
            raise NumericalError(f'rho must lie in (0, 1), got {self.rho}')
        if self.epsilon <= 0.0:
            raise NumericalError(
                f'epsilon must be positive, got {self.epsilon}'
            )


def rmsprop_step(params, grads, state):
    """Apply one RMSProp update and return new params and state.

    v <- rho * v + (1 - rho) * g**2
    theta <- theta - lr * g / (sqrt(v) + eps)
    """
    for name, grad in grads.items():
        if name not in params:
            raise ShapeError(f'gradient for unknown parameter {name!r}')
        if grad.shape != params[name].shape:
            raise ShapeError(
                f'gradient shape {grad.shape} does not match parameter '
                f'{name!r} of shape {params[name].shape}'
            )
        if not np.all(np.isfinite(grad)):
            raise NonFiniteGradientError(name)

    new_params = {}
    accumulators = {}
    for name, value in params.items():
        grad = grads.get(name)
        previous = state.accumulators.get(name)
        if previous is None:
            previous = np.zeros_like(value)
        if grad is None:
            new_params[name] = value
            accumulators[name] = previous
            continue
        v = state.rho * previous + (1.0 - state.rho) * grad * grad
        new_params[name] = value - state.learning_rate * grad / (
            np.sqrt(v) + state.epsilon
        )
        accumulators[name] = v

    new_state = RmspropState(
        learning_rate=state.learning_rate,
        rho=state.rho,
        epsilon=state.epsilon,
        accumulators=accumulators,
    )
    return new_params, new_state


def finite_diff_grad(loss_fn, params, h=1e-5):
    """Central-difference gradient of a scalar loss at `params`."""
    if h <= 0:
        raise NumericalError(f'step h must be positive, got {h}')
    theta = np.array(params, dtype=np.float64)
    flat = theta.reshape(-1)
    grad = np.zeros_like(flat)
    for i in range(flat.size):
        original = flat[i]
        flat[i] = original + h
        plus = loss_fn(theta)
        flat[i] = original - h
        minus = loss_fn(theta)
        flat[i] = original
        if not (np.isfinite(plus) and np.isfinite(minus)):
            raise NumericalError(
                f'non-finite loss while perturbing coordinate {i}'
            )
        grad[i] = (plus - minus) / (2.0 * h)
    return grad.reshape(theta.shape)
