"""Global statistics of encoded univariate series."""
import logging
from dataclasses import dataclass

import numpy as np
import pandas as pd
from scipy import stats

from .exceptions import ShapeError

logger = logging.getLogger(__name__)

AUTOCORRELATION_LAGS = (1, 7, 30)


def _longest_run(flags):
    best = run = 0
    for flag in flags:
        run = run + 1 if flag else 0
        best = max(best, run)
    return best


def _autocorrelation(x, lag):
    n = x.size
    if lag >= n:
        return 0.0
    if np.ptp(x) == 0:
        return 0.0
    centered = x - x.mean()
    variance = np.mean(centered ** 2)
    products = np.sum(centered[:n - lag] * centered[lag:])
    return float(products / ((n - lag) * variance))


def _skewness(x):
    if np.ptp(x) == 0:
        return 0.0
    return float(stats.skew(x, bias=False))


def _kurtosis(x):
    if np.ptp(x) == 0:
        return 0.0
    return float(stats.kurtosis(x, fisher=True, bias=False))


def _compare_to_mean(x):
    """(above, below) masks; a constant series is neither."""
    if np.ptp(x) == 0:
        flat = np.zeros(x.size, dtype=bool)
        return flat, flat
    mean = x.mean()
    return x > mean, x < mean


def _mean_crossings(x):
    above, _ = _compare_to_mean(x)
    return float(np.count_nonzero(np.diff(above.astype(np.int8))))


CATALOG = (
    ('mean', lambda x: float(np.mean(x))),
    ('standard_deviation', lambda x: float(np.std(x))),
    ('variance', lambda x: float(np.var(x))),
    ('skewness', _skewness),
    ('kurtosis', _kurtosis),
    ('minimum', lambda x: float(np.min(x))),
    ('maximum', lambda x: float(np.max(x))),
    ('median', lambda x: float(np.median(x))),
    ('abs_energy', lambda x: float(np.dot(x, x))),
    ('mean_abs_change', lambda x: float(np.mean(np.abs(np.diff(x))))),
    ('mean_change', lambda x: float(np.mean(np.diff(x)))),
    ('count_above_mean',
     lambda x: float(np.count_nonzero(_compare_to_mean(x)[0]))),
    ('count_below_mean',
     lambda x: float(np.count_nonzero(_compare_to_mean(x)[1]))),
    ('number_mean_crossings', _mean_crossings),
    ('longest_strike_above_mean',
     lambda x: float(_longest_run(_compare_to_mean(x)[0]))),
    ('longest_strike_below_mean',
     lambda x: float(_longest_run(_compare_to_mean(x)[1]))),
) + tuple(
    (f'autocorrelation_lag_{lag}',
     lambda x, lag=lag: _autocorrelation(x, lag))
    for lag in AUTOCORRELATION_LAGS
)


@dataclass(frozen=True)
class FeatureCatalog:
    entries: tuple = CATALOG

    def __post_init__(self):
        names = self.names
        if len(set(names)) != len(names):
            raise ValueError(f'duplicate catalog names in {names}')

    @property
    def names(self):
        return tuple(name for name, _ in self.entries)

    def __len__(self):
        return len(self.entries)

    def compute(self, series):
        return [function(series) for _, function in self.entries]


DEFAULT_CATALOG = FeatureCatalog()


@dataclass(frozen=True)
class GlobalFeatureVector:
    user_ids: tuple
    names: tuple
    values: np.ndarray

    def to_frame(self):
        return pd.DataFrame(
            self.values,
            index=pd.Index(self.user_ids, name='user_id'),
            columns=list(self.names),
        )


def _as_series_matrix(latent):
    latent = np.asarray(latent, dtype=np.float64)
    if latent.ndim == 3:
        if latent.shape[2] != 1:
            raise ShapeError(
                f'expected a univariate latent N x T x 1, got {latent.shape}'
            )
        latent = latent[:, :, 0]
    if latent.ndim != 2:
        raise ShapeError(f'expected N x T series, got {latent.shape}')
    return latent


def extract_global_features(latent_uts, user_ids, catalog=DEFAULT_CATALOG):
    series = _as_series_matrix(latent_uts)
    if series.shape[1] < 2:
        raise ShapeError('global features need series of length >= 2')
    if len(user_ids) != series.shape[0]:
        raise ShapeError(
            f'{series.shape[0]} series but {len(user_ids)} user ids'
        )
    values = np.array(
        [catalog.compute(row) for row in series], dtype=np.float64
    ).reshape(series.shape[0], len(catalog))
    # Degenerate statistics are defined as 0 above; this only catches
    # overflow on extreme inputs.
    values = np.nan_to_num(values, nan=0.0, posinf=0.0, neginf=0.0)
    logger.info(
        'Extracted %d global features for %d series of length %d',
        len(catalog), series.shape[0], series.shape[1],
    )
    return GlobalFeatureVector(
        user_ids=tuple(user_ids), names=catalog.names, values=values
    )


def zscore_standardize(features):
    values = features.values
    means = values.mean(axis=0)
    stds = values.std(axis=0)
    constant = np.ptp(values, axis=0) == 0
    safe = np.where(constant, 1.0, stds)
    standardized = np.where(constant, 0.0, (values - means) / safe)
    return GlobalFeatureVector(
        user_ids=features.user_ids,
        names=features.names,
        values=standardized,
    )


def concat_features(globals_, vec_latent):
    """Horizontally stack global features (first) and vectorial latents."""
    latent = np.asarray(vec_latent, dtype=np.float64)
    if latent.ndim != 2:
        raise ShapeError(f'vectorial latent must be N x L, got {latent.shape}')
    values = globals_.values
    if values.size == 0:
        values = values.reshape(latent.shape[0], 0)
    if values.shape[0] != latent.shape[0]:
        raise ShapeError(
            f'{values.shape[0]} feature rows vs {latent.shape[0]} latents'
        )
    return np.hstack([values, latent])


def write_global_features(features, path):
    features.to_frame().to_csv(path, float_format='%.17g')


def read_global_features(path):
    frame = pd.read_csv(
        path, dtype={'user_id': str}, float_precision='round_trip'
    ).set_index('user_id')
    return GlobalFeatureVector(
        user_ids=tuple(frame.index),
        names=tuple(frame.columns),
        values=frame.to_numpy(dtype=np.float64),
    )
