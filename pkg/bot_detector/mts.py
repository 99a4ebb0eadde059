"""Daily multivariate time series with the -1 inactivity sentinel."""
import hashlib
import json
import logging
import struct
from dataclasses import dataclass, replace
from datetime import date
from pathlib import Path

import numpy as np

from .exceptions import (
    ConfigError,
    InputError,
    NormalizationError,
    ShapeError,
)
from .ingest import FEATURES

logger = logging.getLogger(__name__)

SENTINEL = -1.0
GRANULARITIES = ('daily',)

TENSOR_MAGIC = b'BDMTS\x00'
TENSOR_VERSION = 2


@dataclass(frozen=True)
class MtsTensor:
    """N x T x D daily values.

    `active` marks the (user, day) cells with at least one tweet. Tensors
    built without it derive it from the sentinel; a normalized tensor keeps
    the mask of its raw source, since scaling with foreign statistics can
    map an active cell onto -1.
    """
    values: np.ndarray
    user_ids: tuple
    feature_names: tuple
    day_min: date
    normalized: bool = False
    fingerprint: str = ''
    active: np.ndarray = None

    def __post_init__(self):
        values = np.ascontiguousarray(self.values, dtype=np.float64)
        object.__setattr__(self, 'values', values)
        if values.ndim != 3:
            raise ShapeError(
                f'MTS values must be N x T x D, got {values.shape}'
            )
        n_users, _, n_features = values.shape
        if n_users != len(self.user_ids):
            raise ShapeError(
                f'{n_users} rows but {len(self.user_ids)} user ids'
            )
        if n_features != len(self.feature_names):
            raise ShapeError(
                f'{n_features} columns but {len(self.feature_names)} names'
            )
        if self.active is not None:
            active = np.ascontiguousarray(self.active, dtype=bool)
            if active.shape != values.shape[:2]:
                raise ShapeError(
                    f'activity mask {active.shape} does not match '
                    f'{values.shape[:2]}'
                )
            object.__setattr__(self, 'active', active)

    @property
    def shape(self):
        return self.values.shape

    @property
    def n_users(self):
        return self.values.shape[0]

    @property
    def n_days(self):
        return self.values.shape[1]

    @property
    def n_features(self):
        return self.values.shape[2]

    def active_mask(self):
        """True for (user, day) cells holding activity, False for sentinels."""
        if self.active is not None:
            return self.active
        return ~np.all(self.values == SENTINEL, axis=-1)

    def subset_users(self, user_ids):
        index = {user_id: i for i, user_id in enumerate(self.user_ids)}
        try:
            rows = [index[user_id] for user_id in user_ids]
        except KeyError as exc:
            raise InputError(f'user {exc.args[0]!r} not in tensor') from exc
        return replace(
            self,
            values=self.values[rows],
            user_ids=tuple(user_ids),
            active=self.active_mask()[rows],
        )


@dataclass(frozen=True)
class NormalizationParams:
    feature_names: tuple
    mins: tuple
    maxs: tuple

    def __post_init__(self):
        for name, low, high in zip(self.feature_names, self.mins, self.maxs):
            if low > high:
                raise NormalizationError(
                    f'min {low} exceeds max {high} for feature {name!r}'
                )

    def to_dict(self):
        return {
            'feature_names': list(self.feature_names),
            'mins': list(self.mins),
            'maxs': list(self.maxs),
        }

    @classmethod
    def from_dict(cls, data):
        return cls(
            feature_names=tuple(data['feature_names']),
            mins=tuple(float(v) for v in data['mins']),
            maxs=tuple(float(v) for v in data['maxs']),
        )

    def fingerprint(self):
        payload = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(payload.encode('utf-8')).hexdigest()


def extract_mts(timelines, manifest, features=FEATURES, granularity='daily'):
    """Aggregate tweets into an N x T x D tensor of daily sums.

    A day with at least one tweet stores the per-feature sums (possibly
    zero); a day without tweets stores SENTINEL in every feature.
    """
    if granularity not in GRANULARITIES:
        raise ConfigError(f'unsupported granularity {granularity!r}')
    features = tuple(features)
    if not features:
        raise ConfigError('at least one feature is required')
    unknown = [name for name in features if name not in FEATURES]
    if unknown:
        raise ConfigError(f'unknown features {unknown}')
    if len(set(features)) != len(features):
        raise ConfigError(f'duplicate features in {features}')

    by_user = {timeline.user_id: timeline for timeline in timelines}
    n_days = manifest.n_days
    sums = np.zeros((len(manifest.user_ids), n_days, len(features)))
    active = np.zeros((len(manifest.user_ids), n_days), dtype=bool)
    for row, user_id in enumerate(manifest.user_ids):
        tweets = by_user[user_id].tweets if user_id in by_user else ()
        if not tweets:
            continue
        days = np.array(
            [(tweet.day - manifest.day_min).days for tweet in tweets]
        )
        if days.min() < 0 or days.max() >= n_days:
            raise InputError(
                f'user {user_id!r} has tweets outside '
                f'{manifest.day_min}..{manifest.day_max}'
            )
        counts = np.array(
            [tweet.counts(features) for tweet in tweets], dtype=np.float64
        )
        np.add.at(sums[row], days, counts)
        active[row, days] = True

    values = np.where(active[..., np.newaxis], sums, SENTINEL)
    logger.info(
        'Extracted MTS for %d users x %d days x %d features '
        '(%.1f%% active cells)',
        values.shape[0], values.shape[1], values.shape[2],
        100.0 * active.mean() if active.size else 0.0,
    )
    return MtsTensor(
        values=values,
        user_ids=tuple(manifest.user_ids),
        feature_names=features,
        day_min=manifest.day_min,
        active=active,
    )


def select_features(mts, names):
    names = tuple(names)
    missing = [name for name in names if name not in mts.feature_names]
    if missing or not names:
        raise ConfigError(f'cannot select features {names}')
    columns = [mts.feature_names.index(name) for name in names]
    return replace(
        mts, values=mts.values[:, :, columns], feature_names=names
    )


def append_feature(mts, name, column):
    """Add a raw feature; `column` is N x T and is masked on inactive days."""
    if mts.normalized:
        raise NormalizationError('append features before normalizing')
    if name in mts.feature_names:
        raise ConfigError(f'feature {name!r} already present')
    column = np.asarray(column, dtype=np.float64)
    if column.shape != mts.values.shape[:2]:
        raise ShapeError(
            f'feature column {column.shape} does not match '
            f'{mts.values.shape[:2]}'
        )
    if np.any(column < 0):
        raise InputError('raw feature values must be non-negative')
    column = np.where(mts.active_mask(), column, SENTINEL)
    values = np.concatenate([mts.values, column[..., np.newaxis]], axis=2)
    return replace(
        mts, values=values, feature_names=mts.feature_names + (name,)
    )


def _scale(values, active, mins, maxs):
    spans = maxs - mins
    safe = np.where(spans > 0, spans, 1.0)
    scaled = np.where(spans > 0, (values - mins) / safe, 0.0)
    return np.where(active[..., np.newaxis], scaled, SENTINEL)


def minmax_normalize(mts):
    """Min-max scale each feature to [0, 1] using active cells only."""
    if mts.normalized:
        raise NormalizationError('tensor is already normalized')
    active = mts.active_mask()
    cells = mts.values[active]
    if cells.size:
        mins = cells.min(axis=0)
        maxs = cells.max(axis=0)
    else:
        mins = np.zeros(mts.n_features)
        maxs = np.zeros(mts.n_features)
    params = NormalizationParams(
        feature_names=mts.feature_names,
        mins=tuple(float(v) for v in mins),
        maxs=tuple(float(v) for v in maxs),
    )
    values = _scale(mts.values, active, mins, maxs)
    return (
        replace(
            mts,
            values=values,
            normalized=True,
            fingerprint=params.fingerprint(),
            active=active,
        ),
        params,
    )


def apply_normalization(mts, params):
    """Scale a raw tensor with given statistics; no clamping to [0, 1]."""
    if mts.normalized:
        raise NormalizationError('tensor is already normalized')
    if len(params.feature_names) != mts.n_features:
        raise ShapeError(
            f'normalization has {len(params.feature_names)} features, '
            f'tensor has {mts.n_features}'
        )
    if tuple(params.feature_names) != tuple(mts.feature_names):
        raise ShapeError(
            f'normalization features {params.feature_names} do not match '
            f'{mts.feature_names}'
        )
    active = mts.active_mask()
    values = _scale(
        mts.values,
        active,
        np.asarray(params.mins),
        np.asarray(params.maxs),
    )
    return replace(
        mts,
        values=values,
        normalized=True,
        fingerprint=params.fingerprint(),
        active=active,
    )


def save_tensor(mts, path):
    """Write the flat binary tensor format.

    Layout: magic, uint32 version, uint32 header length, UTF-8 JSON header
    (n_users, n_days, n_features, feature_names, day_min, user_ids,
    normalized, fingerprint), then N*T*D little-endian float64 row-major,
    then the N*T activity mask as uint8.
    """
    header = json.dumps({
        'n_users': mts.n_users,
        'n_days': mts.n_days,
        'n_features': mts.n_features,
        'feature_names': list(mts.feature_names),
        'day_min': mts.day_min.isoformat(),
        'user_ids': list(mts.user_ids),
        'normalized': mts.normalized,
        'fingerprint': mts.fingerprint,
    }, sort_keys=True).encode('utf-8')
    with open(path, 'wb') as handle:
        handle.write(TENSOR_MAGIC)
        handle.write(struct.pack('<II', TENSOR_VERSION, len(header)))
        handle.write(header)
        handle.write(np.ascontiguousarray(mts.values, dtype='<f8').tobytes())
        handle.write(mts.active_mask().astype(np.uint8).tobytes())


def load_tensor(path):
    data = Path(path).read_bytes()
    if not data.startswith(TENSOR_MAGIC):
        raise InputError(f'{path} is not an MTS tensor file')
    offset = len(TENSOR_MAGIC)
    version, header_size = struct.unpack_from('<II', data, offset)
    if version != TENSOR_VERSION:
        raise InputError(f'{path}: unsupported tensor version {version}')
    offset += struct.calcsize('<II')
    header = json.loads(data[offset:offset + header_size].decode('utf-8'))
    offset += header_size
    shape = (header['n_users'], header['n_days'], header['n_features'])
    n_values = int(np.prod(shape))
    n_cells = shape[0] * shape[1]
    if len(data) - offset != 8 * n_values + n_cells:
        raise InputError(
            f'{path}: expected {n_values} values and {n_cells} mask '
            f'bytes, found {len(data) - offset} bytes'
        )
    body = np.frombuffer(data, dtype='<f8', count=n_values, offset=offset)
    mask = np.frombuffer(
        data, dtype=np.uint8, count=n_cells, offset=offset + 8 * n_values
    )
    return MtsTensor(
        values=body.reshape(shape).astype(np.float64),
        active=mask.reshape(shape[:2]).astype(bool),
        user_ids=tuple(header['user_ids']),
        feature_names=tuple(header['feature_names']),
        day_min=date.fromisoformat(header['day_min']),
        normalized=header['normalized'],
        fingerprint=header['fingerprint'],
    )


def save_params(params, path):
    Path(path).write_text(
        json.dumps(params.to_dict(), indent=2, sort_keys=True) + '\n',
        encoding='utf-8',
    )


def load_params(path):
    return NormalizationParams.from_dict(
        json.loads(Path(path).read_text(encoding='utf-8'))
    )
