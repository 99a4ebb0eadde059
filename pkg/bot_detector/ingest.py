"""Tweet activity and ground-truth label ingestion."""
import json
import logging
import math
from dataclasses import dataclass, field
from datetime import date, datetime, timezone
from pathlib import Path

import pandas as pd

from .exceptions import InputError, LabelError, MalformedRowError
from .numerics import seeded_rng

logger = logging.getLogger(__name__)

FEATURES = (
    'num_urls',
    'num_hashtags',
    'num_mentions',
    'retweet_count',
    'reply_count',
    'favorite_count',
)
COLUMNS = ('user_id', 'timestamp') + FEATURES

GENUINE = 0

CRESCI17_CLASS_NAMES = {
    0: 'genuine',
    1: 'social_spambots_1',
    2: 'social_spambots_2',
    3: 'social_spambots_3',
    4: 'fake_followers',
}

TIMESTAMP_FORMAT = '%Y-%m-%dT%H:%M:%SZ'


@dataclass(frozen=True)
class TweetRecord:
    user_id: str
    timestamp: datetime
    num_urls: int = 0
    num_hashtags: int = 0
    num_mentions: int = 0
    retweet_count: int = 0
    reply_count: int = 0
    favorite_count: int = 0

    @property
    def day(self):
        return self.timestamp.date()

    def counts(self, features=FEATURES):
        return tuple(getattr(self, name) for name in features)


@dataclass(frozen=True)
class UserTimeline:
    user_id: str
    tweets: tuple

    def __len__(self):
        return len(self.tweets)


@dataclass(frozen=True)
class DatasetManifest:
    user_ids: tuple
    day_min: date
    day_max: date
    tweet_counts: dict = field(default_factory=dict)
    supports: dict = field(default_factory=dict)

    @property
    def n_days(self):
        return (self.day_max - self.day_min).days + 1

    def to_dict(self):
        return {
            'user_ids': list(self.user_ids),
            'day_min': self.day_min.isoformat(),
            'day_max': self.day_max.isoformat(),
            'tweet_counts': dict(self.tweet_counts),
            'supports': {str(k): v for k, v in self.supports.items()},
        }

    @classmethod
    def from_dict(cls, data):
        return cls(
            user_ids=tuple(data['user_ids']),
            day_min=date.fromisoformat(data['day_min']),
            day_max=date.fromisoformat(data['day_max']),
            tweet_counts=dict(data.get('tweet_counts', {})),
            supports={
                int(k): v for k, v in data.get('supports', {}).items()
            },
        )


@dataclass(frozen=True)
class LabelTable:
    classes: dict
    names: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.classes)

    def __getitem__(self, user_id):
        return self.classes[user_id]

    def __contains__(self, user_id):
        return user_id in self.classes

    @property
    def class_ids(self):
        return sorted(set(self.classes.values()))

    def supports(self, users=None):
        users = self.classes if users is None else users
        counts = {}
        for user_id in users:
            class_id = self.classes[user_id]
            counts[class_id] = counts.get(class_id, 0) + 1
        return dict(sorted(counts.items()))

    def restrict(self, users):
        missing = [u for u in users if u not in self.classes]
        if missing:
            raise LabelError(
                f'{len(missing)} users have no label, e.g. {missing[0]!r}'
            )
        return LabelTable(
            classes={u: self.classes[u] for u in users},
            names=dict(self.names),
        )

    def binarize(self):
        return LabelTable(
            classes={
                u: int(c != GENUINE) for u, c in self.classes.items()
            },
            names={0: 'genuine', 1: 'bot'},
        )

    def name_of(self, class_id):
        return self.names.get(class_id, str(class_id))


def parse_timestamp(raw):
    text = str(raw).strip()
    if text.endswith('Z'):
        text = text[:-1] + '+00:00'
    parsed = datetime.fromisoformat(text)
    if parsed.tzinfo is None:
        parsed = parsed.replace(tzinfo=timezone.utc)
    return parsed.astimezone(timezone.utc).replace(microsecond=0)


def format_timestamp(moment):
    return moment.astimezone(timezone.utc).strftime(TIMESTAMP_FORMAT)


def _detect_format(path, fmt):
    if fmt is not None:
        fmt = fmt.lower()
    else:
        suffix = Path(path).suffix.lower()
        fmt = 'csv' if suffix == '.csv' else 'jsonl'
    if fmt not in ('jsonl', 'csv'):
        raise InputError(f'unsupported tweet format {fmt!r}')
    return fmt


def _record_from_row(row, path, line):
    missing = [name for name in COLUMNS if name not in row]
    if missing:
        raise MalformedRowError(path, line, f'missing fields {missing}')
    user_id = str(row['user_id']).strip()
    if not user_id:
        raise MalformedRowError(path, line, 'empty user_id')
    try:
        timestamp = parse_timestamp(row['timestamp'])
    except (TypeError, ValueError) as exc:
        raise MalformedRowError(
            path, line, f'bad timestamp {row["timestamp"]!r}'
        ) from exc
    counts = {}
    for name in FEATURES:
        value = row[name]
        try:
            number = float(value)
        except (TypeError, ValueError) as exc:
            raise MalformedRowError(
                path, line, f'{name} is not a number: {value!r}'
            ) from exc
        if not math.isfinite(number) or number != int(number):
            raise MalformedRowError(
                path, line, f'{name} is not an integer: {value!r}'
            )
        counts[name] = int(number)
    negative = [name for name, value in counts.items() if value < 0]
    if negative:
        logger.warning(
            '%s:%d: rejected row with negative counts %s',
            path, line, negative,
        )
        return None
    return TweetRecord(user_id=user_id, timestamp=timestamp, **counts)


def _iter_jsonl_rows(path):
    with open(path, encoding='utf-8') as handle:
        for line, text in enumerate(handle, start=1):
            if not text.strip():
                continue
            try:
                row = json.loads(text)
            except json.JSONDecodeError as exc:
                raise MalformedRowError(path, line, exc.msg) from exc
            if not isinstance(row, dict):
                raise MalformedRowError(path, line, 'expected a JSON object')
            yield line, row


def _iter_csv_rows(path):
    if Path(path).stat().st_size == 0:
        return
    frame = pd.read_csv(path, dtype=str, keep_default_na=False)
    # Header is line 1, so data rows start at line 2.
    for offset, row in enumerate(frame.to_dict(orient='records')):
        yield offset + 2, row


def parse_tweets(path, fmt=None):
    """Read per-tweet entity counts from a JSONL or CSV file.

    Rows with negative counts are rejected with a warning; any other
    malformed row raises MalformedRowError naming its line.
    """
    path = Path(path)
    if not path.exists():
        raise InputError(f'tweet file {path} does not exist')
    fmt = _detect_format(path, fmt)
    rows = _iter_jsonl_rows(path) if fmt == 'jsonl' else _iter_csv_rows(path)
    records = []
    rejected = 0
    for line, row in rows:
        record = _record_from_row(row, path, line)
        if record is None:
            rejected += 1
            continue
        records.append(record)
    logger.info(
        'Parsed %d tweets from %s (%d rejected)', len(records), path, rejected
    )
    return records


def write_tweets(records, path, fmt=None):
    path = Path(path)
    fmt = _detect_format(path, fmt)
    rows = [
        {
            'user_id': record.user_id,
            'timestamp': format_timestamp(record.timestamp),
            **{name: getattr(record, name) for name in FEATURES},
        }
        for record in records
    ]
    if fmt == 'csv':
        pd.DataFrame(rows, columns=list(COLUMNS)).to_csv(path, index=False)
        return
    with open(path, 'w', encoding='utf-8') as handle:
        for row in rows:
            handle.write(json.dumps(row) + '\n')


def build_timelines(records):
    """Group records per user, sorted by timestamp, in user_id order."""
    if not records:
        raise InputError('cannot build timelines from an empty record set')
    grouped = {}
    for record in records:
        grouped.setdefault(record.user_id, []).append(record)
    timelines = []
    for user_id in sorted(grouped):
        tweets = sorted(grouped[user_id], key=lambda r: r.timestamp)
        timelines.append(UserTimeline(user_id=user_id, tweets=tuple(tweets)))
    days = [record.day for record in records]
    manifest = DatasetManifest(
        user_ids=tuple(t.user_id for t in timelines),
        day_min=min(days),
        day_max=max(days),
        tweet_counts={t.user_id: len(t) for t in timelines},
    )
    return timelines, manifest


def load_labels(path, names=None):
    """Read a `user_id,class_id` CSV into a LabelTable."""
    path = Path(path)
    if not path.exists():
        raise InputError(f'label file {path} does not exist')
    frame = pd.read_csv(path, dtype=str, keep_default_na=False)
    if list(frame.columns[:2]) != ['user_id', 'class_id']:
        raise LabelError(
            f'{path}: expected header user_id,class_id, '
            f'got {list(frame.columns)}'
        )
    classes = {}
    for offset, (user_id, raw) in enumerate(
        zip(frame['user_id'], frame['class_id'])
    ):
        line = offset + 2
        user_id = user_id.strip()
        try:
            class_id = int(raw)
        except ValueError as exc:
            raise LabelError(f'{path}:{line}: bad class id {raw!r}') from exc
        if class_id < 0:
            raise LabelError(f'{path}:{line}: negative class id {class_id}')
        if user_id in classes:
            raise LabelError(f'{path}:{line}: duplicate user {user_id!r}')
        classes[user_id] = class_id
    present = set(classes.values())
    if present and present != set(range(max(present) + 1)):
        gaps = sorted(set(range(max(present) + 1)) - present)
        raise LabelError(
            f'{path}: class ids must be dense from 0; missing {gaps}'
        )
    table = LabelTable(classes=classes, names=dict(names or {}))
    logger.info('Loaded %d labels, supports %s', len(table), table.supports())
    return table


def write_labels(labels, path):
    frame = pd.DataFrame(
        sorted(labels.classes.items()), columns=['user_id', 'class_id']
    )
    frame.to_csv(path, index=False)


def downsample_balanced(users, labels, keep_classes, seed):
    """Keep `keep_classes` only, sampling each down to the minority support.

    Sampling is uniform without replacement from a PCG64 stream seeded
    with `seed`; the returned users keep their input order.
    """
    keep_classes = sorted(set(keep_classes))
    unknown = set(keep_classes) - set(labels.class_ids)
    if unknown:
        raise LabelError(f'classes {sorted(unknown)} are not in the labels')
    members = {class_id: [] for class_id in keep_classes}
    for user_id in users:
        class_id = labels[user_id]
        if class_id in members:
            members[class_id].append(user_id)
    empty = [c for c, group in members.items() if not group]
    if empty:
        raise LabelError(f'kept classes {empty} have no users')
    minority = min(len(group) for group in members.values())
    rng = seeded_rng(seed)
    selected = set()
    for class_id in keep_classes:
        group = members[class_id]
        if len(group) > minority:
            picks = rng.choice(len(group), size=minority, replace=False)
            group = [group[i] for i in sorted(picks)]
        selected.update(group)
    kept = [user_id for user_id in users if user_id in selected]
    logger.info(
        'Balanced %d users to %d (%d per class, seed %d)',
        len(users), len(kept), minority, seed,
    )
    return kept
