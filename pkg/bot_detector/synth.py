"""Seeded synthetic populations of genuine users and coordinated botnets.

Genuine users each draw their own activity rate and per-feature count
rates, so they are heterogeneous. Bots copy the schedule and counts of
their botnet template with a little jitter, so each botnet is tight.
"""
import logging
from dataclasses import dataclass, field
from datetime import date, datetime, time, timedelta, timezone
from pathlib import Path

import numpy as np

from .exceptions import ConfigError
from .ingest import (
    FEATURES,
    GENUINE,
    LabelTable,
    TweetRecord,
    write_labels,
    write_tweets,
)
from .numerics import derive_seed, seeded_rng

logger = logging.getLogger(__name__)

SECONDS_PER_DAY = 24 * 60 * 60


@dataclass(frozen=True)
class BotTemplate:
    class_id: int
    count: int
    period: int = 1
    active_phases: tuple = (0,)
    tweets_per_day: int = 4
    feature_means: tuple = (0, 0, 0, 0, 0, 0)
    flip_probability: float = 0.01
    noise_scale: float = 0.3
    posting_hour: int = 9
    name: str = ''

    def __post_init__(self):
        if self.class_id <= GENUINE:
            raise ConfigError('bot class ids start at 1')
        if self.count < 0:
            raise ConfigError(f'template {self.class_id}: negative count')
        if self.period < 1 or not self.active_phases:
            raise ConfigError(f'template {self.class_id}: empty schedule')
        if any(not 0 <= p < self.period for p in self.active_phases):
            raise ConfigError(
                f'template {self.class_id}: phases outside the period'
            )
        if len(self.feature_means) != len(FEATURES):
            raise ConfigError(
                f'template {self.class_id}: need {len(FEATURES)} means'
            )
        if any(m < 0 for m in self.feature_means):
            raise ConfigError(f'template {self.class_id}: negative mean')
        if not 0.0 <= self.flip_probability < 0.5:
            raise ConfigError(
                f'template {self.class_id}: flip probability must lie '
                'in [0, 0.5)'
            )
        if self.noise_scale < 0 or self.tweets_per_day < 1:
            raise ConfigError(f'template {self.class_id}: bad jitter')
        if not 0 <= self.posting_hour < 24:
            raise ConfigError(f'template {self.class_id}: bad posting hour')

    def scheduled(self, day_index):
        return day_index % self.period in self.active_phases


# Both default botnets post five days a week on shifted weekdays, so their
# series share a shape and differ in which days and what they post.
DEFAULT_TEMPLATES = (
    BotTemplate(
        class_id=1,
        count=20,
        period=7,
        active_phases=(0, 1, 2, 3, 4),
        tweets_per_day=6,
        feature_means=(0, 1, 1, 5, 0, 0),
        posting_hour=8,
        name='retweet_botnet',
    ),
    BotTemplate(
        class_id=2,
        count=20,
        period=7,
        active_phases=(3, 4, 5, 6, 0),
        tweets_per_day=3,
        feature_means=(2, 3, 0, 0, 1, 2),
        posting_hour=17,
        name='link_botnet',
    ),
)


@dataclass(frozen=True)
class SynthConfig:
    n_days: int = 64
    start_date: date = date(2017, 1, 1)
    n_genuine: int = 40
    templates: tuple = DEFAULT_TEMPLATES
    activity_range: tuple = (0.05, 0.6)
    tweet_rate_range: tuple = (0.0, 3.0)
    # Scale of the per-user mean count of each feature per tweet.
    count_scales: tuple = (0.5, 0.8, 1.2, 2.0, 0.6, 2.5)
    seed: int = 42
    names: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.n_days < 2:
            raise ConfigError('synthetic datasets need at least two days')
        if self.n_genuine < 0:
            raise ConfigError('n_genuine must be non-negative')
        low, high = self.activity_range
        if not 0.0 < low <= high <= 1.0:
            raise ConfigError(f'bad activity range {self.activity_range}')
        low, high = self.tweet_rate_range
        if not 0.0 <= low <= high:
            raise ConfigError(f'bad tweet rate range {self.tweet_rate_range}')
        if len(self.count_scales) != len(FEATURES) or any(
            s < 0 for s in self.count_scales
        ):
            raise ConfigError('count_scales needs one non-negative scale '
                              'per feature')
        ids = [t.class_id for t in self.templates]
        if len(set(ids)) != len(ids):
            raise ConfigError('duplicate template class ids')
        if sorted(ids) != list(range(1, len(ids) + 1)):
            raise ConfigError('template class ids must be 1..k')

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        if 'start_date' in data:
            data['start_date'] = date.fromisoformat(data['start_date'])
        if 'templates' in data:
            data['templates'] = tuple(
                BotTemplate(**{
                    key: tuple(value) if isinstance(value, list) else value
                    for key, value in template.items()
                })
                for template in data['templates']
            )
        for key in ('activity_range', 'tweet_rate_range', 'count_scales'):
            if key in data:
                data[key] = tuple(data[key])
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(f'invalid synth config: {exc}') from exc

    def class_names(self):
        names = {GENUINE: 'genuine'}
        for template in self.templates:
            names[template.class_id] = (
                template.name or f'botnet_{template.class_id}'
            )
        names.update(self.names)
        return names


def _moment(start, day_index, seconds):
    day = start + timedelta(days=int(day_index))
    midnight = datetime.combine(day, time(0), tzinfo=timezone.utc)
    return midnight + timedelta(seconds=int(seconds))


def _ensure_active(rng, active):
    if not active.any():
        active[rng.integers(active.size)] = True
    return active


def _genuine_user(config, user_id, rng):
    activity = rng.uniform(*config.activity_range)
    tweet_rate = rng.uniform(*config.tweet_rate_range)
    means = rng.gamma(1.0, np.asarray(config.count_scales, dtype=float))
    active = _ensure_active(rng, rng.random(config.n_days) < activity)
    records = []
    for day_index in np.flatnonzero(active):
        n_tweets = 1 + rng.poisson(tweet_rate)
        seconds = np.sort(rng.integers(0, SECONDS_PER_DAY, size=n_tweets))
        counts = rng.poisson(means, size=(n_tweets, len(FEATURES)))
        for second, row in zip(seconds, counts):
            records.append(TweetRecord(
                user_id,
                _moment(config.start_date, day_index, second),
                *(int(v) for v in row),
            ))
    return records


def _bot_user(config, template, user_id, rng):
    scheduled = np.array(
        [template.scheduled(d) for d in range(config.n_days)]
    )
    flips = rng.random(config.n_days) < template.flip_probability
    active = _ensure_active(rng, scheduled ^ flips)
    means = np.asarray(template.feature_means, dtype=float)
    records = []
    for day_index in np.flatnonzero(active):
        n = template.tweets_per_day
        noise = np.rint(
            template.noise_scale * rng.standard_normal((n, len(FEATURES)))
        )
        counts = np.clip(means + noise, 0, None).astype(int)
        # Posts go out minutes apart starting at the template hour.
        offsets = template.posting_hour * 3600 + np.sort(
            rng.integers(0, 60 * 60, size=n)
        )
        for second, row in zip(offsets, counts):
            records.append(TweetRecord(
                user_id,
                _moment(config.start_date, day_index, second),
                *(int(v) for v in row),
            ))
    return records


def generate_dataset(config=None):
    """Return (records, labels) for a synthetic population."""
    config = config or SynthConfig()
    records = []
    classes = {}
    for index in range(config.n_genuine):
        user_id = f'genuine_{index:04d}'
        rng = seeded_rng(derive_seed(config.seed, GENUINE, index))
        records.extend(_genuine_user(config, user_id, rng))
        classes[user_id] = GENUINE
    for template in config.templates:
        for index in range(template.count):
            user_id = f'bot{template.class_id}_{index:04d}'
            rng = seeded_rng(
                derive_seed(config.seed, template.class_id, index)
            )
            records.extend(_bot_user(config, template, user_id, rng))
            classes[user_id] = template.class_id
    labels = LabelTable(classes=classes, names=config.class_names())
    logger.info(
        'Generated %d tweets for %d users (supports %s, seed %d)',
        len(records), len(classes), labels.supports(), config.seed,
    )
    return records, labels


def write_dataset(config, directory):
    """Write tweets.jsonl and labels.csv; return both paths."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    records, labels = generate_dataset(config)
    tweets_path = directory / 'tweets.jsonl'
    labels_path = directory / 'labels.csv'
    write_tweets(records, tweets_path)
    write_labels(labels, labels_path)
    return tweets_path, labels_path
