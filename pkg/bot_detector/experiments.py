"""Ablation experiments: feature importance, subset search and LOBO."""
import itertools
import logging
from dataclasses import dataclass, field

from .evaluation import feature_importance
from .exceptions import ConfigError, EvaluationError
from .ingest import GENUINE, load_labels
from .mts import load_tensor, select_features
from .pipeline import ArtifactStore, input_paths, run_pipeline
from .reports import write_report

logger = logging.getLogger(__name__)


@dataclass
class LoboLeg:
    excluded_class: int
    name: str
    f1: float
    change: float
    train_users: int


@dataclass
class LoboReport:
    base_f1: float
    legs: list = field(default_factory=list)

    def to_dict(self):
        return {
            'base_f1': self.base_f1,
            'legs': [
                {
                    'excluded_class': leg.excluded_class,
                    'name': leg.name,
                    'f1': leg.f1,
                    'percentage_change': leg.change,
                    'train_users': leg.train_users,
                }
                for leg in self.legs
            ],
        }


class FeatureRunner:
    """Weighted f1 of a full pipeline run on a feature subset, memoized."""

    def __init__(self, config, raw, labels):
        self.config = config
        self.raw = raw
        self.labels = labels
        self.results = {}

    def __call__(self, features):
        features = tuple(features)
        if features not in self.results:
            subset = select_features(self.raw, features)
            result = run_pipeline(self.config, subset, self.labels)
            self.results[features] = result.f1
        return self.results[features]


def feature_subset_search(runner, features, min_size=1):
    """Score every subset of at least `min_size` features, best first.

    Ties keep the enumeration order (smaller subsets first).
    """
    features = tuple(features)
    if not 1 <= min_size <= len(features):
        raise ConfigError(
            f'min_size must lie in 1..{len(features)}, got {min_size}'
        )
    scored = []
    for size in range(min_size, len(features) + 1):
        for subset in itertools.combinations(features, size):
            scored.append((subset, float(runner(subset))))
    ranked = sorted(
        enumerate(scored), key=lambda item: (-item[1][1], item[0])
    )
    return [entry for _, entry in ranked]


def lobo_run(raw, labels, config, bot_classes=None):
    """Leave-one-botnet-out: retrain without each bot class, score all.

    Every leg uses the config seed, so excluding a class with no users
    reproduces the base run.
    """
    labels = labels.restrict(raw.user_ids)
    if bot_classes is None:
        bot_classes = [c for c in labels.class_ids if c != GENUINE]
    bot_classes = sorted(set(bot_classes))
    if len(bot_classes) < 2:
        raise EvaluationError(
            f'leave-one-botnet-out needs two or more bot classes, '
            f'got {bot_classes}'
        )
    base = run_pipeline(config, raw, labels).f1
    if base == 0.0:
        raise EvaluationError('base f1 is 0; percentage change undefined')
    report = LoboReport(base_f1=base)
    for class_id in bot_classes:
        train_users = [u for u in raw.user_ids if labels[u] != class_id]
        if len(train_users) == len(raw.user_ids):
            logger.warning('Class %d has no users; leg repeats the base run',
                           class_id)
        f1 = run_pipeline(config, raw, labels, train_users=train_users).f1
        change = 100.0 * (f1 - base) / base
        logger.info('Without class %d: f1 %.4f (%+.2f%%)', class_id, f1,
                    change)
        report.legs.append(LoboLeg(
            excluded_class=class_id,
            name=labels.name_of(class_id),
            f1=f1,
            change=change,
            train_users=len(train_users),
        ))
    return report


def _load_inputs(config, store):
    raw = load_tensor(store.require('raw_tensor'))
    _, labels_path = input_paths(config, store)
    if labels_path is None:
        raise ConfigError('this experiment needs a label file; pass --labels')
    labels = load_labels(labels_path, names=config.class_names)
    return raw, labels


def stage_importance(config, subsets=False, min_size=1):
    store = ArtifactStore(config.output_dir)
    raw, labels = _load_inputs(config, store)
    runner = FeatureRunner(config, raw, labels)
    report = feature_importance(runner, raw.feature_names)
    write_report(report.to_dict(), store.path('importance'), config)
    ranked = dict(zip(report.features, report.importance))
    top = max(ranked, key=ranked.get)
    summary = {'baseline_f1': round(report.baseline_f1, 4), 'top': top}
    if subsets:
        search = feature_subset_search(runner, raw.feature_names, min_size)
        write_report(
            {
                'min_size': min_size,
                'subsets': [
                    {'features': list(subset), 'f1': f1}
                    for subset, f1 in search
                ],
            },
            store.path('subsets'),
            config,
        )
        summary['best_subset'] = '+'.join(search[0][0])
    return summary


def stage_lobo(config):
    store = ArtifactStore(config.output_dir)
    raw, labels = _load_inputs(config, store)
    report = lobo_run(raw, labels, config)
    write_report(report.to_dict(), store.path('lobo'), config)
    worst = max(report.legs, key=lambda leg: abs(leg.change))
    return {
        'base_f1': round(report.base_f1, 4),
        'max_abs_change': round(abs(worst.change), 2),
    }
