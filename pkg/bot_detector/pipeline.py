"""Pipeline configuration, presets and the stages behind each command.

Every stage reads its inputs from the output directory, writes its
artifact back there and returns a small summary dict. `run_pipeline`
is the in-memory composition used by the ablation experiments.
"""
import json
import logging
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np
import pandas as pd
from django.conf import settings

from .autoencoder import (
    DEFAULT_CLIP_NORM,
    DEFAULT_EPOCHS,
    DEFAULT_HOLDOUT,
    DEFAULT_LATENT_DIM,
    AutoencoderConfig,
    encode,
    load_model,
    save_model,
    train,
)
from .clustering import (
    DEFAULT_MIN_PTS,
    DbscanParams,
    cut_dendrogram,
    dbscan,
    distance_matrix,
    genuine_cluster_by_diameter,
    kdist_knee_eps,
    read_assignment,
    ward_agglomerative,
    write_assignment,
    write_dendrogram,
)
from .evaluation import (
    assign_labels_binary,
    assign_labels_multiclass,
    confusion_matrix,
    prf_metrics,
)
from .exceptions import ConfigError, MissingArtifactError
from .globalfeats import (
    concat_features,
    extract_global_features,
    write_global_features,
    zscore_standardize,
)
from .ingest import (
    CRESCI17_CLASS_NAMES,
    FEATURES,
    build_timelines,
    downsample_balanced,
    load_labels,
    parse_tweets,
)
from .mts import (
    apply_normalization,
    extract_mts,
    load_tensor,
    minmax_normalize,
    save_params,
    save_tensor,
)
from .reports import (
    config_hash,
    read_json,
    write_frame,
    write_json,
    write_report,
)
from .synth import SynthConfig, write_dataset

logger = logging.getLogger(__name__)

REPRESENTATIONS = ('uts', 'vec', 'glob', 'glob_vec')
REQUIRED_VARIANTS = {
    'uts': ('uts',),
    'vec': ('vec',),
    'glob': ('uts',),
    'glob_vec': ('uts', 'vec'),
}
METHODS = ('dbscan', 'hierarchical')
TASKS = ('binary', 'multiclass')
AUTO = 'auto'

PRESETS = {
    'UTS_DBSCAN': {'representation': 'uts', 'method': 'dbscan'},
    'UTS_Hier': {'representation': 'uts', 'method': 'hierarchical'},
    'Vec_Hier': {'representation': 'vec', 'method': 'hierarchical'},
    'Glob_Hier': {'representation': 'glob', 'method': 'hierarchical'},
    'Glob_Vec_Hier': {
        'representation': 'glob_vec',
        'method': 'hierarchical',
    },
    'MC_UTS_DBSCAN': {
        'representation': 'uts',
        'method': 'dbscan',
        'task': 'multiclass',
        'features': [
            'retweet_count', 'reply_count', 'favorite_count', 'num_mentions',
        ],
    },
}

# artifact key -> (file name, subcommand that writes it)
ARTIFACTS = {
    'synth_tweets': ('data/tweets.jsonl', 'synth'),
    'synth_labels': ('data/labels.csv', 'synth'),
    'manifest': ('manifest.json', 'extract'),
    'raw_tensor': ('mts_raw.bin', 'extract'),
    'tensor': ('mts.bin', 'extract'),
    'normalization': ('normalization.json', 'extract'),
    'model': ('model_{variant}.bin', 'train'),
    'train_report': ('train_{variant}.json', 'train'),
    'latent': ('latent_{variant}.npy', 'encode'),
    'global_features': ('global_features.csv', 'features'),
    'representation': ('representation.csv', 'features'),
    'clusters': ('clusters.csv', 'cluster'),
    'dendrogram': ('dendrogram.json', 'cluster'),
    'cluster_report': ('cluster.json', 'cluster'),
    'metrics': ('metrics.json', 'evaluate'),
    'confusion': ('confusion_matrix.csv', 'evaluate'),
    'predictions': ('predictions.csv', 'evaluate'),
    'importance': ('importance.json', 'importance'),
    'subsets': ('feature_subsets.json', 'importance'),
    'lobo': ('lobo.json', 'lobo'),
}


@dataclass(frozen=True)
class PipelineConfig:
    tweets: str = None
    labels: str = None
    tweet_format: str = None
    class_names: dict = field(default_factory=dict)
    features: tuple = FEATURES
    representation: str = 'uts'
    latent_dim: int = DEFAULT_LATENT_DIM
    learning_rate_uts: float = None
    learning_rate_vec: float = None
    epochs: int = DEFAULT_EPOCHS
    holdout_fraction: float = DEFAULT_HOLDOUT
    clip_norm: float = DEFAULT_CLIP_NORM
    method: str = 'dbscan'
    eps: object = AUTO
    min_pts: int = DEFAULT_MIN_PTS
    n_clusters: int = None
    genuine_cluster: int = None
    task: str = 'binary'
    balance_classes: bool = False
    seed: int = 42
    output_dir: str = 'artifacts'
    synth: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.representation not in REPRESENTATIONS:
            raise ConfigError(
                f'representation must be one of {REPRESENTATIONS}, '
                f'got {self.representation!r}'
            )
        if self.method not in METHODS:
            raise ConfigError(
                f'method must be one of {METHODS}, got {self.method!r}'
            )
        if self.task not in TASKS:
            raise ConfigError(
                f'task must be one of {TASKS}, got {self.task!r}'
            )
        if not self.features:
            raise ConfigError('at least one feature is required')
        unknown = [name for name in self.features if name not in FEATURES]
        if unknown:
            raise ConfigError(f'unknown features {unknown}')
        if len(set(self.features)) != len(self.features):
            raise ConfigError(f'duplicate features in {list(self.features)}')
        if self.eps != AUTO and not (
            isinstance(self.eps, (int, float)) and self.eps > 0
        ):
            raise ConfigError(
                f'eps must be "auto" or positive, got {self.eps!r}'
            )
        if self.eps == AUTO and self.min_pts < 2:
            raise ConfigError('automatic eps needs min_pts >= 2')
        if self.min_pts < 1:
            raise ConfigError('min_pts must be >= 1')
        if self.n_clusters is not None and self.n_clusters < 1:
            raise ConfigError('n_clusters must be >= 1')
        if self.latent_dim < 1:
            raise ConfigError('latent_dim must be >= 1')
        if self.epochs < 0:
            raise ConfigError('epochs must be non-negative')

    @classmethod
    def from_dict(cls, values):
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(values) - known)
        if unknown:
            raise ConfigError(f'unknown config keys {unknown}')
        values = dict(values)
        if 'features' in values:
            values['features'] = tuple(values['features'])
        if isinstance(values.get('eps'), str) and values['eps'] != AUTO:
            try:
                values['eps'] = float(values['eps'])
            except ValueError as exc:
                raise ConfigError(f'bad eps {values["eps"]!r}') from exc
        if values.get('class_names') == 'cresci17':
            values['class_names'] = dict(CRESCI17_CLASS_NAMES)
        if 'class_names' in values:
            try:
                values['class_names'] = {
                    int(k): str(v) for k, v in values['class_names'].items()
                }
            except (AttributeError, ValueError) as exc:
                raise ConfigError(
                    'class_names maps class ids to names'
                ) from exc
        return cls(**values)

    def to_dict(self):
        data = asdict(self)
        data['features'] = list(self.features)
        data['class_names'] = {
            str(k): v for k, v in sorted(self.class_names.items())
        }
        return data

    def digest(self):
        return config_hash(self.to_dict())

    @property
    def variants(self):
        return REQUIRED_VARIANTS[self.representation]

    def autoencoder_config(self, variant):
        rate = getattr(self, f'learning_rate_{variant}')
        return AutoencoderConfig(
            variant=variant,
            latent_dim=self.latent_dim,
            learning_rate=rate,
            epochs=self.epochs,
            holdout_fraction=self.holdout_fraction,
            seed=self.seed,
            clip_norm=self.clip_norm,
        )


def load_config(path=None, overrides=None):
    """Layer settings defaults, a preset, a JSON file and flag overrides."""
    file_values = {}
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f'config file {path} does not exist')
        try:
            file_values = json.loads(path.read_text(encoding='utf-8'))
        except json.JSONDecodeError as exc:
            raise ConfigError(f'{path}: invalid JSON ({exc.msg})') from exc
        if not isinstance(file_values, dict):
            raise ConfigError(f'{path}: expected a JSON object')
    overrides = {
        key: value for key, value in (overrides or {}).items()
        if value is not None
    }
    preset = overrides.pop('preset', None) or file_values.pop('preset', None)
    file_values.pop('preset', None)
    values = dict(getattr(settings, 'PIPELINE_DEFAULTS', {}))
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(
                f'unknown preset {preset!r}; choose from {sorted(PRESETS)}'
            )
        values.update(PRESETS[preset])
    values.update(file_values)
    values.update(overrides)
    config = PipelineConfig.from_dict(values)
    logger.debug('Resolved config %s', config.to_dict())
    return config


class ArtifactStore:
    def __init__(self, output_dir):
        self.root = Path(output_dir)

    def path(self, key, variant=None):
        name, _ = ARTIFACTS[key]
        return self.root / name.format(variant=variant)

    def require(self, key, variant=None):
        path = self.path(key, variant)
        if not path.exists():
            raise MissingArtifactError(path, ARTIFACTS[key][1])
        return path

    def prepare(self):
        self.root.mkdir(parents=True, exist_ok=True)
        return self


def input_paths(config, store):
    """Tweet and label paths from the config, else the synth outputs."""
    tweets = config.tweets
    if tweets is None:
        tweets = store.require('synth_tweets')
    labels = config.labels
    if labels is None and config.tweets is None:
        labels = store.require('synth_labels')
    return tweets, labels


def load_task_labels(config, store, users):
    _, labels_path = input_paths(config, store)
    if labels_path is None:
        raise ConfigError('evaluation needs a label file; pass --labels')
    labels = load_labels(labels_path, names=config.class_names)
    return task_labels(config, labels.restrict(users))


def task_labels(config, labels):
    return labels.binarize() if config.task == 'binary' else labels


# In-memory composition

@dataclass
class PipelineResult:
    user_ids: tuple
    representation: np.ndarray
    assignment: object
    predictions: object
    confusion: object
    metrics: object
    details: dict

    @property
    def f1(self):
        return self.metrics.f1


def normalize_for_training(raw, train_users=None):
    """Fit min-max statistics on the training users, apply to everyone."""
    fit_on = raw if train_users is None else raw.subset_users(train_users)
    _, params = minmax_normalize(fit_on)
    return apply_normalization(raw, params), params


def train_models(config, normalized, train_users=None):
    data = normalized
    if train_users is not None:
        data = normalized.subset_users(train_users)
    models = {}
    for variant in config.variants:
        models[variant] = train(config.autoencoder_config(variant), data)
    return models


def build_representation(config, latents, user_ids):
    """Clustering input for the configured representation.

    Returns the N x M matrix and the raw global features (or None).
    """
    if config.representation == 'uts':
        latent = latents['uts']
        return latent.reshape(latent.shape[0], -1), None
    if config.representation == 'vec':
        return np.asarray(latents['vec']), None
    globals_ = extract_global_features(latents['uts'], user_ids)
    standardized = zscore_standardize(globals_)
    if config.representation == 'glob':
        return standardized.values, globals_
    return concat_features(standardized, latents['vec']), globals_


def cluster_representation(config, matrix, user_ids, n_classes=None):
    """Cluster the rows; returns (assignment, details, dendrogram)."""
    dist = distance_matrix(matrix)
    details = {'method': config.method}
    dendrogram = None
    if config.method == 'dbscan':
        if config.eps == AUTO:
            eps = kdist_knee_eps(dist, k=config.min_pts - 1)
        else:
            eps = float(config.eps)
        assignment = dbscan(
            dist, DbscanParams(eps=eps, min_pts=config.min_pts), user_ids
        )
        details.update({
            'eps': eps,
            'eps_source': 'knee' if config.eps == AUTO else 'config',
            'min_pts': config.min_pts,
        })
    else:
        k = config.n_clusters
        if k is None:
            k = 2 if config.task == 'binary' else n_classes
        if k is None:
            raise ConfigError(
                'multiclass hierarchical clustering needs --n-clusters '
                'or a label file'
            )
        dendrogram = ward_agglomerative(dist)
        assignment = cut_dendrogram(dendrogram, k, user_ids)
    genuine = config.genuine_cluster
    if genuine is None and config.task == 'binary' and (
        config.method == 'hierarchical'
    ):
        genuine = genuine_cluster_by_diameter(assignment, dist)
    details.update({
        'n_clusters': assignment.n_clusters,
        'n_noise': int(np.count_nonzero(assignment.noise_mask)),
        'genuine_cluster': genuine,
    })
    return assignment, details, dendrogram


def label_and_score(config, assignment, labels, genuine_cluster=None):
    if config.task == 'binary':
        predictions = assign_labels_binary(assignment, genuine_cluster)
    else:
        predictions = assign_labels_multiclass(assignment, labels)
    truth = [labels[u] for u in assignment.user_ids]
    predicted = set(predictions.values.tolist())
    class_ids = sorted(set(labels.class_ids) | predicted)
    cm = confusion_matrix(truth, predictions.values, class_ids)
    names = {c: labels.name_of(c) for c in class_ids}
    return predictions, cm, prf_metrics(cm, names)


def run_pipeline(config, raw, labels, train_users=None):
    """Train, encode, cluster and score one configuration in memory.

    `raw` is an unnormalized tensor; `labels` cover its users. When
    `train_users` is given, normalization statistics and autoencoder
    weights come from those users only while everyone is encoded.
    """
    labels = task_labels(config, labels.restrict(raw.user_ids))
    normalized, _ = normalize_for_training(raw, train_users)
    models = train_models(config, normalized, train_users)
    latents = {
        variant: encode(model, normalized)
        for variant, (model, _) in models.items()
    }
    matrix, _ = build_representation(config, latents, raw.user_ids)
    assignment, details, _ = cluster_representation(
        config, matrix, raw.user_ids, n_classes=len(labels.class_ids)
    )
    predictions, cm, metrics = label_and_score(
        config, assignment, labels, details['genuine_cluster']
    )
    logger.info(
        'Pipeline %s/%s/%s on %d users: weighted f1 %.4f',
        config.representation, config.method, config.task,
        len(raw.user_ids), metrics.f1,
    )
    return PipelineResult(
        user_ids=raw.user_ids,
        representation=matrix,
        assignment=assignment,
        predictions=predictions,
        confusion=cm,
        metrics=metrics,
        details=details,
    )


# Stages

def stage_synth(config, directory=None):
    store = ArtifactStore(config.output_dir).prepare()
    values = {'seed': config.seed, **config.synth}
    synth_config = SynthConfig.from_dict(values)
    directory = directory or store.path('synth_tweets').parent
    tweets_path, labels_path = write_dataset(synth_config, directory)
    return {
        'tweets': str(tweets_path),
        'labels': str(labels_path),
        'users': synth_config.n_genuine + sum(
            t.count for t in synth_config.templates
        ),
        'seed': synth_config.seed,
    }


def stage_extract(config):
    store = ArtifactStore(config.output_dir).prepare()
    tweets_path, labels_path = input_paths(config, store)
    records = parse_tweets(tweets_path, config.tweet_format)
    timelines, manifest = build_timelines(records)
    labels = None
    if labels_path is not None:
        labels = load_labels(labels_path, names=config.class_names)
    if config.balance_classes:
        if labels is None:
            raise ConfigError('balance_classes needs a label file')
        restricted = labels.restrict(manifest.user_ids)
        kept = set(downsample_balanced(
            manifest.user_ids, restricted, restricted.class_ids, config.seed
        ))
        records = [r for r in records if r.user_id in kept]
        timelines, manifest = build_timelines(records)
    if labels is not None:
        manifest = replace(
            manifest,
            supports=labels.restrict(manifest.user_ids).supports(),
        )
    raw = extract_mts(timelines, manifest, features=config.features)
    normalized, params = minmax_normalize(raw)
    save_tensor(raw, store.path('raw_tensor'))
    save_tensor(normalized, store.path('tensor'))
    save_params(params, store.path('normalization'))
    write_report(manifest.to_dict(), store.path('manifest'), config)
    return {
        'users': raw.n_users,
        'days': raw.n_days,
        'features': raw.n_features,
        'tensor': str(store.path('tensor')),
    }


def stage_train(config, variants=None):
    store = ArtifactStore(config.output_dir)
    normalized = load_tensor(store.require('tensor'))
    summary = {}
    for variant in variants or config.variants:
        model, report = train(config.autoencoder_config(variant), normalized)
        save_model(model, store.path('model', variant))
        write_report(
            report.to_dict(), store.path('train_report', variant), config
        )
        if report.train_loss:
            summary[f'{variant}_train_mse'] = round(report.train_loss[-1], 6)
            summary[f'{variant}_holdout_mse'] = round(
                report.holdout_loss[-1], 6
            )
        else:
            summary[f'{variant}_epochs'] = 0
    return summary


def stage_encode(config):
    store = ArtifactStore(config.output_dir)
    normalized = load_tensor(store.require('tensor'))
    summary = {}
    for variant in config.variants:
        model = load_model(store.require('model', variant))
        latent = encode(model, normalized)
        np.save(store.path('latent', variant), latent)
        summary[f'{variant}_latent'] = 'x'.join(str(d) for d in latent.shape)
    return summary


def load_latents(config, store):
    return {
        variant: np.load(store.require('latent', variant))
        for variant in config.variants
    }


def stage_features(config):
    store = ArtifactStore(config.output_dir)
    normalized = load_tensor(store.require('tensor'))
    latents = load_latents(config, store)
    matrix, globals_ = build_representation(
        config, latents, normalized.user_ids
    )
    if globals_ is not None:
        write_global_features(globals_, store.path('global_features'))
    frame = pd.DataFrame(
        matrix,
        index=pd.Index(normalized.user_ids, name='user_id'),
        columns=[f'x{j}' for j in range(matrix.shape[1])],
    )
    write_frame(frame, store.path('representation'), index=True)
    return {
        'representation': config.representation,
        'shape': f'{matrix.shape[0]}x{matrix.shape[1]}',
    }


def read_representation(store):
    frame = pd.read_csv(
        store.require('representation'),
        dtype={'user_id': str},
        float_precision='round_trip',
    ).set_index('user_id')
    return tuple(frame.index), frame.to_numpy(dtype=np.float64)


def _class_count(config, store, user_ids):
    """Number of task classes, when labels are available."""
    try:
        labels = load_task_labels(config, store, user_ids)
    except (ConfigError, MissingArtifactError):
        return None
    return len(labels.class_ids)


def stage_cluster(config):
    store = ArtifactStore(config.output_dir)
    user_ids, matrix = read_representation(store)
    n_classes = None
    if config.method == 'hierarchical' and config.n_clusters is None and (
        config.task == 'multiclass'
    ):
        n_classes = _class_count(config, store, user_ids)
    assignment, details, dendrogram = cluster_representation(
        config, matrix, user_ids, n_classes
    )
    write_assignment(assignment, store.path('clusters'))
    if dendrogram is not None:
        write_dendrogram(dendrogram, store.path('dendrogram'))
    write_report(details, store.path('cluster_report'), config)
    return {
        key: details[key] for key in ('method', 'n_clusters', 'n_noise')
    }


def stage_evaluate(config):
    store = ArtifactStore(config.output_dir)
    assignment = read_assignment(store.require('clusters'))
    details = read_json(store.require('cluster_report'), 'cluster')
    labels = load_task_labels(config, store, assignment.user_ids)
    predictions, cm, metrics = label_and_score(
        config, assignment, labels, details.get('genuine_cluster')
    )
    report = metrics.to_dict()
    report.update({
        'task': config.task,
        'representation': config.representation,
        'method': config.method,
        'class_names': {
            str(c): labels.name_of(c) for c in cm.class_ids
        },
    })
    write_report(report, store.path('metrics'), config)
    names = {c: labels.name_of(c) for c in cm.class_ids}
    write_frame(cm.to_frame(names), store.path('confusion'), index=True)
    write_frame(predictions.to_frame(), store.path('predictions'))
    return {
        'weighted_f1': round(metrics.f1, 4),
        'accuracy': round(metrics.accuracy, 4),
        'mcc': round(metrics.mcc, 4),
    }


def run_all(config):
    """Synthesize inputs when none are configured, then run every stage."""
    store = ArtifactStore(config.output_dir).prepare()
    if config.tweets is None:
        stage_synth(config)
    elif config.labels is None:
        raise ConfigError('run_all needs --labels alongside --tweets')
    stage_extract(config)
    stage_train(config)
    stage_encode(config)
    stage_features(config)
    stage_cluster(config)
    summary = stage_evaluate(config)
    resolved = config.to_dict()
    resolved.pop('output_dir')
    write_json(
        {'config': resolved, 'config_hash': config.digest()},
        store.root / 'config.json',
    )
    return summary
