import logging

import rollbar
from django.core.management.base import BaseCommand, CommandError
from django.db import DatabaseError

from bot_detector.exceptions import BotDetectorError
from bot_detector.models import PipelineRun
from bot_detector.pipeline import PRESETS, load_config

logger = logging.getLogger(__name__)

# option dest -> config key; None values are left to lower layers.
CONFIG_OPTIONS = (
    'output_dir', 'seed', 'preset', 'features', 'representation', 'method',
    'eps', 'min_pts', 'n_clusters', 'genuine_cluster', 'task', 'epochs',
    'latent_dim', 'holdout_fraction', 'clip_norm', 'learning_rate_uts',
    'learning_rate_vec', 'tweets', 'labels', 'tweet_format',
    'balance_classes',
)


def feature_list(value):
    return [name.strip() for name in value.split(',') if name.strip()]


def add_pipeline_arguments(parser):
    parser.add_argument('--config', help='JSON pipeline config file')
    parser.add_argument('--output-dir', help='Artifact directory')
    parser.add_argument('--seed', type=int)
    parser.add_argument(
        '--variant-preset', dest='preset', choices=sorted(PRESETS),
        help='Named pipeline variant',
    )
    parser.add_argument(
        '--features', type=feature_list,
        help='Comma-separated feature subset',
    )
    parser.add_argument(
        '--representation', choices=('uts', 'vec', 'glob', 'glob_vec'),
    )
    parser.add_argument('--method', choices=('dbscan', 'hierarchical'))
    parser.add_argument('--eps', help='DBSCAN radius or "auto"')
    parser.add_argument('--min-pts', type=int)
    parser.add_argument('--n-clusters', type=int)
    parser.add_argument(
        '--genuine-cluster', type=int,
        help='Cluster id labeled genuine in the binary task',
    )
    parser.add_argument('--task', choices=('binary', 'multiclass'))
    parser.add_argument('--epochs', type=int)
    parser.add_argument('--latent-dim', type=int)
    parser.add_argument('--holdout-fraction', type=float)
    parser.add_argument('--clip-norm', type=float)
    parser.add_argument('--learning-rate-uts', type=float)
    parser.add_argument('--learning-rate-vec', type=float)
    parser.add_argument('--tweets', help='Tweet file (JSONL or CSV)')
    parser.add_argument('--labels', help='user_id,class_id CSV')
    parser.add_argument('--tweet-format', choices=('jsonl', 'csv'))
    parser.add_argument(
        '--balance-classes', action='store_true', default=None,
        help='Downsample every class to the minority support',
    )


def record_run(command, config, status, summary):
    try:
        PipelineRun.objects.create(
            command=command,
            status=status,
            config_hash=config.digest() if config else '',
            seed=config.seed if config else None,
            output_dir=str(config.output_dir) if config else '',
            summary=summary,
        )
    except DatabaseError as exc:
        logger.warning('Could not record %s run: %s', command, exc)


def format_summary(command, summary):
    fields = ' '.join(f'{key}={value}' for key, value in summary.items())
    return f'{command}: {fields}'.rstrip()


class PipelineCommand(BaseCommand):
    """Shared flags, error mapping and run recording for pipeline stages."""

    name = None

    def add_arguments(self, parser):
        add_pipeline_arguments(parser)
        self.add_stage_arguments(parser)

    def add_stage_arguments(self, parser):
        pass

    def run_stage(self, config, options):
        raise NotImplementedError

    def handle(self, *args, **options):
        config = None
        overrides = {key: options.get(key) for key in CONFIG_OPTIONS}
        try:
            config = load_config(options.get('config'), overrides)
            summary = self.run_stage(config, options)
        except BotDetectorError as exc:
            rollbar.report_exc_info()
            record_run(self.name, config, PipelineRun.STATUS_FAILED, {
                'category': exc.category,
                'error': str(exc),
            })
            raise CommandError(
                f'{exc.category} error: {exc}', returncode=exc.exit_code
            ) from exc
        record_run(self.name, config, PipelineRun.STATUS_SUCCEEDED, summary)
        self.stdout.write(format_summary(self.name, summary))
