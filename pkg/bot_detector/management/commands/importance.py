from bot_detector.experiments import stage_importance

from ._base import PipelineCommand


class Command(PipelineCommand):
    help = 'Rank features by the f1 lost when each one is left out'
    name = 'importance'

    def add_stage_arguments(self, parser):
        parser.add_argument(
            '--subsets', action='store_true',
            help='Also score every feature subset',
        )
        parser.add_argument('--min-size', type=int, default=1)

    def run_stage(self, config, options):
        return stage_importance(
            config,
            subsets=options['subsets'],
            min_size=options['min_size'],
        )
