from bot_detector.pipeline import stage_train

from ._base import PipelineCommand


class Command(PipelineCommand):
    help = 'Train the autoencoders the representation needs'
    name = 'train'

    def add_stage_arguments(self, parser):
        parser.add_argument(
            '--variant', action='append', choices=('uts', 'vec'),
            help='Train only this variant (repeatable)',
        )

    def run_stage(self, config, options):
        return stage_train(config, variants=options.get('variant'))
