from bot_detector.pipeline import run_all

from ._base import PipelineCommand


class Command(PipelineCommand):
    help = (
        'Run extract, train, encode, features, cluster and evaluate; '
        'synthesizes inputs when no tweet file is given'
    )
    name = 'run_all'

    def run_stage(self, config, options):
        return run_all(config)
