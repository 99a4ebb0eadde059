from bot_detector.experiments import stage_lobo

from ._base import PipelineCommand


class Command(PipelineCommand):
    help = 'Leave-one-botnet-out generalization test'
    name = 'lobo'

    def run_stage(self, config, options):
        return stage_lobo(config)
