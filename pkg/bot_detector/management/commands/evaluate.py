from bot_detector.pipeline import stage_evaluate

from ._base import PipelineCommand


class Command(PipelineCommand):
    help = 'Label clusters and score them against the ground truth'
    name = 'evaluate'

    def run_stage(self, config, options):
        return stage_evaluate(config)
