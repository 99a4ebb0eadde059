from bot_detector.pipeline import stage_extract

from ._base import PipelineCommand


class Command(PipelineCommand):
    help = 'Build the daily MTS tensor and its normalized copy'
    name = 'extract'

    def run_stage(self, config, options):
        return stage_extract(config)
