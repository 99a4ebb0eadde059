from bot_detector.pipeline import stage_encode

from ._base import PipelineCommand


class Command(PipelineCommand):
    help = 'Encode every user with the trained autoencoders'
    name = 'encode'

    def run_stage(self, config, options):
        return stage_encode(config)
