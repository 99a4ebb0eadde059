from bot_detector.pipeline import stage_features

from ._base import PipelineCommand


class Command(PipelineCommand):
    help = 'Build the clustering input (latent, global features or both)'
    name = 'features'

    def run_stage(self, config, options):
        return stage_features(config)
