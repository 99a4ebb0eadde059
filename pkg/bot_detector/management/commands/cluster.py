from bot_detector.pipeline import stage_cluster

from ._base import PipelineCommand


class Command(PipelineCommand):
    help = 'Cluster users with DBSCAN or Ward agglomerative clustering'
    name = 'cluster'

    def run_stage(self, config, options):
        return stage_cluster(config)
