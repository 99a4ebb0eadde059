from dataclasses import replace

from bot_detector.pipeline import stage_synth

from ._base import PipelineCommand


class Command(PipelineCommand):
    help = 'Generate a labeled synthetic population of users and botnets'
    name = 'synth'

    def add_stage_arguments(self, parser):
        parser.add_argument(
            '--synth-dir',
            help='Where to write tweets.jsonl and labels.csv',
        )
        parser.add_argument('--n-days', type=int)
        parser.add_argument('--n-genuine', type=int)

    def run_stage(self, config, options):
        extra = {
            key: options[key] for key in ('n_days', 'n_genuine')
            if options.get(key) is not None
        }
        if extra:
            config = replace(config, synth={**config.synth, **extra})
        return stage_synth(config, directory=options.get('synth_dir'))
