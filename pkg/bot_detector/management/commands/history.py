from django.core.management.base import BaseCommand

from bot_detector.models import PipelineRun


class Command(BaseCommand):
    help = 'List recent pipeline runs'

    def add_arguments(self, parser):
        parser.add_argument('--limit', type=int, default=20)
        parser.add_argument('--command', dest='run_command')

    def handle(self, *args, **options):
        runs = PipelineRun.objects.all()
        if options['run_command']:
            runs = runs.filter(command=options['run_command'])
        for run in runs[:options['limit']]:
            self.stdout.write(
                f'{run.created_at:%Y-%m-%d %H:%M:%S} {run.command:<10} '
                f'{run.status:<9} seed={run.seed} '
                f'config={run.config_hash[:12]} {run.summary}'
            )
