from pathlib import Path

from django.conf import settings
from django.test import SimpleTestCase

ROOT = Path(settings.BASE_DIR)


class ProjectSettingsTests(SimpleTestCase):

    def test_no_web_serving_settings(self):
        self.assertEqual(settings.INSTALLED_APPS, ['bot_detector'])
        self.assertEqual(settings.ALLOWED_HOSTS, [])
        self.assertIn('seed', settings.PIPELINE_DEFAULTS)

    def test_build_script_only_installs_and_migrates(self):
        lines = [
            line for line in
            (ROOT / 'build.sh').read_text(encoding='utf-8').splitlines()
            if line and not line.startswith('#')
        ]
        self.assertEqual(lines, [
            'pip install -r requirements.txt',
            'python manage.py migrate',
        ])
