"""
Shared plumbing for the pipeline stage commands.
"""

from django.conf import settings
from django.core.management.base import BaseCommand, CommandError

from recognition.exceptions import RecognitionError
from recognition.formats import read_json
from recognition.serializers import load_pipeline_config


class StageCommand(BaseCommand):
    """
    Base class for stage commands.

    Adds ``--config``, ``--seed`` and ``--jobs`` and turns pipeline errors into
    ``CommandError`` carrying the error's exit code (1 usage, 2 data,
    3 numerical).
    """

    def add_arguments(self, parser):
        parser.add_argument('--config', help='INI pipeline config; defaults apply when omitted')
        parser.add_argument('--seed', type=int, help='Overrides [pipeline] seed')
        parser.add_argument('--jobs', type=int, default=settings.RECOGNITION_JOBS,
                            help='Worker threads for per-frame and per-view fan-out')

    def handle(self, *args, **options):
        if options['jobs'] < 1:
            raise CommandError('--jobs must be at least 1', returncode=1)
        try:
            self.run(**options)
        except RecognitionError as exc:
            raise CommandError(str(exc), returncode=exc.exit_code) from exc

    def run(self, **options):
        raise NotImplementedError

    def overrides(self, options) -> dict:
        """``{section: {key: value}}`` from command-line flags; subclasses extend it."""
        seed = options.get('seed')
        if seed is None and not options.get('config'):
            seed = settings.RECOGNITION_SEED
        return {'pipeline': {'seed': seed}}

    def load_config(self, options):
        return load_pipeline_config(options.get('config'), self.overrides(options))

    @staticmethod
    def read_categories(path) -> list[str]:
        return list(read_json(path)['categories'])

    def success(self, message: str) -> None:
        self.stdout.write(self.style.SUCCESS(message))
