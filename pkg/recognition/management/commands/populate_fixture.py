"""
Management command to write the synthetic pipeline fixture.

Creates annotated tabletop frames, primitive CAD meshes and a config file.
"""

import shutil
from pathlib import Path

from django.core.management.base import BaseCommand

from recognition.scenes import write_fixture


class Command(BaseCommand):
    help = 'Write a synthetic fixture (frames, annotations, meshes, config.ini) for the pipeline'

    def add_arguments(self, parser):
        parser.add_argument('out', help='Fixture directory')
        parser.add_argument('--seed', type=int, default=0)
        parser.add_argument('--train-frames', type=int, default=6)
        parser.add_argument('--test-frames', type=int, default=3)
        parser.add_argument(
            '--clear',
            action='store_true',
            help='Remove the fixture directory before writing',
        )

    def handle(self, *args, **options):
        out = Path(options['out'])
        if options['clear'] and out.exists():
            self.stdout.write(f'Clearing {out}...')
            shutil.rmtree(out)

        self.stdout.write('Creating fixture...')
        document = write_fixture(
            out,
            seed=options['seed'],
            train_frames=options['train_frames'],
            test_frames=options['test_frames'],
        )

        self.stdout.write('')
        self.stdout.write('  Frame        Split   Objects')
        self.stdout.write('  ----------   -----   -------')
        for frame_id, entry in sorted(document['frames'].items()):
            categories = ', '.join(o['category'] for o in entry['objects'])
            self.stdout.write(f"  {frame_id:<12} {entry['split']:<7} {categories}")
        self.stdout.write('')
        self.stdout.write(self.style.SUCCESS(f'Fixture written to {out}'))
