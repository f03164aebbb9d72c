"""
Render synthetic depth views of CAD meshes.

Meshes are discovered as ``<models_dir>/<category>/<name>.off``.
"""

from dataclasses import asdict
from pathlib import Path

from recognition.management.base import StageCommand
from recognition.pipeline import derive_seed, discover_models, run_render
from recognition.tasks import render_model_task


class Command(StageCommand):
    help = 'Render depth views of every OFF mesh under a models directory'

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument('models_dir', help='Directory of <category>/<name>.off meshes')
        parser.add_argument('--out', required=True, help='Output directory for depth PNGs and render.json')
        parser.add_argument('--sample-count', type=int, help='Overrides [render] sample_count')
        parser.add_argument('--output-size', type=int, help='Overrides [render] output_size')
        parser.add_argument(
            '--queue',
            action='store_true',
            help='Queue one Celery task per mesh instead of rendering in-process',
        )

    def overrides(self, options):
        overrides = super().overrides(options)
        overrides['render'] = {
            'sample_count': options['sample_count'],
            'output_size': options['output_size'],
        }
        return overrides

    def run(self, **options):
        config = self.load_config(options)
        models = discover_models(options['models_dir'])
        if options['queue']:
            for category, path in models:
                result = render_model_task.delay(
                    category, str(path), options['out'], asdict(config.render),
                    derive_seed(config.seed, 'render', Path(path).name),
                )
                self.stdout.write(f'  Queued {path} ({result.id})')
            self.success(f'Queued {len(models)} meshes')
            return

        document = run_render(models, options['out'], config.render, config.seed, options['jobs'])
        views = sum(len(entry['views']) for entry in document['models'])
        self.success(f'Rendered {views} views of {len(models)} meshes into {options["out"]}')
