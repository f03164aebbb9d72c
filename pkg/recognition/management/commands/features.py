"""
Extract RGB and depth descriptors for detected proposals or rendered views.
"""

from pathlib import Path

from recognition.exceptions import ConfigurationError
from recognition.management.base import StageCommand
from recognition.pipeline import run_features, run_view_features


class Command(StageCommand):
    help = 'Write rgb_features.csv and depth_features.csv for a proposals manifest'

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument('--proposals', help='proposals.jsonl written by detect')
        parser.add_argument('--views', help='render.json written by render (depth features only)')
        parser.add_argument('--out', help='Output directory (default: beside the input manifest)')

    def run(self, **options):
        if bool(options['proposals']) == bool(options['views']):
            raise ConfigurationError('give exactly one of --proposals or --views')
        if options['views']:
            manifest = Path(options['views'])
            out = Path(options['out'] or manifest.parent) / 'view_features.csv'
            ids, _ = run_view_features(manifest, out)
            self.success(f'Depth features for {len(ids)} views written to {out}')
            return
        ids, _, _ = run_features(options['proposals'], options['out'], options['jobs'])
        self.success(f'Features for {len(ids)} proposals')
