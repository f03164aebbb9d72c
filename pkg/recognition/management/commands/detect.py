"""
Detect objectness proposals in RGBD point clouds.
"""

from recognition.management.base import StageCommand
from recognition.pipeline import discover_frames, run_detect


class Command(StageCommand):
    help = 'Remove support planes, cluster the remaining points and write proposal masks'

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument('inputs', nargs='+', help='PLY files or directories of PLY files')
        parser.add_argument('--camera', help='Camera file for all inputs (default: camera.txt beside each cloud)')
        parser.add_argument('--out', required=True, help='Output directory')
        parser.add_argument('--sigma-d', type=float, help='Overrides [clustering] sigma_d (m)')
        parser.add_argument('--sigma-c', type=float, help='Overrides [clustering] sigma_c')
        parser.add_argument('--sigma-s', type=float, help='Overrides [clustering] sigma_s (deg)')

    def overrides(self, options):
        overrides = super().overrides(options)
        overrides['clustering'] = {
            'sigma_d': options['sigma_d'],
            'sigma_c': options['sigma_c'],
            'sigma_s': options['sigma_s'],
        }
        return overrides

    def run(self, **options):
        config = self.load_config(options)
        frames = discover_frames(options['inputs'], options['camera'])
        records = run_detect(
            frames, options['out'], config.clustering, config.plane_removal, config.seed, options['jobs']
        )
        self.success(f'{len(records)} proposals in {len(frames)} frames')
