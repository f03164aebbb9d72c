"""
Propagate labels from the per-category GPC models to the unlabelled pool.
"""

from recognition.management.base import StageCommand
from recognition.pipeline import load_fused, load_gpc_models, run_propagate
from recognition.propagation import read_labels_csv


class Command(StageCommand):
    help = 'Label unlabelled proposals whose predictive confidence reaches tau'

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument('--features', required=True, help='Directory holding the feature CSVs')
        parser.add_argument('--labels', required=True, help='Manual labels CSV; these ids are not propagated')
        parser.add_argument('--models', required=True, help='Directory of gpc_<category>.json models')
        parser.add_argument('--categories', required=True, help='categories.json')
        parser.add_argument('--out', required=True, help='Directory for propagated_labels.csv and the report')
        parser.add_argument('--tau', type=float, help='Overrides [propagation] tau')
        parser.add_argument('--conflict-policy', choices=['abandon', 'highest-confidence'],
                            help='Overrides [propagation] conflict_policy')

    def overrides(self, options):
        overrides = super().overrides(options)
        overrides['propagation'] = {'tau': options['tau'], 'conflict_policy': options['conflict_policy']}
        return overrides

    def run(self, **options):
        config = self.load_config(options)
        categories = self.read_categories(options['categories'])
        ids, X, _ = load_fused(options['features'])
        manual_ids = [row[0] for row in read_labels_csv(options['labels'])]
        models = load_gpc_models(options['models'], categories)
        result = run_propagate(models, ids, X, manual_ids, config.propagation, categories,
                               options['out'], options['jobs'])
        for name, counts in result.report.items():
            self.stdout.write(
                f"  {name:<12} unlabeled {counts['unlabeled_count']:5d}"
                f"  propagated {counts['propagated_count']:5d}  abandoned {counts['abandoned_count']:5d}"
            )
        self.success(f'Propagated {len(result.examples)} labels at tau={config.propagation.tau}')
