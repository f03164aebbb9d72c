"""
Train one binary Gaussian process classifier per category.
"""

from recognition.management.base import StageCommand
from recognition.pipeline import load_fused, run_train_gpc
from recognition.propagation import attach_features, read_labels_csv


class Command(StageCommand):
    help = 'Fit one-vs-rest GPC models on the manually labelled proposals'

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument('--features', required=True, help='Directory holding the feature CSVs')
        parser.add_argument('--labels', required=True, help='Manual labels CSV (id,label,provenance,confidence)')
        parser.add_argument('--categories', required=True, help='categories.json')
        parser.add_argument('--out', required=True, help='Directory for gpc_<category>.json models')
        parser.add_argument('--restarts', type=int, help='Overrides [gpc] restarts')

    def overrides(self, options):
        overrides = super().overrides(options)
        overrides['gpc'] = {'restarts': options['restarts']}
        return overrides

    def run(self, **options):
        config = self.load_config(options)
        categories = self.read_categories(options['categories'])
        ids, X, split = load_fused(options['features'])
        manual = attach_features(read_labels_csv(options['labels']), ids, X, split)
        models = run_train_gpc(manual, categories, config.gpc, config.seed, options['out'], options['jobs'])
        for model in models:
            self.stdout.write(
                f'  {model.category:<12} log ML {model.log_marginal_likelihood:10.4f}'
                f'  converged={model.converged} sweeps={model.sweeps}'
            )
        self.success(f'Trained {len(models)} GPC models')
