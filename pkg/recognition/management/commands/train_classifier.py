"""
Train the linear softmax classifier on manual and propagated labels.
"""

from recognition.management.base import StageCommand
from recognition.pipeline import load_fused, run_train_classifier
from recognition.propagation import attach_features, read_labels_csv


class Command(StageCommand):
    help = 'Fit the weighted two-pool softmax classifier'

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument('--features', required=True, help='Directory holding the feature CSVs')
        parser.add_argument('--labels', required=True, help='Manual labels CSV')
        parser.add_argument('--propagated', help='Propagated labels CSV (omit for a manual-only model)')
        parser.add_argument('--categories', required=True, help='categories.json')
        parser.add_argument('--out', required=True, help='Output classifier JSON')
        parser.add_argument('--eta', type=float, help='Overrides [training] eta')
        parser.add_argument('--epochs', type=int, help='Overrides [training] epochs')

    def overrides(self, options):
        overrides = super().overrides(options)
        overrides['training'] = {'eta': options['eta'], 'epochs': options['epochs']}
        return overrides

    def run(self, **options):
        config = self.load_config(options)
        categories = self.read_categories(options['categories'])
        ids, X, split = load_fused(options['features'])
        manual = attach_features(read_labels_csv(options['labels']), ids, X, split)
        propagated = []
        if options['propagated']:
            propagated = attach_features(read_labels_csv(options['propagated']), ids, X, split)
        model = run_train_classifier(manual, propagated, config.training, config.seed, categories, options['out'])
        self.success(
            f'Classifier over {len(categories)} categories, {len(manual)} manual + '
            f'{len(propagated)} propagated examples, loss {model.loss:.6f}'
        )
