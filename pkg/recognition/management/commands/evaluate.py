"""
Instance-wise and pixel-wise evaluation against annotated masks.
"""

from pathlib import Path

from recognition.exceptions import ConfigurationError
from recognition.formats import read_json, read_jsonl, write_json
from recognition.management.base import StageCommand
from recognition.metrics import evaluate_frames, format_table, instance_metrics, load_frames, pixel_metrics
from recognition.pipeline import load_fused, run_evaluate
from recognition.propagation import load_classifier
from recognition.tasks import generate_metrics_report_pdf


class Command(StageCommand):
    help = 'Score predicted masks: either a frame index of mask PNGs or classified proposals'

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument('--index', help='Frame index JSON listing ground-truth and predicted mask PNGs')
        parser.add_argument('--proposals', help='Test proposals.jsonl (features are read beside it)')
        parser.add_argument('--classifier', action='append', default=[],
                            help='Classifier JSON; repeat as name=path to compare several')
        parser.add_argument('--annotations', help='Fixture annotations.json')
        parser.add_argument('--out', required=True, help='Directory for metrics.json and metrics.txt')
        parser.add_argument('--pdf', action='store_true', help='Queue a PDF rendering of the report')

    def run(self, **options):
        out = Path(options['out'])
        if options['index']:
            frames = load_frames(options['index'])
            document = evaluate_frames(frames)
            write_json(out / 'metrics.json', document)
            table = format_table({'inst.w.': instance_metrics(frames), 'pix.w.': pixel_metrics(frames)})
            (out / 'metrics.txt').write_text(table)
        else:
            if not (options['proposals'] and options['classifier'] and options['annotations']):
                raise ConfigurationError('give --index, or --proposals with --classifier and --annotations')
            classifiers = {}
            for entry in options['classifier']:
                name, _, path = entry.rpartition('=')
                classifiers[name or 'weakly_supervised'] = load_classifier(path)
            proposals = Path(options['proposals'])
            ids, X, _ = load_fused(proposals.parent)
            annotations_path = Path(options['annotations'])
            run_evaluate(
                classifiers, read_jsonl(proposals), proposals.parent, ids, X,
                read_json(annotations_path), annotations_path.parent, out,
            )
            table = (out / 'metrics.txt').read_text()

        self.stdout.write(table)
        if options['pdf']:
            result = generate_metrics_report_pdf.delay(str(out / 'metrics.json'))
            self.stdout.write(f'  PDF report queued ({result.id})')
        self.success(f'Metrics written to {out}')
