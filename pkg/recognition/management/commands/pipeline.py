"""
Run the whole weakly supervised pipeline over a fixture directory.
"""

from pathlib import Path

from django.core.management.base import CommandError

from recognition.exceptions import RecognitionError
from recognition.management.base import StageCommand
from recognition.models import PipelineRun, StageRecord
from recognition.pipeline import run_pipeline
from recognition.tasks import generate_metrics_report_pdf


class Command(StageCommand):
    help = 'Render, detect, label, train, propagate and evaluate in one reproducible run'

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument('fixture', help='Fixture directory (see populate_fixture)')
        parser.add_argument('--work', required=True, help='Work directory for every stage output')
        parser.add_argument('--tau', type=float, help='Overrides [propagation] tau')
        parser.add_argument('--eta', type=float, help='Overrides [training] eta')
        parser.add_argument('--no-render', action='store_true', help='Skip rendering and mesh classification')
        parser.add_argument('--pdf', action='store_true', help='Queue a PDF rendering of the metrics')

    def overrides(self, options):
        overrides = super().overrides(options)
        overrides['propagation'] = {'tau': options['tau']}
        overrides['training'] = {'eta': options['eta']}
        if options['no_render']:
            overrides['pipeline']['render'] = False
        return overrides

    def handle(self, *args, **options):
        if options['config'] is None:
            candidate = Path(options['fixture']) / 'config.ini'
            if candidate.exists():
                options['config'] = str(candidate)
        super().handle(*args, **options)

    def run(self, **options):
        # Config errors surface before a run is recorded or any stage runs.
        config = self.load_config(options)
        work = Path(options['work'])
        run = PipelineRun.objects.create(seed=config.seed, config_hash=config.config_hash, work_dir=str(work))

        def record(name, seconds, counts):
            StageRecord.objects.create(run=run, name=name, seconds=seconds, counts=counts)
            self.stdout.write(f'  {name:<18} {seconds:8.2f}s  {counts}')

        try:
            manifest = run_pipeline(options['fixture'], work, config, options['jobs'], on_stage=record)
        except RecognitionError as exc:
            run.finish(PipelineRun.Status.FAILED, error=str(exc))
            raise CommandError(str(exc), returncode=exc.exit_code) from exc

        run.finish(
            PipelineRun.Status.SUCCEEDED,
            manifest_path=str(work / 'manifest.json'),
            counts=manifest['counts'],
        )
        self.stdout.write((work / 'metrics.txt').read_text())
        if options['pdf']:
            result = generate_metrics_report_pdf.delay(str(work / 'metrics.json'))
            self.stdout.write(f'  PDF report queued ({result.id})')
        self.success(f'Pipeline run #{run.id} finished; manifest at {work / "manifest.json"}')
