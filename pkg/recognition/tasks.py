"""
Celery tasks for the Recognition app.

This module contains background work that can be queued from the stage
commands: rendering one mesh, and turning a metrics report into a PDF.
"""

import logging
from datetime import datetime
from pathlib import Path

from celery import shared_task
from django.conf import settings
from reportlab.lib.pagesizes import letter
from reportlab.lib.units import inch
from reportlab.pdfgen import canvas

from .exceptions import DataError
from .formats import read_json
from .pipeline import render_model
from .synthesis import RenderConfig

logger = logging.getLogger(__name__)


@shared_task(bind=True, max_retries=3, default_retry_delay=60)
def render_model_task(self, category: str, path: str, out_dir: str, render: dict, seed: int) -> dict:
    """
    Render all views of one mesh.

    Args:
        category: Category name the views are filed under.
        path: OFF mesh path.
        out_dir: Render root; views go to ``<out_dir>/<category>/<model>/``.
        render: RenderConfig fields as a JSON-compatible dict.
        seed: Surface sampling seed.

    Returns:
        The render manifest entry of the model.
    """
    entry = render_model(category, path, out_dir, RenderConfig(**render), seed)
    logger.info('Rendered %d views of %s', len(entry['views']), path)
    return entry


METRIC_LABELS = (('precision', 'Precision'), ('recall', 'Recall'), ('f_score', 'F-Score'))


@shared_task(bind=True, max_retries=3, default_retry_delay=60)
def generate_metrics_report_pdf(self, metrics_path: str, title: str = 'Detection and recognition report') -> str:
    """
    Generate a PDF version of a ``metrics.json`` report.

    The PDF is saved to RECOGNITION_REPORT_ROOT/metrics_{run}_{timestamp}.pdf,
    where run is the name of the directory holding the metrics file.

    Returns:
        The path to the generated PDF, or '' when the metrics file is gone.
    """
    try:
        document = read_json(metrics_path)
    except DataError:
        # Work directory removed before the report was rendered
        return ''

    report_dir = Path(settings.RECOGNITION_REPORT_ROOT)
    report_dir.mkdir(parents=True, exist_ok=True)
    timestamp = datetime.now().strftime('%Y%m%d_%H%M%S')
    filepath = report_dir / f'metrics_{Path(metrics_path).resolve().parent.name}_{timestamp}.pdf'

    c = canvas.Canvas(str(filepath), pagesize=letter)
    width, height = letter

    # Header
    c.setFont('Helvetica-Bold', 20)
    c.drawCentredString(width / 2, height - 1 * inch, title)
    c.setLineWidth(2)
    c.line(1 * inch, height - 1.3 * inch, width - 1 * inch, height - 1.3 * inch)

    y_position = height - 1.8 * inch
    line_height = 0.28 * inch
    for name, section in document.items():
        if not isinstance(section, dict):
            continue
        for kind, label in (('instance', 'instance-wise'), ('pixel', 'pixel-wise')):
            report = section.get(kind)
            if not report:
                continue
            if y_position < 2 * inch:
                c.showPage()
                y_position = height - 1 * inch
            c.setFont('Helvetica-Bold', 12)
            c.drawString(1 * inch, y_position, f"{name.replace('_', ' ')} ({label}, {section['frames']} frames)")
            y_position -= line_height

            c.setFont('Helvetica-Bold', 10)
            columns = ['category'] + [heading for _, heading in METRIC_LABELS] + ['TP', 'FP', 'FN']
            for index, heading in enumerate(columns):
                c.drawString((1.2 + 1.0 * index) * inch, y_position, heading)
            y_position -= line_height

            c.setFont('Helvetica', 10)
            rows = list(report['per_category'].items()) + [('overall', report['overall'])]
            for category, scores in rows:
                values = [category] + [f'{100 * scores[key]:.2f}' for key, _ in METRIC_LABELS]
                values += [str(scores['tp']), str(scores['fp']), str(scores['fn'])]
                for index, value in enumerate(values):
                    c.drawString((1.2 + 1.0 * index) * inch, y_position, value)
                y_position -= line_height
            y_position -= line_height / 2

    # Footer
    c.setFont('Helvetica-Oblique', 10)
    c.drawCentredString(width / 2, 0.8 * inch, f'Generated from {metrics_path}')
    c.save()

    logger.info('Metrics report written to %s', filepath)
    return str(filepath)
