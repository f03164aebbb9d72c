"""
Data models for the Recognition app.

This module contains:
- PipelineRun: one invocation of the ``pipeline`` command
- StageRecord: timing and item counts of one stage of a run

The JSON manifest written into the work directory stays the reproducible
record of a run; these rows add wall-clock timings and a browsable history.
"""

from django.core.validators import MinValueValidator
from django.db import models
from django.utils import timezone


class PipelineRun(models.Model):
    """A pipeline run over one fixture/work directory pair."""

    class Status(models.TextChoices):
        RUNNING = 'running', 'Running'
        SUCCEEDED = 'succeeded', 'Succeeded'
        FAILED = 'failed', 'Failed'

    command = models.CharField(
        max_length=50,
        default='pipeline',
        help_text='Management command that started the run'
    )
    seed = models.IntegerField(
        help_text='Seed every stochastic stage derives from'
    )
    config_hash = models.CharField(
        max_length=64,
        blank=True,
        default='',
        help_text='SHA-256 of the validated pipeline config'
    )
    status = models.CharField(
        max_length=16,
        choices=Status.choices,
        default=Status.RUNNING,
    )
    work_dir = models.CharField(
        max_length=500,
        help_text='Directory the run writes its outputs to'
    )
    manifest_path = models.CharField(
        max_length=500,
        blank=True,
        default='',
        help_text='Path of manifest.json once the run succeeded'
    )
    counts = models.JSONField(
        default=dict,
        blank=True,
        help_text='Per-run counts copied from the manifest'
    )
    error = models.TextField(
        blank=True,
        default='',
        help_text='Failure message, naming the failed stage'
    )
    started_at = models.DateTimeField(auto_now_add=True)
    finished_at = models.DateTimeField(null=True, blank=True)

    class Meta:
        """PipelineRun model metadata."""

        verbose_name = 'Pipeline run'
        verbose_name_plural = 'Pipeline runs'
        ordering = ['-started_at']
        indexes = [
            models.Index(fields=['config_hash'], name='run_config_hash_idx'),
            models.Index(fields=['status', 'started_at'], name='run_status_time_idx'),
        ]

    def __str__(self) -> str:
        return f"PipelineRun #{self.id} ({self.status}, seed {self.seed})"

    def finish(self, status: str, **fields) -> None:
        """Record the final status and any extra fields in one update."""
        self.status = status
        self.finished_at = timezone.now()
        for name, value in fields.items():
            setattr(self, name, value)
        self.save(update_fields=['status', 'finished_at', *fields])


class StageRecord(models.Model):
    """
    Wall-clock time and item counts of one completed stage.

    A run cannot be deleted while it still has stage records (PROTECT).
    """

    run = models.ForeignKey(
        PipelineRun,
        on_delete=models.PROTECT,
        related_name='stages',
    )
    name = models.CharField(max_length=50)
    seconds = models.FloatField(
        validators=[MinValueValidator(0.0)],
        help_text='Wall-clock duration of the stage'
    )
    counts = models.JSONField(default=dict, blank=True)
    created_at = models.DateTimeField(auto_now_add=True)

    class Meta:
        """StageRecord model metadata."""

        verbose_name = 'Stage record'
        verbose_name_plural = 'Stage records'
        ordering = ['id']
        constraints = [
            models.UniqueConstraint(fields=['run', 'name'], name='stage_unique_per_run'),
        ]

    def __str__(self) -> str:
        return f"{self.name} ({self.seconds:.2f}s) of run #{self.run_id}"
