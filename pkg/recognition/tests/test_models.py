"""
Unit tests for Recognition app models.
"""

from django.db import IntegrityError
from django.db.models import ProtectedError
from django.test import TestCase

from recognition.models import PipelineRun, StageRecord


class PipelineRunModelTest(TestCase):
    """Test cases for the PipelineRun model."""

    def test_run_creation(self):
        """Test that a run starts out running with empty counts."""
        run = PipelineRun.objects.create(seed=7, work_dir='/tmp/work')

        self.assertEqual(run.status, PipelineRun.Status.RUNNING)
        self.assertEqual(run.command, 'pipeline')
        self.assertEqual(run.counts, {})
        self.assertIsNotNone(run.started_at)
        self.assertIsNone(run.finished_at)

    def test_finish_records_status_and_fields(self):
        """Test that finish() stores the outcome and extra fields."""
        run = PipelineRun.objects.create(seed=0, work_dir='/tmp/work')
        run.finish(PipelineRun.Status.SUCCEEDED, counts={'train_proposals': 12})

        run.refresh_from_db()
        self.assertEqual(run.status, PipelineRun.Status.SUCCEEDED)
        self.assertEqual(run.counts, {'train_proposals': 12})
        self.assertIsNotNone(run.finished_at)

    def test_run_str_representation(self):
        """Test run string representation."""
        run = PipelineRun.objects.create(seed=3, work_dir='/tmp/work')
        self.assertIn('seed 3', str(run))
        self.assertIn('running', str(run))


class StageRecordModelTest(TestCase):
    """Test cases for the StageRecord model."""

    def setUp(self):
        """Set up test fixtures."""
        self.run = PipelineRun.objects.create(seed=0, work_dir='/tmp/work')

    def test_stage_names_are_unique_per_run(self):
        """Test that a run records each stage once."""
        StageRecord.objects.create(run=self.run, name='detect_train', seconds=1.5)
        with self.assertRaises(IntegrityError):
            StageRecord.objects.create(run=self.run, name='detect_train', seconds=2.0)

    def test_run_with_stages_cannot_be_deleted(self):
        """Test that deleting a run with stage records is refused."""
        StageRecord.objects.create(run=self.run, name='evaluate', seconds=0.2)
        with self.assertRaises(ProtectedError):
            self.run.delete()

    def test_stages_in_creation_order(self):
        """Test that stages are listed in the order they finished."""
        for name in ('render', 'detect_train', 'features_train'):
            StageRecord.objects.create(run=self.run, name=name, seconds=0.1)
        self.assertEqual([s.name for s in self.run.stages.all()], ['render', 'detect_train', 'features_train'])
