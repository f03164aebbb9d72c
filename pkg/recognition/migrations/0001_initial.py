import django.core.validators
import django.db.models.deletion
from django.db import migrations, models


class Migration(migrations.Migration):

    initial = True

    dependencies = []

    operations = [
        migrations.CreateModel(
            name='PipelineRun',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('command', models.CharField(default='pipeline', help_text='Management command that started the run', max_length=50)),
                ('seed', models.IntegerField(help_text='Seed every stochastic stage derives from')),
                ('config_hash', models.CharField(blank=True, default='', help_text='SHA-256 of the validated pipeline config', max_length=64)),
                ('status', models.CharField(choices=[('running', 'Running'), ('succeeded', 'Succeeded'), ('failed', 'Failed')], default='running', max_length=16)),
                ('work_dir', models.CharField(help_text='Directory the run writes its outputs to', max_length=500)),
                ('manifest_path', models.CharField(blank=True, default='', help_text='Path of manifest.json once the run succeeded', max_length=500)),
                ('counts', models.JSONField(blank=True, default=dict, help_text='Per-run counts copied from the manifest')),
                ('error', models.TextField(blank=True, default='', help_text='Failure message, naming the failed stage')),
                ('started_at', models.DateTimeField(auto_now_add=True)),
                ('finished_at', models.DateTimeField(blank=True, null=True)),
            ],
            options={
                'verbose_name': 'Pipeline run',
                'verbose_name_plural': 'Pipeline runs',
                'ordering': ['-started_at'],
                'indexes': [models.Index(fields=['config_hash'], name='run_config_hash_idx'), models.Index(fields=['status', 'started_at'], name='run_status_time_idx')],
            },
        ),
        migrations.CreateModel(
            name='StageRecord',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('name', models.CharField(max_length=50)),
                ('seconds', models.FloatField(help_text='Wall-clock duration of the stage', validators=[django.core.validators.MinValueValidator(0.0)])),
                ('counts', models.JSONField(blank=True, default=dict)),
                ('created_at', models.DateTimeField(auto_now_add=True)),
                ('run', models.ForeignKey(on_delete=django.db.models.deletion.PROTECT, related_name='stages', to='recognition.pipelinerun')),
            ],
            options={
                'verbose_name': 'Stage record',
                'verbose_name_plural': 'Stage records',
                'ordering': ['id'],
                'constraints': [models.UniqueConstraint(fields=('run', 'name'), name='stage_unique_per_run')],
            },
        ),
    ]
