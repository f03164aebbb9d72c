"""
Celery configuration for the rgbdweak project.

Rendering of single meshes and PDF metric reports can be pushed to workers.
"""

import os

from celery import Celery

os.environ.setdefault('DJANGO_SETTINGS_MODULE', 'rgbdweak.settings')

app = Celery('rgbdweak')

# Read CELERY_* keys from the Django settings.
app.config_from_object('django.conf:settings', namespace='CELERY')

app.autodiscover_tasks()
