"""
Recognition app configuration.
"""

from django.apps import AppConfig


class RecognitionConfig(AppConfig):
    """Configuration for the Recognition app."""

    default_auto_field = 'django.db.models.BigAutoField'
    name = 'recognition'
    verbose_name = 'Weakly supervised RGBD recognition'
