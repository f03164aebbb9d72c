"""
URL configuration for the rgbdweak project.

Only the admin is served; it lists recorded pipeline runs.
"""

from django.contrib import admin
from django.urls import path

urlpatterns = [
    path('admin/', admin.site.urls),
]
