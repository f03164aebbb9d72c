"""
Admin configuration for the Recognition app.
"""

from django.contrib import admin

from .models import PipelineRun, StageRecord


class StageRecordInline(admin.TabularInline):
    model = StageRecord
    extra = 0
    can_delete = False
    readonly_fields = ('name', 'seconds', 'counts', 'created_at')

    def has_add_permission(self, request, obj=None):
        return False


@admin.register(PipelineRun)
class PipelineRunAdmin(admin.ModelAdmin):
    """Read-only history of pipeline runs."""

    list_display = ('id', 'command', 'status', 'seed', 'config_hash', 'started_at', 'finished_at')
    list_filter = ('status', 'started_at')
    search_fields = ('config_hash', 'work_dir')
    readonly_fields = (
        'command', 'seed', 'config_hash', 'status', 'work_dir', 'manifest_path',
        'counts', 'error', 'started_at', 'finished_at',
    )
    ordering = ('-started_at',)
    inlines = [StageRecordInline]

    def has_add_permission(self, request):
        """Runs are only created by the pipeline command."""
        return False

    def has_change_permission(self, request, obj=None):
        """Run history is immutable."""
        return False


@admin.register(StageRecord)
class StageRecordAdmin(admin.ModelAdmin):
    list_display = ('id', 'run', 'name', 'seconds', 'created_at')
    list_filter = ('name',)
    readonly_fields = ('run', 'name', 'seconds', 'counts', 'created_at')
    ordering = ('-created_at',)

    def has_add_permission(self, request):
        return False

    def has_change_permission(self, request, obj=None):
        return False

    def has_delete_permission(self, request, obj=None):
        return False
