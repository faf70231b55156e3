from django.db import models
from django.utils import timezone


class ExperimentRun(models.Model):
    """
    One invocation of a management command (gen, train, decode, align, sweep)
    Keeps the arguments, headline metrics and the plain-text report
    """
    command = models.CharField(max_length=20, help_text="Management command name")
    seed = models.IntegerField(default=0)
    workdir = models.CharField(max_length=500, help_text="Directory the outputs were written to")

    arguments = models.JSONField(default=dict, help_text="Command options as passed")
    metrics = models.JSONField(default=dict, help_text="Headline numbers (ter, loss, ...)")
    report = models.TextField(blank=True)

    created_at = models.DateTimeField(default=timezone.now)

    class Meta:
        ordering = ['-created_at']
        verbose_name = "Experiment Run"
        verbose_name_plural = "Experiment Runs"

    def __str__(self):
        return f"{self.command} (seed {self.seed}) - {self.created_at.strftime('%Y-%m-%d %H:%M')}"

    def get_preview(self, length=200):
        """Returns a preview of the report"""
        if len(self.report) <= length:
            return self.report
        return self.report[:length] + "..."
