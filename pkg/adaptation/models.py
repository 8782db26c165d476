from django.db import models
from django.utils import timezone


class ExperimentRun(models.Model):
    STATUS_COMPLETE = 'complete'
    STATUS_PARTIAL = 'partial'
    STATUS_CHOICES = (
        (STATUS_COMPLETE, 'Complete'),
        (STATUS_PARTIAL, 'Partial'),
    )

    name = models.CharField(max_length=200)
    config = models.JSONField(default=dict)
    status = models.CharField(max_length=20, choices=STATUS_CHOICES, default=STATUS_COMPLETE)
    mean_accuracy = models.FloatField(null=True, blank=True)
    std_accuracy = models.FloatField(null=True, blank=True)
    baseline_mean_accuracy = models.FloatField(null=True, blank=True)
    output_dir = models.CharField(max_length=500, blank=True, default='')
    created_at = models.DateTimeField(default=timezone.now)

    class Meta:
        ordering = ['-created_at', '-id']

    def __str__(self):
        return f"{self.name} ({self.status})"


class TrialResult(models.Model):
    run = models.ForeignKey(ExperimentRun, on_delete=models.CASCADE, related_name='trials')
    index = models.PositiveIntegerField()
    seed = models.IntegerField()
    accuracy = models.FloatField(null=True, blank=True)
    baseline_accuracy = models.FloatField(null=True, blank=True)
    n_domains = models.PositiveIntegerField(null=True, blank=True)
    truncated = models.BooleanField(default=False)
    # k -> ||J^k||_F, one entry per path step plus the final coding pass.
    residue_curve = models.JSONField(default=list)
    error = models.TextField(blank=True, default='')

    class Meta:
        ordering = ['run', 'index']
        constraints = [
            models.UniqueConstraint(fields=['run', 'index'], name='unique_trial_per_run'),
        ]

    def __str__(self):
        return f"{self.run.name} trial {self.index}"
