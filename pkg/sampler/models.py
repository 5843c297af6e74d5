from django.db import models
from django.utils import timezone


class SamplingRun(models.Model):
    STATUS_PENDING = 'pending'
    STATUS_RUNNING = 'running'
    STATUS_FINISHED = 'finished'
    STATUS_FAILED = 'failed'
    STATUS_CHOICES = [
        (STATUS_PENDING, 'Pending'),
        (STATUS_RUNNING, 'Running'),
        (STATUS_FINISHED, 'Finished'),
        (STATUS_FAILED, 'Failed'),
    ]

    KIND_RUN = 'run'
    KIND_POST_HOC = 'post_hoc'
    KIND_CHOICES = [
        (KIND_RUN, 'Full run'),
        (KIND_POST_HOC, 'Post hoc upsampling'),
    ]

    kind = models.CharField(max_length=20, choices=KIND_CHOICES, default=KIND_RUN)
    status = models.CharField(max_length=20, choices=STATUS_CHOICES, default=STATUS_PENDING)
    example = models.CharField(max_length=50)
    seed = models.BigIntegerField(default=0)
    config = models.JSONField(default=dict)
    report = models.JSONField(default=dict, blank=True)
    output_dir = models.CharField(max_length=500)
    error_message = models.TextField(blank=True, default='')
    created_at = models.DateTimeField(auto_now_add=True)
    started_at = models.DateTimeField(null=True, blank=True)
    finished_at = models.DateTimeField(null=True, blank=True)

    class Meta:
        ordering = ['-created_at']

    def __str__(self):
        return f"{self.get_kind_display()} {self.example} (seed {self.seed}) - {self.status}"

    def mark_running(self):
        self.status = self.STATUS_RUNNING
        self.started_at = timezone.now()
        self.save(update_fields=['status', 'started_at'])

    def mark_finished(self, report):
        self.status = self.STATUS_FINISHED
        self.report = report
        self.finished_at = timezone.now()
        self.save(update_fields=['status', 'report', 'finished_at'])

    def mark_failed(self, message):
        self.status = self.STATUS_FAILED
        self.error_message = message
        self.finished_at = timezone.now()
        self.save(update_fields=['status', 'error_message', 'finished_at'])

    @property
    def duration(self):
        if self.started_at and self.finished_at:
            return (self.finished_at - self.started_at).total_seconds()
        return None
