import logging

from celery import shared_task

from .forms import ConfigError, validate_run_config
from .models import SamplingRun
from .pipeline import run_pipeline

logger = logging.getLogger(__name__)


@shared_task
def run_experiment_task(run_id, chain_path=None, output_dir=None):
    try:
        run = SamplingRun.objects.get(id=run_id)
    except SamplingRun.DoesNotExist:
        logger.warning("SamplingRun %s vanished before the task started", run_id)
        return None

    try:
        cfg = validate_run_config(run.config)
    except ConfigError as exc:
        run.mark_failed(str(exc))
        return None

    run = run_pipeline(cfg, output_dir=output_dir or run.output_dir, chain_path=chain_path, run=run)
    return run.report
