from django.core.management.base import BaseCommand

from sampler.forms import apply_overrides, load_config_file, validate_run_config
from sampler.management.utils import add_run_arguments, command_errors, summarize
from sampler.models import SamplingRun
from sampler.pipeline import default_output_dir, run_pipeline


class Command(BaseCommand):
    help = 'Run an experiment: base chain, decoration, upsampling and evaluation'

    def add_arguments(self, parser):
        add_run_arguments(parser)
        parser.add_argument('--async', dest='run_async', action='store_true',
                            help='Queue the run on the Celery worker instead of running it here')

    def handle(self, *args, **options):
        with command_errors():
            raw = apply_overrides(load_config_file(options['config_path']), options['overrides'])
            cfg = validate_run_config(raw)

            if options['run_async']:
                from sampler.tasks import run_experiment_task

                output_dir = options['output_dir'] or cfg.output_dir or default_output_dir(cfg)
                run = SamplingRun.objects.create(
                    kind=SamplingRun.KIND_POST_HOC if cfg.chain_path else SamplingRun.KIND_RUN,
                    example=cfg.example.name, seed=cfg.seed, config=cfg.raw, output_dir=str(output_dir),
                )
                run_experiment_task.delay(run.pk, chain_path=cfg.chain_path, output_dir=str(output_dir))
                self.stdout.write(self.style.SUCCESS(f'Queued run {run.pk}'))
                return

            run = run_pipeline(cfg, output_dir=options['output_dir'], workers=options['workers'])
        summarize(self.stdout, self.style, run)
