from django.core.management.base import BaseCommand

from sampler.forms import apply_overrides, load_config_file, validate_run_config
from sampler.management.utils import add_run_arguments, command_errors, summarize
from sampler.pipeline import run_pipeline


class Command(BaseCommand):
    help = 'Decorate and upsample an existing chain (JSONL with a "theta" field per line)'

    def add_arguments(self, parser):
        parser.add_argument('chain_path', help='JSONL chain file')
        add_run_arguments(parser)

    def handle(self, *args, **options):
        with command_errors():
            raw = apply_overrides(load_config_file(options['config_path']), options['overrides'])
            cfg = validate_run_config(raw)
            run = run_pipeline(cfg, output_dir=options['output_dir'], chain_path=options['chain_path'],
                               workers=options['workers'])
        summarize(self.stdout, self.style, run)
