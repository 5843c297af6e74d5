from django.core.management.base import BaseCommand

from sampler.evaluation import hellinger
from sampler.management.utils import command_errors
from sampler.storage import read_histogram_csv


class Command(BaseCommand):
    help = 'Hellinger distance between two exported histograms'

    def add_arguments(self, parser):
        parser.add_argument('hist_a')
        parser.add_argument('hist_b')

    def handle(self, *args, **options):
        with command_errors():
            d_h = hellinger(read_histogram_csv(options['hist_a']), read_histogram_csv(options['hist_b']))
        self.stdout.write(f'{d_h:.6f}')
