from django.core.management.base import BaseCommand

from sampler.examples import EXAMPLES


class Command(BaseCommand):
    help = 'List the built-in example problems'

    def handle(self, *args, **options):
        for name, (_, description) in EXAMPLES.items():
            self.stdout.write(f'{name:<16} {description}')
