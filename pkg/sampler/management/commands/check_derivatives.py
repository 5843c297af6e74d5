import numpy as np
from django.core.management.base import BaseCommand, CommandError

from sampler.compactness import SamplingRegion
from sampler.examples import EXAMPLES, build_example
from sampler.geometry import check_derivatives
from sampler.management.utils import EXIT_NUMERIC

JACOBIAN_TOL = 1e-5
HESSIAN_TOL = 1e-4

# Keep away from the log singularities at the ends of the unit interval.
INTERIOR = {'beta': ([0.05], [0.95])}

DEFAULT_PARAMS = {'beta': {'a': 2.0, 'b': 4.0}}


class Command(BaseCommand):
    help = 'Check analytic Jacobians/Hessians of the built-in examples against central differences'

    def add_arguments(self, parser):
        parser.add_argument('--example', action='append', choices=list(EXAMPLES), help='Restrict to these examples')
        parser.add_argument('--points', type=int, default=100, help='Random points per example')
        parser.add_argument('--seed', type=int, default=0)

    def handle(self, *args, **options):
        names = options['example'] or list(EXAMPLES)
        rng = np.random.default_rng(options['seed'])
        failures = []
        for name in names:
            problem = build_example({'name': name, 'params': DEFAULT_PARAMS.get(name, {})})
            region = problem.region
            if name in INTERIOR:
                region = SamplingRegion(*INTERIOR[name])
            thetas = region.uniform(rng, options['points'])
            jac_err, hess_err = check_derivatives(problem.model, thetas)
            ok = jac_err <= JACOBIAN_TOL and (hess_err is None or hess_err <= HESSIAN_TOL)
            hess_text = 'n/a' if hess_err is None else f'{hess_err:.2e}'
            line = f'{name:<16} jacobian {jac_err:.2e}  hessian {hess_text}'
            if ok:
                self.stdout.write(self.style.SUCCESS(line))
            else:
                self.stdout.write(self.style.ERROR(line))
                failures.append(name)
        if failures:
            raise CommandError(f"derivative check failed for: {', '.join(failures)}", returncode=EXIT_NUMERIC)
