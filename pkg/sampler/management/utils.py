from contextlib import contextmanager

from django.core.management.base import CommandError

from sampler.forms import ConfigError
from sampler.pipeline import NUMERIC_ERRORS
from sampler.storage import StorageError

EXIT_CONFIG = 2
EXIT_NUMERIC = 3


@contextmanager
def command_errors():
    """Translate sampler failures into CommandError exit codes."""
    try:
        yield
    except (ConfigError, StorageError) as exc:
        raise CommandError(str(exc), returncode=EXIT_CONFIG) from exc
    except NUMERIC_ERRORS as exc:
        raise CommandError(f"numerical failure: {exc}", returncode=EXIT_NUMERIC) from exc
    except CommandError:
        raise
    except Exception as exc:
        raise CommandError(f"unexpected failure: {exc}", returncode=EXIT_NUMERIC) from exc


def add_run_arguments(parser):
    parser.add_argument('config_path', help='JSON run configuration')
    parser.add_argument('--set', dest='overrides', action='append', default=[], metavar='KEY=VALUE',
                        help='Override a config field by dotted path, e.g. compactness.epsilon=0.7')
    parser.add_argument('--workers', type=int, default=None, help='Worker threads (default SAMPLER_WORKERS)')
    parser.add_argument('--output-dir', default=None, help='Directory for outputs (default from config)')


def _fmt(value, spec='.4f'):
    return 'nan' if value is None else format(value, spec)


def summarize(stdout, style, run):
    report = run.report
    n_samples = report['upsample']['n_samples']
    stdout.write(style.SUCCESS(
        f"Run {run.pk} finished in {_fmt(run.duration, '.1f')}s: {n_samples} samples in {run.output_dir}"))
    for key, values in report.get('hellinger', {}).items():
        stdout.write(f"  d_H[{key}] projected={_fmt(values['projected'])} base={_fmt(values['base'])}")
    for name, values in report.get('expectations', {}).items():
        line = f"  E[{name}] = {_fmt(values['E_tau_w'])} +- {_fmt(values['mc_error'])}"
        if 'Delta_E' in values:
            line += f" (Delta_E {_fmt(values['Delta_E'], '+.4f')})"
        stdout.write(line)
    fraction = report['upsample']['boundary_fraction']
    if fraction > 0:
        stdout.write(style.WARNING(f"  boundary corrected fraction {fraction:.3f}"))
