"""
End-to-end orchestration shared by the management commands and the Celery
task: example -> whitening -> base chain -> decoration -> upsampling ->
evaluation -> files on disk.
"""

from __future__ import annotations

import logging
import shutil
import subprocess
import time
from contextlib import contextmanager
from dataclasses import replace
from pathlib import Path
from typing import Optional

import numpy as np
from django.conf import settings

from . import __version__
from .basechain import ChainError, TargetDensity, build_base_chain, downsample, metropolis_hastings
from .compactness import METRIC_AND_CURVATURE, METRIC_ONLY, CompactnessConfig, CompactnessError
from .diagnostics import (
    AUGMENT,
    POST_HOC,
    TRANSFORM,
    DiagnosticsError,
    augment_map,
    compute_error_weights,
    expectation_error,
    prior_reweight,
    projection_residuals,
    transform_prior,
)
from .evaluation import (
    EvaluationError,
    TestFunction,
    analytic_histogram,
    effective_sample_size,
    grouped_effective_sample_size,
    hellinger,
    weighted_expectation,
    weighted_histogram,
)
from .examples import build_example
from .forms import STAGE_REFERENCE, ConfigError, RunConfig, stage_seed
from .geometry import CallCounter, GeometryError, InvalidInput, NotAvailable, whiten
from .models import SamplingRun
from .storage import (
    StorageError,
    read_chain_thetas,
    write_base_chain,
    write_histogram_csv,
    write_report,
    write_samples_csv,
    write_samples_jsonl,
)
from .upsampler import UpsampleError, upsample

logger = logging.getLogger(__name__)

NUMERIC_ERRORS = (GeometryError, CompactnessError, ChainError, UpsampleError, DiagnosticsError, EvaluationError)


def source_version() -> str:
    try:
        out = subprocess.run(['git', 'rev-parse', '--short', 'HEAD'], capture_output=True, text=True,
                             timeout=5, cwd=settings.BASE_DIR)
    except (OSError, subprocess.SubprocessError):
        return 'unknown'
    return out.stdout.strip() or 'unknown'


class StageTimer:
    def __init__(self):
        self.seconds = {}

    @contextmanager
    def stage(self, name):
        start = time.perf_counter()
        try:
            yield
        finally:
            self.seconds[name] = round(time.perf_counter() - start, 6)
            logger.info("Stage %s took %.3fs", name, self.seconds[name])


def json_safe(value):
    """Replace non-finite floats by None so reports stay strict JSON."""
    if isinstance(value, dict):
        return {k: json_safe(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [json_safe(v) for v in value]
    if isinstance(value, (float, np.floating)):
        return float(value) if np.isfinite(value) else None
    if isinstance(value, np.integer):
        return int(value)
    return value


def default_output_dir(cfg: RunConfig) -> Path:
    return Path(settings.SAMPLER_OUTPUT_ROOT) / f'{cfg.example.name}-seed{cfg.seed}'


def _marginal_key(dims):
    return '_'.join(f'theta{d}' for d in dims)


def _identity(thetas):
    return thetas


def _apply_prior_route(prior, problem):
    """
    (model, gaussian, region, to_theta) the chain runs on.

    to_theta maps sampled coordinates back to the example's parameters; it
    is the identity unless the prior route samples in inverse-CDF space.
    """
    model, gaussian, region = problem
    if prior is None or prior.route == POST_HOC:
        return model, gaussian, region, _identity
    if prior.route == AUGMENT:
        model, gaussian = augment_map(model, gaussian, prior.mean, prior.cov)
        logger.info("Folded gaussian prior into %s (d=%d)", problem.model.name, model.d)
        return model, gaussian, region, _identity
    model, region, to_theta = transform_prior(model, prior, region)
    logger.info("Sampling %s in inverse-CDF coordinates of the %s prior", problem.model.name, prior.kind)
    return model, gaussian, region, to_theta


def _compactness_for(cfg: CompactnessConfig, problem, model) -> CompactnessConfig:
    if cfg.mode == METRIC_AND_CURVATURE and (problem.metric_only or not model.has_hessian):
        logger.info("Model %s has no usable curvature; compactness runs metric-only", model.name)
        return replace(cfg, mode=METRIC_ONLY)
    return cfg


def _reference_histograms(cfg: RunConfig, problem, target, chain_thetas, marginals, workers, to_theta):
    """Reference histogram per marginal in parameter space, or {} when no reference applies."""
    ev = cfg.evaluation
    region = problem.region
    if ev.reference == 'none':
        return {}
    if ev.reference == 'analytic':
        if problem.log_density is None or region.s != 1:
            logger.warning("Example %s has no analytic density; skipping reference", cfg.example.name)
            return {}
        log_density = problem.log_density
        if cfg.prior is not None and cfg.prior.route != POST_HOC:
            def log_density(x):
                x = np.asarray(x, dtype=float)
                return problem.log_density(x) + cfg.prior.log_density(x.reshape(-1, 1))
        hist = analytic_histogram(log_density, region, ev.bins, ev.bin_width)
        return {(0,): hist}
    if chain_thetas is None:
        ref_cfg = replace(cfg.chain, n_steps=ev.reference_steps, burn_in=min(cfg.chain.burn_in, ev.reference_steps - 1),
                          thinning=1, seed=stage_seed(cfg.seed, STAGE_REFERENCE))
        chain_thetas = metropolis_hastings(target, ref_cfg).thetas
    chain_thetas = to_theta(chain_thetas)
    return {
        dims: weighted_histogram(chain_thetas, None, region, ev.bins, dims, ev.bin_width, workers)
        for dims in marginals
    }


def execute(cfg: RunConfig, output_dir, external_chain: Optional[np.ndarray] = None,
            workers: Optional[int] = None) -> dict:
    """
    Run every stage and write results into output_dir (which must exist).

    Returns the report dict also written to report.json.
    """
    output_dir = Path(output_dir)
    workers = int(workers or getattr(settings, 'SAMPLER_WORKERS', 1))
    timer = StageTimer()
    ev = cfg.evaluation
    prior = cfg.prior

    with timer.stage('example'):
        try:
            problem = build_example(cfg.example)
            if prior is not None:
                prior.check_dimension(problem.model.s)
            if external_chain is not None and prior is not None and prior.route == TRANSFORM:
                raise ConfigError("an external chain cannot be combined with the transform prior route")
            model, gaussian, region, to_theta = _apply_prior_route(prior, problem)
        except (InvalidInput, DiagnosticsError) as exc:
            raise ConfigError(str(exc)) from exc
        compactness_cfg = _compactness_for(cfg.compactness, problem, model)
        white_model, white_gauss = whiten(model, gaussian)
        counter = CallCounter()
        counted_model, _ = whiten(model.with_counter(counter), gaussian)
        target = TargetDensity(white_model, white_gauss, region)

    chain_info = {}
    mh_thetas = None
    if external_chain is None:
        with timer.stage('base_chain'):
            chain = metropolis_hastings(target, cfg.chain)
            mh_thetas = chain.thetas
            base_thetas = downsample(chain.thetas, cfg.chain.n_base)
        chain_info = {'source': 'metropolis_hastings', 'n_steps': chain.n_steps, 'n_kept': len(chain),
                      'acceptance_rate': chain.acceptance_rate}
    else:
        if external_chain.shape[1] != problem.model.s:
            raise ConfigError(f"chain states have dimension {external_chain.shape[1]}, "
                              f"example '{cfg.example.name}' has {problem.model.s} parameters")
        n_base = min(cfg.chain.n_base, len(external_chain))
        base_thetas = downsample(external_chain, n_base)
        chain_info = {'source': 'external', 'n_kept': len(external_chain)}

    with timer.stage('decorate'):
        entries = build_base_chain(base_thetas, counted_model, white_gauss, region, compactness_cfg, workers)

    with timer.stage('upsample'):
        result = upsample(entries, white_gauss, region, replace(cfg.upsample, workers=workers))
    samples = result.samples

    with timer.stage('evaluate'):
        param_region = problem.region
        param_thetas = to_theta(samples.thetas)
        param_base = to_theta(base_thetas)
        marginals = ev.marginals or [tuple(range(param_region.s))]
        references = _reference_histograms(cfg, problem, target, mh_thetas, marginals, workers, to_theta)
        hellinger_report = {}
        for dims in marginals:
            key = _marginal_key(dims)
            projected = weighted_histogram(param_thetas, samples.weights, param_region, ev.bins, dims,
                                           ev.bin_width, workers)
            base = weighted_histogram(param_base, None, param_region, ev.bins, dims, ev.bin_width, workers)
            write_histogram_csv(projected, output_dir / f'hist_{key}_projected.csv')
            write_histogram_csv(base, output_dir / f'hist_{key}_base.csv')
            reference = references.get(tuple(dims))
            if reference is not None:
                write_histogram_csv(reference, output_dir / f'hist_{key}_reference.csv')
                hellinger_report[key] = {'projected': hellinger(projected, reference),
                                         'base': hellinger(base, reference)}

        error_weights = None
        if ev.error_weights:
            try:
                error_weights, _ = compute_error_weights(entries, samples, white_gauss.beta_star,
                                                         white_model.metric_signature)
            except NotAvailable as exc:
                logger.info("Skipping error weights: %s", exc)

        expectations = {}
        for name in ev.test_functions:
            tau = TestFunction.parse(name)
            mean, mc_error = weighted_expectation(param_thetas, samples.weights, tau)
            base_mean, base_mc = weighted_expectation(param_base, np.ones(len(param_base)), tau)
            item = {'E_tau_w': mean, 'mc_error': mc_error, 'base_mean': base_mean, 'base_mc_error': base_mc,
                    'ess_grouped': grouped_effective_sample_size(param_thetas, samples.weights,
                                                                 samples.base_index, tau)}
            if error_weights is not None:
                err = expectation_error(samples, error_weights, lambda th, tau=tau: tau(to_theta(th)))
                item.update({'Delta_E': err['Delta_E'], 'flagged': err['flagged']})
            expectations[name] = item

        prior_report = None
        if prior is not None:
            prior_report = {'kind': prior.kind, 'route': prior.route}
            if prior.route == POST_HOC:
                w_pi = prior_reweight(samples, prior)
                prior_report.update({'ess': effective_sample_size(w_pi), 'expectations': {}})
                for name in ev.test_functions:
                    mean, mc_error = weighted_expectation(samples.thetas, w_pi, TestFunction.parse(name))
                    prior_report['expectations'][name] = {'E_tau_w': mean, 'mc_error': mc_error}

        residual_report = None
        if cfg.upsample.keep_beta_perp:
            residuals = projection_residuals(white_model, entries, samples)
            residual_report = {'median_within_one_sigma': residuals.median_residual(1.0),
                               'median': residuals.median_residual(np.inf)}

    with timer.stage('write'):
        write_base_chain(entries, output_dir / 'base_chain.jsonl')
        write_samples_jsonl(samples, output_dir / 'samples.jsonl')
        write_samples_csv(samples, output_dir / 'samples.csv')

    report = json_safe({
        'version': __version__,
        'source_version': source_version(),
        'seed': cfg.seed,
        'example': cfg.example.as_dict(),
        'config': cfg.raw,
        'chain': chain_info,
        'compactness': {'mode': compactness_cfg.mode, 'epsilon': compactness_cfg.epsilon},
        'base': {'n': len(entries), 'flagged': sum(1 for e in entries if e.flagged)},
        'upsample': result.report.as_dict(),
        'call_counts': counter.as_dict(),
        'ess': effective_sample_size(samples.weights),
        'hellinger': hellinger_report,
        'expectations': expectations,
        'prior': prior_report,
        'projection_residuals': residual_report,
        'stage_seconds': timer.seconds,
    })
    write_report(report, output_dir / 'report.json')
    return report


def run_pipeline(cfg: RunConfig, output_dir=None, chain_path=None, workers=None,
                 run: Optional[SamplingRun] = None) -> SamplingRun:
    """
    Execute a run inside '<output_dir>.partial', renaming it on success and
    removing it on failure. Progress is tracked on a SamplingRun row.
    """
    output_dir = Path(output_dir or cfg.output_dir or default_output_dir(cfg))
    chain_path = chain_path or cfg.chain_path
    if run is None:
        run = SamplingRun.objects.create(
            kind=SamplingRun.KIND_POST_HOC if chain_path else SamplingRun.KIND_RUN,
            example=cfg.example.name,
            seed=cfg.seed,
            config=cfg.raw,
            output_dir=str(output_dir),
        )
    run.mark_running()

    partial = output_dir.with_name(output_dir.name + '.partial')
    try:
        external = read_chain_thetas(chain_path) if chain_path else None
        if partial.exists():
            shutil.rmtree(partial)
        partial.mkdir(parents=True)
        report = execute(cfg, partial, external_chain=external, workers=workers)
        if output_dir.exists():
            shutil.rmtree(output_dir)
        partial.rename(output_dir)
    except Exception as exc:
        logger.error("Run %s failed: %s", run.pk, exc)
        shutil.rmtree(partial, ignore_errors=True)
        run.mark_failed(str(exc))
        raise

    run.mark_finished(report)
    logger.info("Run %s finished; outputs in %s", run.pk, output_dir)
    return run
