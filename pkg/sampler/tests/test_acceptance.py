"""
End-to-end quality checks over several master seeds.

These run full pipelines (tens of seconds to minutes) and are skipped unless
SAMPLER_SLOW_TESTS=1.
"""
import os
import tempfile
import unittest
from pathlib import Path

import numpy as np
from django.conf import settings
from django.test import SimpleTestCase

from sampler.forms import apply_overrides, load_config_file, validate_run_config
from sampler.pipeline import execute
from sampler.storage import read_chain_thetas

SEEDS = (1, 2, 3, 4, 5)

slow = unittest.skipUnless(os.environ.get('SAMPLER_SLOW_TESTS') == '1', 'set SAMPLER_SLOW_TESTS=1 to run')


def run_config(name, seed, *overrides, with_base=False):
    raw = load_config_file(Path(settings.BASE_DIR, 'configs', name))
    cfg = validate_run_config(apply_overrides(raw, [f'seed={seed}', *overrides]))
    with tempfile.TemporaryDirectory() as tmp:
        report = execute(cfg, tmp)
        if with_base:
            return report, read_chain_thetas(Path(tmp) / 'base_chain.jsonl')
        return report


def median_over_seeds(name, extract, *overrides):
    return float(np.median([extract(run_config(name, seed, *overrides)) for seed in SEEDS]))


def projected(key='theta0'):
    return lambda report: report['hellinger'][key]['projected']


def base(key='theta0'):
    return lambda report: report['hellinger'][key]['base']


@slow
class ParabolaAcceptanceTest(SimpleTestCase):
    def test_headline_distance(self):
        reports = [run_config('parabola.json', seed) for seed in SEEDS]
        self.assertLessEqual(np.median([projected()(r) for r in reports]), 0.08)
        self.assertGreaterEqual(np.median([base()(r) for r in reports]), 0.12)

    def test_epsilon_sweep(self):
        for name in ('parabola_eps_0p007.json', 'parabola.json', 'parabola_eps_0p7.json'):
            self.assertLessEqual(median_over_seeds(name, projected()), 0.15, name)
        n_base = 200
        ess = median_over_seeds('parabola_eps_0p007.json', lambda r: r['expectations']['x']['ess_grouped'])
        self.assertLessEqual(ess, 3 * n_base)
        self.assertGreaterEqual(ess, n_base / 3)

    def test_expectation_error_ladder(self):
        mean = median_over_seeds('parabola_eps_0p007.json', lambda r: r['expectations']['x']['E_tau_w'])
        self.assertLessEqual(abs(mean - 0.98), 0.1)
        mean = median_over_seeds('parabola_eps_0p7.json', lambda r: r['expectations']['x']['E_tau_w'])
        self.assertLessEqual(abs(mean - 0.98), 0.3)
        shifts = [median_over_seeds(name, lambda r: abs(r['expectations']['x']['Delta_E']))
                  for name in ('parabola_eps_0p007.json', 'parabola.json', 'parabola_eps_0p7.json')]
        self.assertLess(shifts[0], shifts[1])
        self.assertLess(shifts[1], shifts[2])

    def test_reparametrized_parabola(self):
        singular = np.array([-1.0, (1 - np.sqrt(3)) / 2, (1 + np.sqrt(3)) / 2])
        distances, flagged = [], 0
        for seed in SEEDS:
            report, base_thetas = run_config('reparabola.json', seed, with_base=True)
            distances.append(projected()(report))
            near = np.min(np.abs(base_thetas[:, 0][:, None] - singular[None, :]), axis=1) < 1e-3
            self.assertGreaterEqual(report['base']['flagged'], int(near.sum()), seed)
            flagged += report['base']['flagged']
        self.assertLessEqual(np.median(distances), 0.09)
        self.assertGreater(flagged, 0)


@slow
class KleinAcceptanceTest(SimpleTestCase):
    def test_long_chain_beats_short_chain(self):
        key = 'theta0_theta1_theta2'
        short = [run_config('klein_s1.json', seed) for seed in SEEDS]
        d_short = np.median([projected(key)(r) for r in short])
        d_base = np.median([base(key)(r) for r in short])
        d_long = median_over_seeds('klein_s2.json', projected(key))
        self.assertLess(d_long, d_short)
        self.assertLess(d_short, d_base)
        self.assertLessEqual(abs(d_short - 0.41), 0.15)
        self.assertLessEqual(abs(d_long - 0.33), 0.15)


@slow
class BetaAcceptanceTest(SimpleTestCase):
    def test_both_shapes(self):
        for name in ('beta_0p8_0p8.json', 'beta_2_4.json'):
            reports = [run_config(name, seed) for seed in SEEDS]
            self.assertLessEqual(np.median([projected()(r) for r in reports]), 0.06, name)
            for report in reports:
                self.assertLess(projected()(report), base()(report), name)
