from unittest import mock

import numpy as np
from django.test import SimpleTestCase
from scipy import integrate, stats

from sampler.basechain import (
    FISHER,
    FLAG_DEGENERATE,
    FLAG_SINGULAR,
    ChainConfig,
    ChainError,
    TargetDensity,
    build_base_chain,
    decorate_entry,
    downsample,
    metropolis_hastings,
)
from sampler.compactness import CONSTANT, CompactnessConfig, DegenerateCompactness, SamplingRegion
from sampler.evaluation import analytic_histogram, hellinger, weighted_histogram
from sampler.examples import klein, parabola, reparabola, synthetic_highd
from sampler.geometry import AmbientGaussian, ManifoldModel, whiten


def _line_model():
    """alpha(x) = (x, 0): restricted to it, N(0, I) is a standard normal in x."""
    return ManifoldModel(s=1, d=2, embedding=lambda t: np.array([t[0], 0.0]),
                         jacobian=lambda t: np.array([[1.0], [0.0]]))


def _whitened(problem):
    model, gaussian = whiten(problem.model, problem.gaussian)
    return model, gaussian, problem.region


class TargetDensityTests(SimpleTestCase):
    def test_parabola_log_density(self):
        problem = parabola()
        target = TargetDensity(problem.model, problem.gaussian, problem.region)
        for x in (-2.0, 0.0, 1.3):
            self.assertAlmostEqual(target(np.array([x])), float(problem.log_density(x)), places=12)

    def test_outside_region_has_zero_density(self):
        problem = parabola()
        target = TargetDensity(problem.model, problem.gaussian, problem.region)
        self.assertEqual(target(np.array([3.5])), -np.inf)

    def test_dimension_mismatch(self):
        problem = parabola()
        with self.assertRaises(ChainError):
            TargetDensity(problem.model, AmbientGaussian.standard(np.zeros(3)), problem.region)


class ChainConfigTests(SimpleTestCase):
    def test_default_step_is_fraction_of_region(self):
        region = SamplingRegion([-3.0, 0.0], [3.0, 10.0])
        np.testing.assert_allclose(ChainConfig().step_sizes(region), [0.15, 0.25])

    def test_invalid_settings(self):
        with self.assertRaises(ChainError):
            ChainConfig(n_steps=10, burn_in=10)
        with self.assertRaises(ChainError):
            ChainConfig(thinning=0)
        with self.assertRaises(ChainError):
            ChainConfig(proposal_kind='langevin')
        with self.assertRaises(ChainError):
            ChainConfig(proposal_scale=-1.0).step_sizes(SamplingRegion([0.0], [1.0]))

    def test_fisher_proposal_takes_scalar_scale(self):
        with self.assertRaises(ChainError):
            ChainConfig(proposal_kind=FISHER, proposal_scale=[0.1, 0.2])
        np.testing.assert_allclose(ChainConfig(proposal_kind=FISHER, proposal_scale=0.5)
                                   .step_sizes(SamplingRegion([0.0], [1.0])), [0.5])


class MetropolisHastingsTests(SimpleTestCase):
    def test_same_seed_same_chain(self):
        problem = parabola()
        target = TargetDensity(problem.model, problem.gaussian, problem.region)
        cfg = ChainConfig(n_steps=2000, seed=11)
        a = metropolis_hastings(target, cfg)
        b = metropolis_hastings(target, cfg)
        np.testing.assert_array_equal(a.thetas, b.thetas)
        self.assertEqual(a.n_accepted, b.n_accepted)

    def test_burn_in_and_thinning(self):
        problem = parabola()
        target = TargetDensity(problem.model, problem.gaussian, problem.region)
        chain = metropolis_hastings(target, ChainConfig(n_steps=1000, burn_in=100, thinning=9))
        self.assertEqual(len(chain), 100)
        self.assertTrue(np.all(problem.region.contains(chain.thetas)))

    def test_flat_target_accepts_everything(self):
        model = ManifoldModel(s=1, d=2, embedding=lambda t: np.array([0.0, 0.0]),
                              jacobian=lambda t: np.zeros((2, 1)))
        region = SamplingRegion([-1000.0], [1000.0])
        target = TargetDensity(model, AmbientGaussian.standard([0.0, 0.0]), region)
        chain = metropolis_hastings(target, ChainConfig(n_steps=200, proposal_scale=1.0))
        self.assertEqual(chain.acceptance_rate, 1.0)

    def test_standard_normal_marginal(self):
        region = SamplingRegion([-10.0], [10.0])
        target = TargetDensity(_line_model(), AmbientGaussian.standard([0.0, 0.0]), region)
        cfg = ChainConfig(n_steps=250000, burn_in=1000, thinning=25, proposal_scale=2.4, seed=5)
        chain = metropolis_hastings(target, cfg)
        result = stats.kstest(chain.thetas[:, 0], 'norm')
        self.assertLess(result.statistic, 0.02)

    def test_parabola_mean(self):
        problem = parabola()
        xs = np.linspace(-3.0, 3.0, 20001)
        density = np.exp(problem.log_density(xs))
        exact = integrate.trapezoid(xs * density, xs) / integrate.trapezoid(density, xs)
        self.assertAlmostEqual(exact, 0.98, delta=0.01)

        target = TargetDensity(problem.model, problem.gaussian, problem.region)
        chain = metropolis_hastings(target, ChainConfig(n_steps=100000, burn_in=1000, proposal_scale=1.0, seed=8))
        self.assertAlmostEqual(float(np.mean(chain.thetas[:, 0])), exact, delta=0.02)

    def test_downsampled_parabola_chain_is_a_rough_histogram(self):
        problem = parabola()
        target = TargetDensity(problem.model, problem.gaussian, problem.region)
        chain = metropolis_hastings(target, ChainConfig(n_steps=40000, burn_in=1000, seed=6))
        base = weighted_histogram(downsample(chain.thetas, 200), None, problem.region, 100)
        reference = analytic_histogram(problem.log_density, problem.region, 100)
        distance = hellinger(base, reference)
        self.assertGreaterEqual(distance, 0.12)
        self.assertLessEqual(distance, 0.5)

    def test_initial_point_must_have_density(self):
        problem = parabola()
        target = TargetDensity(problem.model, problem.gaussian, problem.region)
        with self.assertRaises(ChainError):
            metropolis_hastings(target, ChainConfig(n_steps=10), initial=[5.0])

    def test_fisher_proposal_stays_in_region(self):
        model, gaussian, region = _whitened(parabola())
        target = TargetDensity(model, gaussian, region)
        chain = metropolis_hastings(target, ChainConfig(n_steps=3000, proposal_kind=FISHER, seed=2))
        self.assertGreater(chain.acceptance_rate, 0.1)
        self.assertTrue(np.all(region.contains(chain.thetas)))


class DownsampleTests(SimpleTestCase):
    def test_uniform_stride(self):
        chain = np.arange(1000.0)
        picked = downsample(chain, 200)
        np.testing.assert_array_equal(picked[:, 0], np.arange(0.0, 1000.0, 5.0))

    def test_uneven_stride_keeps_n(self):
        picked = downsample(np.arange(10.0), 3)
        np.testing.assert_array_equal(picked[:, 0], [0.0, 3.0, 6.0])

    def test_too_many_requested(self):
        with self.assertRaises(ChainError):
            downsample(np.arange(5.0), 6)


class DecorationTests(SimpleTestCase):
    def test_parabola_vertex_compactness(self):
        model, gaussian, region = _whitened(parabola())
        (entry,) = build_base_chain([[0.0]], model, gaussian, region, CompactnessConfig(epsilon=0.1))
        self.assertAlmostEqual(entry.kappa, 2.0)
        self.assertAlmostEqual(entry.lambda_sq, 1.0 / 9.0)
        self.assertAlmostEqual(entry.c, 20.0)
        self.assertFalse(entry.flagged)

    def test_curvature_dominates_on_parabola(self):
        model, gaussian, region = _whitened(parabola())
        xs = np.linspace(-3.0, 3.0, 41)[:, None]
        for entry in build_base_chain(xs, model, gaussian, region, CompactnessConfig()):
            self.assertGreater(entry.kappa, entry.lambda_sq)

    def test_affine_model_uses_metric_term(self):
        model, gaussian, region = _whitened(synthetic_highd(amplitude=0.0))
        (entry,) = build_base_chain([[0.2, -0.3]], model, gaussian, region, CompactnessConfig(epsilon=0.1))
        self.assertAlmostEqual(entry.kappa, 0.0, places=10)
        self.assertAlmostEqual(entry.c, entry.lambda_sq / 0.1)

    def test_singular_point_is_flagged(self):
        model, gaussian, region = _whitened(reparabola())
        entries = build_base_chain([[-1.0], [0.5]], model, gaussian, region, CompactnessConfig(epsilon=0.005))
        self.assertEqual(entries[0].flag, FLAG_SINGULAR)
        self.assertEqual(entries[0].c, np.inf)
        self.assertIsNone(entries[0].J_plus)
        self.assertFalse(entries[1].flagged)

    def test_near_singular_point_is_flagged_above_threshold(self):
        model, gaussian, region = _whitened(reparabola())
        loose = decorate_entry(0, [-1.0005], model, region, CompactnessConfig(epsilon=0.005, mode='metric_only'))
        self.assertFalse(loose.flagged)
        self.assertTrue(np.isfinite(loose.c))
        self.assertGreater(loose.lambda_sq, 1e5)

        capped = CompactnessConfig(epsilon=0.005, mode='metric_only', singular_lambda_sq=100.0)
        entry = decorate_entry(0, [-1.0005], model, region, capped)
        self.assertEqual(entry.flag, FLAG_SINGULAR)
        self.assertEqual(entry.c, np.inf)
        self.assertAlmostEqual(entry.lambda_sq, loose.lambda_sq)
        self.assertFalse(decorate_entry(1, [0.5], model, region, capped).flagged)

    def test_degenerate_compactness_is_flagged(self):
        model, gaussian, region = _whitened(parabola())
        with mock.patch('sampler.basechain.compactness', side_effect=DegenerateCompactness('zero')):
            entry = decorate_entry(0, [0.5], model, region, CompactnessConfig())
        self.assertEqual(entry.flag, FLAG_DEGENERATE)
        self.assertEqual(entry.c, np.inf)
        self.assertIsNotNone(entry.J_plus)

    def test_constant_mode(self):
        model, gaussian, region = _whitened(klein())
        cfg = CompactnessConfig(mode=CONSTANT, constant_c=7.0)
        (entry,) = build_base_chain([[4.0, 1.0, 2.0]], model, gaussian, region, cfg)
        self.assertEqual(entry.c, 7.0)

    def test_points_outside_region_rejected(self):
        model, gaussian, region = _whitened(parabola())
        with self.assertRaises(ChainError):
            build_base_chain([[0.0], [4.0]], model, gaussian, region, CompactnessConfig())

    def test_requires_whitened_gaussian(self):
        problem = parabola()
        with self.assertRaises(ChainError):
            build_base_chain([[0.0]], problem.model, AmbientGaussian([1.0, 2.0], np.diag([4.0, 1.0])),
                             problem.region, CompactnessConfig())

    def test_worker_count_does_not_change_entries(self):
        model, gaussian, region = _whitened(klein())
        thetas = region.uniform(np.random.default_rng(4), 30)
        one = build_base_chain(thetas, model, gaussian, region, CompactnessConfig(), workers=1)
        many = build_base_chain(thetas, model, gaussian, region, CompactnessConfig(), workers=4)
        self.assertEqual([e.index for e in many], list(range(30)))
        np.testing.assert_array_equal([e.c for e in one], [e.c for e in many])
