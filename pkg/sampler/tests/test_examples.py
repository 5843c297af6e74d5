import numpy as np
from django.test import SimpleTestCase
from scipy import optimize

from sampler.basechain import TargetDensity
from sampler.examples import (
    EXAMPLES,
    ExampleSpec,
    beta,
    build_example,
    klein,
    parabola,
    reparabola,
    rotation_matrix,
    synthetic_highd,
)
from sampler.geometry import InvalidInput, check_derivatives, evaluate_geometry


def _target_values(problem, xs):
    target = TargetDensity(problem.model, problem.gaussian, problem.region)
    return np.array([target(np.atleast_1d(x)) for x in xs])


class ParabolaTests(SimpleTestCase):
    def test_log_density(self):
        problem = parabola()
        xs = np.linspace(-3.0, 3.0, 61)
        np.testing.assert_allclose(_target_values(problem, xs), problem.log_density(xs), atol=1e-12)

    def test_stationary_points(self):
        problem = parabola()

        def score(x):
            theta = np.array([x])
            return float(problem.model.jacobian_at(theta)[:, 0] @ (problem.model.evaluate(theta) - [1.0, 2.0]))

        roots = sorted(optimize.brentq(score, lo, hi) for lo, hi in [(-1.5, -0.7), (-0.7, 0.0), (1.0, 2.0)])
        np.testing.assert_allclose(roots, [-1.0, (1 - np.sqrt(3)) / 2, (1 + np.sqrt(3)) / 2], atol=1e-10)

    def test_metric_term_below_curvature_everywhere(self):
        problem = parabola()
        for x in np.linspace(-3.0, 3.0, 10000):
            geom = evaluate_geometry(problem.model, np.array([x]))
            lambda_sq = 1.0 / (9.0 * geom.F_I[0, 0])
            self.assertLess(lambda_sq, geom.kappa)


class KleinTests(SimpleTestCase):
    def test_rotation(self):
        R = rotation_matrix(0)
        np.testing.assert_allclose(R.T @ R, np.eye(5), atol=1e-12)
        self.assertAlmostEqual(np.linalg.det(R), 1.0)
        np.testing.assert_array_equal(rotation_matrix(0), R)

    def test_image_leaves_the_coordinate_subspace(self):
        problem = klein()
        R = rotation_matrix(0)
        alpha = problem.model.evaluate(np.array([4.0, 1.0, 2.0]))
        self.assertAlmostEqual((R.T @ alpha)[4], 0.0)
        self.assertGreater(np.abs(alpha[4]), 1e-6)

    def test_second_fundamental_form_has_rank_two(self):
        problem = klein()
        rng = np.random.default_rng(1)
        for theta in problem.region.uniform(rng, 20):
            geom = evaluate_geometry(problem.model, theta)
            eig = np.sort(np.abs(np.linalg.eigvalsh(geom.F_II)))
            self.assertLess(eig[0], 1e-8 * eig[-1])
            self.assertGreater(eig[1], 1e-8 * eig[-1])

    def test_target_point(self):
        problem = klein()
        np.testing.assert_allclose(problem.gaussian.beta_star,
                                   problem.model.evaluate(np.array([3.0, np.pi / 4, np.pi / 2])))


class ReparabolaTests(SimpleTestCase):
    def test_same_density_as_parabola(self):
        xs = np.linspace(-3.0, 3.0, 61)
        np.testing.assert_allclose(_target_values(reparabola(), xs), parabola().log_density(xs), atol=1e-12)

    def test_metric_vanishes_at_stationary_points(self):
        model = reparabola().model
        for xi in (-1.0, (1 - np.sqrt(3)) / 2, (1 + np.sqrt(3)) / 2):
            self.assertAlmostEqual(model.jacobian_at(np.array([xi]))[0, 0], 0.0, places=10)

    def test_minimum_of_image(self):
        model = reparabola().model
        xi = (1 + np.sqrt(3)) / 2
        self.assertAlmostEqual(model.evaluate(np.array([xi]))[0], 0.5 * np.sqrt(11 - 6 * np.sqrt(3)), places=10)

    def test_has_no_hessian(self):
        problem = reparabola()
        self.assertFalse(problem.model.has_hessian)
        self.assertTrue(problem.metric_only)


class BetaTests(SimpleTestCase):
    def test_signed_density_is_beta(self):
        for a, b in [(2.0, 4.0), (0.8, 0.8)]:
            problem = beta(a, b)
            xs = np.linspace(0.01, 0.99, 99)
            np.testing.assert_allclose(_target_values(problem, xs), problem.log_density(xs), atol=1e-10)

    def test_mode(self):
        problem = beta(2.0, 4.0)
        xs = np.linspace(0.001, 0.999, 999)
        self.assertAlmostEqual(xs[np.argmax(problem.log_density(xs))], 0.25, delta=0.001)

    def test_symmetric_case(self):
        problem = beta(0.8, 0.8)
        xs = np.linspace(0.05, 0.45, 9)
        np.testing.assert_allclose(problem.log_density(xs), problem.log_density(1.0 - xs), atol=1e-12)

    def test_signature(self):
        np.testing.assert_array_equal(beta(2.0, 4.0).model.metric_signature, [-1.0, 1.0, 1.0])

    def test_invalid_shape(self):
        with self.assertRaises(InvalidInput):
            beta(0.0, 1.0)


class SyntheticTests(SimpleTestCase):
    def test_affine_version_is_flat(self):
        problem = synthetic_highd(amplitude=0.0)
        H = problem.model.hessian_at(np.array([0.3, -0.1]))
        np.testing.assert_array_equal(H, 0.0)

    def test_seeded(self):
        a = synthetic_highd(seed=3).model.evaluate(np.array([0.1, 0.2]))
        b = synthetic_highd(seed=3).model.evaluate(np.array([0.1, 0.2]))
        np.testing.assert_array_equal(a, b)

    def test_dimensions(self):
        with self.assertRaises(InvalidInput):
            synthetic_highd(s=3, d=3)


class DerivativeTests(SimpleTestCase):
    def test_every_example_passes_the_derivative_check(self):
        rng = np.random.default_rng(0)
        problems = [parabola(), klein(), reparabola(), beta(2.0, 4.0), synthetic_highd(d=30)]
        for problem in problems:
            region = problem.region
            if problem.spec.name == 'beta':
                thetas = rng.uniform(0.05, 0.95, size=(100, 1))
            else:
                thetas = region.uniform(rng, 100)
            jac_err, hess_err = check_derivatives(problem.model, thetas)
            self.assertLess(jac_err, 1e-5, problem.spec.name)
            if hess_err is not None:
                self.assertLess(hess_err, 1e-4, problem.spec.name)


class RegistryTests(SimpleTestCase):
    def test_registry(self):
        self.assertEqual(set(EXAMPLES), {'parabola', 'klein', 'reparabola', 'beta', 'synthetic_highd'})

    def test_build_from_name_dict_and_spec(self):
        self.assertEqual(build_example('parabola').spec.name, 'parabola')
        problem = build_example({'name': 'beta', 'params': {'a': 2, 'b': 4}})
        self.assertEqual(problem.spec.params, {'a': 2, 'b': 4})
        self.assertEqual(build_example(ExampleSpec('klein', {'rotation_seed': 1})).model.d, 5)

    def test_unknown_example(self):
        with self.assertRaises(InvalidInput):
            build_example('torus')

    def test_bad_parameters(self):
        with self.assertRaises(InvalidInput):
            build_example({'name': 'parabola', 'params': {'width': 2}})
