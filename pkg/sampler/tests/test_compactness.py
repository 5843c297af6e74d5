import numpy as np
from django.test import SimpleTestCase

from sampler.compactness import (
    CONSTANT,
    METRIC_ONLY,
    CompactnessConfig,
    CompactnessError,
    DegenerateCompactness,
    SamplingRegion,
    compactness,
    region_scale,
)


class SamplingRegionTests(SimpleTestCase):
    def test_contains_is_vectorized(self):
        region = SamplingRegion([0.0, -1.0], [1.0, 1.0])
        inside = region.contains(np.array([[0.5, 0.0], [1.5, 0.0], [1.0, -1.0]]))
        np.testing.assert_array_equal(inside, [True, False, True])

    def test_half_lengths_and_centroid(self):
        region = SamplingRegion([2.0, 0.0], [8.0, 2.0])
        np.testing.assert_allclose(region.half_lengths, [3.0, 1.0])
        np.testing.assert_allclose(region.centroid, [5.0, 1.0])
        np.testing.assert_allclose(region.L, np.diag([1 / 9.0, 1.0]))

    def test_rejects_empty_region(self):
        with self.assertRaises(CompactnessError):
            SamplingRegion([1.0], [1.0])


class RegionScaleTests(SimpleTestCase):
    def test_parabola_metric_term(self):
        region = SamplingRegion([-3.0], [3.0])
        for x in (0.0, 1.0, 2.5):
            J = np.array([[1.0], [2.0 * x]])
            J_plus = J.T / (1.0 + 4.0 * x * x)
            self.assertAlmostEqual(region_scale(J_plus, region), 1.0 / (9.0 * (1.0 + 4.0 * x * x)), places=14)

    def test_matches_explicit_eigenvalue(self):
        rng = np.random.default_rng(1)
        J_plus = rng.standard_normal((3, 6))
        region = SamplingRegion([0.0, 0.0, 0.0], [2.0, 4.0, 6.0])
        explicit = np.linalg.eigvalsh(J_plus.T @ region.L @ J_plus).max()
        self.assertAlmostEqual(region_scale(J_plus, region), explicit, places=10)


class CompactnessTests(SimpleTestCase):
    def test_curvature_dominates_on_parabola_vertex(self):
        cfg = CompactnessConfig(epsilon=0.1)
        self.assertAlmostEqual(compactness(1.0 / 9.0, 2.0, cfg), 20.0)

    def test_metric_only(self):
        cfg = CompactnessConfig(epsilon=0.1, mode=METRIC_ONLY)
        self.assertAlmostEqual(compactness(1.0 / 9.0, 2.0, cfg), 10.0 / 9.0)

    def test_missing_curvature_falls_back_to_metric(self):
        cfg = CompactnessConfig(epsilon=0.5)
        self.assertAlmostEqual(compactness(0.25, None, cfg), 0.5)

    def test_constant(self):
        cfg = CompactnessConfig(mode=CONSTANT, constant_c=1e12)
        self.assertEqual(compactness(3.0, 4.0, cfg), 1e12)

    def test_absolute_values_for_indefinite_terms(self):
        cfg = CompactnessConfig(epsilon=1.0)
        self.assertAlmostEqual(compactness(-0.5, 0.2, cfg), 0.5)

    def test_degenerate(self):
        cfg = CompactnessConfig(epsilon=0.1)
        with self.assertRaises(DegenerateCompactness):
            compactness(0.0, 0.0, cfg)
        with self.assertRaises(DegenerateCompactness):
            compactness(np.inf, None, cfg)

    def test_config_validation(self):
        with self.assertRaises(CompactnessError):
            CompactnessConfig(epsilon=0.0)
        with self.assertRaises(CompactnessError):
            CompactnessConfig(mode='geodesic')
