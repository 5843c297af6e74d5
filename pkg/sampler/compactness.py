"""
Per-base-point compactness c_i from region size and curvature.

All formulas assume a whitened ambient Gaussian (unit covariance).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

logger = logging.getLogger(__name__)

METRIC_AND_CURVATURE = 'metric_and_curvature'
METRIC_ONLY = 'metric_only'
CONSTANT = 'constant'

MODE_CHOICES = [
    (METRIC_AND_CURVATURE, 'max(lambda^2, kappa) / epsilon'),
    (METRIC_ONLY, 'lambda^2 / epsilon'),
    (CONSTANT, 'fixed c'),
]


class CompactnessError(Exception):
    pass


class DegenerateCompactness(CompactnessError):
    pass


@dataclass(frozen=True)
class SamplingRegion:
    """Hyperrectangle lower <= theta <= upper."""
    lower: np.ndarray
    upper: np.ndarray
    half_lengths: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        lower = np.atleast_1d(np.asarray(self.lower, dtype=float))
        upper = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lower.shape != upper.shape:
            raise CompactnessError("region bounds have different lengths")
        if not np.all(upper > lower):
            raise CompactnessError(f"region upper bounds must exceed lower bounds: {lower} / {upper}")
        object.__setattr__(self, 'lower', lower)
        object.__setattr__(self, 'upper', upper)
        object.__setattr__(self, 'half_lengths', 0.5 * (upper - lower))

    @property
    def s(self) -> int:
        return self.lower.size

    @property
    def L(self) -> np.ndarray:
        return np.diag(self.half_lengths ** -2)

    @property
    def centroid(self) -> np.ndarray:
        return 0.5 * (self.lower + self.upper)

    def contains(self, theta):
        """True where lower <= theta <= upper; vectorized over leading axes."""
        theta = np.asarray(theta, dtype=float)
        return np.all((theta >= self.lower) & (theta <= self.upper), axis=-1)

    def uniform(self, rng, size) -> np.ndarray:
        return rng.uniform(self.lower, self.upper, size=(size, self.s))

    def as_dict(self):
        return {'lower': self.lower.tolist(), 'upper': self.upper.tolist()}


@dataclass(frozen=True)
class CompactnessConfig:
    epsilon: float = 0.1
    mode: str = METRIC_AND_CURVATURE
    constant_c: float = 1.0
    # lambda^2 above this marks the entry singular; None leaves only exact singularities.
    singular_lambda_sq: Optional[float] = None

    def __post_init__(self):
        if not self.epsilon > 0:
            raise CompactnessError(f"epsilon must be positive, got {self.epsilon}")
        if not self.constant_c > 0:
            raise CompactnessError(f"constant_c must be positive, got {self.constant_c}")
        if self.mode not in dict(MODE_CHOICES):
            raise CompactnessError(f"unknown compactness mode '{self.mode}'")
        if self.singular_lambda_sq is not None and not self.singular_lambda_sq > 0:
            raise CompactnessError(f"singular_lambda_sq must be positive, got {self.singular_lambda_sq}")


def region_scale(J_plus, region: SamplingRegion) -> float:
    """
    Largest eigenvalue of (J^+)^T L J^+.

    Computed as the largest squared singular value of L^{1/2} J^+, which
    avoids forming the d x d matrix.
    """
    J_plus = np.atleast_2d(np.asarray(J_plus, dtype=float))
    scaled = J_plus / region.half_lengths[:, None]
    if not np.any(scaled):
        return 0.0
    singular = np.linalg.svd(scaled, compute_uv=False)
    return float(singular[0] ** 2)


def compactness(lambda_sq: float, kappa: Optional[float], cfg: CompactnessConfig) -> float:
    """
    Scalar compactness for one base point.

    Raises:
        DegenerateCompactness: when the result is not a finite positive number.
    """
    if cfg.mode == CONSTANT:
        return float(cfg.constant_c)
    if cfg.mode == METRIC_ONLY or kappa is None:
        scale = abs(lambda_sq)
    else:
        scale = max(abs(lambda_sq), abs(kappa))
    c = scale / cfg.epsilon
    if not np.isfinite(c) or c <= 0:
        raise DegenerateCompactness(f"compactness {c} from lambda^2={lambda_sq}, kappa={kappa}")
    return float(c)
