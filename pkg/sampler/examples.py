"""
Built-in embedded models.

Each constructor returns an ExampleProblem bundling the embedding, the
ambient Gaussian and the sampling region. One-dimensional problems also carry
their exact log-density so analytic reference histograms can be built.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, Optional

import numpy as np

from .compactness import SamplingRegion
from .geometry import AmbientGaussian, InvalidInput, ManifoldModel

logger = logging.getLogger(__name__)

BETA_DELTA = 1e-6


@dataclass(frozen=True)
class ExampleSpec:
    name: str
    params: Dict = field(default_factory=dict)

    def as_dict(self):
        return {'name': self.name, 'params': dict(self.params)}


@dataclass(frozen=True)
class ExampleProblem:
    model: ManifoldModel
    gaussian: AmbientGaussian
    region: SamplingRegion
    spec: ExampleSpec
    log_density: Optional[Callable[[np.ndarray], np.ndarray]] = None
    metric_only: bool = False

    def __iter__(self):
        return iter((self.model, self.gaussian, self.region))


# Parabola

def _parabola_map(theta):
    x = theta[0]
    return np.array([x, x * x])


def _parabola_jacobian(theta):
    return np.array([[1.0], [2.0 * theta[0]]])


def _parabola_hessian(theta):
    H = np.zeros((2, 1, 1))
    H[1, 0, 0] = 2.0
    return H


def _quartic(x):
    x = np.asarray(x, dtype=float)
    return x ** 4 - 3.0 * x ** 2 - 2.0 * x + 5.0


def parabola() -> ExampleProblem:
    """alpha(x) = (x, x^2) with beta_star = (1, 2) on [-3, 3]."""
    model = ManifoldModel(s=1, d=2, embedding=_parabola_map, jacobian=_parabola_jacobian,
                          hessian=_parabola_hessian, name='parabola')
    return ExampleProblem(
        model=model,
        gaussian=AmbientGaussian.standard([1.0, 2.0]),
        region=SamplingRegion([-3.0], [3.0]),
        spec=ExampleSpec('parabola'),
        log_density=lambda x: -0.5 * _quartic(x),
    )


# Klein bottle family

def rotation_matrix(seed: int, dim: int = 5) -> np.ndarray:
    """Deterministic element of SO(dim) from the QR factors of a seeded normal matrix."""
    rng = np.random.default_rng(seed)
    Q, R = np.linalg.qr(rng.standard_normal((dim, dim)))
    Q = Q * np.sign(np.diag(R))[None, :]
    if np.linalg.det(Q) < 0:
        Q[:, -1] *= -1.0
    return Q


def _klein_raw(theta):
    r, psi, phi = theta
    cp, sp = np.cos(psi), np.sin(psi)
    return np.array([
        0.5 * (1.0 + r * cp) * np.cos(phi),
        0.5 * (1.0 + r * cp) * np.sin(phi),
        0.5 * r * sp * np.cos(0.5 * phi),
        0.5 * r * sp * np.sin(0.5 * phi),
        0.0,
    ])


def _klein_raw_jacobian(theta):
    r, psi, phi = theta
    cp, sp = np.cos(psi), np.sin(psi)
    C, S = np.cos(phi), np.sin(phi)
    c2, s2 = np.cos(0.5 * phi), np.sin(0.5 * phi)
    radius = 1.0 + r * cp
    return np.array([
        [0.5 * cp * C, -0.5 * r * sp * C, -0.5 * radius * S],
        [0.5 * cp * S, -0.5 * r * sp * S, 0.5 * radius * C],
        [0.5 * sp * c2, 0.5 * r * cp * c2, -0.25 * r * sp * s2],
        [0.5 * sp * s2, 0.5 * r * cp * s2, 0.25 * r * sp * c2],
        [0.0, 0.0, 0.0],
    ])


def _klein_raw_hessian(theta):
    r, psi, phi = theta
    cp, sp = np.cos(psi), np.sin(psi)
    C, S = np.cos(phi), np.sin(phi)
    c2, s2 = np.cos(0.5 * phi), np.sin(0.5 * phi)
    radius = 1.0 + r * cp
    H = np.zeros((5, 3, 3))
    r_psi = np.array([-0.5 * sp * C, -0.5 * sp * S, 0.5 * cp * c2, 0.5 * cp * s2, 0.0])
    r_phi = np.array([-0.5 * cp * S, 0.5 * cp * C, -0.25 * sp * s2, 0.25 * sp * c2, 0.0])
    psi_psi = np.array([-0.5 * r * cp * C, -0.5 * r * cp * S, -0.5 * r * sp * c2, -0.5 * r * sp * s2, 0.0])
    psi_phi = np.array([0.5 * r * sp * S, -0.5 * r * sp * C, -0.25 * r * cp * s2, 0.25 * r * cp * c2, 0.0])
    phi_phi = np.array([-0.5 * radius * C, -0.5 * radius * S, -0.125 * r * sp * c2, -0.125 * r * sp * s2, 0.0])
    H[:, 0, 1] = H[:, 1, 0] = r_psi
    H[:, 0, 2] = H[:, 2, 0] = r_phi
    H[:, 1, 1] = psi_psi
    H[:, 1, 2] = H[:, 2, 1] = psi_phi
    H[:, 2, 2] = phi_phi
    return H


def klein(rotation_seed: int = 0) -> ExampleProblem:
    """Variable-size Klein bottles in R^5, rotated out of the x5 = 0 subspace."""
    R = rotation_matrix(rotation_seed)

    def embedding(theta):
        return R @ _klein_raw(theta)

    def jacobian(theta):
        return R @ _klein_raw_jacobian(theta)

    def hessian(theta):
        return np.einsum('ij,jab->iab', R, _klein_raw_hessian(theta))

    model = ManifoldModel(s=3, d=5, embedding=embedding, jacobian=jacobian, hessian=hessian, name='klein')
    beta_star = R @ _klein_raw(np.array([3.0, np.pi / 4.0, np.pi / 2.0]))
    return ExampleProblem(
        model=model,
        gaussian=AmbientGaussian.standard(beta_star),
        region=SamplingRegion([2.0, 0.0, 0.0], [8.0, 2.0 * np.pi, 2.0 * np.pi]),
        spec=ExampleSpec('klein', {'rotation_seed': rotation_seed}),
    )


# Reparametrized parabola

def _reparabola_radicand(xi):
    g = float(_quartic(xi))
    if g < 0:
        raise InvalidInput(f"negative radicand {g} at xi={xi}")
    return g


def _reparabola_map(theta):
    return np.array([np.sqrt(_reparabola_radicand(theta[0])), 0.0])


def _reparabola_jacobian(theta):
    xi = theta[0]
    root = np.sqrt(_reparabola_radicand(xi))
    return np.array([[(2.0 * xi ** 3 - 3.0 * xi - 1.0) / root], [0.0]])


def reparabola() -> ExampleProblem:
    """
    Same target as the parabola, mapped onto a ray of the x1 axis.

    The image is straight, so there is no Hessian and compactness is
    metric-only. The metric vanishes at xi = -1 and (1 +- sqrt(3)) / 2.
    """
    model = ManifoldModel(s=1, d=2, embedding=_reparabola_map, jacobian=_reparabola_jacobian,
                          name='reparabola')
    return ExampleProblem(
        model=model,
        gaussian=AmbientGaussian.standard([0.0, 0.0]),
        region=SamplingRegion([-3.0], [3.0]),
        spec=ExampleSpec('reparabola'),
        log_density=lambda x: -0.5 * _quartic(x),
        metric_only=True,
    )


# Beta distribution

def _beta_terms(xi, a, b):
    """(u, u', u'') for each squared component, with alpha_k = sqrt(u_k)."""
    u = np.array([-2.0 * np.log(xi * (1.0 - xi)), -2.0 * a * np.log(xi), -2.0 * b * np.log(1.0 - xi)])
    du = np.array([-2.0 / xi + 2.0 / (1.0 - xi), -2.0 * a / xi, 2.0 * b / (1.0 - xi)])
    ddu = np.array([2.0 / xi ** 2 + 2.0 / (1.0 - xi) ** 2, 2.0 * a / xi ** 2, 2.0 * b / (1.0 - xi) ** 2])
    return u, du, ddu


def beta(a: float, b: float) -> ExampleProblem:
    """
    Beta(a, b) written as a Gaussian restricted to a curve in R^3.

    The first component enters the density with a negative sign, so the
    model carries the metric signature (-1, +1, +1).
    """
    if not (a > 0 and b > 0):
        raise InvalidInput(f"beta shape parameters must be positive, got a={a}, b={b}")

    def embedding(theta):
        u, _, _ = _beta_terms(theta[0], a, b)
        return np.sqrt(u)

    def jacobian(theta):
        u, du, _ = _beta_terms(theta[0], a, b)
        return (du / (2.0 * np.sqrt(u)))[:, None]

    def hessian(theta):
        u, du, ddu = _beta_terms(theta[0], a, b)
        f = np.sqrt(u)
        return (ddu / (2.0 * f) - du ** 2 / (4.0 * f ** 3))[:, None, None]

    model = ManifoldModel(s=1, d=3, embedding=embedding, jacobian=jacobian, hessian=hessian,
                          signature=np.array([-1.0, 1.0, 1.0]), name='beta')

    def log_density(x):
        x = np.asarray(x, dtype=float)
        return (a - 1.0) * np.log(x) + (b - 1.0) * np.log1p(-x)

    return ExampleProblem(
        model=model,
        gaussian=AmbientGaussian.standard(np.zeros(3)),
        region=SamplingRegion([BETA_DELTA], [1.0 - BETA_DELTA]),
        spec=ExampleSpec('beta', {'a': a, 'b': b}),
        log_density=log_density,
    )


# Synthetic high-dimensional model

def synthetic_highd(s: int = 2, d: int = 170, seed: int = 0, amplitude: float = 0.5,
                    frequency_scale: float = 1.0, n_modes: int = 8, half_width: float = 1.0) -> ExampleProblem:
    """
    alpha(theta) = A theta + amplitude * sum_k b_k sin(omega_k . theta + phi_k).

    A has N(0, 10/d) entries, so the pullback metric is close to 10 I. With
    amplitude 0 the map is affine and the restricted Gaussian is exact.
    """
    if not d > s >= 1:
        raise InvalidInput(f"need d > s >= 1, got s={s}, d={d}")
    rng = np.random.default_rng(seed)
    A = rng.normal(0.0, np.sqrt(10.0 / d), size=(d, s))
    B = rng.normal(0.0, np.sqrt(1.0 / d), size=(d, n_modes))
    omega = rng.normal(0.0, frequency_scale, size=(n_modes, s))
    phase = rng.uniform(0.0, 2.0 * np.pi, size=n_modes)

    def embedding(theta):
        return A @ theta + amplitude * B @ np.sin(omega @ theta + phase)

    def jacobian(theta):
        return A + amplitude * (B * np.cos(omega @ theta + phase)[None, :]) @ omega

    def hessian(theta):
        return np.einsum('dk,ka,kb->dab', B * (-amplitude * np.sin(omega @ theta + phase))[None, :], omega, omega)

    model = ManifoldModel(s=s, d=d, embedding=embedding, jacobian=jacobian, hessian=hessian, name='synthetic_highd')
    region = SamplingRegion(np.full(s, -half_width), np.full(s, half_width))
    return ExampleProblem(
        model=model,
        gaussian=AmbientGaussian.standard(embedding(region.centroid)),
        region=region,
        spec=ExampleSpec('synthetic_highd', {
            's': s, 'd': d, 'seed': seed, 'amplitude': amplitude,
            'frequency_scale': frequency_scale, 'n_modes': n_modes, 'half_width': half_width,
        }),
    )


EXAMPLES = {
    'parabola': (parabola, 'Gaussian on the parabola y = x^2 (s=1, d=2)'),
    'klein': (klein, 'Rotated Klein bottle family (s=3, d=5)'),
    'reparabola': (reparabola, 'Parabola target on a flat ray, singular metric points (s=1, d=2)'),
    'beta': (beta, 'Beta(a, b) via a signature (-1,+1,+1) curve (s=1, d=3)'),
    'synthetic_highd': (synthetic_highd, 'Seeded smooth map, default s=2, d=170'),
}

EXAMPLE_CHOICES = [(name, description) for name, (_, description) in EXAMPLES.items()]


def build_example(spec) -> ExampleProblem:
    """Build from an ExampleSpec, a bare name or a {'name', 'params'} dict."""
    if isinstance(spec, str):
        spec = ExampleSpec(spec)
    elif isinstance(spec, dict):
        spec = ExampleSpec(spec['name'], dict(spec.get('params', {})))
    try:
        builder, _ = EXAMPLES[spec.name]
    except KeyError:
        raise InvalidInput(f"unknown example '{spec.name}'; available: {', '.join(EXAMPLES)}") from None
    try:
        problem = builder(**spec.params)
    except TypeError as exc:
        raise InvalidInput(f"bad parameters for example '{spec.name}': {exc}") from exc
    logger.debug("Built example %s with %s", spec.name, spec.params)
    return problem
