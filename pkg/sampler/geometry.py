"""
Differential-geometry kernels for embedded parameter manifolds.

Covers the pullback metric, the left pseudoinverse of the Jacobian, tangent
projection, the second fundamental form and its curvature scale, the Fisher
matrix of a manifold-restricted Gaussian and whitening of the ambient space.
"""

from __future__ import annotations

import logging
import threading
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np
from scipy import linalg

logger = logging.getLogger(__name__)

# F_I is singular when its smallest |eigenvalue| drops below this fraction of
# the largest one (or when the metric vanishes outright). With s = 1 the ratio
# is always 1, so only METRIC_FLOOR applies; near-singular points then show up
# as a very large lambda^2, which CompactnessConfig.singular_lambda_sq can cap.
RANK_TOL = 1e-12
METRIC_FLOOR = 1e-300

FD_STEP = 1e-5


class GeometryError(Exception):
    """Base error for geometry kernels"""
    pass


class InvalidInput(GeometryError):
    pass


class SingularMetric(GeometryError):
    """Raised when the pullback metric cannot be inverted at theta"""

    def __init__(self, theta=None, message="pullback metric is singular"):
        self.theta = None if theta is None else np.asarray(theta, dtype=float)
        if self.theta is not None:
            message = f"{message} at theta={self.theta.tolist()}"
        super().__init__(message)


class NotAvailable(GeometryError):
    pass


class WhiteningError(GeometryError):
    pass


@dataclass
class CallCounter:
    """Thread-safe tally of embedding / derivative evaluations."""
    embedding: int = 0
    jacobian: int = 0
    hessian: int = 0
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    def bump(self, kind: str):
        with self._lock:
            setattr(self, kind, getattr(self, kind) + 1)

    def as_dict(self):
        return {'map': self.embedding, 'jacobian': self.jacobian, 'hessian': self.hessian}


@dataclass(frozen=True)
class ManifoldModel:
    """
    An embedding alpha: R^s -> R^d with optional analytic derivatives.

    jacobian returns a d x s matrix, hessian a d x s x s tensor. When the
    jacobian is missing it is replaced by central differences of the map;
    the hessian is only differenced when fd_hessian is set, so models that
    deliberately ship without one keep running on metric-only compactness.
    """
    s: int
    d: int
    embedding: Callable[[np.ndarray], np.ndarray]
    jacobian: Optional[Callable[[np.ndarray], np.ndarray]] = None
    hessian: Optional[Callable[[np.ndarray], np.ndarray]] = None
    signature: Optional[np.ndarray] = None
    name: str = 'custom'
    fd_hessian: bool = False
    counter: Optional[CallCounter] = field(default=None, compare=False)

    def __post_init__(self):
        if self.s < 1:
            raise InvalidInput(f"parameter dimension must be >= 1, got {self.s}")
        if self.d <= self.s:
            raise InvalidInput(f"ambient dimension {self.d} must exceed parameter dimension {self.s}")
        if self.signature is not None:
            sig = np.asarray(self.signature, dtype=float)
            if sig.shape != (self.d,) or not np.all(np.abs(sig) == 1.0):
                raise InvalidInput("signature must be a length-d vector of +1/-1 entries")
            object.__setattr__(self, 'signature', sig)

    @property
    def metric_signature(self) -> np.ndarray:
        if self.signature is None:
            return np.ones(self.d)
        return self.signature

    @property
    def has_hessian(self) -> bool:
        return self.hessian is not None or self.fd_hessian

    def with_counter(self, counter: CallCounter) -> 'ManifoldModel':
        return replace(self, counter=counter)

    def _count(self, kind):
        if self.counter is not None:
            self.counter.bump(kind)

    def evaluate(self, theta) -> np.ndarray:
        self._count('embedding')
        return np.asarray(self.embedding(np.asarray(theta, dtype=float)), dtype=float)

    def jacobian_at(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        self._count('jacobian')
        if self.jacobian is not None:
            return np.asarray(self.jacobian(theta), dtype=float).reshape(self.d, self.s)
        return finite_difference_jacobian(self.embedding, theta)

    def hessian_at(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        if self.hessian is not None:
            self._count('hessian')
            return np.asarray(self.hessian(theta), dtype=float).reshape(self.d, self.s, self.s)
        if self.fd_hessian:
            self._count('hessian')
            if self.jacobian is not None:
                def jac(t):
                    return np.asarray(self.jacobian(t), dtype=float).reshape(self.d, self.s)
            else:
                def jac(t):
                    return finite_difference_jacobian(self.embedding, t)
            return finite_difference_hessian(jac, theta)
        raise NotAvailable(f"model '{self.name}' has no Hessian")


@dataclass(frozen=True)
class AmbientGaussian:
    """N(beta_star, sigma) on R^d together with its whitening transform."""
    beta_star: np.ndarray
    sigma: np.ndarray
    whitener: np.ndarray = field(init=False, repr=False)
    sigma_min_sq: float = field(init=False)
    _cholesky: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        beta_star = np.asarray(self.beta_star, dtype=float).ravel()
        sigma = np.atleast_2d(np.asarray(self.sigma, dtype=float))
        if sigma.shape != (beta_star.size, beta_star.size):
            raise InvalidInput(f"covariance shape {sigma.shape} does not match mean of length {beta_star.size}")
        if not np.allclose(sigma, sigma.T):
            raise WhiteningError("ambient covariance is not symmetric")
        try:
            chol = linalg.cholesky(sigma, lower=True)
        except linalg.LinAlgError as exc:
            raise WhiteningError(f"ambient covariance is not positive-definite: {exc}") from exc
        whitener = linalg.solve_triangular(chol, np.eye(beta_star.size), lower=True)
        object.__setattr__(self, 'beta_star', beta_star)
        object.__setattr__(self, 'sigma', sigma)
        object.__setattr__(self, '_cholesky', chol)
        object.__setattr__(self, 'whitener', whitener)
        object.__setattr__(self, 'sigma_min_sq', float(np.linalg.eigvalsh(sigma)[0]))

    @classmethod
    def standard(cls, beta_star) -> 'AmbientGaussian':
        beta_star = np.asarray(beta_star, dtype=float).ravel()
        return cls(beta_star=beta_star, sigma=np.eye(beta_star.size))

    @property
    def d(self) -> int:
        return self.beta_star.size

    @property
    def is_white(self) -> bool:
        return bool(np.array_equal(self.sigma, np.eye(self.d)))

    def solve(self, rhs) -> np.ndarray:
        """Sigma^{-1} @ rhs via the stored Cholesky factor."""
        return linalg.cho_solve((self._cholesky, True), rhs)


@dataclass(frozen=True)
class GeometryAtPoint:
    theta: np.ndarray
    alpha: np.ndarray
    J: np.ndarray
    F_I: np.ndarray
    J_plus: Optional[np.ndarray]
    F_II: Optional[np.ndarray] = None
    kappa: Optional[float] = None

    def projector(self) -> np.ndarray:
        """Tangent projector J J^+ (d x d); only for diagnostics on small d."""
        if self.J_plus is None:
            raise SingularMetric(self.theta)
        return self.J @ self.J_plus


def _signature(signature, d):
    if signature is None:
        return np.ones(d)
    sig = np.asarray(signature, dtype=float)
    if sig.shape != (d,):
        raise InvalidInput(f"signature has length {sig.size}, expected {d}")
    return sig


def pullback_metric(J, signature=None) -> np.ndarray:
    """Return J^T S J, the metric induced on parameter space."""
    J = np.atleast_2d(np.asarray(J, dtype=float))
    if not np.all(np.isfinite(J)):
        raise InvalidInput("Jacobian contains non-finite entries")
    sig = _signature(signature, J.shape[0])
    return J.T @ (sig[:, None] * J)


def _check_invertible(F_I, theta=None):
    eig = np.abs(np.linalg.eigvalsh(F_I))
    largest = eig.max() if eig.size else 0.0
    if not np.isfinite(largest) or largest <= METRIC_FLOOR or eig.min() < RANK_TOL * largest:
        raise SingularMetric(theta)


def pseudoinverse(J, F_I, signature=None, theta=None) -> np.ndarray:
    """
    Left pseudoinverse F_I^{-1} J^T S of the Jacobian (s x d).

    Raises:
        SingularMetric: if F_I is numerically singular.
    """
    J = np.atleast_2d(np.asarray(J, dtype=float))
    F_I = np.atleast_2d(np.asarray(F_I, dtype=float))
    _check_invertible(F_I, theta)
    sig = _signature(signature, J.shape[0])
    return np.linalg.solve(F_I, (sig[:, None] * J).T)


def project_tangent(J, J_plus, v) -> np.ndarray:
    """P v = J (J^+ v); v may be a single vector or a stack of rows."""
    v = np.asarray(v, dtype=float)
    if v.shape[-1] != J.shape[0]:
        raise InvalidInput(f"vector of length {v.shape[-1]} does not live in R^{J.shape[0]}")
    return (v @ J_plus.T) @ J.T


def normal_component(J, J_plus, H) -> np.ndarray:
    """(I - P) applied to every H[:, mu, mu'] column."""
    tangent = np.einsum('ds,sab->dab', J, np.einsum('sd,dab->sab', J_plus, H))
    return H - tangent


def second_fundamental_form(J, J_plus, H, signature=None) -> np.ndarray:
    """
    Matrix of norms of the normal-projected Hessian columns (s x s).

    Signature-weighted norms are taken in absolute value so the entries stay
    real and non-negative.
    """
    if H is None:
        raise NotAvailable("second fundamental form needs the Hessian")
    H = np.asarray(H, dtype=float)
    sig = _signature(signature, H.shape[0])
    normal = normal_component(J, J_plus, H)
    sq = np.einsum('k,kab,kab->ab', sig, normal, normal)
    F_II = np.sqrt(np.abs(sq))
    return 0.5 * (F_II + F_II.T)


def curvature_scale(F_I, F_II, theta=None) -> float:
    """
    Largest eigenvalue of K = Q^T F_II Q with Q = U D^{1/2}, F_I^{-1} = U D U^T.

    Negative entries of D (indefinite signatures) enter through |D|.
    """
    F_I = np.atleast_2d(np.asarray(F_I, dtype=float))
    _check_invertible(F_I, theta)
    D, U = np.linalg.eigh(np.linalg.inv(F_I))
    Q = U * np.sqrt(np.abs(D))[None, :]
    K = Q.T @ np.asarray(F_II, dtype=float) @ Q
    K = 0.5 * (K + K.T)
    return float(np.max(np.abs(np.linalg.eigvalsh(K))))


def fisher_matrix(J, gaussian: AmbientGaussian) -> np.ndarray:
    """J^T Sigma^{-1} J."""
    J = np.atleast_2d(np.asarray(J, dtype=float))
    return J.T @ gaussian.solve(J)


def whiten(model: ManifoldModel, gaussian: AmbientGaussian):
    """
    Move to coordinates where the ambient covariance is the identity.

    The returned map is theta -> W (alpha(theta) - beta_star), so the
    returned Gaussian is centred at the origin with unit covariance.
    """
    if gaussian.d != model.d:
        raise InvalidInput(f"Gaussian lives in R^{gaussian.d}, model maps into R^{model.d}")
    W = gaussian.whitener
    beta_star = gaussian.beta_star

    def embedding(theta):
        return W @ (model.evaluate(theta) - beta_star)

    def jacobian(theta):
        return W @ model.jacobian_at(theta)

    hessian = None
    if model.has_hessian:
        def hessian(theta):
            return np.einsum('ij,jab->iab', W, model.hessian_at(theta))

    white_model = ManifoldModel(
        s=model.s,
        d=model.d,
        embedding=embedding,
        jacobian=jacobian,
        hessian=hessian,
        signature=model.signature,
        name=model.name,
    )
    return white_model, AmbientGaussian.standard(np.zeros(model.d))


def evaluate_geometry(model: ManifoldModel, theta, with_curvature=True) -> GeometryAtPoint:
    """Convenience evaluation of every geometric quantity at one point."""
    theta = np.asarray(theta, dtype=float)
    alpha = model.evaluate(theta)
    J = model.jacobian_at(theta)
    sig = model.metric_signature
    F_I = pullback_metric(J, sig)
    J_plus = pseudoinverse(J, F_I, sig, theta)
    F_II = kappa = None
    if with_curvature and model.has_hessian:
        F_II = second_fundamental_form(J, J_plus, model.hessian_at(theta), sig)
        kappa = curvature_scale(F_I, F_II, theta)
    return GeometryAtPoint(theta=theta, alpha=alpha, J=J, F_I=F_I, J_plus=J_plus, F_II=F_II, kappa=kappa)


def _fd_steps(theta):
    return FD_STEP * (1.0 + np.abs(theta))


def finite_difference_jacobian(fn, theta) -> np.ndarray:
    """Central differences with step 1e-5 (1 + |theta_mu|) per coordinate."""
    theta = np.asarray(theta, dtype=float)
    steps = _fd_steps(theta)
    columns = []
    for mu, h in enumerate(steps):
        e = np.zeros_like(theta)
        e[mu] = h
        columns.append((np.asarray(fn(theta + e), dtype=float) - np.asarray(fn(theta - e), dtype=float)) / (2.0 * h))
    return np.stack(columns, axis=-1)


def finite_difference_hessian(jacobian_fn, theta) -> np.ndarray:
    """Central differences of the Jacobian, symmetrized in the lower indices."""
    theta = np.asarray(theta, dtype=float)
    steps = _fd_steps(theta)
    slices = []
    for mu, h in enumerate(steps):
        e = np.zeros_like(theta)
        e[mu] = h
        slices.append((np.asarray(jacobian_fn(theta + e)) - np.asarray(jacobian_fn(theta - e))) / (2.0 * h))
    H = np.stack(slices, axis=-1)
    return 0.5 * (H + H.swapaxes(1, 2))


def _relative_error(analytic, numeric):
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric))
    if scale == 0.0:
        return 0.0
    return float(np.linalg.norm(analytic - numeric) / scale)


def check_derivatives(model: ManifoldModel, thetas):
    """
    Compare analytic derivatives against central differences.

    Returns:
        (max Jacobian relative error, max Hessian relative error or None)
    """
    if model.jacobian is None:
        raise NotAvailable(f"model '{model.name}' has no analytic Jacobian to check")
    jac_err = 0.0
    hess_err = None if model.hessian is None else 0.0
    for theta in np.atleast_2d(thetas):
        jac_err = max(jac_err, _relative_error(model.jacobian_at(theta),
                                               finite_difference_jacobian(model.embedding, theta)))
        if model.hessian is not None:
            hess_err = max(hess_err, _relative_error(model.hessian_at(theta),
                                                     finite_difference_hessian(model.jacobian_at, theta)))
    return jac_err, hess_err
