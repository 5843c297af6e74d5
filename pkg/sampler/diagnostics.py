"""
Second-order error weights and prior handling for weighted sample sets.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np
from scipy import linalg, stats

from .basechain import BaseChainEntry
from .compactness import SamplingRegion
from .geometry import AmbientGaussian, ManifoldModel, NotAvailable
from .upsampler import WeightedSampleSet

logger = logging.getLogger(__name__)

DENOMINATOR_TOL = 1e-12
UNIT_CUBE_DELTA = 1e-6

UNIFORM = 'uniform'
GAUSSIAN = 'gaussian'
INDEPENDENT_1D = 'independent_1d'
PRIOR_CHOICES = [(UNIFORM, 'Uniform on the region'), (GAUSSIAN, 'Multivariate normal'),
                 (INDEPENDENT_1D, 'Independent 1-D marginals')]

POST_HOC = 'post_hoc'
AUGMENT = 'augment'
TRANSFORM = 'transform'
ROUTE_CHOICES = [(POST_HOC, 'Reweight the projected samples'), (AUGMENT, 'Fold a Gaussian prior into the map'),
                 (TRANSFORM, 'Sample in inverse-CDF coordinates')]


class DiagnosticsError(Exception):
    pass


class DegeneratePrior(DiagnosticsError):
    pass


@dataclass(frozen=True)
class ErrorWeightInputs:
    entry: BaseChainEntry
    alpha_star: np.ndarray
    vartheta: np.ndarray
    c: float

    def __post_init__(self):
        if self.entry.H is None:
            raise NotAvailable("error weights need the Hessian at the base point")


def _error_terms(entry: BaseChainEntry, alpha_star, varthetas, signature):
    """Delta_M and Delta_I for a stack of displacements (n x s)."""
    J, H = entry.J, entry.H
    sig_a = signature * alpha_star
    A = np.einsum('k,kab->ab', sig_a, H)
    G = np.linalg.inv(entry.F_I)
    Gg = G @ (J.T @ sig_a)

    A_v = varthetas @ A.T
    b = np.einsum('kab,na,nb->nk', H, varthetas, varthetas)
    JSb = b @ (signature[:, None] * J)

    delta_M = (
        A_v @ Gg
        + 1.5 * JSb @ Gg
        + 0.5 * np.einsum('na,ab,nb->n', A_v, G, A_v)
        + np.einsum('na,na->n', varthetas, A_v)
    )
    delta_I = 0.5 * np.einsum('na,na->n', varthetas, A_v)
    return delta_M, delta_I


def _combine(delta_M, delta_I, c, w):
    denom = delta_M + (1.0 + c) * (1.0 - delta_I)
    bad = np.abs(denom) < DENOMINATOR_TOL
    with np.errstate(divide='ignore', invalid='ignore'):
        dw = np.where(bad, np.nan, delta_M / np.where(bad, 1.0, denom) * w)
    return dw, bad


def error_weight(inputs: ErrorWeightInputs, w: float, signature=None) -> float:
    """
    Second-order systematic error in a single importance weight.

    Returns NaN when Delta_M + (1+c)(1-Delta_I) vanishes.
    """
    entry = inputs.entry
    sig = np.ones(entry.alpha.size) if signature is None else np.asarray(signature, dtype=float)
    vartheta = np.atleast_2d(np.asarray(inputs.vartheta, dtype=float))
    delta_M, delta_I = _error_terms(entry, np.asarray(inputs.alpha_star, dtype=float), vartheta, sig)
    dw, _ = _combine(delta_M, delta_I, inputs.c, np.asarray([w], dtype=float))
    return float(dw[0])


def compute_error_weights(base: Sequence[BaseChainEntry], samples: WeightedSampleSet, beta_star,
                          signature=None):
    """
    Error weight for every sample, grouped by base entry.

    Boundary-replaced samples and samples of flagged entries get 0 (they are
    unit-weight copies of a base point). Returns (dw, number flagged).
    """
    beta_star = np.asarray(beta_star, dtype=float)
    by_index = {e.index: e for e in base}
    dw = np.zeros(len(samples))
    flagged = np.zeros(len(samples), dtype=bool)

    for index in np.unique(samples.base_index):
        entry = by_index[int(index)]
        if entry.flagged:
            continue
        if entry.H is None:
            raise NotAvailable(f"entry {entry.index} has no Hessian; error weights need second derivatives")
        rows = np.flatnonzero((samples.base_index == index) & ~samples.replaced)
        if rows.size == 0:
            continue
        sig = np.ones(entry.alpha.size) if signature is None else np.asarray(signature, dtype=float)
        varthetas = samples.thetas[rows] - entry.theta
        delta_M, delta_I = _error_terms(entry, entry.alpha - beta_star, varthetas, sig)
        values, bad = _combine(delta_M, delta_I, entry.c, samples.weights[rows])
        dw[rows] = values
        flagged[rows] = bad

    n_flagged = int(flagged.sum())
    if n_flagged:
        logger.warning("%d error weights have a vanishing denominator and were excluded", n_flagged)
    return dw, n_flagged


def expectation_error(samples: WeightedSampleSet, error_weights, tau) -> dict:
    """
    Weighted estimate E_q[tau w] together with the expected shift
    Delta_E = sum(tau * dw) / sum(w). Flagged (NaN) error weights count as 0.
    """
    values = np.asarray(tau(samples.thetas), dtype=float)
    w = samples.weights
    total = w.sum()
    dw = np.asarray(error_weights, dtype=float)
    bad = ~np.isfinite(dw)
    return {
        'E_tau_w': float(np.sum(values * w) / total),
        'Delta_E': float(np.sum(np.where(bad, 0.0, values * dw)) / total),
        'flagged': int(bad.sum()),
    }


@dataclass
class PriorSpec:
    """
    Prior density on parameter space.

    marginals are frozen scipy.stats distributions (independent_1d only).
    route picks how a run applies the prior: post hoc reweighting, folding
    a Gaussian prior into the map, or sampling in inverse-CDF coordinates.
    """
    kind: str = UNIFORM
    mean: Optional[np.ndarray] = None
    cov: Optional[np.ndarray] = None
    marginals: List = field(default_factory=list)
    route: str = POST_HOC

    def __post_init__(self):
        if self.kind not in dict(PRIOR_CHOICES):
            raise DiagnosticsError(f"unknown prior kind '{self.kind}'")
        if self.route not in dict(ROUTE_CHOICES):
            raise DiagnosticsError(f"unknown prior route '{self.route}'")
        if self.kind == GAUSSIAN:
            if self.mean is None or self.cov is None:
                raise DiagnosticsError("gaussian prior needs mean and cov")
            self.mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
            self.cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
            k = self.mean.size
            if self.mean.ndim != 1 or self.cov.shape != (k, k):
                raise DiagnosticsError(f"gaussian prior mean has {k} entries but cov has shape {self.cov.shape}")
            try:
                linalg.cholesky(self.cov, lower=True)
            except linalg.LinAlgError as exc:
                raise DiagnosticsError(f"gaussian prior covariance is not positive-definite: {exc}") from exc
        if self.kind == INDEPENDENT_1D and not self.marginals:
            raise DiagnosticsError("independent_1d prior needs one marginal per coordinate")
        if self.route == AUGMENT and self.kind != GAUSSIAN:
            raise DiagnosticsError("only a gaussian prior can be folded into the map")

    @classmethod
    def from_config(cls, cfg: dict) -> 'PriorSpec':
        kind = cfg.get('kind', UNIFORM)
        route = cfg.get('route') or POST_HOC
        if kind == INDEPENDENT_1D:
            marginals = []
            for item in cfg.get('marginals', []):
                family = getattr(stats, item.get('family', ''), None)
                if not isinstance(family, stats.rv_continuous):
                    raise DiagnosticsError(f"'{item.get('family')}' is not a continuous scipy.stats family")
                try:
                    marginals.append(family(*item.get('args', []), **item.get('kwargs', {})))
                except (TypeError, ValueError) as exc:
                    raise DiagnosticsError(f"bad arguments for '{item.get('family')}': {exc}") from exc
            return cls(kind=kind, marginals=marginals, route=route)
        return cls(kind=kind, mean=cfg.get('mean'), cov=cfg.get('cov'), route=route)

    @property
    def dimension(self) -> Optional[int]:
        """Number of parameters the prior is defined on; None for uniform."""
        if self.kind == GAUSSIAN:
            return int(self.mean.size)
        if self.kind == INDEPENDENT_1D:
            return len(self.marginals)
        return None

    def check_dimension(self, s: int):
        if self.dimension is not None and self.dimension != s:
            raise DiagnosticsError(f"{self.kind} prior is defined on {self.dimension} parameters, model has {s}")

    def density(self, thetas) -> np.ndarray:
        thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
        if self.kind == UNIFORM:
            return np.ones(len(thetas))
        self.check_dimension(thetas.shape[1])
        if self.kind == GAUSSIAN:
            return np.atleast_1d(stats.multivariate_normal(self.mean, self.cov).pdf(thetas))
        out = np.ones(len(thetas))
        for mu, dist in enumerate(self.marginals):
            out *= dist.pdf(thetas[:, mu])
        return out

    def log_density(self, thetas) -> np.ndarray:
        with np.errstate(divide='ignore'):
            return np.log(self.density(thetas))

    def coordinate_marginals(self, region: Optional[SamplingRegion] = None) -> list:
        """Per-coordinate frozen distributions for the inverse-CDF transform."""
        if self.kind == INDEPENDENT_1D:
            return list(self.marginals)
        if self.kind == UNIFORM:
            if region is None:
                raise DiagnosticsError("uniform prior needs a sampling region for its quantiles")
            return [stats.uniform(loc=lo, scale=hi - lo) for lo, hi in zip(region.lower, region.upper)]
        if not np.allclose(self.cov, np.diag(np.diag(self.cov))):
            raise DiagnosticsError("only coordinate-wise independent priors have an inverse-CDF transform")
        return [stats.norm(loc=m, scale=np.sqrt(v)) for m, v in zip(self.mean, np.diag(self.cov))]


def prior_reweight(samples: WeightedSampleSet, prior: PriorSpec) -> np.ndarray:
    """Normalized prior weights pi(theta) w / sum(pi(theta) w)."""
    raw = prior.density(samples.thetas) * samples.weights
    total = raw.sum()
    if not np.isfinite(total) or total <= 0:
        raise DegeneratePrior("prior density vanishes on every weighted sample")
    return raw / total


def augment_map(model: ManifoldModel, gaussian: AmbientGaussian, theta_hat, sigma_hat):
    """
    Fold a Gaussian prior N(theta_hat, sigma_hat) into the embedding.

    The map becomes theta -> alpha(theta) (+) theta in R^{d+s} with the
    block-diagonal covariance diag(Sigma, sigma_hat).
    """
    theta_hat = np.atleast_1d(np.asarray(theta_hat, dtype=float))
    sigma_hat = np.atleast_2d(np.asarray(sigma_hat, dtype=float))
    s, d = model.s, model.d
    if theta_hat.shape != (s,) or sigma_hat.shape != (s, s):
        raise DiagnosticsError(f"prior mean/covariance must have shapes ({s},) and ({s}, {s})")

    def embedding(theta):
        return np.concatenate([model.evaluate(theta), np.asarray(theta, dtype=float)])

    def jacobian(theta):
        return np.vstack([model.jacobian_at(theta), np.eye(s)])

    hessian = None
    if model.has_hessian:
        def hessian(theta):
            return np.concatenate([model.hessian_at(theta), np.zeros((s, s, s))])

    signature = None
    if model.signature is not None:
        signature = np.concatenate([model.signature, np.ones(s)])

    augmented = ManifoldModel(s=s, d=d + s, embedding=embedding, jacobian=jacobian, hessian=hessian,
                              signature=signature, name=f'{model.name}+gaussian_prior')
    ambient = AmbientGaussian(
        beta_star=np.concatenate([gaussian.beta_star, theta_hat]),
        sigma=linalg.block_diag(gaussian.sigma, sigma_hat),
    )
    return augmented, ambient


def transform_prior(model: ManifoldModel, prior: PriorSpec, region: Optional[SamplingRegion] = None,
                    delta: float = UNIT_CUBE_DELTA):
    """
    Compose the embedding with the coordinate-wise inverse CDF of the prior.

    Sampling the returned model uniformly on [delta, 1-delta]^s targets
    f(alpha(theta)) pi(theta) in the original coordinates. The Hessian is not
    carried over, so compactness for it runs metric-only.
    """
    marginals = prior.coordinate_marginals(region)
    if len(marginals) != model.s:
        raise DiagnosticsError(f"prior has {len(marginals)} coordinates, model has {model.s}")

    def to_theta(u):
        # one point (s,) or a stack (n, s)
        u = np.asarray(u, dtype=float)
        return np.stack([dist.ppf(u[..., mu]) for mu, dist in enumerate(marginals)], axis=-1)

    def embedding(u):
        return model.evaluate(to_theta(u))

    def jacobian(u):
        theta = to_theta(u)
        dens = np.array([dist.pdf(theta[mu]) for mu, dist in enumerate(marginals)])
        return model.jacobian_at(theta) / dens[None, :]

    transformed = ManifoldModel(s=model.s, d=model.d, embedding=embedding, jacobian=jacobian,
                                signature=model.signature, name=f'{model.name}@unit_cube')
    cube = SamplingRegion(np.full(model.s, delta), np.full(model.s, 1.0 - delta))
    return transformed, cube, to_theta


@dataclass
class ProjectionResiduals:
    residual: np.ndarray
    displacement: np.ndarray

    def median_residual(self, max_displacement: float = 1.0) -> float:
        keep = np.isfinite(self.residual) & (self.displacement <= max_displacement)
        if not np.any(keep):
            return float('nan')
        return float(np.median(self.residual[keep]))


def projection_residuals(model: ManifoldModel, base: Sequence[BaseChainEntry],
                         samples: WeightedSampleSet) -> ProjectionResiduals:
    """
    |beta_perp - alpha(theta)| per sample, plus the tangent displacement
    |beta_perp - alpha_i| in units of the mini-distribution sigma 1/sqrt(c_i).

    Costs one map evaluation per sample; replaced samples come back as NaN.
    """
    if samples.beta_perp is None:
        raise DiagnosticsError("samples were generated without keep_beta_perp")
    by_index = {e.index: e for e in base}
    residual = np.full(len(samples), np.nan)
    displacement = np.full(len(samples), np.nan)
    for k in range(len(samples)):
        if samples.replaced[k]:
            continue
        entry = by_index[int(samples.base_index[k])]
        if not np.isfinite(entry.c):
            continue
        beta_perp = samples.beta_perp[k]
        residual[k] = np.linalg.norm(beta_perp - model.evaluate(samples.thetas[k]))
        displacement[k] = np.sqrt(entry.c) * np.linalg.norm(beta_perp - entry.alpha)
    return ProjectionResiduals(residual=residual, displacement=displacement)
