"""
Base chain generation (random-walk Metropolis-Hastings) and per-entry
geometric decoration.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from .compactness import (
    CompactnessConfig,
    DegenerateCompactness,
    SamplingRegion,
    compactness,
    region_scale,
)
from .geometry import (
    AmbientGaussian,
    GeometryAtPoint,
    InvalidInput,
    ManifoldModel,
    SingularMetric,
    curvature_scale,
    pseudoinverse,
    pullback_metric,
    second_fundamental_form,
)

logger = logging.getLogger(__name__)

ISOTROPIC = 'isotropic_gaussian'
FISHER = 'fisher'
PROPOSAL_CHOICES = [(ISOTROPIC, 'Isotropic Gaussian'), (FISHER, 'Inverse Fisher covariance')]

FLAG_SINGULAR = 'singular_metric'
FLAG_DEGENERATE = 'degenerate_compactness'

DEFAULT_STEP_FRACTION = 1.0 / 20.0


class ChainError(Exception):
    pass


class TargetDensity:
    """f(alpha(theta)) restricted to the sampling region, in log form."""

    def __init__(self, model: ManifoldModel, gaussian: AmbientGaussian, region: SamplingRegion):
        if gaussian.d != model.d:
            raise ChainError(f"Gaussian dimension {gaussian.d} does not match model dimension {model.d}")
        if region.s != model.s:
            raise ChainError(f"region dimension {region.s} does not match parameter dimension {model.s}")
        self.model = model
        self.gaussian = gaussian
        self.region = region

    def log_density(self, theta) -> float:
        theta = np.asarray(theta, dtype=float)
        if not self.region.contains(theta):
            return -np.inf
        try:
            residual = self.model.evaluate(theta) - self.gaussian.beta_star
        except (ValueError, FloatingPointError):
            return -np.inf
        z = residual if self.gaussian.is_white else self.gaussian.whitener @ residual
        value = -0.5 * float(np.sum(self.model.metric_signature * z * z))
        return value if np.isfinite(value) else -np.inf

    def __call__(self, theta) -> float:
        return self.log_density(theta)


@dataclass(frozen=True)
class ChainConfig:
    n_steps: int = 40000
    burn_in: int = 0
    thinning: int = 1
    proposal_scale: Optional[object] = None
    seed: int = 0
    proposal_kind: str = ISOTROPIC
    n_base: Optional[int] = None

    def __post_init__(self):
        if self.burn_in < 0 or self.n_steps <= self.burn_in:
            raise ChainError(f"need n_steps > burn_in >= 0, got n_steps={self.n_steps}, burn_in={self.burn_in}")
        if self.thinning < 1:
            raise ChainError(f"thinning must be >= 1, got {self.thinning}")
        if self.proposal_kind not in dict(PROPOSAL_CHOICES):
            raise ChainError(f"unknown proposal kind '{self.proposal_kind}'")
        if self.n_base is not None and self.n_base < 1:
            raise ChainError(f"n_base must be >= 1, got {self.n_base}")
        if self.proposal_kind == FISHER and self.proposal_scale is not None and np.ndim(self.proposal_scale) > 0:
            raise ChainError("the fisher proposal takes a single scalar proposal_scale")

    def step_sizes(self, region: SamplingRegion) -> np.ndarray:
        if self.proposal_scale is None:
            if self.proposal_kind == FISHER:
                return np.ones(region.s)
            return DEFAULT_STEP_FRACTION * region.half_lengths
        scale = np.broadcast_to(np.asarray(self.proposal_scale, dtype=float), (region.s,)).copy()
        if not np.all(scale > 0):
            raise ChainError(f"proposal scale must be positive, got {scale}")
        return scale


@dataclass
class ChainResult:
    thetas: np.ndarray
    log_densities: np.ndarray
    n_steps: int
    n_accepted: int

    @property
    def acceptance_rate(self) -> float:
        return self.n_accepted / self.n_steps if self.n_steps else 0.0

    def __len__(self):
        return len(self.thetas)


def _fisher_factor(model: ManifoldModel, theta):
    """(Gamma, log|det Gamma|) with Gamma built from |eigenvalues| of F_I."""
    F_I = pullback_metric(model.jacobian_at(theta), model.metric_signature)
    eig, vecs = np.linalg.eigh(F_I)
    eig = np.abs(eig)
    if eig.min() <= 0 or not np.all(np.isfinite(eig)):
        return None, None
    return (vecs * eig) @ vecs.T, float(np.sum(np.log(eig)))


def _fisher_log_q(x, y, gamma_y, logdet_y, scale_sq):
    delta = x - y
    return -0.5 * float(delta @ gamma_y @ delta) / scale_sq + 0.5 * logdet_y


def metropolis_hastings(target: TargetDensity, cfg: ChainConfig, initial=None) -> ChainResult:
    """
    Random-walk Metropolis-Hastings over the sampling region.

    Proposals outside the region have zero density and are always rejected.
    The fisher proposal draws from N(theta, scale^2 Gamma(theta)^{-1}) and
    applies the Hastings correction with Gamma evaluated at both ends.
    """
    region = target.region
    rng = np.random.default_rng(cfg.seed)
    steps = cfg.step_sizes(region)
    theta = region.centroid if initial is None else np.asarray(initial, dtype=float)
    logp = target.log_density(theta)
    if not np.isfinite(logp):
        raise ChainError(f"initial point {theta.tolist()} has no finite log-density")

    fisher = cfg.proposal_kind == FISHER
    scale_sq = float(steps[0] ** 2)
    if fisher:
        gamma, logdet = _fisher_factor(target.model, theta)
        if gamma is None:
            raise ChainError("Fisher matrix is singular at the initial point")

    window = max(100, cfg.n_steps // 10)
    window_accepted = 0
    kept_thetas, kept_logp = [], []
    n_accepted = 0

    for k in range(cfg.n_steps):
        if fisher:
            eig, vecs = np.linalg.eigh(gamma)
            z = rng.standard_normal(region.s)
            proposal = theta + vecs @ (z / np.sqrt(eig)) * steps[0]
        else:
            proposal = theta + steps * rng.standard_normal(region.s)
        log_u = np.log(rng.uniform())

        logp_new = target.log_density(proposal)
        accept = False
        if np.isfinite(logp_new):
            log_ratio = logp_new - logp
            if fisher:
                gamma_new, logdet_new = _fisher_factor(target.model, proposal)
                if gamma_new is None:
                    log_ratio = -np.inf
                else:
                    log_ratio += (_fisher_log_q(theta, proposal, gamma_new, logdet_new, scale_sq)
                                  - _fisher_log_q(proposal, theta, gamma, logdet, scale_sq))
            accept = log_u < log_ratio

        if accept:
            theta, logp = proposal, logp_new
            if fisher:
                gamma, logdet = gamma_new, logdet_new
            n_accepted += 1
            window_accepted += 1

        if (k + 1) % window == 0:
            if window_accepted == 0:
                logger.warning("No proposals accepted in steps %d-%d (overall acceptance %.3f)",
                               k + 1 - window, k + 1, n_accepted / (k + 1))
            window_accepted = 0

        if k >= cfg.burn_in and (k - cfg.burn_in) % cfg.thinning == 0:
            kept_thetas.append(theta)
            kept_logp.append(logp)

    result = ChainResult(
        thetas=np.array(kept_thetas).reshape(-1, region.s),
        log_densities=np.array(kept_logp),
        n_steps=cfg.n_steps,
        n_accepted=n_accepted,
    )
    logger.info("MH chain: %d steps, %d kept, acceptance %.3f", cfg.n_steps, len(result), result.acceptance_rate)
    return result


def downsample(chain, n: int) -> np.ndarray:
    """Pick n states with uniform stride floor(N / n)."""
    chain = np.asarray(chain, dtype=float)
    if chain.ndim == 1:
        chain = chain[:, None]
    total = len(chain)
    if n < 1 or n > total:
        raise ChainError(f"cannot downsample {total} states to {n}")
    stride = total // n
    return chain[::stride][:n]


@dataclass(frozen=True)
class BaseChainEntry:
    index: int
    theta: np.ndarray
    alpha: np.ndarray
    J: np.ndarray
    H: Optional[np.ndarray]
    geometry: GeometryAtPoint
    lambda_sq: float
    kappa: Optional[float]
    c: float
    flag: Optional[str] = None

    @property
    def flagged(self) -> bool:
        return self.flag is not None

    @property
    def J_plus(self) -> Optional[np.ndarray]:
        return self.geometry.J_plus

    @property
    def F_I(self) -> np.ndarray:
        return self.geometry.F_I

    @property
    def s(self) -> int:
        return self.theta.size


def decorate_entry(index, theta, model: ManifoldModel, region: SamplingRegion,
                   cfg: CompactnessConfig) -> BaseChainEntry:
    theta = np.asarray(theta, dtype=float)
    alpha = model.evaluate(theta)
    J = model.jacobian_at(theta)
    H = model.hessian_at(theta) if model.has_hessian else None
    sig = model.metric_signature
    F_I = pullback_metric(J, sig)

    try:
        J_plus = pseudoinverse(J, F_I, sig, theta)
    except (SingularMetric, InvalidInput) as exc:
        logger.debug("Entry %d flagged: %s", index, exc)
        geometry = GeometryAtPoint(theta=theta, alpha=alpha, J=J, F_I=F_I, J_plus=None)
        return BaseChainEntry(index, theta, alpha, J, H, geometry, np.inf, None, np.inf, FLAG_SINGULAR)

    F_II = kappa = None
    if H is not None:
        F_II = second_fundamental_form(J, J_plus, H, sig)
        kappa = curvature_scale(F_I, F_II, theta)
    geometry = GeometryAtPoint(theta=theta, alpha=alpha, J=J, F_I=F_I, J_plus=J_plus, F_II=F_II, kappa=kappa)
    lambda_sq = region_scale(J_plus, region)
    if cfg.singular_lambda_sq is not None and lambda_sq > cfg.singular_lambda_sq:
        logger.debug("Entry %d flagged: lambda^2=%.3g above %.3g", index, lambda_sq, cfg.singular_lambda_sq)
        return BaseChainEntry(index, theta, alpha, J, H, geometry, lambda_sq, kappa, np.inf, FLAG_SINGULAR)

    try:
        c = compactness(lambda_sq, kappa, cfg)
    except DegenerateCompactness as exc:
        logger.debug("Entry %d flagged: %s", index, exc)
        return BaseChainEntry(index, theta, alpha, J, H, geometry, lambda_sq, kappa, np.inf, FLAG_DEGENERATE)
    return BaseChainEntry(index, theta, alpha, J, H, geometry, lambda_sq, kappa, c)


def build_base_chain(thetas, model: ManifoldModel, gaussian: AmbientGaussian, region: SamplingRegion,
                     cfg: CompactnessConfig, workers: int = 1) -> List[BaseChainEntry]:
    """
    Evaluate alpha, J (and H when the model has one) plus compactness at
    every base point. Geometry failures become per-entry flags with c = inf.
    """
    if not gaussian.is_white:
        raise ChainError("base chain decoration expects a whitened ambient Gaussian")
    thetas = np.asarray(thetas, dtype=float)
    if thetas.ndim == 1:
        thetas = thetas[:, None] if model.s == 1 else thetas[None, :]
    if thetas.shape[1] != model.s:
        raise ChainError(f"chain states have dimension {thetas.shape[1]}, model expects {model.s}")
    outside = ~region.contains(thetas)
    if np.any(outside):
        raise ChainError(f"{int(outside.sum())} base points lie outside the sampling region")

    def work(i):
        return decorate_entry(i, thetas[i], model, region, cfg)

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        entries = list(pool.map(work, range(len(thetas))))

    flagged = sum(1 for e in entries if e.flagged)
    if flagged:
        logger.warning("%d of %d base entries flagged (infinite compactness fallback)", flagged, len(entries))
    return entries
