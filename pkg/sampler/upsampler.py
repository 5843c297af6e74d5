"""
Mini-distribution upsampling of a decorated base chain.

Each base entry spawns m ambient Gaussian draws with covariance I/c_i, which
are projected onto the tangent space, pulled back to parameter space and
weighted in closed form. Out-of-region samples are boundary corrected.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterator, List, Optional, Sequence

import numpy as np

from .basechain import BaseChainEntry
from .compactness import SamplingRegion
from .geometry import AmbientGaussian, InvalidInput

logger = logging.getLogger(__name__)

AMBIENT_PROJECTION = 'ambient_projection'
FISHER_PULLBACK = 'fisher_pullback'
MINI_MODE_CHOICES = [(AMBIENT_PROJECTION, 'Ambient draw + projection'), (FISHER_PULLBACK, 'Fisher-based draw')]

REPLACE_WITH_BASE = 'replace_with_base'
DISCARD_RAW = 'discard_raw'
BOUNDARY_CHOICES = [(REPLACE_WITH_BASE, 'Replace with base sample'), (DISCARD_RAW, 'Discard')]

BOUNDARY_WARN_FRACTION = 0.25


class UpsampleError(Exception):
    pass


@dataclass(frozen=True)
class UpsampleConfig:
    m: int = 100
    seed: int = 0
    mini_mode: str = AMBIENT_PROJECTION
    boundary_policy: str = REPLACE_WITH_BASE
    workers: int = 1
    keep_beta_perp: bool = False

    def __post_init__(self):
        if self.m < 1:
            raise UpsampleError(f"m must be >= 1, got {self.m}")
        if self.seed < 0:
            raise UpsampleError("seed must be non-negative")
        if self.mini_mode not in dict(MINI_MODE_CHOICES):
            raise UpsampleError(f"unknown mini-distribution mode '{self.mini_mode}'")
        if self.boundary_policy not in dict(BOUNDARY_CHOICES):
            raise UpsampleError(f"unknown boundary policy '{self.boundary_policy}'")


@dataclass(frozen=True)
class WeightedSample:
    theta: np.ndarray
    weight: float
    base_index: int
    j: int
    replaced: bool = False
    beta_perp: Optional[np.ndarray] = None


@dataclass
class WeightedSampleSet:
    """Column storage for n*m weighted samples, ordered by (base_index, j)."""
    thetas: np.ndarray
    weights: np.ndarray
    base_index: np.ndarray
    j: np.ndarray
    origins: np.ndarray
    replaced: np.ndarray
    beta_perp: Optional[np.ndarray] = None

    def __post_init__(self):
        self.thetas = np.atleast_2d(np.asarray(self.thetas, dtype=float))
        n = len(self.thetas)
        self.weights = np.asarray(self.weights, dtype=float).reshape(n)
        self.base_index = np.asarray(self.base_index, dtype=int).reshape(n)
        self.j = np.asarray(self.j, dtype=int).reshape(n)
        self.origins = np.asarray(self.origins, dtype=float).reshape(self.thetas.shape)
        self.replaced = np.asarray(self.replaced, dtype=bool).reshape(n)

    @classmethod
    def from_unit_weights(cls, thetas) -> 'WeightedSampleSet':
        """Wrap plain samples (e.g. a base chain) as unit-weight samples."""
        thetas = np.asarray(thetas, dtype=float)
        if thetas.ndim == 1:
            thetas = thetas[:, None]
        n = len(thetas)
        return cls(thetas, np.ones(n), np.arange(n), np.zeros(n, dtype=int), thetas.copy(), np.zeros(n, dtype=bool))

    @property
    def s(self) -> int:
        return self.thetas.shape[1]

    def __len__(self):
        return len(self.weights)

    def __getitem__(self, k) -> WeightedSample:
        return WeightedSample(
            theta=self.thetas[k],
            weight=float(self.weights[k]),
            base_index=int(self.base_index[k]),
            j=int(self.j[k]),
            replaced=bool(self.replaced[k]),
            beta_perp=None if self.beta_perp is None else self.beta_perp[k],
        )

    def __iter__(self) -> Iterator[WeightedSample]:
        for k in range(len(self)):
            yield self[k]

    def subset(self, mask) -> 'WeightedSampleSet':
        return WeightedSampleSet(
            self.thetas[mask], self.weights[mask], self.base_index[mask], self.j[mask],
            self.origins[mask], self.replaced[mask],
            None if self.beta_perp is None else self.beta_perp[mask],
        )

    @classmethod
    def concat(cls, parts: Sequence['WeightedSampleSet']) -> 'WeightedSampleSet':
        if not parts:
            raise UpsampleError("nothing to concatenate")
        keep_beta = all(p.beta_perp is not None for p in parts)
        return cls(
            np.concatenate([p.thetas for p in parts]),
            np.concatenate([p.weights for p in parts]),
            np.concatenate([p.base_index for p in parts]),
            np.concatenate([p.j for p in parts]),
            np.concatenate([p.origins for p in parts]),
            np.concatenate([p.replaced for p in parts]),
            np.concatenate([p.beta_perp for p in parts]) if keep_beta else None,
        )


@dataclass
class UpsampleReport:
    n_base: int
    m: int
    n_samples: int = 0
    flagged_entries: int = 0
    replaced: int = 0
    discarded: int = 0
    dropped_nonfinite: int = 0

    @property
    def boundary_fraction(self) -> float:
        raw = self.n_samples + self.discarded
        return (self.replaced + self.discarded) / raw if raw else 0.0

    def as_dict(self):
        return {
            'n_base': self.n_base,
            'm': self.m,
            'n_samples': self.n_samples,
            'flagged_entries': self.flagged_entries,
            'boundary_replaced': self.replaced,
            'boundary_discarded': self.discarded,
            'boundary_fraction': self.boundary_fraction,
            'dropped_nonfinite': self.dropped_nonfinite,
        }


@dataclass
class UpsampleResult:
    samples: WeightedSampleSet
    report: UpsampleReport = field(repr=False)


def _is_singular(entry: BaseChainEntry) -> bool:
    return entry.J_plus is None or not np.isfinite(entry.c)


def draw_mini_ambient(entry: BaseChainEntry, m: int, rng) -> np.ndarray:
    """m draws from N(alpha_i, I / c_i) in the whitened ambient space."""
    z = rng.standard_normal((m, entry.alpha.size))
    if not np.isfinite(entry.c):
        return np.tile(entry.alpha, (m, 1))
    return entry.alpha + z / np.sqrt(entry.c)


def project_pullback(entry: BaseChainEntry, beta) -> np.ndarray:
    """theta_i + J^+ (beta - alpha_i); falls back to theta_i when J^+ is missing."""
    beta = np.asarray(beta, dtype=float)
    if entry.J_plus is None:
        shape = beta.shape[:-1] + (entry.s,)
        return np.broadcast_to(entry.theta, shape).copy()
    return entry.theta + (beta - entry.alpha) @ entry.J_plus.T


def pushforward(entry: BaseChainEntry, theta) -> np.ndarray:
    """alpha_i + J_i (theta - theta_i)."""
    theta = np.asarray(theta, dtype=float)
    return entry.alpha + (theta - entry.theta) @ entry.J.T


def weight(entry: BaseChainEntry, beta_perp, beta_star) -> np.ndarray:
    """
    Closed-form importance weight for a whitened ambient Gaussian.

    w = ((1+c)/c)^{s/2} exp(-u^T F_I u / (2 (1+c))) with u = J^+ (beta_perp - beta_star),
    which is the tangent-projected quadratic form without building the d x d
    projector. Returns a scalar for a single point, an array for a stack.
    """
    beta_perp = np.asarray(beta_perp, dtype=float)
    single = beta_perp.ndim == 1
    c = entry.c
    if _is_singular(entry):
        out = np.ones(1 if single else beta_perp.shape[0])
        return float(out[0]) if single else out
    u = np.atleast_2d(beta_perp - beta_star) @ entry.J_plus.T
    quad = np.einsum('na,ab,nb->n', u, entry.F_I, u)
    norm = ((1.0 + c) / c) ** (0.5 * entry.s)
    out = norm * np.exp(-0.5 * quad / (1.0 + c))
    return float(out[0]) if single else out


def draw_mini_fisher(entry: BaseChainEntry, m: int, rng) -> np.ndarray:
    """m draws from N(theta_i, Gamma_i^{-1} / c_i) directly in parameter space."""
    z = rng.standard_normal((m, entry.s))
    if _is_singular(entry):
        return np.tile(entry.theta, (m, 1))
    eig, vecs = np.linalg.eigh(entry.F_I)
    eig = np.abs(eig)
    if eig.min() <= 0:
        return np.tile(entry.theta, (m, 1))
    return entry.theta + (z / np.sqrt(eig * entry.c)) @ vecs.T


def general_gaussian_weight(J, sigma, c, beta_perp, beta_star) -> float:
    """
    Weight for a non-white ambient covariance, via explicit d x d matrices:

        M = Sigma^{-1} - (Sigma + P C^{-1} P)^{-1}
        N = sqrt(det(J^+ (Sigma + C^{-1}) J^+T) / det(J^+ Sigma J^+T))

    with C = c I and the Euclidean projector P = J J^+. Only meant for small d.
    """
    J = np.atleast_2d(np.asarray(J, dtype=float))
    sigma = np.atleast_2d(np.asarray(sigma, dtype=float))
    d, s = J.shape
    if d > 10:
        raise InvalidInput(f"general-covariance weight is restricted to d <= 10, got d={d}")
    J_plus = np.linalg.solve(J.T @ J, J.T)
    P = J @ J_plus
    C_inv = np.eye(d) / c
    M = np.linalg.inv(sigma) - np.linalg.inv(sigma + P @ C_inv @ P)
    num = np.linalg.det(J_plus @ (sigma + C_inv) @ J_plus.T)
    den = np.linalg.det(J_plus @ sigma @ J_plus.T)
    v = np.asarray(beta_perp, dtype=float) - np.asarray(beta_star, dtype=float)
    return float(np.sqrt(num / den) * np.exp(-0.5 * v @ M @ v))


def boundary_correct(samples: WeightedSampleSet, region: SamplingRegion, policy: str = REPLACE_WITH_BASE):
    """
    Handle samples that left the sampling region.

    Returns (corrected samples, number of samples affected).
    """
    outside = ~region.contains(samples.thetas)
    count = int(outside.sum())
    if count == 0:
        return samples, 0
    if policy == DISCARD_RAW:
        return samples.subset(~outside), count
    thetas = samples.thetas.copy()
    weights = samples.weights.copy()
    replaced = samples.replaced.copy()
    thetas[outside] = samples.origins[outside]
    weights[outside] = 1.0
    replaced[outside] = True
    corrected = WeightedSampleSet(thetas, weights, samples.base_index, samples.j, samples.origins,
                                  replaced, samples.beta_perp)
    return corrected, count


def _upsample_entry(entry: BaseChainEntry, beta_star, cfg: UpsampleConfig):
    rng = np.random.default_rng([cfg.seed, entry.index])
    m = cfg.m
    if _is_singular(entry):
        thetas = np.tile(entry.theta, (m, 1))
        beta_perp = np.tile(entry.alpha, (m, 1))
        weights = np.ones(m)
    else:
        if cfg.mini_mode == FISHER_PULLBACK:
            thetas = draw_mini_fisher(entry, m, rng)
        else:
            thetas = project_pullback(entry, draw_mini_ambient(entry, m, rng))
        beta_perp = pushforward(entry, thetas)
        weights = weight(entry, beta_perp, beta_star)

    finite = np.isfinite(weights) & (weights > 0) & np.all(np.isfinite(thetas), axis=1)
    part = WeightedSampleSet(
        thetas, weights, np.full(m, entry.index), np.arange(m),
        np.tile(entry.theta, (m, 1)), np.zeros(m, dtype=bool),
        beta_perp if cfg.keep_beta_perp else None,
    )
    dropped = int(m - finite.sum())
    if dropped:
        part = part.subset(finite)
    return part, dropped


def upsample(base: List[BaseChainEntry], gaussian: AmbientGaussian, region: SamplingRegion,
             cfg: UpsampleConfig) -> UpsampleResult:
    """
    Turn n decorated base entries into n*m weighted samples.

    Every entry draws from its own RNG stream keyed by (seed, index), so the
    output does not depend on the number of worker threads.
    """
    if not base:
        raise UpsampleError("base chain is empty")
    if not gaussian.is_white:
        raise UpsampleError("upsampling expects a whitened ambient Gaussian")
    beta_star = gaussian.beta_star

    with ThreadPoolExecutor(max_workers=max(1, cfg.workers)) as pool:
        results = list(pool.map(lambda e: _upsample_entry(e, beta_star, cfg), base))

    report = UpsampleReport(n_base=len(base), m=cfg.m)
    report.flagged_entries = sum(1 for e in base if _is_singular(e))
    report.dropped_nonfinite = sum(dropped for _, dropped in results)
    if report.dropped_nonfinite:
        logger.warning("Dropped %d samples with non-finite weights", report.dropped_nonfinite)

    samples = WeightedSampleSet.concat([part for part, _ in results])
    samples, affected = boundary_correct(samples, region, cfg.boundary_policy)
    if cfg.boundary_policy == DISCARD_RAW:
        report.discarded = affected
    else:
        report.replaced = affected
    report.n_samples = len(samples)

    if report.boundary_fraction > BOUNDARY_WARN_FRACTION:
        logger.warning("%.1f%% of samples fell outside the sampling region", 100 * report.boundary_fraction)
    logger.info("Upsampled %d base entries to %d samples (m=%d)", report.n_base, report.n_samples, cfg.m)
    return UpsampleResult(samples=samples, report=report)
