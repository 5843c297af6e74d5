"""
Weighted histograms, Hellinger distances and weighted expectations.
"""

from __future__ import annotations

import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from scipy import integrate, ndimage

from .compactness import SamplingRegion

logger = logging.getLogger(__name__)


class EvaluationError(Exception):
    pass


class BinningMismatch(EvaluationError):
    pass


@dataclass(frozen=True)
class HistogramND:
    """
    Weight-summed counts on a regular grid.

    dims records which parameter coordinates the axes belong to; overflow is
    the total weight that fell outside the grid.
    """
    edges: Tuple[np.ndarray, ...]
    counts: np.ndarray
    dims: Tuple[int, ...]
    overflow: float = 0.0
    normalized: bool = False

    @property
    def ndim(self) -> int:
        return len(self.edges)

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.counts.shape

    def centers(self) -> List[np.ndarray]:
        return [0.5 * (e[:-1] + e[1:]) for e in self.edges]

    def bin_volumes(self) -> np.ndarray:
        widths = [np.diff(e) for e in self.edges]
        vol = widths[0]
        for w in widths[1:]:
            vol = np.multiply.outer(vol, w)
        return vol

    def normalize(self) -> 'HistogramND':
        if self.normalized:
            return self
        total = self.counts.sum()
        if not total > 0:
            raise EvaluationError("histogram has no weight inside its range")
        return replace(self, counts=self.counts / total, normalized=True)

    def same_binning(self, other: 'HistogramND') -> bool:
        if self.shape != other.shape:
            return False
        return all(np.allclose(a, b, rtol=1e-12, atol=1e-12) for a, b in zip(self.edges, other.edges))


def _edges_for(region: SamplingRegion, dims, bins_per_dim, bin_width=None):
    edges = []
    for k, mu in enumerate(dims):
        lo, hi = region.lower[mu], region.upper[mu]
        if bin_width is not None:
            n_bins = max(1, int(round((hi - lo) / bin_width)))
        else:
            n_bins = bins_per_dim if np.isscalar(bins_per_dim) else bins_per_dim[k]
        if n_bins < 1:
            raise EvaluationError(f"need at least one bin, got {n_bins}")
        edges.append(np.linspace(lo, hi, int(n_bins) + 1))
    return tuple(edges)


def weighted_histogram(thetas, weights, region: SamplingRegion, bins_per_dim=100,
                       marginal_dims: Optional[Sequence[int]] = None, bin_width: Optional[float] = None,
                       workers: int = 1, normalize: bool = True) -> HistogramND:
    """
    Bin weighted samples over the sampling region.

    Partial histograms are accumulated per shard and summed in shard order.
    """
    thetas = np.asarray(thetas, dtype=float)
    if thetas.ndim == 1:
        thetas = thetas[:, None]
    weights = np.ones(len(thetas)) if weights is None else np.asarray(weights, dtype=float)
    if len(thetas) == 0:
        raise EvaluationError("cannot histogram an empty sample set")
    dims = tuple(range(thetas.shape[1])) if marginal_dims is None else tuple(int(d) for d in marginal_dims)
    edges = _edges_for(region, dims, bins_per_dim, bin_width)
    points = thetas[:, dims]

    inside = np.ones(len(points), dtype=bool)
    for k, e in enumerate(edges):
        inside &= (points[:, k] >= e[0]) & (points[:, k] <= e[-1])
    overflow = float(weights[~inside].sum())

    shards = np.array_split(np.arange(len(points)), max(1, workers))

    def accumulate(idx):
        counts, _ = np.histogramdd(points[idx], bins=edges, weights=weights[idx])
        return counts

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        partials = list(pool.map(accumulate, shards))
    counts = np.zeros(tuple(len(e) - 1 for e in edges))
    for part in partials:
        counts += part

    if overflow > 0:
        logger.debug("%.3g of the total weight fell outside the histogram range", overflow)
    hist = HistogramND(edges=edges, counts=counts, dims=dims, overflow=overflow)
    return hist.normalize() if normalize else hist


def marginalize(hist: HistogramND, keep_dims: Sequence[int]) -> HistogramND:
    """
    Sum out every axis whose coordinate is not in keep_dims.

    Remaining axes keep their original order.
    """
    missing = [d for d in keep_dims if d not in hist.dims]
    if missing or not keep_dims:
        raise EvaluationError(f"cannot keep coordinates {list(keep_dims)} of {list(hist.dims)}")
    keep = sorted({hist.dims.index(d) for d in keep_dims})
    drop = tuple(ax for ax in range(hist.ndim) if ax not in keep)
    counts = hist.counts.sum(axis=drop) if drop else hist.counts
    return HistogramND(
        edges=tuple(hist.edges[ax] for ax in keep),
        counts=counts,
        dims=tuple(hist.dims[ax] for ax in keep),
        overflow=hist.overflow,
        normalized=hist.normalized,
    )


def hellinger(p: HistogramND, q: HistogramND) -> float:
    """sqrt(1/2 sum (sqrt(p_i) - sqrt(q_i))^2) between normalized histograms."""
    if not p.same_binning(q):
        raise BinningMismatch(f"histograms have different binning: {p.shape} vs {q.shape}")
    p, q = p.normalize(), q.normalize()
    d = np.sqrt(0.5 * np.sum((np.sqrt(p.counts) - np.sqrt(q.counts)) ** 2))
    return float(min(1.0, max(0.0, d)))


def analytic_histogram(log_density: Callable, region: SamplingRegion, bins=100,
                       bin_width: Optional[float] = None) -> HistogramND:
    """
    Bin a 1-D log-density by adaptive quadrature over each bin.

    The density is shifted by its maximum on a fine grid before
    exponentiation.
    """
    if region.s != 1:
        raise EvaluationError("analytic reference histograms are one-dimensional")
    (edges,) = _edges_for(region, (0,), bins, bin_width)
    grid = np.linspace(edges[0], edges[-1], 20 * (len(edges) - 1) + 1)
    shift = float(np.max(log_density(grid)))

    def density(x):
        return float(np.exp(log_density(np.array([x]))[0] - shift))

    counts = np.array([integrate.quad(density, lo, hi, limit=200)[0] for lo, hi in zip(edges[:-1], edges[1:])])
    return HistogramND(edges=(edges,), counts=counts, dims=(0,)).normalize()


def gaussian_blur(hist: HistogramND, sigma_bins: float = 1.0) -> HistogramND:
    """Smoothed copy for plotting; never used for distances."""
    counts = ndimage.gaussian_filter(hist.counts.astype(float), sigma=sigma_bins, mode='constant')
    return replace(hist, counts=counts, normalized=False).normalize()


_FACTOR = re.compile(r'^(?:theta(\d+)|x)(?:\^(\d+))?$')


@dataclass(frozen=True)
class TestFunction:
    name: str
    evaluator: Callable[[np.ndarray], np.ndarray]

    def __call__(self, thetas) -> np.ndarray:
        return np.asarray(self.evaluator(np.atleast_2d(thetas)), dtype=float)

    @classmethod
    def parse(cls, name: str) -> 'TestFunction':
        """
        Products of coordinate powers: 'theta0', 'x', 'theta0*theta1',
        'theta1^2'. 'x' means theta0.
        """
        factors = []
        for token in name.replace(' ', '').split('*'):
            match = _FACTOR.match(token)
            if not match:
                raise EvaluationError(f"cannot parse test function '{name}'")
            index = int(match.group(1)) if match.group(1) is not None else 0
            power = int(match.group(2)) if match.group(2) is not None else 1
            factors.append((index, power))

        def evaluator(thetas):
            out = np.ones(len(thetas))
            for index, power in factors:
                if index >= thetas.shape[1]:
                    raise EvaluationError(f"test function '{name}' needs coordinate {index}")
                out = out * thetas[:, index] ** power
            return out

        return cls(name=name, evaluator=evaluator)


def effective_sample_size(weights) -> float:
    """(sum w)^2 / sum w^2"""
    w = np.asarray(weights, dtype=float)
    denom = np.sum(w * w)
    return float(w.sum() ** 2 / denom) if denom > 0 else 0.0


def grouped_effective_sample_size(thetas, weights, groups, tau) -> float:
    """
    Effective sample size of the weighted mean of tau when samples sharing a
    group (one base entry) are correlated.

    The variance of the self-normalized mean comes from the per-group sums of
    w (tau - mean); the result is var_w(tau) / var(mean), capped at the
    number of samples.
    """
    w = np.asarray(weights, dtype=float)
    total = w.sum()
    if not total > 0:
        raise EvaluationError("weights must have a positive sum")
    values = np.asarray(tau(thetas), dtype=float)
    mean = np.sum(values * w) / total
    var = np.sum(w * (values - mean) ** 2) / total
    _, group_of = np.unique(np.asarray(groups), return_inverse=True)
    sums = np.bincount(group_of.ravel(), weights=w * (values - mean))
    var_mean = np.sum(sums ** 2) / total ** 2
    if not var_mean > 0 or not var > 0:
        return float(len(w))
    return float(min(len(w), var / var_mean))


def weighted_expectation(thetas, weights, tau) -> Tuple[float, float]:
    """
    Self-normalized estimate of E[tau] and its Monte Carlo error.

    The error is sqrt(weighted variance / effective sample size).
    """
    w = np.asarray(weights, dtype=float)
    total = w.sum()
    if not total > 0:
        raise EvaluationError("weights must have a positive sum")
    values = np.asarray(tau(thetas), dtype=float)
    mean = float(np.sum(values * w) / total)
    var = float(np.sum(w * (values - mean) ** 2) / total)
    ess = effective_sample_size(w)
    return mean, float(np.sqrt(var / ess))
