"""
JSONL / CSV / JSON persistence for base chains, weighted samples,
histograms and run reports.
"""

from __future__ import annotations

import csv
import json
import logging
from pathlib import Path

import numpy as np

from .evaluation import HistogramND
from .upsampler import WeightedSampleSet

logger = logging.getLogger(__name__)


class StorageError(Exception):
    pass


def _finite_or_none(value):
    if value is None:
        return None
    value = float(value)
    return value if np.isfinite(value) else None


def write_base_chain(entries, path):
    path = Path(path)
    with path.open('w') as fh:
        for e in entries:
            record = {
                'i': e.index,
                'theta': e.theta.tolist(),
                'alpha': e.alpha.tolist(),
                'J': e.J.ravel().tolist(),
            }
            if e.H is not None:
                record['H'] = e.H.ravel().tolist()
            record['lambda_sq'] = _finite_or_none(e.lambda_sq)
            if e.kappa is not None:
                record['kappa'] = float(e.kappa)
            record['c'] = _finite_or_none(e.c)
            record['flag'] = e.flag
            fh.write(json.dumps(record) + '\n')
    logger.debug("Wrote %d base entries to %s", len(entries), path)


def _read_jsonl(path):
    path = Path(path)
    if not path.exists():
        raise StorageError(f"file not found: {path}")
    records = []
    with path.open() as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise StorageError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from exc
    if not records:
        raise StorageError(f"{path} contains no records")
    return records


def read_chain_thetas(path) -> np.ndarray:
    """
    Parameter states from a JSONL chain file.

    Any record layout works as long as each line has a 'theta' list, so both
    stored base chains and externally produced chains can be reloaded.
    """
    records = _read_jsonl(path)
    try:
        thetas = [np.atleast_1d(np.asarray(r['theta'], dtype=float)) for r in records]
    except (KeyError, TypeError, ValueError) as exc:
        raise StorageError(f"{path}: every record needs a numeric 'theta' field") from exc
    sizes = {t.size for t in thetas}
    if len(sizes) != 1:
        raise StorageError(f"{path}: chain states have inconsistent dimensions {sorted(sizes)}")
    return np.vstack(thetas)


def write_samples_jsonl(samples: WeightedSampleSet, path):
    with Path(path).open('w') as fh:
        for k in range(len(samples)):
            fh.write(json.dumps({
                'i': int(samples.base_index[k]),
                'j': int(samples.j[k]),
                'theta': samples.thetas[k].tolist(),
                'w': float(samples.weights[k]),
                'replaced': bool(samples.replaced[k]),
            }) + '\n')


def read_samples_jsonl(path) -> WeightedSampleSet:
    records = _read_jsonl(path)
    try:
        thetas = np.array([r['theta'] for r in records], dtype=float)
        return WeightedSampleSet(
            thetas=thetas,
            weights=[r['w'] for r in records],
            base_index=[r['i'] for r in records],
            j=[r['j'] for r in records],
            origins=thetas.copy(),
            replaced=[r.get('replaced', False) for r in records],
        )
    except (KeyError, ValueError) as exc:
        raise StorageError(f"{path}: malformed sample record ({exc})") from exc


def write_samples_csv(samples: WeightedSampleSet, path):
    with Path(path).open('w', newline='') as fh:
        writer = csv.writer(fh)
        writer.writerow([f'theta{mu}' for mu in range(samples.s)] + ['weight'])
        for theta, w in zip(samples.thetas, samples.weights):
            writer.writerow([repr(float(x)) for x in theta] + [repr(float(w))])


def write_histogram_csv(hist: HistogramND, path):
    """
    One row per bin: index, edges and centre for every axis, then the bin
    probability and the probability density.
    """
    hist = hist.normalize()
    axes = range(hist.ndim)
    header = ([f'i{d}' for d in hist.dims] + [f'lo{d}' for d in hist.dims]
              + [f'hi{d}' for d in hist.dims] + [f'center{d}' for d in hist.dims]
              + ['probability', 'density'])
    volumes = hist.bin_volumes()
    with Path(path).open('w', newline='') as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for idx in np.ndindex(*hist.shape):
            lo = [hist.edges[a][idx[a]] for a in axes]
            hi = [hist.edges[a][idx[a] + 1] for a in axes]
            center = [0.5 * (x + y) for x, y in zip(lo, hi)]
            prob = hist.counts[idx]
            writer.writerow(list(idx) + [repr(float(x)) for x in lo + hi + center]
                            + [repr(float(prob)), repr(float(prob / volumes[idx]))])


def read_histogram_csv(path) -> HistogramND:
    path = Path(path)
    if not path.exists():
        raise StorageError(f"file not found: {path}")
    with path.open(newline='') as fh:
        reader = csv.DictReader(fh)
        rows = list(reader)
        fields = reader.fieldnames or []
    dims = tuple(int(f[1:]) for f in fields if f.startswith('i') and f[1:].isdigit())
    if not rows or not dims or 'probability' not in fields:
        raise StorageError(f"{path} is not a histogram export")
    try:
        shape = tuple(max(int(r[f'i{d}']) for r in rows) + 1 for d in dims)
        edges = []
        for d, n in zip(dims, shape):
            edge = np.empty(n + 1)
            for r in rows:
                k = int(r[f'i{d}'])
                edge[k] = float(r[f'lo{d}'])
                edge[k + 1] = float(r[f'hi{d}'])
            edges.append(edge)
        counts = np.zeros(shape)
        for r in rows:
            counts[tuple(int(r[f'i{d}']) for d in dims)] = float(r['probability'])
    except (KeyError, ValueError) as exc:
        raise StorageError(f"{path}: malformed histogram row ({exc})") from exc
    return HistogramND(edges=tuple(edges), counts=counts, dims=dims, normalized=True)


def write_report(report: dict, path):
    with Path(path).open('w') as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write('\n')


def read_report(path) -> dict:
    path = Path(path)
    try:
        with path.open() as fh:
            return json.load(fh)
    except FileNotFoundError as exc:
        raise StorageError(f"file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise StorageError(f"{path}: invalid JSON ({exc.msg})") from exc
