"""Fitness-landscape and dataset statistics over an oracle.

Fitness is the trial-mean validation accuracy at 108 epochs unless stated
otherwise.  Aggregates use ``math.fsum`` over a fixed element order so results
do not depend on ``jobs``.
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from cellbench import _kernels as K
from cellbench.cellspec import (
    NUM_EDGE_SLOTS,
    NUM_OP_SLOTS,
    OPS,
    RAW_ENCODING_COUNT,
    digest_bytes,
    edge_bits,
    encoding_distance,
    encodings_of,
    neighbors,
    pad,
    random_spec,
    raw_spec,
)
from cellbench.errors import ConfigurationError, UndefinedStatisticError
from cellbench.oracle import MAX_EPOCHS, Oracle, check_budget

Z95 = 1.959963984540054


@dataclass
class WalkSeries:
    digests: list = field(default_factory=list)
    values: list = field(default_factory=list)

    @property
    def steps(self) -> int:
        return len(self.values) - 1


def random_walk(oracle: Oracle, length: int, rng, start=None) -> WalkSeries:
    """``length`` single-edit steps, each to a uniform valid encoding-neighbor.

    Encodings have as many vertices as the oracle's index allows.
    """
    fitness = oracle.mean("valid", MAX_EPOCHS)
    size = oracle.index.max_vertices
    cur = pad(start, size) if start is not None else random_spec(rng, size)
    walk = WalkSeries()
    d = digest_bytes(cur)
    walk.digests.append(d)
    walk.values.append(float(fitness[oracle.row(d)]))
    for _ in range(length):
        options = neighbors(cur, size)
        cur = options[rng.below(len(options))]
        d = digest_bytes(cur)
        walk.digests.append(d)
        walk.values.append(float(fitness[oracle.row(d)]))
    return walk


def autocorrelation(values, max_lag: int) -> list[float]:
    """Sample autocorrelation r_0..r_max_lag (r_0 = 1)."""
    x = np.asarray(values, dtype=np.float64)
    n = len(x)
    if max_lag >= n:
        raise ValueError("max_lag must be smaller than the series length")
    c = x - math.fsum(x) / n
    denom = math.fsum(c * c)
    if denom == 0.0:
        raise UndefinedStatisticError("constant series: autocorrelation undefined")
    out = [1.0]
    for k in range(1, max_lag + 1):
        out.append(math.fsum(c[:-k] * c[k:]) / denom)
    return out


def rwa(oracle: Oracle, walk_length: int, max_lag: int, rng, walk: WalkSeries | None = None):
    """Rows (lag, sqrt_lag, autocorr) for lags 0..max_lag."""
    if walk is None:
        if walk_length <= max_lag:
            raise ValueError("walk_length must exceed max_lag")
        walk = random_walk(oracle, walk_length, rng)
    ac = autocorrelation(walk.values, max_lag)
    return [(k, math.sqrt(k), r) for k, r in enumerate(ac)]


def revisit_rates(digests, max_lag: int) -> list[float]:
    """Fraction of positions t where the walk sits on the same cell at t and t+lag."""
    n = len(digests)
    return [
        sum(digests[t] == digests[t + k] for t in range(n - k)) / (n - k) for k in range(max_lag + 1)
    ]


def correlation(x, y) -> float:
    """Pearson correlation; UndefinedStatisticError on zero variance."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if len(x) != len(y):
        raise ValueError("length mismatch")
    n = len(x)
    if n < 2:
        raise UndefinedStatisticError("need at least two points")
    cx = x - math.fsum(x) / n
    cy = y - math.fsum(y) / n
    sxx, syy = math.fsum(cx * cx), math.fsum(cy * cy)
    if sxx == 0.0 or syy == 0.0:
        raise UndefinedStatisticError("zero variance: correlation undefined")
    return math.fsum(cx * cy) / math.sqrt(sxx * syy)


def fdc(oracle: Oracle, sample, peak) -> float:
    """Fitness-distance correlation of ``sample`` specs against ``peak``."""
    fitness = oracle.mean("valid", MAX_EPOCHS)
    sample = list(sample)
    if not sample:
        raise UndefinedStatisticError("empty sample")
    f = [float(fitness[oracle.row_of(s)]) for s in sample]
    d = [encoding_distance(s, peak) for s in sample]
    return correlation(f, d)


# --------------------------------------------------------------------------
# operation replacement


_SHARED = {}


def _replacement_shard(bounds):
    index, valid, time = _SHARED["index"], _SHARED["valid"], _SHARED["time"]
    deltas = defaultdict(list)
    for i in range(*bounds):
        rows, codes = index.rows[i], index.codes[i]
        labels = bytearray((K.LABEL_IN,)) + codes + bytes((K.LABEL_OUT,))
        here = index.position(K.graph_digest(rows, bytes(labels)))
        for slot, x in enumerate(codes):
            for y in range(len(OPS)):
                if y == x:
                    continue
                labels[slot + 1] = y
                there = index.position(K.graph_digest(rows, bytes(labels)))
                labels[slot + 1] = x
                if there is None:
                    continue
                deltas[(x, y)].append(
                    (valid[there] - valid[here], (time[there] - time[here]) / time[here])
                )
    return dict(deltas)


def op_replacement_matrix(oracle: Oracle, index=None, jobs: int = 1) -> dict:
    """Mean accuracy delta and relative time delta for every (from-op, to-op).

    Averages run over (cell, vertex, replacement) triples; replacements that
    fall outside the index are skipped.  ``index`` defaults to the oracle's.
    """
    index = index if index is not None else oracle.index
    n = len(index)
    if n:
        index.position(index.digests[0])  # build the lookup before forking
    step = max(1, -(-n // max(1, 4 * jobs)))
    tasks = [(lo, min(n, lo + step)) for lo in range(0, n, step)]
    _SHARED.update(
        index=index, valid=oracle.mean("valid", MAX_EPOCHS), time=oracle.mean("time", MAX_EPOCHS)
    )
    try:
        if jobs > 1:
            import multiprocessing as mp

            with mp.get_context("fork").Pool(jobs) as pool:
                parts = pool.map(_replacement_shard, tasks, chunksize=1)
        else:
            parts = [_replacement_shard(t) for t in tasks]
    finally:
        _SHARED.clear()
    k = len(OPS)
    acc = [[math.nan] * k for _ in range(k)]
    rel = [[math.nan] * k for _ in range(k)]
    count = [[0] * k for _ in range(k)]
    for x in range(k):
        for y in range(k):
            if x == y:
                continue
            vals = [d for part in parts for d in part.get((x, y), ())]
            if vals:
                count[x][y] = len(vals)
                acc[x][y] = math.fsum(v[0] for v in vals) / len(vals)
                rel[x][y] = math.fsum(v[1] for v in vals) / len(vals)
    return {"ops": OPS, "accuracy_delta": acc, "relative_time_delta": rel, "count": count}


# --------------------------------------------------------------------------
# distributions


def ecdf(values) -> tuple[np.ndarray, np.ndarray]:
    """Sorted distinct values and the right-continuous cumulative fraction at each."""
    v = np.sort(np.asarray(values, dtype=np.float64))
    if len(v) == 0:
        raise UndefinedStatisticError("empty sample")
    last = np.r_[v[1:] != v[:-1], True]
    frac = (np.nonzero(last)[0] + 1) / len(v)
    return v[last], frac


def accuracy_ecdf(oracle: Oracle, epochs: int = MAX_EPOCHS) -> dict:
    """ECDFs of trial-mean train/valid/test accuracy and of inter-trial test std."""
    epochs = check_budget(epochs)
    out = {name: ecdf(oracle.mean(name, epochs)) for name in ("train", "valid", "test")}
    out["noise"] = ecdf(oracle.table("test", epochs).std(axis=1))
    return out


def budget_rank_correlation(oracle: Oracle, budget_a: int, budget_b: int, top_percentile: float = 100.0) -> float:
    """Spearman rho of mean validation accuracy at two budgets over the top cells at ``budget_b``."""
    a, b = check_budget(budget_a), check_budget(budget_b)
    if not 0 < top_percentile <= 100:
        raise ConfigurationError("top_percentile must be in (0, 100]")
    va, vb = oracle.mean("valid", a), oracle.mean("valid", b)
    keep = max(2, math.ceil(len(vb) * top_percentile / 100.0))
    order = np.argsort(-vb, kind="stable")[:keep]
    x, y = va[order], vb[order]
    if np.all(x == x[0]) or np.all(y == y[0]):
        raise UndefinedStatisticError("all-equal ranks: Spearman undefined")
    return float(stats.spearmanr(x, y)[0])


def depth_width_profile(oracle: Oracle, index=None) -> dict:
    """Mean validation accuracy and training time grouped by depth and by width."""
    index = index if index is not None else oracle.index
    valid = oracle.mean("valid", MAX_EPOCHS)
    time = oracle.mean("time", MAX_EPOCHS)
    groups = {"depth": defaultdict(list), "width": defaultdict(list)}
    for i, rows in enumerate(index.rows):
        depth, width = K.depth_width(rows)
        groups["depth"][depth].append(i)
        groups["width"][width].append(i)
    out = {}
    for key, g in groups.items():
        out[key] = {
            k: {
                "count": len(ix),
                "mean_valid": math.fsum(valid[ix]) / len(ix),
                "mean_time": math.fsum(time[ix]) / len(ix),
            }
            for k, ix in sorted(g.items())
        }
    return out


# --------------------------------------------------------------------------
# volume near top cells


def _peak_arrays(index, peaks):
    masks, ops = [], []
    seen = set()
    for digest in peaks:
        i = index.position(digest)
        if i is None:
            raise KeyError(f"peak {digest.hex()} not in index")
        for enc in encodings_of(index.spec(i)):
            key = (enc.rows, enc.codes)
            if key in seen:
                continue
            seen.add(key)
            masks.append(edge_bits(enc))
            ops.append(list(enc.codes))
    return np.array(masks, dtype=np.uint32), np.array(ops, dtype=np.uint8).reshape(-1, NUM_OP_SLOTS)


def top_cells(oracle: Oracle, sem_multiple: float = 2.0) -> list[bytes]:
    """Best cell plus every cell within ``sem_multiple`` standard errors of its mean test accuracy."""
    test = oracle.table("test", MAX_EPOCHS)
    mean = oracle.mean("test", MAX_EPOCHS)
    best = int(np.argmax(mean))
    sem = float(np.std(test[best], ddof=1)) / math.sqrt(test.shape[1])
    keep = np.nonzero(mean >= mean[best] - sem_multiple * sem)[0]
    return [oracle.index.digests[i] for i in keep]


@dataclass
class VolumeEstimate:
    distance: list
    fraction: list
    half_width: list
    samples: int


def volume_within_distance(index, peaks, max_d: int, sample_size: int, rng) -> VolumeEstimate:
    """Monte Carlo fraction of raw encodings (valid or not) within distance d of a peak encoding."""
    if not peaks:
        raise ValueError("peaks must be non-empty")
    if sample_size < 1 or max_d < 0:
        raise ValueError("sample_size must be positive and max_d non-negative")
    pm, po = _peak_arrays(index, peaks)
    masks = np.empty(sample_size, dtype=np.uint32)
    ops = np.empty((sample_size, NUM_OP_SLOTS), dtype=np.uint8)
    for s in range(sample_size):
        spec = raw_spec(rng)
        masks[s] = K.mask_from_rows(spec.rows)
        ops[s] = np.frombuffer(spec.codes, dtype=np.uint8)
    dist = K.min_encoding_distances(masks, ops, pm, po)
    counts = np.bincount(np.minimum(dist, max_d + 1), minlength=max_d + 2)
    cum = np.cumsum(counts)[: max_d + 1]
    frac = cum / sample_size
    hw = Z95 * np.sqrt(frac * (1.0 - frac) / sample_size)
    return VolumeEstimate(list(range(max_d + 1)), frac.tolist(), hw.tolist(), sample_size)


def _hypercube_transform(d: np.ndarray, bits: int) -> np.ndarray:
    """In-place L1 distance transform over the last axis viewed as a ``bits``-cube."""
    for b in range(bits):
        v = d.reshape(d.shape[:-1] + (-1, 2, 1 << b))
        lo, hi = v[..., 0, :], v[..., 1, :]
        np.minimum(lo, hi + 1, out=lo)
        np.minimum(hi, lo + 1, out=hi)
    return d


def exact_volume_within_distance(index, peaks, max_d: int) -> list[float]:
    """Exact fractions over all 2^21 * 3^5 raw encodings (small peak sets only)."""
    if not peaks:
        raise ValueError("peaks must be non-empty")
    pm, po = _peak_arrays(index, peaks)
    cap = np.uint8(min(254, max_d + 1))
    nops = len(OPS) ** NUM_OP_SLOTS
    # op-space distance from every labeling to each peak's labeling
    lab = np.array(np.unravel_index(np.arange(nops), (len(OPS),) * NUM_OP_SLOTS)).T
    code = np.ravel_multi_index(po.T, (len(OPS),) * NUM_OP_SLOTS)
    op_dist = (lab[:, None, :] != lab[None, code, :]).sum(axis=2)
    uniq, inverse = np.unique(pm, return_inverse=True)
    counts = np.zeros(int(cap) + 1, dtype=np.int64)
    for o in range(nops):
        init = np.full(len(uniq), cap, dtype=np.uint8)
        np.minimum.at(init, inverse, np.minimum(op_dist[o], cap).astype(np.uint8))
        d = np.full(1 << NUM_EDGE_SLOTS, cap, dtype=np.uint8)
        d[uniq] = init
        _hypercube_transform(d, NUM_EDGE_SLOTS)
        np.minimum(d, cap, out=d)
        counts += np.bincount(d, minlength=int(cap) + 1)
    cum = np.cumsum(counts)[: max_d + 1]
    return (cum / RAW_ENCODING_COUNT).tolist()


__all__ = [
    "VolumeEstimate",
    "WalkSeries",
    "accuracy_ecdf",
    "autocorrelation",
    "budget_rank_correlation",
    "correlation",
    "depth_width_profile",
    "ecdf",
    "exact_volume_within_distance",
    "fdc",
    "op_replacement_matrix",
    "random_walk",
    "revisit_rates",
    "top_cells",
    "rwa",
    "volume_within_distance",
]
