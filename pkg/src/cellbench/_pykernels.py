"""Pure-Python implementations of the hot kernels.

Graphs are passed around as ``rows``: a ``bytes`` object of length ``n`` where
``rows[v]`` is the bitmask of successors of vertex ``v`` (bit ``j`` set means an
edge ``v -> j``).  Vertex 0 is the input, vertex ``n - 1`` the output.  Labels
are a ``bytes`` object of the same length holding one code per vertex (operation
codes 0..2, ``LABEL_IN`` and ``LABEL_OUT`` for the two endpoints).

This module and the compiled ``_ckernels`` extension expose the same functions
and must return identical results; ``cellbench._kernels`` picks one at import.
"""

from __future__ import annotations

import hashlib
from itertools import product

import numpy as np

LABEL_IN = 3
LABEL_OUT = 4
DIGEST_BYTES = 16

IMPLEMENTATION = "python"

_sha256 = hashlib.sha256


def path_vertices(rows: bytes) -> int:
    """Bitmask of vertices lying on at least one input->output path (0 if none)."""
    n = len(rows)
    fwd = 1
    for v in range(n):
        if fwd >> v & 1:
            fwd |= rows[v]
    last = 1 << (n - 1)
    if not fwd & last:
        return 0
    bwd = last
    for v in range(n - 2, -1, -1):
        if rows[v] & bwd:
            bwd |= 1 << v
    return fwd & bwd


def num_edges(rows: bytes) -> int:
    return sum(bin(r).count("1") for r in rows)


def prune(rows: bytes, labels: bytes):
    """Drop vertices off every input->output path; None when no such path exists."""
    keep = path_vertices(rows)
    if not keep:
        return None
    n = len(rows)
    if keep == (1 << n) - 1:
        return rows, labels
    kept = [v for v in range(n) if keep >> v & 1]
    new_index = {v: i for i, v in enumerate(kept)}
    new_rows = bytearray(len(kept))
    for v in kept:
        r = rows[v] & keep
        out = 0
        while r:
            low = r & -r
            out |= 1 << new_index[low.bit_length() - 1]
            r ^= low
        new_rows[new_index[v]] = out
    return bytes(new_rows), bytes(labels[v] for v in kept)


def graph_digest(rows: bytes, labels: bytes) -> bytes:
    """Isomorphism-invariant 128-bit digest of a pruned labeled DAG.

    Leaf hash per vertex covers (in-degree, out-degree, label); each of ``n``
    rounds rehashes a vertex from its count-prefixed sorted in-neighbor hashes,
    sorted out-neighbor hashes and its own hash.  The result is SHA-256 of the
    count-prefixed sorted vertex hashes, truncated to 16 bytes.
    """
    n = len(rows)
    preds = [[u for u in range(v) if rows[u] >> v & 1] for v in range(n)]
    succs = [[w for w in range(v + 1, n) if rows[v] >> w & 1] for v in range(n)]
    hashes = [
        _sha256(bytes((len(preds[v]), len(succs[v]), labels[v]))).digest()
        for v in range(n)
    ]
    for _ in range(n):
        new = []
        for v in range(n):
            ins = sorted(hashes[u] for u in preds[v])
            outs = sorted(hashes[w] for w in succs[v])
            new.append(
                _sha256(
                    bytes((len(ins),)) + b"".join(ins)
                    + bytes((len(outs),)) + b"".join(outs)
                    + hashes[v]
                ).digest()
            )
        hashes = new
    return _sha256(bytes((n,)) + b"".join(sorted(hashes))).digest()[:DIGEST_BYTES]


def canonical_digest(rows: bytes, labels: bytes):
    pruned = prune(rows, labels)
    if pruned is None:
        return None
    return graph_digest(*pruned)


def pair_index(n: int):
    """Upper-triangular (i, j) pairs in row-major order."""
    return [(i, j) for i in range(n) for j in range(i + 1, n)]


def rows_from_mask(n: int, mask: int) -> bytes:
    """Adjacency rows from an MSB-first pair mask (first pair = highest bit)."""
    pairs = pair_index(n)
    top = len(pairs) - 1
    rows = bytearray(n)
    for k, (i, j) in enumerate(pairs):
        if mask >> (top - k) & 1:
            rows[i] |= 1 << j
    return bytes(rows)


def mask_from_rows(rows: bytes) -> int:
    n = len(rows)
    mask = 0
    for i, j in pair_index(n):
        mask = mask << 1 | (rows[i] >> j & 1)
    return mask


def enumerate_shard(n: int, max_edges: int, lo: int, hi: int, num_ops: int = 3):
    """Hash every full-DAG labeling with pair mask in [lo, hi).

    Returns ``(buckets, labeled_count)`` where ``buckets`` maps digest to the
    smallest ``(mask, op_codes)`` seen.  Masks ascend and labelings ascend
    lexicographically, so the first hit per digest is the minimum.
    """
    buckets: dict = {}
    labeled = 0
    full = (1 << n) - 1
    labelings = [bytes(p) for p in product(range(num_ops), repeat=n - 2)]
    for mask in range(lo, hi):
        if bin(mask).count("1") > max_edges:
            continue
        rows = rows_from_mask(n, mask)
        if path_vertices(rows) != full:
            continue
        for ops in labelings:
            labeled += 1
            digest = graph_digest(rows, bytes((LABEL_IN,)) + ops + bytes((LABEL_OUT,)))
            if digest not in buckets:
                buckets[digest] = (mask, ops)
    return buckets, labeled


def depth_width(rows: bytes):
    """Longest input->output path (edges) and maximum directed cut.

    A directed cut splits vertices into S (holding the input) and T (holding the
    output) with no edge from T back to S; its size is the number of S->T edges.
    """
    n = len(rows)
    longest = [-1] * n
    longest[0] = 0
    for v in range(n):
        if longest[v] < 0:
            continue
        r = rows[v]
        for w in range(v + 1, n):
            if r >> w & 1 and longest[v] + 1 > longest[w]:
                longest[w] = longest[v] + 1
    width = 0
    inner = n - 2
    for assign in range(1 << inner):
        s = 1 | assign << 1
        crossing = 0
        ok = True
        for v in range(n):
            r = rows[v]
            if s >> v & 1:
                crossing += bin(r & ~s).count("1")
            elif r & s:
                ok = False
                break
        if ok and crossing > width:
            width = crossing
    return longest[n - 1], width


def vertex_channels(rows: bytes, c_in: int, c_out: int):
    """Channel count per vertex; raises ValueError when no vertex can feed the output."""
    n = len(rows)
    out = n - 1
    channels = [0] * n
    channels[0] = c_in
    channels[out] = c_out
    feeders = [v for v in range(1, out) if rows[v] >> out & 1]
    if not feeders:
        if not rows[0] >> out & 1:
            raise ValueError("cell has no path into the output vertex")
        return channels
    share, extra = divmod(c_out, len(feeders))
    for i, v in enumerate(feeders):
        channels[v] = share + (1 if i < extra else 0)
    for v in range(out - 1, 0, -1):
        if rows[v] >> out & 1:
            continue
        best = 0
        for w in range(v + 1, out):
            if rows[v] >> w & 1 and channels[w] > best:
                best = channels[w]
        channels[v] = best
    return channels


_OP_KERNEL = (3, 1, 0)  # conv3x3, conv1x1, maxpool (no weights)


def cell_params(rows: bytes, labels: bytes, c_in: int, c_out: int) -> int:
    """Trainable parameters of one cell (convs without bias, 2 per BN channel)."""
    n = len(rows)
    out = n - 1
    channels = vertex_channels(rows, c_in, c_out)
    total = 0
    r0 = rows[0]
    for w in range(1, n):
        if r0 >> w & 1:
            total += c_in * channels[w] + 2 * channels[w]
    for v in range(1, out):
        k = _OP_KERNEL[labels[v]]
        if k:
            c = channels[v]
            total += k * k * c * c + 2 * c
    return total


def min_encoding_distances(sample_masks, sample_ops, peak_masks, peak_ops):
    """Min over peaks of edge Hamming distance plus differing op labels.

    ``*_masks`` are uint32 arrays of 21-bit edge masks, ``*_ops`` uint8 arrays of
    shape (k, 5).  Returns an int32 array aligned with the samples.
    """
    sample_masks = np.asarray(sample_masks, dtype=np.uint32)
    sample_ops = np.asarray(sample_ops, dtype=np.uint8)
    peak_masks = np.asarray(peak_masks, dtype=np.uint32)
    peak_ops = np.asarray(peak_ops, dtype=np.uint8)
    out = np.empty(len(sample_masks), dtype=np.int32)
    chunk = max(1, 2_000_000 // max(1, len(peak_masks)))
    for start in range(0, len(sample_masks), chunk):
        sm = sample_masks[start:start + chunk, None] ^ peak_masks[None, :]
        d = np.bitwise_count(sm).astype(np.int32)
        d += (sample_ops[start:start + chunk, None, :] != peak_ops[None, :, :]).sum(
            axis=2, dtype=np.int32
        )
        out[start:start + chunk] = d.min(axis=1)
    return out
