"""Exhaustive enumeration of the canonical cell space and the space-index file."""

from __future__ import annotations

import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

from cellbench import _kernels as K
from cellbench.cellspec import OPS, CanonicalCell, ModelSpec
from cellbench.errors import CorruptIndexError

log = logging.getLogger(__name__)

HEADER_MAGIC = "NASBENCH-SPACE"
FORMAT_VERSION = "v1"

# Unique cells for (max_vertices=7, max_edges=9) and (6, 9); pinned after the
# small-space exact-isomorphism cross-check.
FULL_SPACE_COUNT = 423_624
MINI_SPACE_COUNT = 64_542

# Target shard size (adjacency masks) for the parallel path.
_SHARD_MASKS = 1 << 15


@dataclass
class SpaceIndex:
    max_vertices: int
    max_edges: int
    digests: list = field(default_factory=list)
    rows: list = field(default_factory=list)
    codes: list = field(default_factory=list)
    ops: tuple = OPS
    _position: dict | None = field(default=None, repr=False, compare=False)

    def __len__(self):
        return len(self.digests)

    def __eq__(self, other):
        if not isinstance(other, SpaceIndex):
            return NotImplemented
        return (
            self.max_vertices == other.max_vertices
            and self.max_edges == other.max_edges
            and self.ops == other.ops
            and self.digests == other.digests
            and self.rows == other.rows
            and self.codes == other.codes
        )

    def cell(self, i: int) -> CanonicalCell:
        return CanonicalCell(self.rows[i], self.codes[i], self.digests[i])

    def spec(self, i: int) -> ModelSpec:
        return ModelSpec(self.rows[i], self.codes[i])

    def __iter__(self):
        for i in range(len(self.digests)):
            yield self.cell(i)

    def position(self, digest: bytes):
        """Row of ``digest`` or None."""
        if self._position is None:
            self._position = {d: i for i, d in enumerate(self.digests)}
        return self._position.get(digest)

    def __contains__(self, digest):
        return self.position(digest) is not None


def _shards(n: int, max_edges: int):
    total = 1 << (n * (n - 1) // 2)
    step = min(total, _SHARD_MASKS)
    return [(n, max_edges, lo, min(lo + step, total)) for lo in range(0, total, step)]


def _run_shard(args):
    return K.enumerate_shard(*args)


def _merge(into: dict, part: dict):
    for digest, rep in part.items():
        cur = into.get(digest)
        if cur is None or rep < cur:
            into[digest] = rep


def enumerate_space(max_vertices: int = 7, max_edges: int = 9, jobs: int = 1) -> SpaceIndex:
    """All unique cells with at most ``max_vertices`` vertices and ``max_edges`` edges.

    Each class keeps the lexicographically smallest (matrix bits, op codes)
    member, so the result does not depend on shard order or ``jobs``.
    """
    if not 2 <= max_vertices <= 7:
        raise ValueError("max_vertices must be in [2, 7]")
    if max_edges < 1:
        raise ValueError("max_edges must be >= 1")
    tasks = [t for n in range(2, max_vertices + 1) for t in _shards(n, max_edges)]
    buckets: dict = {}
    # Vertex counts never share a digest (pruned graphs keep their size), so a
    # digest maps to one (n, mask, ops) triple.
    if jobs > 1:
        import multiprocessing as mp

        with mp.get_context("fork").Pool(jobs) as pool:
            results = pool.map(_run_shard, tasks, chunksize=1)
    else:
        results = map(_run_shard, tasks)
    labeled = 0
    for (n, _, _, _), (part, count) in zip(tasks, results):
        labeled += count
        _merge(buckets, {d: (n, mask, ops) for d, (mask, ops) in part.items()})
    log.info("hashed %d labeled graphs into %d cells", labeled, len(buckets))
    index = SpaceIndex(max_vertices, max_edges)
    for digest in sorted(buckets):
        n, mask, ops = buckets[digest]
        index.digests.append(digest)
        index.rows.append(K.rows_from_mask(n, mask))
        index.codes.append(ops)
    return index


def _matrix_bits(rows: bytes) -> str:
    n = len(rows)
    return "".join("1" if rows[i] >> j & 1 else "0" for i in range(n) for j in range(n))


def header_line(index: SpaceIndex) -> str:
    return (
        f"{HEADER_MAGIC} {FORMAT_VERSION} max_vertices={index.max_vertices} "
        f"max_edges={index.max_edges} ops={','.join(index.ops)} count={len(index)}"
    )


def write_index(index: SpaceIndex, path) -> None:
    lines = [header_line(index)]
    for d, r, c in zip(index.digests, index.rows, index.codes):
        ops = ",".join(OPS[x] for x in c) or "-"
        lines.append(f"{d.hex()} {len(r)} {K.num_edges(r)} {_matrix_bits(r)} {ops}")
    Path(path).write_bytes(("\n".join(lines) + "\n").encode("ascii"))


def _parse_header(line: str):
    parts = line.split()
    if len(parts) != 6 or parts[0] != HEADER_MAGIC or parts[1] != FORMAT_VERSION:
        raise CorruptIndexError(f"bad header: {line!r}")
    kv = {}
    for p in parts[2:]:
        k, sep, v = p.partition("=")
        if not sep:
            raise CorruptIndexError(f"bad header field {p!r}")
        kv[k] = v
    try:
        mv, me, count = int(kv["max_vertices"]), int(kv["max_edges"]), int(kv["count"])
        ops = tuple(kv["ops"].split(","))
    except (KeyError, ValueError) as exc:
        raise CorruptIndexError(f"bad header: {line!r}") from exc
    if ops != OPS:
        raise CorruptIndexError(f"unsupported op set {ops}")
    return mv, me, count


def read_index(path) -> SpaceIndex:
    """Load and re-validate a space-index file."""
    try:
        data = Path(path).read_bytes()
    except OSError:
        raise
    try:
        text = data.decode("ascii")
    except UnicodeDecodeError as exc:
        raise CorruptIndexError("index file is not ASCII") from exc
    if not text.endswith("\n"):
        raise CorruptIndexError("index file truncated (no final newline)")
    lines = text[:-1].split("\n")
    mv, me, count = _parse_header(lines[0])
    records = lines[1:]
    if len(records) != count:
        raise CorruptIndexError(f"header count {count} but {len(records)} records")
    index = SpaceIndex(mv, me)
    op_code = {op: i for i, op in enumerate(OPS)}
    prev = None
    for lineno, line in enumerate(records, start=2):
        parts = line.split(" ")
        if len(parts) != 5:
            raise CorruptIndexError(f"line {lineno}: expected 5 fields")
        hexd, vs, es, bits, ops = parts
        try:
            digest = bytes.fromhex(hexd)
            n, e = int(vs), int(es)
        except ValueError as exc:
            raise CorruptIndexError(f"line {lineno}: {exc}") from exc
        if len(digest) != K.DIGEST_BYTES:
            raise CorruptIndexError(f"line {lineno}: digest width")
        if prev is not None and digest <= prev:
            raise CorruptIndexError(f"line {lineno}: digest out of order or duplicated")
        prev = digest
        if not 2 <= n <= mv:
            raise CorruptIndexError(f"line {lineno}: {n} vertices exceeds max_vertices={mv}")
        if len(bits) != n * n or set(bits) - {"0", "1"}:
            raise CorruptIndexError(f"line {lineno}: malformed matrix")
        rows = bytearray(n)
        for i in range(n):
            for j in range(n):
                if bits[i * n + j] == "1":
                    if j <= i:
                        raise CorruptIndexError(f"line {lineno}: not upper-triangular")
                    rows[i] |= 1 << j
        rows = bytes(rows)
        if K.num_edges(rows) != e or e > me:
            raise CorruptIndexError(f"line {lineno}: edge count mismatch")
        labels = [] if ops == "-" else ops.split(",")
        if len(labels) != n - 2 or any(op not in op_code for op in labels):
            raise CorruptIndexError(f"line {lineno}: bad ops")
        codes = bytes(op_code[op] for op in labels)
        if K.path_vertices(rows) != (1 << n) - 1:
            raise CorruptIndexError(f"line {lineno}: cell is not pruned")
        index.digests.append(digest)
        index.rows.append(rows)
        index.codes.append(codes)
    return index


def verify_digests(index: SpaceIndex) -> None:
    """Recompute every digest; raises CorruptIndexError on mismatch."""
    for i, (d, r, c) in enumerate(zip(index.digests, index.rows, index.codes)):
        if K.graph_digest(r, bytes((K.LABEL_IN,)) + c + bytes((K.LABEL_OUT,))) != d:
            raise CorruptIndexError(f"record {i}: digest does not match cell")


def space_stats(index: SpaceIndex) -> dict:
    """Histograms by vertex count, edge count, op counts, depth and width."""
    by_vertices: Counter = Counter()
    by_edges: Counter = Counter()
    by_ops: Counter = Counter()
    by_depth: Counter = Counter()
    by_width: Counter = Counter()
    for r, c in zip(index.rows, index.codes):
        by_vertices[len(r)] += 1
        by_edges[K.num_edges(r)] += 1
        by_ops[tuple(c.count(k) for k in range(len(OPS)))] += 1
        depth, width = K.depth_width(r)
        by_depth[depth] += 1
        by_width[width] += 1
    return {
        "total": len(index),
        "vertices": dict(sorted(by_vertices.items())),
        "edges": dict(sorted(by_edges.items())),
        "op_counts": dict(sorted(by_ops.items())),
        "depth": dict(sorted(by_depth.items())),
        "width": dict(sorted(by_width.items())),
    }


def approx_thousands(count: int, places: int = 0) -> float:
    """Count in thousands rounded half-up, e.g. 64_542 -> 64.5 with places=1."""
    scale = 10**places
    return math.floor(count / 1000 * scale + 0.5) / scale
