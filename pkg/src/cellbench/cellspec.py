"""Cell encoding: specs, validity, pruning, canonical hashing, distances and moves.

A cell is a DAG on at most 7 vertices.  Vertex 0 is the input, the last vertex
the output, and each intermediate vertex carries one of three operations.  The
fixed search encoding is the 7-vertex form: 21 upper-triangular edge bits plus
5 operation labels.  Smaller specs embed into it by inserting isolated
CONV3X3 vertices just before the output.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from cellbench import _kernels as K
from cellbench.errors import InvalidSpecError, MutationError, StructuralError

CONV3X3 = "CONV3X3"
CONV1X1 = "CONV1X1"
MAXPOOL3X3 = "MAXPOOL3X3"
OPS = (CONV3X3, CONV1X1, MAXPOOL3X3)
OP_CODE = {op: i for i, op in enumerate(OPS)}

MAX_VERTICES = 7
MAX_EDGES = 9
NUM_EDGE_SLOTS = 21
NUM_OP_SLOTS = 5
NUM_POSITIONS = NUM_EDGE_SLOTS + NUM_OP_SLOTS

# 2**21 edge patterns times 3**5 labelings
RAW_ENCODING_COUNT = 2**NUM_EDGE_SLOTS * len(OPS) ** NUM_OP_SLOTS

EDGE_PAIRS = tuple(K.pair_index(MAX_VERTICES))
MUTATION_RETRIES = 10_000


@dataclass(frozen=True, slots=True)
class ModelSpec:
    """Raw encoded cell.

    ``rows[v]`` is the successor bitmask of vertex ``v``; ``codes[i]`` is the
    operation code of intermediate vertex ``i + 1``.  Validity is not required.
    Build through :func:`new_spec` unless the fields are already known to be
    well formed.
    """

    rows: bytes
    codes: bytes

    @property
    def num_vertices(self) -> int:
        return len(self.rows)

    @property
    def ops(self) -> tuple[str, ...]:
        return tuple(OPS[c] for c in self.codes)

    @property
    def labels(self) -> bytes:
        return bytes((K.LABEL_IN,)) + self.codes + bytes((K.LABEL_OUT,))

    @property
    def num_edges(self) -> int:
        return K.num_edges(self.rows)

    @property
    def matrix(self) -> np.ndarray:
        n = len(self.rows)
        m = np.zeros((n, n), dtype=np.int8)
        for i, r in enumerate(self.rows):
            for j in range(i + 1, n):
                m[i, j] = r >> j & 1
        return m

    def to_text(self) -> str:
        bits = "".join(str(b) for b in self.matrix.ravel())
        return f"matrix={bits};ops={','.join(self.ops)}"

    def __str__(self):
        return self.to_text()


@dataclass(frozen=True, slots=True)
class CanonicalCell:
    rows: bytes
    codes: bytes
    digest: bytes

    @property
    def spec(self) -> ModelSpec:
        return ModelSpec(self.rows, self.codes)

    @property
    def num_vertices(self) -> int:
        return len(self.rows)

    @property
    def num_edges(self) -> int:
        return K.num_edges(self.rows)

    @property
    def ops(self) -> tuple[str, ...]:
        return tuple(OPS[c] for c in self.codes)

    @property
    def hexdigest(self) -> str:
        return self.digest.hex()


@dataclass(frozen=True)
class ContinuousEncoding:
    """21 edge scores in [0, 1], an edge count in [0, 9] and 5 op labels."""

    edge_scores: tuple[float, ...]
    num_edges: int
    ops: tuple[str, ...]

    def __post_init__(self):
        scores = tuple(float(s) for s in self.edge_scores)
        if len(scores) != NUM_EDGE_SLOTS:
            raise StructuralError(f"expected {NUM_EDGE_SLOTS} edge scores, got {len(scores)}")
        if any(not 0.0 <= s <= 1.0 for s in scores):
            raise StructuralError("edge scores must lie in [0, 1]")
        if not 0 <= int(self.num_edges) <= MAX_EDGES:
            raise StructuralError(f"num_edges must be in [0, {MAX_EDGES}]")
        ops = tuple(self.ops)
        if len(ops) != NUM_OP_SLOTS or any(op not in OP_CODE for op in ops):
            raise StructuralError("expected 5 labels from " + ",".join(OPS))
        object.__setattr__(self, "edge_scores", scores)
        object.__setattr__(self, "num_edges", int(self.num_edges))
        object.__setattr__(self, "ops", ops)


def new_spec(matrix, ops) -> ModelSpec:
    m = np.asarray(matrix)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise StructuralError(f"matrix must be square, got shape {m.shape}")
    n = m.shape[0]
    if not 2 <= n <= MAX_VERTICES:
        raise StructuralError(f"matrix side must be in [2, {MAX_VERTICES}], got {n}")
    if not np.isin(m, (0, 1)).all():
        raise StructuralError("matrix entries must be 0 or 1")
    if np.tril(m).any():
        raise StructuralError("matrix must be strictly upper-triangular")
    ops = list(ops)
    if len(ops) != n - 2:
        raise StructuralError(f"expected {n - 2} ops for {n} vertices, got {len(ops)}")
    try:
        codes = bytes(OP_CODE[op] for op in ops)
    except KeyError as exc:
        raise StructuralError(f"unknown operation {exc.args[0]!r}") from None
    rows = bytes(
        sum(1 << j for j in range(i + 1, n) if m[i, j]) for i in range(n)
    )
    return ModelSpec(rows, codes)


def parse_spec(text: str) -> ModelSpec:
    """Parse ``matrix=<bits>;ops=<labels>``."""
    fields = {}
    for part in text.strip().split(";"):
        key, sep, value = part.partition("=")
        if not sep:
            raise StructuralError(f"malformed spec text {text!r}")
        fields[key.strip()] = value.strip()
    if set(fields) != {"matrix", "ops"}:
        raise StructuralError("spec text needs exactly 'matrix' and 'ops'")
    bits = fields["matrix"]
    n = int(round(len(bits) ** 0.5))
    if n * n != len(bits) or set(bits) - {"0", "1"}:
        raise StructuralError(f"matrix field is not a square 0/1 string: {bits!r}")
    matrix = np.array([int(b) for b in bits]).reshape(n, n)
    ops = [op for op in fields["ops"].split(",") if op]
    return new_spec(matrix, ops)


def is_valid(spec: ModelSpec) -> bool:
    return K.num_edges(spec.rows) <= MAX_EDGES and K.path_vertices(spec.rows) != 0


def _require_valid(spec: ModelSpec):
    if not is_valid(spec):
        raise InvalidSpecError(f"invalid spec: {spec.to_text()}")


def prune(spec: ModelSpec) -> ModelSpec:
    _require_valid(spec)
    rows, labels = K.prune(spec.rows, spec.labels)
    return ModelSpec(rows, labels[1:-1])


@lru_cache(maxsize=1 << 20)
def _digest(rows: bytes, codes: bytes):
    return K.canonical_digest(rows, bytes((K.LABEL_IN,)) + codes + bytes((K.LABEL_OUT,)))


def digest_bytes(spec: ModelSpec) -> bytes:
    """128-bit canonical digest; raises for invalid specs."""
    if K.num_edges(spec.rows) > MAX_EDGES:
        raise InvalidSpecError(f"more than {MAX_EDGES} edges: {spec.to_text()}")
    d = _digest(spec.rows, spec.codes)
    if d is None:
        raise InvalidSpecError(f"no input->output path: {spec.to_text()}")
    return d


def try_digest(spec: ModelSpec):
    """Digest bytes, or None when the spec is invalid."""
    if K.num_edges(spec.rows) > MAX_EDGES:
        return None
    return _digest(spec.rows, spec.codes)


def canonical_hash(spec: ModelSpec) -> str:
    return digest_bytes(spec).hex()


def canonical_cell(spec: ModelSpec) -> CanonicalCell:
    """Class representative: the smallest (edge mask, ops) relabeling of the pruned cell.

    This is the member the enumerator keeps, so channel allocation (which
    depends on vertex order) is a function of the class alone.
    """
    p = prune(spec)
    n = len(p.rows)
    best = (K.mask_from_rows(p.rows), p.codes, p.rows)
    for perm in itertools.permutations(range(1, n - 1)):
        q = _permute(p, perm)
        if q is not None:
            key = (K.mask_from_rows(q.rows), q.codes, q.rows)
            if key < best:
                best = key
    return CanonicalCell(best[2], best[1], digest_bytes(p))


def pad(spec: ModelSpec, size: int = MAX_VERTICES) -> ModelSpec:
    """Insert isolated CONV3X3 vertices before the output until ``size`` vertices."""
    n = len(spec.rows)
    if n == size:
        return spec
    if n > size:
        raise StructuralError(f"cannot pad a {n}-vertex spec to {size}")
    shift = size - n
    out_bit = 1 << (n - 1)
    rows = bytearray(size)
    for v in range(n - 1):
        r = spec.rows[v]
        rows[v] = (r & (out_bit - 1)) | ((1 << (size - 1)) if r & out_bit else 0)
    codes = spec.codes + bytes(shift)
    return ModelSpec(bytes(rows), codes)


def _popcount_rows(a: bytes, b: bytes) -> int:
    return sum((x ^ y).bit_count() for x, y in zip(a, b))


def encoding_distance(a: ModelSpec, b: ModelSpec) -> int:
    """Edge-bit Hamming distance plus differing op labels in the 7-vertex encoding."""
    pa, pb = pad(a), pad(b)
    return _popcount_rows(pa.rows, pb.rows) + sum(
        x != y for x, y in zip(pa.codes, pb.codes)
    )


_SLOT_PERMUTATIONS = tuple(itertools.permutations(range(1, MAX_VERTICES - 1)))


def _permute(spec: ModelSpec, perm) -> ModelSpec | None:
    """Relabel intermediate vertex i+1 -> perm[i]; None if it breaks upper-triangularity."""
    n = len(spec.rows)
    where = (0,) + tuple(perm) + (n - 1,)
    rows = bytearray(n)
    for v in range(n):
        r = spec.rows[v]
        nv = where[v]
        for w in range(v + 1, n):
            if r >> w & 1:
                nw = where[w]
                if nw <= nv:
                    return None
                rows[nv] |= 1 << nw
    codes = bytearray(n - 2)
    for i, slot in enumerate(perm):
        codes[slot - 1] = spec.codes[i]
    return ModelSpec(bytes(rows), bytes(codes))


def canonical_distance(a: ModelSpec, b: ModelSpec) -> int:
    """Minimum encoding distance over relabelings of b's intermediate vertices."""
    _require_valid(a)
    _require_valid(b)
    pa, pb = pad(a), pad(b)
    best = encoding_distance(pa, pb)
    for perm in _SLOT_PERMUTATIONS:
        if best == 0:
            break
        q = _permute(pb, perm)
        if q is not None:
            d = _popcount_rows(pa.rows, q.rows) + sum(
                x != y for x, y in zip(pa.codes, q.codes)
            )
            best = min(best, d)
    return best


@lru_cache(maxsize=None)
def edge_pairs(size: int) -> tuple:
    """Upper-triangular (i, j) slots of a ``size``-vertex encoding, row-major."""
    return tuple(K.pair_index(size))


def num_positions(size: int = MAX_VERTICES) -> int:
    """Edge slots plus op slots of a ``size``-vertex encoding (26 for 7)."""
    return size * (size - 1) // 2 + size - 2


def flip_edge(spec: ModelSpec, slot: int) -> ModelSpec:
    i, j = edge_pairs(len(spec.rows))[slot]
    rows = bytearray(spec.rows)
    rows[i] ^= 1 << j
    return ModelSpec(bytes(rows), spec.codes)


def set_op(spec: ModelSpec, slot: int, code: int) -> ModelSpec:
    codes = bytearray(spec.codes)
    codes[slot] = code
    return ModelSpec(spec.rows, bytes(codes))


def single_edits(spec: ModelSpec, size: int = MAX_VERTICES) -> list[ModelSpec]:
    """All ``size``-vertex encodings at distance one (valid or not), edges first."""
    p = pad(spec, size)
    out = [flip_edge(p, k) for k in range(len(edge_pairs(size)))]
    for slot in range(size - 2):
        for code in range(len(OPS)):
            if code != p.codes[slot]:
                out.append(set_op(p, slot, code))
    return out


def neighbors(spec: ModelSpec, size: int = MAX_VERTICES) -> list[ModelSpec]:
    _require_valid(spec)
    return [s for s in single_edits(spec, size) if is_valid(s)]


def propose_mutation(spec: ModelSpec, rng, size: int = MAX_VERTICES) -> tuple[int, ModelSpec]:
    """One mutation proposal: (position in [0, 26), child), child possibly invalid."""
    p = pad(spec, size)
    slots = len(edge_pairs(size))
    pos = rng.below(num_positions(size))
    if pos < slots:
        return pos, flip_edge(p, pos)
    slot = pos - slots
    current = p.codes[slot]
    alternatives = [c for c in range(len(OPS)) if c != current]
    return pos, set_op(p, slot, alternatives[rng.below(len(alternatives))])


def mutate(spec: ModelSpec, rng, size: int = MAX_VERTICES) -> ModelSpec:
    _require_valid(spec)
    for _ in range(MUTATION_RETRIES):
        _, child = propose_mutation(spec, rng, size)
        if is_valid(child):
            return child
    raise MutationError(f"no valid mutation after {MUTATION_RETRIES} proposals")


def _rows_from_edge_bits(bits: int, size: int = MAX_VERTICES) -> bytes:
    rows = bytearray(size)
    pairs = edge_pairs(size)
    k = len(pairs) - 1
    for i, j in pairs:
        if bits >> k & 1:
            rows[i] |= 1 << j
        k -= 1
    return bytes(rows)


def edge_bits(spec: ModelSpec) -> int:
    """21-bit edge mask of the padded spec, first pair (0, 1) in the top bit."""
    return K.mask_from_rows(pad(spec).rows)


@lru_cache(maxsize=None)
def _labelings(slots: int) -> tuple:
    return tuple(bytes(p) for p in itertools.product(range(len(OPS)), repeat=slots))


def raw_spec(rng, size: int = MAX_VERTICES) -> ModelSpec:
    """A uniformly drawn ``size``-vertex encoding, valid or not."""
    rows = _rows_from_edge_bits(rng.bits(len(edge_pairs(size))), size)
    labelings = _labelings(size - 2)
    return ModelSpec(rows, labelings[rng.below(len(labelings))])


def random_spec(rng, size: int = MAX_VERTICES) -> ModelSpec:
    """Uniform draw over valid ``size``-vertex encodings by rejection."""
    while True:
        spec = raw_spec(rng, size)
        if is_valid(spec):
            return spec


def decode_continuous(enc: ContinuousEncoding) -> ModelSpec:
    order = sorted(range(NUM_EDGE_SLOTS), key=lambda k: (-enc.edge_scores[k], k))
    rows = bytearray(MAX_VERTICES)
    for k in order[: enc.num_edges]:
        i, j = EDGE_PAIRS[k]
        rows[i] |= 1 << j
    return ModelSpec(bytes(rows), bytes(OP_CODE[op] for op in enc.ops))


def encodings_of(cell) -> list[ModelSpec]:
    """Every distinct 7-vertex encoding whose pruned form is ``cell`` up to isomorphism.

    Enumerates intermediate-slot permutations of the padded cell and every
    labeling of its isolated padding vertices; dangling (non-isolated) extras
    are not generated.
    """
    spec = cell.spec if isinstance(cell, CanonicalCell) else cell
    base = prune(spec)
    inner = base.num_vertices - 2
    npad = NUM_OP_SLOTS - inner
    padded = pad(base)
    found = set()
    for perm in _SLOT_PERMUTATIONS:
        q = _permute(padded, perm)
        if q is None:
            continue
        pad_slots = [perm[i] - 1 for i in range(inner, NUM_OP_SLOTS)]
        for labeling in itertools.product(range(len(OPS)), repeat=npad):
            codes = bytearray(q.codes)
            for slot, code in zip(pad_slots, labeling):
                codes[slot] = code
            found.add((q.rows, bytes(codes)))
    return [ModelSpec(r, c) for r, c in sorted(found)]


def encoding_multiplicity(cell) -> int:
    return len(encodings_of(cell))


# Hand-designed reference cells.
RESNET_LIKE = new_spec(
    [
        [0, 1, 0, 1],
        [0, 0, 1, 0],
        [0, 0, 0, 1],
        [0, 0, 0, 0],
    ],
    [CONV3X3, CONV3X3],
)

# 1x1, 3x3, stacked 3x3 (5x5 stand-in) and pooling branches, concatenated.
INCEPTION_LIKE = new_spec(
    [
        [0, 1, 1, 1, 0, 1, 0],
        [0, 0, 0, 0, 0, 0, 1],
        [0, 0, 0, 0, 0, 0, 1],
        [0, 0, 0, 0, 1, 0, 0],
        [0, 0, 0, 0, 0, 0, 1],
        [0, 0, 0, 0, 0, 0, 1],
        [0, 0, 0, 0, 0, 0, 0],
    ],
    [CONV1X1, CONV3X3, CONV3X3, CONV3X3, MAXPOOL3X3],
)
