"""Architecture -> metrics lookup: tabular files or a deterministic synthetic surrogate.

Both backends store, per indexed cell, a (cells, 3 trials) table for each
(field, epoch budget) with fields ``train``, ``valid``, ``test`` and ``time``.
Queries canonicalize the spec, draw a trial uniformly from {1, 2, 3} and return
that row.  Search algorithms get a :class:`ValidationView`, which never touches
the ``test`` tables.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from cellbench import _kernels as K
from cellbench.cellspec import ModelSpec, digest_bytes
from cellbench.enumerator import SpaceIndex
from cellbench.errors import (
    CompletenessError,
    ConfigurationError,
    SchemaError,
    UnknownArchitectureError,
)
from cellbench.netmodel import SkeletonConfig

EPOCH_BUDGETS = (4, 12, 36, 108)
TRIALS = (1, 2, 3)
FIELDS = ("train", "valid", "test", "time")
MAX_EPOCHS = 108

_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class EvaluationRecord:
    digest: str
    epochs: int
    trial: int
    train_accuracy: float
    validation_accuracy: float
    test_accuracy: float
    training_seconds: float
    parameter_count: int

    def to_json(self) -> str:
        return json.dumps(
            {
                "digest": self.digest,
                "epochs": self.epochs,
                "trial": self.trial,
                "train_acc": self.train_accuracy,
                "valid_acc": self.validation_accuracy,
                "test_acc": self.test_accuracy,
                "time_s": self.training_seconds,
                "params": self.parameter_count,
            }
        )


def check_budget(epochs) -> int:
    if epochs not in EPOCH_BUDGETS:
        raise ConfigurationError(f"epoch budget must be one of {EPOCH_BUDGETS}, got {epochs}")
    return int(epochs)


class Oracle:
    """Read-only metrics store keyed by (cell row, epoch budget, trial)."""

    def __init__(self, index: SpaceIndex, backend: str, params: np.ndarray, tables=None):
        self.index = index
        self.backend = backend
        self.params = params
        self._tables: dict = dict(tables or {})
        self._best = None

    def _compute(self, name: str, epochs: int) -> np.ndarray:
        raise KeyError((name, epochs))

    def table(self, name: str, epochs: int) -> np.ndarray:
        """(cells, 3) array of ``name`` at ``epochs``; trial t is column t - 1."""
        key = (name, check_budget(epochs))
        tab = self._tables.get(key)
        if tab is None:
            if name not in FIELDS:
                raise KeyError(name)
            tab = self._compute(name, key[1])
            tab.flags.writeable = False
            self._tables[key] = tab
        return tab

    def __len__(self):
        return len(self.index)

    def row(self, digest: bytes) -> int:
        i = self.index.position(digest)
        if i is None:
            raise UnknownArchitectureError(f"architecture {digest.hex()} is not in the index")
        return i

    def row_of(self, spec: ModelSpec) -> int:
        return self.row(digest_bytes(spec))

    def record(self, row: int, epochs: int, trial: int) -> EvaluationRecord:
        if trial not in TRIALS:
            raise ConfigurationError(f"trial must be in {TRIALS}")
        t = trial - 1
        return EvaluationRecord(
            digest=self.index.digests[row].hex(),
            epochs=epochs,
            trial=trial,
            train_accuracy=float(self.table("train", epochs)[row, t]),
            validation_accuracy=float(self.table("valid", epochs)[row, t]),
            test_accuracy=float(self.table("test", epochs)[row, t]),
            training_seconds=float(self.table("time", epochs)[row, t]),
            parameter_count=int(self.params[row]),
        )

    def query(self, spec: ModelSpec, epochs: int, rng) -> EvaluationRecord:
        epochs = check_budget(epochs)
        row = self.row_of(spec)
        return self.record(row, epochs, 1 + rng.below(len(TRIALS)))

    def mean(self, name: str, epochs: int = MAX_EPOCHS) -> np.ndarray:
        """Trial mean of ``name`` per cell (sum of the three trials / 3)."""
        tab = self.table(name, epochs)
        return (tab[:, 0] + tab[:, 1] + tab[:, 2]) / 3.0

    def mean_test_accuracy(self, spec: ModelSpec) -> float:
        return float(self.mean("test")[self.row_of(spec)])

    def mean_validation_accuracy(self, spec: ModelSpec) -> float:
        return float(self.mean("valid")[self.row_of(spec)])

    def best_cell(self) -> tuple[str, float]:
        """Digest (hex) and value of the highest mean test accuracy; ties -> smaller digest."""
        if self._best is None:
            acc = self.mean("test")
            # rows are sorted by digest, so argmax returns the smallest tied digest
            i = int(np.argmax(acc))
            self._best = (self.index.digests[i].hex(), float(acc[i]))
        return self._best


@dataclass(frozen=True)
class Observation:
    digest: bytes
    row: int
    epochs: int
    trial: int
    validation_accuracy: float
    training_seconds: float


class ValidationView:
    """Steering interface for search algorithms: validation accuracy and time only."""

    def __init__(self, oracle: Oracle):
        self._oracle = oracle
        self._valid = {}
        self._time = {}

    @property
    def index(self) -> SpaceIndex:
        return self._oracle.index

    def evaluate(self, spec: ModelSpec, epochs: int, rng) -> Observation:
        epochs = check_budget(epochs)
        digest = digest_bytes(spec)
        row = self._oracle.row(digest)
        t = rng.below(len(TRIALS))
        valid = self._valid.get(epochs)
        if valid is None:
            valid = self._valid[epochs] = self._oracle.table("valid", epochs)
            self._time[epochs] = self._oracle.table("time", epochs)
        return Observation(
            digest, row, epochs, t + 1, float(valid[row, t]), float(self._time[epochs][row, t])
        )


# --------------------------------------------------------------------------
# tabular backend

_RECORD_KEYS = {"digest", "epochs", "trial", "train_acc", "valid_acc", "test_acc", "time_s", "params"}
_FIELD_KEYS = {"train": "train_acc", "valid": "valid_acc", "test": "test_acc", "time": "time_s"}


def _check_record(obj, lineno: int):
    if not isinstance(obj, dict) or set(obj) != _RECORD_KEYS:
        raise SchemaError(f"line {lineno}: expected keys {sorted(_RECORD_KEYS)}")
    d = obj["digest"]
    if not isinstance(d, str) or len(d) != 2 * K.DIGEST_BYTES or d != d.lower():
        raise SchemaError(f"line {lineno}: digest must be {2 * K.DIGEST_BYTES} lowercase hex chars")
    try:
        bytes.fromhex(d)
    except ValueError:
        raise SchemaError(f"line {lineno}: digest is not hex") from None
    if type(obj["epochs"]) is not int or obj["epochs"] not in EPOCH_BUDGETS:
        raise SchemaError(f"line {lineno}: epochs must be one of {EPOCH_BUDGETS}")
    if type(obj["trial"]) is not int or obj["trial"] not in TRIALS:
        raise SchemaError(f"line {lineno}: trial must be one of {TRIALS}")
    for key in ("train_acc", "valid_acc", "test_acc"):
        v = obj[key]
        if isinstance(v, bool) or not isinstance(v, (int, float)) or not 0.0 <= v <= 1.0:
            raise SchemaError(f"line {lineno}: {key}={v!r} outside [0, 1]")
    t = obj["time_s"]
    if isinstance(t, bool) or not isinstance(t, (int, float)) or not t > 0 or not math.isfinite(t):
        raise SchemaError(f"line {lineno}: time_s must be positive")
    if type(obj["params"]) is not int or obj["params"] < 0:
        raise SchemaError(f"line {lineno}: params must be a non-negative integer")


def read_metrics(path):
    """Parse and schema-check a metrics file; yields (lineno, record dict)."""
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"line {lineno}: {exc.msg}") from None
            _check_record(obj, lineno)
            yield lineno, obj


def load_tabular(index: SpaceIndex, path) -> Oracle:
    n = len(index)
    tables = {(f, e): np.full((n, 3), np.nan) for f in FIELDS for e in EPOCH_BUDGETS}
    params = np.full(n, -1, dtype=np.int64)
    seen = np.zeros((n, len(EPOCH_BUDGETS), 3), dtype=bool)
    unknown = []
    budget_col = {e: i for i, e in enumerate(EPOCH_BUDGETS)}
    for lineno, obj in read_metrics(path):
        row = index.position(bytes.fromhex(obj["digest"]))
        if row is None:
            unknown.append(obj["digest"])
            continue
        e, t = obj["epochs"], obj["trial"] - 1
        if seen[row, budget_col[e], t]:
            raise SchemaError(f"line {lineno}: duplicate record for {obj['digest']} epochs={e} trial={t + 1}")
        seen[row, budget_col[e], t] = True
        for name, key in _FIELD_KEYS.items():
            tables[(name, e)][row, t] = float(obj[key])
        if params[row] < 0:
            params[row] = obj["params"]
        elif params[row] != obj["params"]:
            raise SchemaError(f"line {lineno}: params differ between records of {obj['digest']}")
    if unknown:
        shown = ", ".join(sorted(set(unknown))[:10])
        raise CompletenessError(
            f"{len(set(unknown))} digests are not in the index (e.g. {shown})", sorted(set(unknown))
        )
    missing = np.argwhere(~seen)
    if len(missing):
        gaps = [
            (index.digests[r].hex(), EPOCH_BUDGETS[b], t + 1) for r, b, t in missing[:1000]
        ]
        first = ", ".join(f"{d} epochs={e} trial={t}" for d, e, t in gaps[:5])
        raise CompletenessError(f"{len(missing)} (cell, epochs, trial) records missing: {first}", gaps)
    return Oracle(index, "tabular", params, tables)


def write_metrics(oracle: Oracle, path) -> None:
    """Dump every record as JSON lines, sorted by (digest, epochs, trial)."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for row in range(len(oracle.index)):
            for e in EPOCH_BUDGETS:
                for trial in TRIALS:
                    fh.write(oracle.record(row, e, trial).to_json() + "\n")


# --------------------------------------------------------------------------
# synthetic backend


def _mix_int(x: int) -> int:
    """SplitMix64 finalizer on a Python int."""
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


def _mix(x: np.ndarray) -> np.ndarray:
    """SplitMix64 finalizer, elementwise on uint64 (wrapping arithmetic)."""
    x = x + np.uint64(0x9E3779B97F4A7C15)
    x = (x ^ (x >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    x = (x ^ (x >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return x ^ (x >> np.uint64(31))


def _tag_key(seed: int, tags) -> int:
    k = _mix_int(seed & _MASK64)
    for t in tags:
        k = _mix_int(k ^ (int(t) & _MASK64))
    return k


def hash_uniform(keys: np.ndarray, seed: int, *tags) -> np.ndarray:
    """Uniform [0, 1) per key, a pure function of (seed, key, tags)."""
    h = _mix(keys ^ np.uint64(_tag_key(seed, tags)))
    return (h >> np.uint64(11)).astype(np.float64) * (1.0 / (1 << 53))


def hash_normal(keys: np.ndarray, seed: int, *tags) -> np.ndarray:
    """Standard normal per key by Box-Muller over two hash uniforms."""
    u1 = 1.0 - hash_uniform(keys, seed, *tags, 0)
    u2 = hash_uniform(keys, seed, *tags, 1)
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)


_FIELD_TAG = {"train": 11, "valid": 12, "test": 13, "time": 14}


@dataclass(frozen=True)
class SurrogateParams:
    """Shape constants of the synthetic surrogate.

    ``locality`` scales the structural (smooth) part of the score; 0 leaves
    only the per-cell hash perturbation, i.e. a landscape without locality.
    """

    locality: float = 1.0
    perturbation: float = 0.3
    # smooth part: weights on op counts, (depth - 3)^2, width, log10(params) - 6.5
    w_conv3x3: float = 0.4
    w_conv1x1: float = -0.05
    w_maxpool: float = -0.2
    w_depth: float = -0.05
    w_width: float = 0.15
    w_params: float = 0.3
    # std of the per-vertex-motif weights (op, in-degree, out-degree)
    motif_scale: float = 0.24
    # logit of the mean validation accuracy: offset[E] + slope * score
    logit_offset: tuple = (0.4, 1.6, 2.2, 2.55)
    logit_slope: float = 0.45
    # extra per-cell score noise at each budget (low budgets rank cells less faithfully)
    budget_noise: tuple = (0.45, 0.3, 0.18, 0.0)
    floor: float = 0.10
    span: float = 0.86
    trial_noise: tuple = (0.012, 0.008, 0.006, 0.005)
    test_noise: float = 0.0012
    test_gap: float = -0.006
    train_gap: tuple = (0.03, 0.06, 0.085, 0.12)
    seconds_per_param_epoch: float = 4.0e-6
    time_jitter: float = 0.05


def _vertex_types(rows: bytes, codes: bytes) -> list[int]:
    n = len(rows)
    indeg = [0] * n
    for u in range(n):
        r = rows[u]
        for w in range(u + 1, n):
            if r >> w & 1:
                indeg[w] += 1
    return [codes[v - 1] * 64 + indeg[v] * 8 + rows[v].bit_count() for v in range(1, n - 1)]


def cell_features(index: SpaceIndex, cfg: SkeletonConfig = SkeletonConfig()) -> dict:
    """Structural features of every indexed cell (used by the surrogate)."""
    from cellbench.netmodel import fast_parameter_count

    n = len(index)
    feats = {k: np.zeros(n) for k in ("n3", "n1", "np", "edges", "vertices", "depth", "width")}
    params = np.zeros(n, dtype=np.int64)
    types = []
    for i, (r, c) in enumerate(zip(index.rows, index.codes)):
        feats["n3"][i] = c.count(0)
        feats["n1"][i] = c.count(1)
        feats["np"][i] = c.count(2)
        feats["edges"][i] = K.num_edges(r)
        feats["vertices"][i] = len(r)
        feats["depth"][i], feats["width"][i] = K.depth_width(r)
        params[i] = fast_parameter_count(r, c, cfg)
        types.append(_vertex_types(r, c))
    feats["params"] = params
    feats["types"] = types
    return feats


class SyntheticOracle(Oracle):
    """Deterministic surrogate: every value is a pure function of (seed, digest, budget, trial)."""

    def __init__(self, index: SpaceIndex, seed: int, shape: SurrogateParams = SurrogateParams()):
        self.seed = int(seed)
        self.shape = shape
        feats = cell_features(index)
        super().__init__(index, "synthetic", feats["params"])
        self.keys = np.array(
            [int.from_bytes(d[:8], "little") for d in index.digests], dtype=np.uint64
        )
        self.score = self._score(feats)

    def _motif_weight(self, types) -> np.ndarray:
        table = hash_normal(np.arange(3 * 64, dtype=np.uint64), self.seed, 1) * self.shape.motif_scale
        return np.array([table[t].sum() if t else 0.0 for t in types])

    def _score(self, f) -> np.ndarray:
        s = self.shape
        smooth = (
            s.w_conv3x3 * f["n3"]
            + s.w_conv1x1 * f["n1"]
            + s.w_maxpool * f["np"]
            + s.w_depth * (f["depth"] - 3.0) ** 2
            + s.w_width * f["width"]
            + s.w_params * (np.log10(f["params"].astype(np.float64)) - 6.5)
            + self._motif_weight(f["types"])
        )
        return s.locality * smooth + s.perturbation * hash_normal(self.keys, self.seed, 2)

    def _mean_valid(self, epochs: int) -> np.ndarray:
        s = self.shape
        b = EPOCH_BUDGETS.index(epochs)
        z = self.score
        if s.budget_noise[b]:
            z = z + s.budget_noise[b] * hash_normal(self.keys, self.seed, 3, epochs)
        logit = s.logit_offset[b] + s.logit_slope * z
        return s.floor + s.span / (1.0 + np.exp(-logit))

    def _compute(self, name: str, epochs: int) -> np.ndarray:
        s = self.shape
        b = EPOCH_BUDGETS.index(epochs)
        cols = []
        for trial in TRIALS:
            if name == "valid":
                v = self._mean_valid(epochs) + s.trial_noise[b] * hash_normal(
                    self.keys, self.seed, _FIELD_TAG["valid"], epochs, trial
                )
            elif name == "test":
                v = (
                    self.table("valid", epochs)[:, trial - 1]
                    + s.test_gap
                    + s.test_noise * hash_normal(self.keys, self.seed, _FIELD_TAG["test"], epochs, trial)
                )
            elif name == "train":
                v = (
                    self._mean_valid(epochs)
                    + s.train_gap[b]
                    + s.trial_noise[b] * hash_normal(self.keys, self.seed, _FIELD_TAG["train"], epochs, trial)
                )
            else:
                jitter = 1.0 + s.time_jitter * (
                    2.0 * hash_uniform(self.keys, self.seed, _FIELD_TAG["time"], epochs, trial) - 1.0
                )
                cols.append(s.seconds_per_param_epoch * self.params * epochs * jitter)
                continue
            cols.append(np.clip(v, 0.0, 1.0))
        return np.stack(cols, axis=1)


def make_synthetic(index: SpaceIndex, seed: int, shape: SurrogateParams = SurrogateParams()) -> Oracle:
    return SyntheticOracle(index, seed, shape)


def parse_oracle_selector(selector: str, index: SpaceIndex) -> Oracle:
    """``synthetic:seed=<n>`` or ``tabular:<path>``."""
    kind, sep, rest = selector.partition(":")
    if kind == "synthetic" and sep:
        key, eq, value = rest.partition("=")
        if key != "seed" or not eq:
            raise ConfigurationError(f"expected synthetic:seed=<n>, got {selector!r}")
        try:
            seed = int(value)
        except ValueError:
            raise ConfigurationError(f"bad seed in {selector!r}") from None
        return make_synthetic(index, seed)
    if kind == "tabular" and sep and rest:
        if not Path(rest).exists():
            raise ConfigurationError(f"metrics file {rest} does not exist")
        return load_tabular(index, rest)
    raise ConfigurationError(f"oracle selector must be synthetic:seed=<n> or tabular:<path>, got {selector!r}")
