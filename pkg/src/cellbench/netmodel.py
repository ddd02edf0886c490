"""Network plan for a cell: skeleton stacking, channel allocation, parameter counts.

Combine rules inside a cell: edges out of the input vertex pass through a 1x1
projection (conv + BN) to the destination width; interior vertices sum their
inputs, truncating wider sources to their own width; the output concatenates
its non-input sources and adds a projected input when an input->output edge
exists.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

from cellbench import _kernels as K
from cellbench.cellspec import OPS, ModelSpec, canonical_cell, prune
from cellbench.errors import ConfigurationError

OP_KERNEL = {"CONV3X3": 3, "CONV1X1": 1, "MAXPOOL3X3": 0}
CONV_KINDS = {"CONV3X3": "conv3x3", "CONV1X1": "conv1x1", "MAXPOOL3X3": "maxpool3x3"}


@dataclass(frozen=True)
class SkeletonConfig:
    stem_channels: int = 128
    cells_per_stack: int = 3
    num_stacks: int = 3
    num_classes: int = 10

    def __post_init__(self):
        for name in ("stem_channels", "cells_per_stack", "num_stacks", "num_classes"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be positive")

    def cell_io(self) -> list[tuple[int, int]]:
        """(c_in, c_out) of every cell in network order."""
        io = []
        c = self.stem_channels
        for s in range(self.num_stacks):
            c_out = self.stem_channels * 2**s
            for _ in range(self.cells_per_stack):
                io.append((c, c_out))
                c = c_out
        return io


@dataclass(frozen=True)
class Layer:
    kind: str
    c_in: int
    c_out: int
    kernel: int = 0
    cell: int = -1
    vertex: int = -1
    inputs: int = 0

    @property
    def params(self) -> int:
        if self.kind in ("stem", "projection", "conv3x3", "conv1x1"):
            return self.kernel * self.kernel * self.c_in * self.c_out + 2 * self.c_out
        if self.kind == "dense":
            return self.c_in * self.c_out + self.c_out
        return 0


@dataclass
class NetworkPlan:
    layers: list[Layer] = field(default_factory=list)
    cell_channels: list[list[int]] = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(
            {"layers": [asdict(l) for l in self.layers], "cell_channels": self.cell_channels},
            indent=1,
        )


def vertex_channels(matrix, c_in: int, c_out: int) -> list[int]:
    """Per-vertex channel counts of a pruned cell (input, interior..., output)."""
    rows = matrix.rows if isinstance(matrix, ModelSpec) else _rows(matrix)
    return list(K.vertex_channels(rows, c_in, c_out))


def _rows(matrix) -> bytes:
    n = len(matrix)
    return bytes(sum(1 << j for j in range(i + 1, n) if matrix[i][j]) for i in range(n))


def _cell_layers(spec: ModelSpec, c_in: int, c_out: int, cell: int):
    rows, ops = spec.rows, spec.ops
    n = len(rows)
    out = n - 1
    ch = vertex_channels(spec, c_in, c_out)
    layers = []
    for v in range(1, out):
        sources = [u for u in range(v) if rows[u] >> v & 1]
        for u in sources:
            if u == 0:
                layers.append(Layer("projection", c_in, ch[v], 1, cell, v))
            elif ch[u] > ch[v]:
                layers.append(Layer("truncate", ch[u], ch[v], 0, cell, v))
        if len(sources) > 1:
            layers.append(Layer("sum", ch[v], ch[v], 0, cell, v, len(sources)))
        op = ops[v - 1]
        layers.append(Layer(CONV_KINDS[op], ch[v], ch[v], OP_KERNEL[op], cell, v))
    interior = [u for u in range(1, out) if rows[u] >> out & 1]
    if interior:
        if len(interior) > 1:
            layers.append(Layer("concat", sum(ch[u] for u in interior), c_out, 0, cell, out, len(interior)))
        if rows[0] >> out & 1:
            layers.append(Layer("projection", c_in, c_out, 1, cell, out))
            layers.append(Layer("sum", c_out, c_out, 0, cell, out, 2))
    else:
        layers.append(Layer("projection", c_in, c_out, 1, cell, out))
    return layers, ch


def build_plan(spec: ModelSpec, cfg: SkeletonConfig = SkeletonConfig()) -> NetworkPlan:
    """Layer plan of the network built from ``spec``'s class representative."""
    cell_spec = canonical_cell(spec).spec
    plan = NetworkPlan()
    plan.layers.append(Layer("stem", 3, cfg.stem_channels, 3))
    c = cfg.stem_channels
    cell = 0
    for s in range(cfg.num_stacks):
        if s > 0:
            plan.layers.append(Layer("downsample", c, c, 2))
        c_out = cfg.stem_channels * 2**s
        for _ in range(cfg.cells_per_stack):
            layers, ch = _cell_layers(cell_spec, c, c_out, cell)
            plan.layers.extend(layers)
            plan.cell_channels.append(ch)
            c = c_out
            cell += 1
    plan.layers.append(Layer("global_avgpool", c, c))
    plan.layers.append(Layer("dense", c, cfg.num_classes))
    return plan


def parameter_count(spec: ModelSpec, cfg: SkeletonConfig = SkeletonConfig()) -> int:
    return sum(layer.params for layer in build_plan(spec, cfg).layers)


def fast_parameter_count(rows: bytes, codes: bytes, cfg: SkeletonConfig = SkeletonConfig()) -> int:
    """parameter_count for an already-pruned cell via the compiled cell kernel."""
    labels = bytes((K.LABEL_IN,)) + codes + bytes((K.LABEL_OUT,))
    total = 27 * cfg.stem_channels + 2 * cfg.stem_channels
    cache = {}
    for io in cfg.cell_io():
        if io not in cache:
            cache[io] = K.cell_params(rows, labels, *io)
        total += cache[io]
    last = cfg.stem_channels * 2 ** (cfg.num_stacks - 1)
    return total + last * cfg.num_classes + cfg.num_classes


def structural_metrics(spec: ModelSpec) -> dict:
    """Depth (edges on the longest input->output path) and width (max directed cut)."""
    depth, width = K.depth_width(prune(spec).rows)
    return {"depth": depth, "width": width}


__all__ = [
    "OPS",
    "Layer",
    "NetworkPlan",
    "SkeletonConfig",
    "build_plan",
    "fast_parameter_count",
    "parameter_count",
    "structural_metrics",
    "vertex_channels",
]
