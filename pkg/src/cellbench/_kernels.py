"""Kernel dispatch: compiled extension when importable, pure Python otherwise.

Set ``CELLBENCH_PURE_PYTHON=1`` to force the fallback.
"""

import os

from cellbench import _pykernels

_impl = _pykernels
if not os.environ.get("CELLBENCH_PURE_PYTHON"):
    try:
        from cellbench import _ckernels as _impl  # type: ignore[no-redef]
    except ImportError:
        pass

IMPLEMENTATION = _impl.IMPLEMENTATION
LABEL_IN = _pykernels.LABEL_IN
LABEL_OUT = _pykernels.LABEL_OUT
DIGEST_BYTES = _pykernels.DIGEST_BYTES

pair_index = _pykernels.pair_index
path_vertices = _impl.path_vertices
num_edges = _impl.num_edges
prune = _impl.prune
graph_digest = _impl.graph_digest
canonical_digest = _impl.canonical_digest
rows_from_mask = _impl.rows_from_mask
mask_from_rows = _impl.mask_from_rows
enumerate_shard = _impl.enumerate_shard
depth_width = _impl.depth_width
vertex_channels = _impl.vertex_channels
cell_params = _impl.cell_params
min_encoding_distances = _impl.min_encoding_distances
