"""Compiled vs pure-Python kernels on the workloads that dominate run time.

    python benchmarks/bench_kernels.py [--repeat N]

Prints per-call times for each backend and the speedup.  Both backends are
imported directly, so the choice made by ``cellbench._kernels`` is irrelevant.
"""

import argparse
import timeit

import numpy as np

from cellbench import _pykernels
from cellbench.cellspec import raw_spec, random_spec
from cellbench.rng import Stream

try:
    from cellbench import _ckernels
except ImportError:  # extension not built
    _ckernels = None


def workloads(count: int):
    rng = Stream(0, "bench")
    cells = [random_spec(rng) for _ in range(count)]
    labeled = [(c.rows, bytes((0xFE,)) + c.codes + bytes((0xFF,))) for c in cells]
    samples = [raw_spec(rng) for _ in range(20_000)]
    s_masks = np.array([_pykernels.mask_from_rows(s.rows) for s in samples], dtype=np.uint32)
    s_ops = np.array([list(s.codes) for s in samples], dtype=np.uint8)
    p_masks, p_ops = s_masks[:50].copy(), s_ops[:50].copy()

    def make(k):
        return {
            "graph_digest": lambda: [k.graph_digest(r, l) for r, l in labeled],
            "prune": lambda: [k.prune(r, l) for r, l in labeled],
            "depth_width": lambda: [k.depth_width(r) for r, _ in labeled],
            "cell_params": lambda: [k.cell_params(*k.prune(r, l), 128, 128) for r, l in labeled],
            "enumerate_shard(5)": lambda: k.enumerate_shard(5, 9, 0, 1 << 10),
            "min_encoding_distances": lambda: k.min_encoding_distances(s_masks, s_ops, p_masks, p_ops),
        }

    return make


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3, help="timing repeats (best is reported)")
    ap.add_argument("--cells", type=int, default=2000, help="cells per batch for per-cell kernels")
    args = ap.parse_args(argv)
    make = workloads(args.cells)
    backends = {"python": make(_pykernels)}
    if _ckernels is not None:
        backends["compiled"] = make(_ckernels)
    print(f"{'kernel':26s} {'python s':>10s} {'compiled s':>11s} {'speedup':>8s}")
    for name in backends["python"]:
        times = {
            b: min(timeit.repeat(fns[name], number=1, repeat=args.repeat)) for b, fns in backends.items()
        }
        py = times["python"]
        cc = times.get("compiled")
        if cc is None:
            print(f"{name:26s} {py:10.4f} {'n/a':>11s} {'n/a':>8s}")
        else:
            print(f"{name:26s} {py:10.4f} {cc:11.4f} {py / cc:7.1f}x")


if __name__ == "__main__":
    main()
