"""Command-line entry point: ``cellbench <subcommand> ...``.

Every subcommand takes ``--seed``, ``--jobs`` and ``--out``; output bytes depend
only on the arguments, never on ``--jobs``.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from pathlib import Path

from cellbench import landscape, search
from cellbench.cellspec import (
    OPS,
    RAW_ENCODING_COUNT,
    canonical_cell,
    parse_spec,
    random_spec,
)
from cellbench.enumerator import approx_thousands, enumerate_space, read_index, space_stats, write_index
from cellbench.errors import CellbenchError, ConfigurationError
from cellbench.netmodel import SkeletonConfig, build_plan, parameter_count, structural_metrics, vertex_channels
from cellbench.oracle import EPOCH_BUDGETS, MAX_EPOCHS, TRIALS, load_tabular, parse_oracle_selector, write_metrics
from cellbench.rng import Stream

log = logging.getLogger("cellbench")

INDEX_ENV = "NASBENCH_INDEX"
DEFAULT_ORACLE = "synthetic:seed=1"


class CliError(Exception):
    pass


def _emit(text: str, out) -> None:
    data = text.encode("utf-8")
    if out in (None, "-"):
        sys.stdout.buffer.write(data)
        sys.stdout.flush()
    else:
        Path(out).write_bytes(data)


def _json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _fmt(x) -> str:
    return repr(float(x)) if isinstance(x, float) else str(x)


def _csv(header, rows) -> str:
    lines = [",".join(header)]
    lines.extend(",".join(_fmt(v) for v in row) for row in rows)
    return "\n".join(lines) + "\n"


def _load_index(args):
    path = args.index or os.environ.get(INDEX_ENV)
    if not path:
        raise CliError(f"no space index: pass --index or set {INDEX_ENV}")
    if not Path(path).is_file():
        raise CliError(f"space index {path} not found")
    log.info("reading index %s", path)
    return read_index(path)


def _load_oracle(args):
    return parse_oracle_selector(args.oracle, _load_index(args))


# --------------------------------------------------------------------------
# subcommands


def cmd_enumerate(args):
    index = enumerate_space(args.max_vertices, args.max_edges, jobs=args.jobs)
    if args.out in (None, "-"):
        raise CliError("enumerate needs --out PATH")
    write_index(index, args.out)
    log.info("wrote %d cells to %s", len(index), args.out)


def cmd_stats(args):
    index = _load_index(args)
    st = space_stats(index)
    st = {
        "total": st["total"],
        "approx_thousands": approx_thousands(st["total"], 1),
        "raw_encodings": RAW_ENCODING_COUNT,
        "max_vertices": index.max_vertices,
        "max_edges": index.max_edges,
        "vertices": {str(k): v for k, v in st["vertices"].items()},
        "edges": {str(k): v for k, v in st["edges"].items()},
        "op_counts": {",".join(map(str, k)): v for k, v in st["op_counts"].items()},
        "depth": {str(k): v for k, v in st["depth"].items()},
        "width": {str(k): v for k, v in st["width"].items()},
    }
    _emit(_json(st), args.out)


def cmd_query(args):
    oracle = _load_oracle(args)
    spec = parse_spec(args.spec)
    if args.trial is not None:
        if args.trial not in TRIALS:
            raise CliError(f"--trial must be one of {TRIALS}")
        rec = oracle.record(oracle.row_of(spec), args.epochs, args.trial)
    else:
        rec = oracle.query(spec, args.epochs, Stream(args.seed, "query"))
    _emit(rec.to_json() + "\n", args.out)


def cmd_params(args):
    spec = parse_spec(args.spec)
    cfg = SkeletonConfig(args.stem_channels, args.cells_per_stack, args.num_stacks, args.num_classes)
    if args.plan:
        _emit(build_plan(spec, cfg).to_json() + "\n", args.out)
        return
    cell = canonical_cell(spec)
    out = {
        "digest": cell.hexdigest,
        "pruned": str(cell.spec),
        "parameter_count": parameter_count(spec, cfg),
        "vertex_channels": [vertex_channels(cell.spec, ci, co) for ci, co in cfg.cell_io()[:: cfg.cells_per_stack]],
        **structural_metrics(spec),
    }
    _emit(_json(out), args.out)


def _search_config(args) -> search.SearchConfig:
    return search.SearchConfig(
        algorithm=args.algo,
        time_budget=args.budget,
        population_size=args.ps,
        tournament_size=args.ts,
        learning_rate=args.lr,
        baseline_decay=args.baseline_decay,
        batch_size=args.batch_size,
        eta=args.eta,
        seed=args.seed,
    )


def cmd_bench(args):
    cfg = _search_config(args)
    oracle = _load_oracle(args)
    traces = search.repeat_runs(oracle, cfg, args.runs, jobs=args.jobs)
    scored = [search.score_trace(t, oracle) for t in traces]
    grid = search.default_grid(cfg.time_budget, args.grid_points)
    _emit(search.curve_csv(search.regret_curve(scored, oracle, grid)), args.out)
    if args.ecdf_out:
        _emit(search.ecdf_csv(search.robustness_ecdf(scored, oracle)), args.ecdf_out)
    if args.traces_dir:
        d = Path(args.traces_dir)
        d.mkdir(parents=True, exist_ok=True)
        for s in scored:
            (d / f"{cfg.algorithm}_run{s.trace.run:04d}.csv").write_bytes(search.trace_csv(s).encode())


def an_rwa(args, oracle):
    rows = landscape.rwa(oracle, args.walk_length, args.max_lag, Stream(args.seed, "rwa"))
    return _csv(("lag", "sqrt_lag", "autocorr"), rows)


def an_fdc(args, oracle):
    peak = bytes.fromhex(args.peak) if args.peak else bytes.fromhex(oracle.best_cell()[0])
    i = oracle.index.position(peak)
    if i is None:
        raise CliError(f"peak {peak.hex()} not in index")
    rng = Stream(args.seed, "fdc")
    size = oracle.index.max_vertices
    sample = [random_spec(rng, size) for _ in range(args.sample_size)]
    value = landscape.fdc(oracle, sample, oracle.index.spec(i))
    return _csv(("peak", "sample_size", "fdc"), [(peak.hex(), args.sample_size, value)])


def an_opmatrix(args, oracle):
    m = landscape.op_replacement_matrix(oracle, jobs=args.jobs)
    rows = []
    for x, a in enumerate(OPS):
        for y, b in enumerate(OPS):
            if x != y:
                rows.append((a, b, m["count"][x][y], m["accuracy_delta"][x][y], m["relative_time_delta"][x][y]))
    return _csv(("from_op", "to_op", "count", "accuracy_delta", "relative_time_delta"), rows)


def an_ecdf(args, oracle):
    curves = landscape.accuracy_ecdf(oracle, args.epochs)
    rows = []
    for name in ("train", "valid", "test", "noise"):
        values, frac = curves[name]
        rows.extend((name, float(v), float(f)) for v, f in zip(values, frac))
    return _csv(("field", "value", "cum_fraction"), rows)


def an_volume(args, oracle):
    if args.peaks:
        peaks = [bytes.fromhex(h) for h in args.peaks.split(",")]
    else:
        peaks = landscape.top_cells(oracle, args.sem_multiple)
    log.info("%d peak cells", len(peaks))
    if args.exact:
        frac = landscape.exact_volume_within_distance(oracle.index, peaks, args.max_d)
        return _csv(("distance", "fraction"), list(enumerate(frac)))
    est = landscape.volume_within_distance(
        oracle.index, peaks, args.max_d, args.sample_size, Stream(args.seed, "volume")
    )
    return _csv(("distance", "fraction", "half_width"), zip(est.distance, est.fraction, est.half_width))


def an_rankcorr(args, oracle):
    rho = landscape.budget_rank_correlation(oracle, args.budget_a, args.budget_b, args.top_percentile)
    return _csv(("budget_a", "budget_b", "top_percentile", "spearman"), [(args.budget_a, args.budget_b, float(args.top_percentile), rho)])


def an_depthwidth(args, oracle):
    prof = landscape.depth_width_profile(oracle)
    rows = [
        (metric, k, g["count"], g["mean_valid"], g["mean_time"])
        for metric in ("depth", "width")
        for k, g in prof[metric].items()
    ]
    return _csv(("metric", "value", "count", "mean_valid", "mean_time_s"), rows)


ANALYSES = {
    "rwa": an_rwa,
    "fdc": an_fdc,
    "opmatrix": an_opmatrix,
    "ecdf": an_ecdf,
    "volume": an_volume,
    "rankcorr": an_rankcorr,
    "depthwidth": an_depthwidth,
}


def cmd_analyze(args):
    oracle = _load_oracle(args)
    _emit(ANALYSES[args.analysis](args, oracle), args.out)


def cmd_convert_metrics(args):
    index = _load_index(args)
    oracle = load_tabular(index, args.metrics)
    n = len(index) * len(EPOCH_BUDGETS) * len(TRIALS)
    if args.out not in (None, "-"):
        write_metrics(oracle, args.out)
    _emit_status(f"ok: {n} records for {len(index)} cells\n")


def cmd_export_metrics(args):
    oracle = _load_oracle(args)
    if args.out in (None, "-"):
        raise CliError("export-metrics needs --out PATH")
    write_metrics(oracle, args.out)


def _emit_status(text: str) -> None:
    sys.stderr.write(text)


# --------------------------------------------------------------------------
# parser


def _budget(text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not value > 0 or math.isinf(value):
        raise argparse.ArgumentTypeError("budget must be a positive finite number of seconds")
    return value


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--index", default=None, help=f"space-index file (default: ${INDEX_ENV})")
    common.add_argument("--oracle", default=DEFAULT_ORACLE, help="synthetic:seed=<n> or tabular:<metrics.jsonl>")
    common.add_argument("--seed", type=int, default=0, help="master seed for every random draw")
    common.add_argument("--jobs", type=int, default=1, help="worker processes (output does not depend on it)")
    common.add_argument("--out", default="-", help="output path, '-' for stdout")
    common.add_argument("-v", "--verbose", action="store_true", help="progress logging on stderr")

    p = argparse.ArgumentParser(prog="cellbench", description="Tabular cell-space benchmark tools.", formatter_class=fmt)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("enumerate", parents=[common], formatter_class=fmt, help="enumerate unique cells into an index file")
    s.add_argument("--max-vertices", type=int, default=7, help="vertex limit including input and output")
    s.add_argument("--max-edges", type=int, default=9, help="edge limit")
    s.set_defaults(func=cmd_enumerate)

    s = sub.add_parser("stats", parents=[common], formatter_class=fmt, help="histograms of an index (JSON)")
    s.set_defaults(func=cmd_stats)

    s = sub.add_parser("query", parents=[common], formatter_class=fmt, help="one evaluation record (JSON)")
    s.add_argument("--spec", required=True, help="matrix=<bits>;ops=<labels>")
    s.add_argument("--epochs", type=int, default=MAX_EPOCHS, choices=EPOCH_BUDGETS, help="epoch budget")
    s.add_argument("--trial", type=int, default=None, help="fixed trial 1-3 (default: drawn from --seed)")
    s.set_defaults(func=cmd_query)

    s = sub.add_parser("params", parents=[common], formatter_class=fmt, help="parameter count and structure of a cell")
    s.add_argument("--spec", required=True, help="matrix=<bits>;ops=<labels>")
    s.add_argument("--plan", action="store_true", help="emit the full layer plan instead")
    s.add_argument("--stem-channels", type=int, default=128, help="stem output channels")
    s.add_argument("--cells-per-stack", type=int, default=3, help="cells per stack")
    s.add_argument("--num-stacks", type=int, default=3, help="stacks")
    s.add_argument("--num-classes", type=int, default=10, help="classifier outputs")
    s.set_defaults(func=cmd_params)

    s = sub.add_parser("bench", parents=[common], formatter_class=fmt, help="repeated search runs; regret curve CSV")
    s.add_argument("--algo", choices=search.ALGORITHMS, default="rs", help="search algorithm")
    s.add_argument("--budget", type=_budget, default=1e7, help="simulated seconds per run")
    s.add_argument("--runs", type=int, default=500, help="independent runs")
    s.add_argument("--ps", type=int, default=100, help="evolution population size")
    s.add_argument("--ts", type=int, default=10, help="evolution tournament size")
    s.add_argument("--lr", type=float, default=0.5, help="REINFORCE learning rate")
    s.add_argument("--baseline-decay", type=float, default=0.9, help="REINFORCE reward-baseline decay")
    s.add_argument("--batch-size", type=int, default=1, help="REINFORCE samples per update")
    s.add_argument("--eta", type=int, default=3, help="Hyperband reduction factor")
    s.add_argument("--grid-points", type=int, default=100, help="log-spaced points of the regret curve")
    s.add_argument("--ecdf-out", default=None, help="also write the final-regret ECDF CSV here")
    s.add_argument("--traces-dir", default=None, help="also write one trace CSV per run here")
    s.set_defaults(func=cmd_bench)

    s = sub.add_parser("analyze", formatter_class=fmt, help="landscape and dataset analyses (CSV)")
    an = s.add_subparsers(dest="analysis", required=True)
    a = an.add_parser("rwa", parents=[common], formatter_class=fmt, help="random-walk autocorrelation")
    a.add_argument("--walk-length", type=int, default=100_000, help="walk steps")
    a.add_argument("--max-lag", type=int, default=100, help="largest lag")
    a = an.add_parser("fdc", parents=[common], formatter_class=fmt, help="fitness-distance correlation")
    a.add_argument("--sample-size", type=int, default=10_000, help="random cells")
    a.add_argument("--peak", default=None, help="peak digest (default: best cell)")
    an.add_parser("opmatrix", parents=[common], formatter_class=fmt, help="operation-replacement deltas")
    a = an.add_parser("ecdf", parents=[common], formatter_class=fmt, help="accuracy and noise ECDFs")
    a.add_argument("--epochs", type=int, default=MAX_EPOCHS, choices=EPOCH_BUDGETS, help="epoch budget")
    a = an.add_parser("volume", parents=[common], formatter_class=fmt, help="encoding volume near top cells")
    a.add_argument("--max-d", type=int, default=10, help="largest distance")
    a.add_argument("--sample-size", type=int, default=100_000, help="Monte Carlo encodings")
    a.add_argument("--peaks", default=None, help="comma-separated digests (default: top cells)")
    a.add_argument("--sem-multiple", type=float, default=2.0, help="top-cell margin in standard errors of the best")
    a.add_argument("--exact", action="store_true", help="exact scan instead of Monte Carlo (small peak sets)")
    a = an.add_parser("rankcorr", parents=[common], formatter_class=fmt, help="Spearman rho between two budgets")
    a.add_argument("--budget-a", type=int, default=36, choices=EPOCH_BUDGETS, help="first budget")
    a.add_argument("--budget-b", type=int, default=108, choices=EPOCH_BUDGETS, help="ranking budget")
    a.add_argument("--top-percentile", type=float, default=10.0, help="restrict to this top percentage at budget-b")
    an.add_parser("depthwidth", parents=[common], formatter_class=fmt, help="means by depth and width")
    s.set_defaults(func=cmd_analyze)

    s = sub.add_parser("convert-metrics", parents=[common], formatter_class=fmt, help="validate a metrics file; normalize it to --out")
    s.add_argument("--metrics", required=True, help="JSON-lines metrics file")
    s.set_defaults(func=cmd_convert_metrics)

    s = sub.add_parser("export-metrics", parents=[common], formatter_class=fmt, help="dump an oracle as a metrics file")
    s.set_defaults(func=cmd_export_metrics)
    return p


def run_cli(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(name)s: %(message)s",
        stream=sys.stderr,
    )
    if args.jobs < 1:
        parser.error("--jobs must be >= 1")
    try:
        args.func(args)
    except BrokenPipeError:
        # reader went away (e.g. piped into head); silence the interpreter's flush
        os.dup2(os.open(os.devnull, os.O_WRONLY), sys.stdout.fileno())
        return 1
    except (CliError, CellbenchError, ConfigurationError, ValueError, KeyError, OSError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        sys.stderr.write(f"cellbench: error: {msg}\n")
        return 1
    return 0


def main() -> None:
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
