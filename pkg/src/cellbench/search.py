"""Benchmarking protocol and search algorithms under a simulated training-time clock.

Algorithms only see a :class:`~cellbench.oracle.ValidationView`.  A run keeps
the best architecture found so far by validation accuracy; test accuracy and
regret are attached afterwards by :func:`score_trace`.
"""

from __future__ import annotations

import bisect
import io
import math
from collections import deque
from dataclasses import dataclass, field, replace

import numpy as np

from cellbench.cellspec import MAX_VERTICES, OPS, ModelSpec, edge_pairs, is_valid, mutate, random_spec
from cellbench.errors import ConfigurationError
from cellbench.oracle import EPOCH_BUDGETS, MAX_EPOCHS, Oracle, ValidationView
from cellbench.rng import Stream

ALGORITHMS = ("rs", "re", "nre", "reinforce", "hb")


@dataclass(frozen=True)
class SearchConfig:
    algorithm: str = "rs"
    time_budget: float = 1e7
    population_size: int = 100
    tournament_size: int = 10
    learning_rate: float = 0.5
    baseline_decay: float = 0.9
    batch_size: int = 1
    eta: int = 3
    budgets: tuple = EPOCH_BUDGETS
    # REINFORCE draws cost no time when invalid; this caps the number of draws.
    max_samples: int = 2_000_000
    seed: int = 0

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ConfigurationError(f"unknown algorithm {self.algorithm!r}; choose from {ALGORITHMS}")
        if not self.time_budget > 0:
            raise ConfigurationError("time_budget must be positive")
        if self.population_size < 1 or self.tournament_size < 1:
            raise ConfigurationError("population and tournament sizes must be positive")
        if self.tournament_size > self.population_size:
            raise ConfigurationError("tournament_size cannot exceed population_size")
        if self.learning_rate < 0 or not 0 <= self.baseline_decay < 1 or self.batch_size < 1:
            raise ConfigurationError("bad REINFORCE settings")


@dataclass
class RunTrace:
    """Incumbent changes of one run plus the terminal state.

    ``times[i]``/``evals[i]`` are the clock and evaluation count right after
    the evaluation that produced incumbent ``digests[i]`` with validation
    accuracy ``valid[i]``.
    """

    algorithm: str
    run: int = 0
    times: list = field(default_factory=list)
    evals: list = field(default_factory=list)
    digests: list = field(default_factory=list)
    valid: list = field(default_factory=list)
    final_time: float = 0.0
    final_evals: int = 0
    terminal: bool = False

    @property
    def incumbent(self):
        return self.digests[-1] if self.digests else None

    def incumbent_index_at(self, t: float) -> int:
        """Index of the event in force at clock ``t`` (-1 before the first)."""
        return bisect.bisect_right(self.times, t) - 1


class _Clock:
    def __init__(self, budget: float, trace: RunTrace):
        self.budget = budget
        self.trace = trace
        self.time = 0.0
        self.evals = 0
        self.best = -math.inf

    @property
    def exhausted(self) -> bool:
        return self.time > self.budget

    def charge(self, obs):
        self.time += obs.training_seconds
        self.evals += 1
        if obs.validation_accuracy > self.best:
            self.best = obs.validation_accuracy
            tr = self.trace
            tr.times.append(self.time)
            tr.evals.append(self.evals)
            tr.digests.append(obs.digest)
            tr.valid.append(obs.validation_accuracy)

    def finish(self) -> RunTrace:
        self.trace.final_time = self.time
        self.trace.final_evals = self.evals
        self.trace.terminal = True
        return self.trace


def space_size(view) -> int:
    """Vertex limit of the space behind ``view`` (7 when it does not say)."""
    index = getattr(view, "index", None)
    return index.max_vertices if index is not None else MAX_VERTICES


def run_random_search(view, cfg: SearchConfig, rng) -> RunTrace:
    clock = _Clock(cfg.time_budget, RunTrace("rs"))
    size = space_size(view)
    while not clock.exhausted:
        clock.charge(view.evaluate(random_spec(rng, size), MAX_EPOCHS, rng))
    return clock.finish()


def run_evolution(view, cfg: SearchConfig, rng, regularized: bool = True, on_select=None) -> RunTrace:
    """Regularized (age-based removal) or non-regularized (worst removed) evolution.

    ``on_select(tournament, winner)`` receives the sampled (spec, fitness)
    members and the chosen parent, for inspection.
    """
    clock = _Clock(cfg.time_budget, RunTrace("re" if regularized else "nre"))
    size = space_size(view)
    population: deque = deque()
    while len(population) < cfg.population_size and not clock.exhausted:
        spec = random_spec(rng, size)
        obs = view.evaluate(spec, MAX_EPOCHS, rng)
        clock.charge(obs)
        population.append((spec, obs.validation_accuracy))
    while not clock.exhausted:
        picks = rng.sample(len(population), cfg.tournament_size)
        best = picks[0]
        for p in picks[1:]:
            if population[p][1] > population[best][1]:
                best = p
        parent = population[best]
        if on_select is not None:
            on_select([population[p] for p in picks], parent)
        child = mutate(parent[0], rng, size)
        obs = view.evaluate(child, MAX_EPOCHS, rng)
        clock.charge(obs)
        population.append((child, obs.validation_accuracy))
        if regularized:
            population.popleft()
        else:
            worst = 0
            for i in range(1, len(population)):
                if population[i][1] < population[worst][1]:
                    worst = i
            del population[worst]
    return clock.finish()


class CategoricalController:
    """Independent categorical distributions over the edges and operations (21 and 5 for 7 vertices)."""

    def __init__(self, size: int = MAX_VERTICES):
        self.size = size
        self.pairs = edge_pairs(size)
        self.edge_logits = [[0.0, 0.0] for _ in self.pairs]
        self.op_logits = [[0.0] * len(OPS) for _ in range(size - 2)]

    @staticmethod
    def _probs(logits):
        m = max(logits)
        e = [math.exp(x - m) for x in logits]
        s = sum(e)
        return [x / s for x in e]

    @staticmethod
    def _draw(probs, u):
        acc = 0.0
        for k, p in enumerate(probs):
            acc += p
            if u < acc:
                return k
        return len(probs) - 1

    def sample(self, rng):
        edges = [self._draw(self._probs(l), rng.random()) for l in self.edge_logits]
        ops = [self._draw(self._probs(l), rng.random()) for l in self.op_logits]
        rows = bytearray(self.size)
        for k, bit in enumerate(edges):
            if bit:
                i, j = self.pairs[k]
                rows[i] |= 1 << j
        return ModelSpec(bytes(rows), bytes(ops)), (edges, ops)

    def update(self, choices, advantage: float, lr: float):
        """Ascend advantage * grad log p(choices) with step ``lr``."""
        if advantage == 0.0 or lr == 0.0:
            return
        edges, ops = choices
        for logits, a in zip(self.edge_logits, edges):
            self._step(logits, a, lr * advantage)
        for logits, a in zip(self.op_logits, ops):
            self._step(logits, a, lr * advantage)

    def _step(self, logits, a, scale):
        probs = self._probs(logits)
        for k in range(len(logits)):
            logits[k] += scale * ((1.0 if k == a else 0.0) - probs[k])

    def edge_probabilities(self):
        return [self._probs(l)[1] for l in self.edge_logits]

    def op_probabilities(self):
        return [self._probs(l) for l in self.op_logits]


def run_reinforce(view, cfg: SearchConfig, rng, controller=None) -> RunTrace:
    """REINFORCE over factorized categoricals; invalid draws get reward 0 and cost no time."""
    clock = _Clock(cfg.time_budget, RunTrace("reinforce"))
    ctl = controller if controller is not None else CategoricalController(space_size(view))
    baseline = None
    batch = []
    samples = 0
    while not clock.exhausted and samples < cfg.max_samples:
        spec, choices = ctl.sample(rng)
        samples += 1
        if is_valid(spec):
            obs = view.evaluate(spec, MAX_EPOCHS, rng)
            clock.charge(obs)
            reward = obs.validation_accuracy
        else:
            reward = 0.0
        batch.append((choices, reward))
        if len(batch) < cfg.batch_size:
            continue
        for ch, r in batch:
            if baseline is None:
                baseline = r
            ctl.update(ch, r - baseline, cfg.learning_rate)
            baseline = cfg.baseline_decay * baseline + (1.0 - cfg.baseline_decay) * r
        batch = []
    return clock.finish()


def hyperband_brackets(eta: int = 3, num_rungs: int = 4):
    """(s, rung sizes) for each bracket, most exploratory first."""
    s_max = num_rungs - 1
    out = []
    for s in range(s_max, -1, -1):
        n = math.ceil((s_max + 1) / (s + 1)) * eta**s
        out.append((s, [n // eta**i for i in range(s + 1)]))
    return out


def run_successive_halving_hyperband(view, cfg: SearchConfig, rng, rung_log=None) -> RunTrace:
    """Hyperband over the four epoch budgets, brackets repeated until time runs out.

    ``rung_log`` (a list) receives ``(s, budget, [(valid, promoted), ...])`` per rung.
    """
    budgets = tuple(cfg.budgets)
    if budgets != EPOCH_BUDGETS or cfg.eta != 3:
        raise ConfigurationError(f"Hyperband needs eta=3 and budgets {EPOCH_BUDGETS}")
    clock = _Clock(cfg.time_budget, RunTrace("hb"))
    top = len(budgets) - 1
    size = space_size(view)
    while not clock.exhausted:
        for s, sizes in hyperband_brackets(cfg.eta, len(budgets)):
            configs = [random_spec(rng, size) for _ in range(sizes[0])]
            for i in range(s + 1):
                budget = budgets[top - s + i]
                scored = []
                for k, spec in enumerate(configs):
                    obs = view.evaluate(spec, budget, rng)
                    clock.charge(obs)
                    scored.append((obs.validation_accuracy, k, spec))
                    if clock.exhausted:
                        return clock.finish()
                if i == s:
                    break
                keep = sizes[i + 1]
                ranked = sorted(scored, key=lambda x: (-x[0], x[1]))
                promoted = {k for _, k, _ in ranked[:keep]}
                if rung_log is not None:
                    rung_log.append((s, budget, [(v, k in promoted) for v, k, _ in scored]))
                configs = [spec for _, _, spec in ranked[:keep]]
    return clock.finish()


def run_search(view, cfg: SearchConfig, rng) -> RunTrace:
    algo = cfg.algorithm
    if algo == "rs":
        return run_random_search(view, cfg, rng)
    if algo in ("re", "nre"):
        return run_evolution(view, cfg, rng, regularized=algo == "re")
    if algo == "reinforce":
        return run_reinforce(view, cfg, rng)
    return run_successive_halving_hyperband(view, cfg, rng)


def run_stream(cfg: SearchConfig, run: int) -> Stream:
    return Stream(cfg.seed, "search-run", run)


_WORKER = {}


def _worker_run(run: int):
    oracle, cfg = _WORKER["oracle"], _WORKER["cfg"]
    trace = run_search(ValidationView(oracle), cfg, run_stream(cfg, run))
    trace.run = run
    return trace


def repeat_runs(oracle: Oracle, cfg: SearchConfig, n_runs: int, jobs: int = 1) -> list[RunTrace]:
    """``n_runs`` independent runs; run i depends only on (cfg.seed, i)."""
    if n_runs < 1:
        raise ConfigurationError("n_runs must be >= 1")
    budgets = EPOCH_BUDGETS if cfg.algorithm == "hb" else (MAX_EPOCHS,)
    for e in budgets:
        oracle.table("valid", e)
        oracle.table("time", e)
    _WORKER["oracle"], _WORKER["cfg"] = oracle, cfg
    try:
        if jobs > 1:
            import multiprocessing as mp

            with mp.get_context("fork").Pool(jobs) as pool:
                return pool.map(_worker_run, range(n_runs), chunksize=max(1, n_runs // (4 * jobs)))
        return [_worker_run(i) for i in range(n_runs)]
    finally:
        _WORKER.clear()


# --------------------------------------------------------------------------
# post-processing (the only place test accuracy is read)


@dataclass
class ScoredTrace:
    trace: RunTrace
    mean_test: list
    regret: list

    def regret_at(self, t: float) -> float:
        i = self.trace.incumbent_index_at(t)
        return self.regret[i] if i >= 0 else math.nan

    @property
    def final_regret(self) -> float:
        return self.regret[-1] if self.regret else math.nan


def score_trace(trace: RunTrace, oracle: Oracle) -> ScoredTrace:
    best = oracle.best_cell()[1]
    mean_test = oracle.mean("test")
    tests = [float(mean_test[oracle.row(d)]) for d in trace.digests]
    return ScoredTrace(trace, tests, [best - x for x in tests])


TRACE_HEADER = "time_s,evals,best_valid_acc,mean_test_acc,test_regret"


def trace_csv(scored: ScoredTrace) -> str:
    tr = scored.trace
    lines = [TRACE_HEADER]
    for t, e, v, m, r in zip(tr.times, tr.evals, tr.valid, scored.mean_test, scored.regret):
        lines.append(f"{t!r},{e},{v!r},{m!r},{r!r}")
    if tr.digests:
        lines.append(
            f"{tr.final_time!r},{tr.final_evals},{tr.valid[-1]!r},"
            f"{scored.mean_test[-1]!r},{scored.regret[-1]!r}"
        )
    return "\n".join(lines) + "\n"


def default_grid(budget: float, points: int = 100, start: float = 1e3) -> np.ndarray:
    return np.geomspace(min(start, budget), budget, points)


def regret_curve(traces, oracle: Oracle, grid) -> dict:
    """Mean and quartiles of regret across runs on ``grid``.

    A run contributes at time t once it has an incumbent; grid points where no
    run has one yield NaN.
    """
    if not traces:
        raise ValueError("need at least one trace")
    scored = [t if isinstance(t, ScoredTrace) else score_trace(t, oracle) for t in traces]
    grid = np.asarray(grid, dtype=np.float64)
    values = np.array([[s.regret_at(float(t)) for t in grid] for s in scored])
    out = {"time_s": grid}
    with np.errstate(all="ignore"):
        defined = ~np.isnan(values)
        counts = defined.sum(axis=0)
        sums = np.where(defined, values, 0.0).sum(axis=0)
        out["mean_regret"] = np.where(counts > 0, sums / np.maximum(counts, 1), np.nan)
        for q, name in ((25, "q25"), (50, "q50"), (75, "q75")):
            col = np.full(len(grid), np.nan)
            for j in np.nonzero(counts)[0]:
                col[j] = np.percentile(values[defined[:, j], j], q)
            out[name] = col
    return out


def robustness_ecdf(traces, oracle: Oracle, t: float | None = None) -> list[tuple[float, float]]:
    """Right-continuous ECDF of per-run regret at clock ``t`` (default: end of run)."""
    if not traces:
        raise ValueError("need at least one trace")
    scored = [s if isinstance(s, ScoredTrace) else score_trace(s, oracle) for s in traces]
    regrets = sorted(s.final_regret if t is None else s.regret_at(t) for s in scored)
    regrets = [r for r in regrets if not math.isnan(r)]
    n = len(regrets)
    out = []
    for i, r in enumerate(regrets):
        if i + 1 < n and regrets[i + 1] == r:
            continue
        out.append((r, (i + 1) / n))
    return out


def ecdf_value(ecdf, x: float) -> float:
    frac = 0.0
    for r, f in ecdf:
        if r <= x:
            frac = f
    return frac


def curve_csv(curve: dict) -> str:
    buf = io.StringIO()
    buf.write("time_s,mean_regret,q25,q50,q75\n")
    for row in zip(*(curve[k] for k in ("time_s", "mean_regret", "q25", "q50", "q75"))):
        buf.write(",".join(repr(float(x)) for x in row) + "\n")
    return buf.getvalue()


def ecdf_csv(ecdf) -> str:
    return "regret,cum_fraction\n" + "".join(f"{r!r},{f!r}\n" for r, f in ecdf)


def with_algorithm(cfg: SearchConfig, algorithm: str) -> SearchConfig:
    return replace(cfg, algorithm=algorithm)
