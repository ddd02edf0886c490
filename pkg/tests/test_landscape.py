import math
from math import comb
from statistics import NormalDist

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cellbench import cellspec as cs
from cellbench import landscape as ls
from cellbench import oracle as orc
from cellbench.enumerator import enumerate_space
from cellbench.errors import ConfigurationError, UndefinedStatisticError
from cellbench.rng import Stream

from .stubs import constructed_oracle


# ---------------------------------------------------------------- walks and RWA


def test_walk_steps_are_single_edits(mini_oracle):
    walk = ls.random_walk(mini_oracle, 300, Stream(1))
    assert walk.steps == 300 and len(walk.digests) == 301
    fitness = mini_oracle.mean("valid")
    for d, v in zip(walk.digests, walk.values):
        assert v == fitness[mini_oracle.row(d)]


def test_walk_neighbors_differ_by_one():
    # replay the walk's own draws to check the encoding distance of each step
    index = enumerate_space(4, 9)
    oracle = orc.make_synthetic(index, 2)
    rng_a, rng_b = Stream(3), Stream(3)
    walk = ls.random_walk(oracle, 200, rng_a)
    cur = cs.random_spec(rng_b, 4)
    for k in range(200):
        options = cs.neighbors(cur, 4)
        nxt = options[rng_b.below(len(options))]
        assert cs.encoding_distance(cur, nxt) == 1
        assert cs.digest_bytes(nxt) == walk.digests[k + 1]
        cur = nxt


def test_autocorrelation_basics():
    x = np.sin(np.arange(500) / 5.0)
    ac = ls.autocorrelation(x, 10)
    assert ac[0] == 1.0
    assert all(abs(r) <= 1 for r in ac)
    with pytest.raises(UndefinedStatisticError):
        ls.autocorrelation([0.3] * 50, 3)
    with pytest.raises(ValueError):
        ls.autocorrelation([1.0, 2.0], 5)


def test_autocorrelation_matches_definition():
    x = np.random.default_rng(0).normal(size=400)
    ac = ls.autocorrelation(x, 5)
    c = x - x.mean()
    for k in range(1, 6):
        assert ac[k] == pytest.approx(np.dot(c[:-k], c[k:]) / np.dot(c, c), abs=1e-12)


def test_rwa_rows(mini_oracle):
    rows = ls.rwa(mini_oracle, 2000, 8, Stream(4))
    assert [r[0] for r in rows] == list(range(9))
    assert rows[0][2] == 1.0
    assert rows[4][1] == 2.0


def test_rwa_stationarity(full_oracle):
    walk = ls.random_walk(full_oracle, 200_000, Stream(5))
    half = len(walk.values) // 2
    a = ls.autocorrelation(walk.values[:half], 20)
    b = ls.autocorrelation(walk.values[half:], 20)
    assert max(abs(x - y) for x, y in zip(a, b)) < 0.05


def test_revisit_rates():
    assert ls.revisit_rates([b"a", b"b", b"a", b"a"], 2) == [1.0, 1 / 3, 1 / 2]


# ---------------------------------------------------------------- FDC


def test_fdc_linear_fitness(tiny_index):
    peak = tiny_index.spec(17)
    specs = [tiny_index.spec(i) for i in range(len(tiny_index))]
    dist = [cs.encoding_distance(s, peak) for s in specs]
    oracle = constructed_oracle(tiny_index, [1 - 0.01 * d for d in dist])
    assert ls.fdc(oracle, specs, peak) == pytest.approx(-1.0, abs=1e-12)


def test_fdc_shuffled_fitness(mini_index):
    rng = np.random.default_rng(6)
    specs = [mini_index.spec(i) for i in rng.choice(len(mini_index), 10_000, replace=False)]
    peak = mini_index.spec(0)
    oracle = constructed_oracle(mini_index, rng.permutation(np.linspace(0.8, 0.95, len(mini_index))))
    assert abs(ls.fdc(oracle, specs, peak)) < 0.05


def test_fdc_undefined_cases(mini_oracle):
    peak = mini_oracle.index.spec(0)
    with pytest.raises(UndefinedStatisticError):
        ls.fdc(mini_oracle, [peak], peak)
    with pytest.raises(UndefinedStatisticError):
        ls.fdc(mini_oracle, [], peak)


def test_correlation_errors():
    with pytest.raises(ValueError):
        ls.correlation([1, 2], [1, 2, 3])
    with pytest.raises(UndefinedStatisticError):
        ls.correlation([1, 1, 1], [1, 2, 3])


# ---------------------------------------------------------------- op replacement


@pytest.fixture(scope="module")
def op_matrix(mini_oracle):
    return ls.op_replacement_matrix(mini_oracle)


def test_op_matrix_shape_and_diagonal(op_matrix):
    m = op_matrix
    assert tuple(m["ops"]) == cs.OPS
    for i in range(3):
        assert m["count"][i][i] == 0
        assert math.isnan(m["accuracy_delta"][i][i])
        for j in range(3):
            if i != j:
                assert m["count"][i][j] > 0


def test_op_matrix_antisymmetry(op_matrix):
    m = op_matrix
    acc = m["accuracy_delta"]
    for i in range(3):
        for j in range(3):
            if i != j:
                assert m["count"][i][j] == m["count"][j][i]
                # cells with symmetric vertices reach the same neighbor twice, so
                # the per-(cell, vertex) weights are not an exact bijection
                assert acc[i][j] == pytest.approx(-acc[j][i], rel=0.02)


def test_op_matrix_jobs_independent(mini_oracle, op_matrix):
    # repr makes the NaN diagonal compare equal
    assert repr(ls.op_replacement_matrix(mini_oracle, jobs=3)) == repr(op_matrix)


def test_op_matrix_by_hand():
    index = enumerate_space(3, 9)
    valid = np.linspace(0.6, 0.9, len(index))
    oracle = constructed_oracle(index, valid)
    m = ls.op_replacement_matrix(oracle)
    # 3-vertex cells: one op slot; chain and diamond give one pair each
    pos = {(index.spec(i).num_edges, index.spec(i).ops): i for i in range(len(index)) if index.spec(i).num_vertices == 3}
    a, b = cs.OPS.index("CONV3X3"), cs.OPS.index("CONV1X1")
    expect = np.mean(
        [valid[pos[(e, ("CONV1X1",))]] - valid[pos[(e, ("CONV3X3",))]] for e in (2, 3)]
    )
    assert m["count"][a][b] == 2
    assert m["accuracy_delta"][a][b] == pytest.approx(expect, abs=1e-15)


# ---------------------------------------------------------------- ECDFs


@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=200))
def test_ecdf_properties(values):
    x, f = ls.ecdf(values)
    assert np.all(np.diff(x) > 0) and np.all(np.diff(f) > 0)
    assert f[-1] == 1.0
    for xi, fi in zip(x, f):
        assert fi == sum(v <= xi for v in values) / len(values)


def test_accuracy_ecdf(mini_oracle):
    e108 = ls.accuracy_ecdf(mini_oracle, 108)
    e12 = ls.accuracy_ecdf(mini_oracle, 12)
    assert set(e108) == {"train", "valid", "test", "noise"}
    # lower noise at 108 epochs: its ECDF lies to the left
    grid = np.linspace(0, 0.05, 51)
    at = lambda e, g: np.searchsorted(e[0], g, side="right") / 1.0
    f108 = [e108["noise"][1][i - 1] if (i := int(at(e108["noise"], g))) else 0.0 for g in grid]
    f12 = [e12["noise"][1][i - 1] if (i := int(at(e12["noise"], g))) else 0.0 for g in grid]
    assert all(a >= b for a, b in zip(f108, f12))
    with pytest.raises(ConfigurationError):
        ls.accuracy_ecdf(mini_oracle, 5)


# ---------------------------------------------------------------- rank correlation and profiles


def test_rank_correlation_identity(mini_oracle):
    assert ls.budget_rank_correlation(mini_oracle, 36, 36, 10) == pytest.approx(1.0)
    assert ls.budget_rank_correlation(mini_oracle, 108, 108) == pytest.approx(1.0)


def test_rank_correlation_monotone_invariant(mini_index, mini_oracle):
    rho = ls.budget_rank_correlation(mini_oracle, 36, 108, 10)
    tables = {(n, e): mini_oracle.table(n, e) for n in orc.FIELDS for e in orc.EPOCH_BUDGETS}
    # warp the trial means (the ranked quantity); equal trials keep the mean exact
    tables[("valid", 36)] = np.repeat(np.exp(3 * mini_oracle.mean("valid", 36))[:, None], 3, axis=1)
    tables[("valid", 108)] = np.repeat((mini_oracle.mean("valid", 108) ** 3)[:, None], 3, axis=1)
    warped = orc.Oracle(mini_index, "tabular", mini_oracle.params, tables)
    assert ls.budget_rank_correlation(warped, 36, 108, 10) == pytest.approx(rho, abs=1e-12)
    assert 0 < rho < 1


def test_rank_correlation_errors(mini_oracle):
    with pytest.raises(ConfigurationError):
        ls.budget_rank_correlation(mini_oracle, 36, 108, 0)
    with pytest.raises(ConfigurationError):
        ls.budget_rank_correlation(mini_oracle, 36, 100, 10)
    flat = constructed_oracle(enumerate_space(3, 9), [0.5] * 7)
    with pytest.raises(UndefinedStatisticError):
        ls.budget_rank_correlation(flat, 36, 108)


def test_depth_width_profile(mini_oracle):
    prof = ls.depth_width_profile(mini_oracle)
    for key, bound in (("depth", 6), ("width", 9)):
        groups = prof[key]
        assert sum(g["count"] for g in groups.values()) == len(mini_oracle)
        assert set(groups) <= set(range(1, bound + 1))
        for g in groups.values():
            assert 0 < g["mean_valid"] < 1 and g["mean_time"] > 0


# ---------------------------------------------------------------- volume


def test_top_cells(mini_oracle):
    top = ls.top_cells(mini_oracle)
    best_hex, best = mini_oracle.best_cell()
    assert top[0] == bytes.fromhex(best_hex) or bytes.fromhex(best_hex) in top
    mean = mini_oracle.mean("test")
    cut = min(mean[mini_oracle.row(d)] for d in top)
    assert (mean >= cut).sum() == len(top)


def test_volume_nested_and_bounded(full_index, full_oracle):
    peaks = ls.top_cells(full_oracle)
    vol = ls.volume_within_distance(full_index, peaks, 8, 5000, Stream(7))
    assert vol.distance == list(range(9))
    assert all(a <= b for a, b in zip(vol.fraction, vol.fraction[1:]))
    assert all(0 <= f <= 1 for f in vol.fraction)
    assert all(h >= 0 for h in vol.half_width)


def test_volume_covers_everything_at_large_distance(tiny_index):
    vol = ls.volume_within_distance(tiny_index, tiny_index.digests, 26, 500, Stream(8))
    assert vol.fraction[-1] == 1.0


def test_volume_errors(tiny_index):
    with pytest.raises(ValueError):
        ls.volume_within_distance(tiny_index, [], 3, 10, Stream(0))
    with pytest.raises(KeyError):
        ls.volume_within_distance(tiny_index, [b"\0" * 16], 3, 10, Stream(0))


@pytest.mark.slow
def test_exact_volume_agrees_with_monte_carlo():
    index = enumerate_space(3, 9)
    peaks = index.digests[:3]
    exact = ls.exact_volume_within_distance(index, peaks, 8)
    n = 20_000
    mc = ls.volume_within_distance(index, peaks, 8, n, Stream(9))
    # nine simultaneous comparisons: Bonferroni-adjusted two-sided 95% band
    z = NormalDist().inv_cdf(1 - 0.05 / (2 * len(exact)))
    for p, f in zip(exact, mc.fraction):
        assert abs(f - p) <= z * math.sqrt(p * (1 - p) / n) + 1.0 / n
    assert all(a <= b for a, b in zip(exact, exact[1:]))


@pytest.mark.slow
def test_volume_around_the_trivial_cell():
    # its 243 encodings share one edge mask and cover every labeling, so the
    # distance of any encoding is the Hamming distance of its edge bits
    index = enumerate_space(2, 9)
    expect = [sum(comb(21, k) for k in range(d + 1)) / 2**21 for d in range(9)]
    assert ls.exact_volume_within_distance(index, index.digests, 8) == pytest.approx(expect, abs=1e-15)
    n = 20_000
    mc = ls.volume_within_distance(index, index.digests, 8, n, Stream(10))
    z = NormalDist().inv_cdf(1 - 0.05 / 18)
    for p, f in zip(expect, mc.fraction):
        assert abs(f - p) <= z * math.sqrt(p * (1 - p) / n) + 1.0 / n
