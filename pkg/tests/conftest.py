import os
from pathlib import Path

import pytest

from cellbench.enumerator import enumerate_space, read_index, write_index
from cellbench.oracle import make_synthetic


def _cached_index(request, name, max_vertices, max_edges):
    env = os.environ.get("NASBENCH_INDEX") if max_vertices == 7 else None
    if env and Path(env).is_file():
        index = read_index(env)
        if (index.max_vertices, index.max_edges) == (max_vertices, max_edges):
            return index
    path = Path(request.config.cache.mkdir("cellbench")) / name
    if path.is_file():
        return read_index(path)
    index = enumerate_space(max_vertices, max_edges, jobs=os.cpu_count() or 1)
    write_index(index, path)
    return index


@pytest.fixture(scope="session")
def full_index(request):
    return _cached_index(request, "full-7-9.space", 7, 9)


@pytest.fixture(scope="session")
def mini_index(request):
    return _cached_index(request, "mini-6-9.space", 6, 9)


@pytest.fixture(scope="session")
def tiny_index():
    return enumerate_space(4, 9)


@pytest.fixture(scope="session")
def full_oracle(full_index):
    return make_synthetic(full_index, 1)


@pytest.fixture(scope="session")
def mini_oracle(mini_index):
    return make_synthetic(mini_index, 1)


@pytest.fixture(scope="session")
def tiny_oracle(tiny_index):
    return make_synthetic(tiny_index, 3)


def pytest_terminal_summary(terminalreporter):
    from .acceptance_log import RESULTS

    if RESULTS:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
