"""Oracle doubles shared by the tests."""

import numpy as np

from cellbench import oracle as orc
from cellbench.oracle import Oracle


def constructed_oracle(index, valid108, test108=None):
    """Tabular oracle with the given mean validation accuracy at 108 epochs."""
    n = len(index)
    tables = {}
    for e in orc.EPOCH_BUDGETS:
        for name in orc.FIELDS:
            tables[(name, e)] = np.full((n, 3), 0.5)
        tables[("time", e)] = np.full((n, 3), float(e))
    tables[("valid", 108)] = np.repeat(np.asarray(valid108, dtype=float)[:, None], 3, axis=1)
    if test108 is not None:
        tables[("test", 108)] = np.asarray(test108, dtype=float)
    return orc.Oracle(index, "tabular", np.ones(n, dtype=np.int64), tables)


class PoisonedOracle(Oracle):
    def __init__(self, clean):
        super().__init__(clean.index, clean.backend, clean.params)
        self.clean = clean

    def table(self, name, epochs):
        if name == "test":
            raise AssertionError("test accuracy read during search")
        return self.clean.table(name, epochs)
