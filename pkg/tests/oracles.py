"""Independent brute-force reference implementations used by the tests.

Nothing here touches the package's kernels: graphs are plain edge sets and
every quantity is recomputed from first principles. Only spec construction
is borrowed from the package.
"""

from itertools import combinations, permutations, product

from cellbench.cellspec import new_spec

OPS = ("CONV3X3", "CONV1X1", "MAXPOOL3X3")
KERNEL = {"CONV3X3": 3, "CONV1X1": 1, "MAXPOOL3X3": 0}


def matrix_edges(matrix):
    n = len(matrix)
    return {(i, j) for i in range(n) for j in range(n) if matrix[i][j]}


def on_path(n, edges):
    fwd, stack = {0}, [0]
    while stack:
        u = stack.pop()
        for a, b in edges:
            if a == u and b not in fwd:
                fwd.add(b)
                stack.append(b)
    bwd, stack = {n - 1}, [n - 1]
    while stack:
        u = stack.pop()
        for a, b in edges:
            if b == u and a not in bwd:
                bwd.add(a)
                stack.append(a)
    return fwd & bwd


def pruned(n, edges, ops):
    """(n', edges', ops') restricted to input->output paths, or None."""
    keep = on_path(n, edges)
    if n - 1 not in keep or 0 not in keep:
        return None
    order = sorted(keep)
    where = {v: i for i, v in enumerate(order)}
    new_edges = {(where[a], where[b]) for a, b in edges if a in keep and b in keep}
    new_ops = tuple(ops[v - 1] for v in order[1:-1])
    return len(order), frozenset(new_edges), new_ops


def iso_key(n, edges, ops):
    """Exact isomorphism invariant: minimum relabeled form over interior permutations."""
    best = None
    for perm in permutations(range(1, n - 1)):
        where = {0: 0, n - 1: n - 1}
        where.update({v: perm[v - 1] for v in range(1, n - 1)})
        labels = [None] * (n - 2)
        for v in range(1, n - 1):
            labels[where[v] - 1] = ops[v - 1]
        key = (n, tuple(sorted((where[a], where[b]) for a, b in edges)), tuple(labels))
        if best is None or key < best:
            best = key
    return best


def isomorphic(a, b):
    """Backtracking-free exact check via iso_key on pruned forms."""
    return iso_key(*a) == iso_key(*b)


def brute_force_count(max_vertices, max_edges):
    classes = set()
    for n in range(2, max_vertices + 1):
        pairs = list(combinations(range(n), 2))
        for bits in product((0, 1), repeat=len(pairs)):
            edges = {p for p, b in zip(pairs, bits) if b}
            if len(edges) > max_edges:
                continue
            for ops in product(OPS, repeat=n - 2):
                p = pruned(n, edges, ops)
                if p is not None:
                    classes.add(iso_key(*p))
    return len(classes)


def longest_path(n, edges):
    dist = [None] * n
    dist[0] = 0
    for v in range(n):
        if dist[v] is None:
            continue
        for a, b in edges:
            if a == v:
                dist[b] = max(dist[b] or 0, dist[v] + 1)
    return dist[n - 1]


def max_directed_cut(n, edges):
    """Largest S->T edge count over input-side/output-side splits with no T->S edge."""
    best = 0
    for assign in product((0, 1), repeat=n - 2):
        side = (0,) + assign + (1,)
        if any(side[a] == 1 and side[b] == 0 for a, b in edges):
            continue
        best = max(best, sum(1 for a, b in edges if side[a] == 0 and side[b] == 1))
    return best


def channels(n, edges, c_in, c_out):
    out = n - 1
    feeders = [v for v in range(1, out) if (v, out) in edges]
    ch = [0] * n
    ch[0], ch[out] = c_in, c_out
    k = len(feeders)
    for i, v in enumerate(feeders):
        ch[v] = c_out // k + (1 if i < c_out % k else 0)
    for v in range(out - 1, 0, -1):
        if v not in feeders:
            ch[v] = max(ch[w] for a, w in edges if a == v)
    return ch


def materialized_params(matrix, ops, stem=128, per_stack=3, stacks=3, classes=10):
    """Sum of every weight and batch-norm tensor size, layer by layer."""
    n, edges, ops = pruned(len(matrix), matrix_edges(matrix), tuple(ops))
    tensors = [(3, 3, 3, stem), (stem,), (stem,)]
    c = stem
    for s in range(stacks):
        c_out = stem * 2**s
        for _ in range(per_stack):
            ch = channels(n, edges, c, c_out)
            for v in range(1, n - 1):
                if (0, v) in edges:
                    tensors += [(1, 1, c, ch[v]), (ch[v],), (ch[v],)]
                k = KERNEL[ops[v - 1]]
                if k:
                    tensors += [(k, k, ch[v], ch[v]), (ch[v],), (ch[v],)]
            feeders = [v for v in range(1, n - 1) if (v, n - 1) in edges]
            if (0, n - 1) in edges or not feeders:
                tensors += [(1, 1, c, c_out), (c_out,), (c_out,)]
            c = c_out
    tensors += [(c, classes), (classes,)]
    total = 0
    for shape in tensors:
        size = 1
        for d in shape:
            size *= d
        total += size
    return total


def permute_interior(spec, perm):
    """Relabel interior vertex v -> perm[v-1] and re-sort to upper-triangular order."""
    n = spec.num_vertices
    where = [0] + [p for p in perm] + [n - 1]
    edges = {(where[a], where[b]) for a, b in matrix_edges(spec.matrix)}
    # a topological re-sort keeps the result upper-triangular
    order = list(range(n))
    indeg = {v: 0 for v in order}
    for a, b in edges:
        indeg[b] += 1
    topo, ready = [], sorted(v for v in order if indeg[v] == 0)
    while ready:
        v = ready.pop(0)
        topo.append(v)
        for a, b in sorted(edges):
            if a == v:
                indeg[b] -= 1
                if indeg[b] == 0:
                    ready.append(b)
                    ready.sort()
    pos = {v: i for i, v in enumerate(topo)}
    m = [[0] * n for _ in range(n)]
    for a, b in edges:
        m[pos[a]][pos[b]] = 1
    labels = [None] * n
    for v in range(1, n - 1):
        labels[pos[where[v]]] = spec.ops[v - 1]
    assert pos[0] == 0 and pos[n - 1] == n - 1
    return new_spec(m, labels[1:-1])
