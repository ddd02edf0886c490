# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels; same surface and results as ``_pykernels``."""

from libc.string cimport memcpy, memcmp
from libc.stdint cimport uint8_t, uint32_t, int32_t
from cpython.bytes cimport PyBytes_FromStringAndSize

import numpy as np

cdef extern from "openssl/sha.h":
    ctypedef struct SHA256_CTX:
        pass
    int SHA256_Init(SHA256_CTX *c) nogil
    int SHA256_Update(SHA256_CTX *c, const void *data, size_t n) nogil
    int SHA256_Final(unsigned char *md, SHA256_CTX *c) nogil


cdef inline void SHA256(const unsigned char *d, size_t n, unsigned char *md) noexcept nogil:
    cdef SHA256_CTX ctx
    SHA256_Init(&ctx)
    SHA256_Update(&ctx, d, n)
    SHA256_Final(md, &ctx)

cdef enum:
    MAXV = 8
    HLEN = 32
    BUFLEN = 1 + MAXV * HLEN + 1 + MAXV * HLEN + HLEN

LABEL_IN = 3
LABEL_OUT = 4
DIGEST_BYTES = 16
IMPLEMENTATION = "cython"

cdef int OP_KERNEL[3]
OP_KERNEL[0] = 3
OP_KERNEL[1] = 1
OP_KERNEL[2] = 0


cdef extern from *:
    int __builtin_popcount(unsigned int x) nogil


cdef inline int popcount(unsigned int x) noexcept nogil:
    return __builtin_popcount(x)


cdef int c_path_vertices(int n, const uint8_t* rows) noexcept nogil:
    cdef int fwd = 1, bwd, v
    cdef int last = 1 << (n - 1)
    for v in range(n):
        if (fwd >> v) & 1:
            fwd |= rows[v]
    if not (fwd & last):
        return 0
    bwd = last
    for v in range(n - 2, -1, -1):
        if rows[v] & bwd:
            bwd |= 1 << v
    return fwd & bwd


cdef int c_prune(int n, const uint8_t* rows, const uint8_t* labels,
                 uint8_t* out_rows, uint8_t* out_labels) noexcept nogil:
    """Writes the pruned graph and returns its vertex count (0 = no path)."""
    cdef int keep = c_path_vertices(n, rows)
    cdef int idx[MAXV]
    cdef int v, w, m = 0, r
    if keep == 0:
        return 0
    for v in range(n):
        if (keep >> v) & 1:
            idx[v] = m
            m += 1
        else:
            idx[v] = -1
    for v in range(n):
        if idx[v] < 0:
            continue
        r = rows[v] & keep
        out_rows[idx[v]] = 0
        for w in range(v + 1, n):
            if (r >> w) & 1:
                out_rows[idx[v]] |= <uint8_t>(1 << idx[w])
        out_labels[idx[v]] = labels[v]
    return m


cdef void sort_hashes(unsigned char* hs, int k) noexcept nogil:
    cdef unsigned char tmp[HLEN]
    cdef int i, j
    for i in range(1, k):
        memcpy(tmp, hs + i * HLEN, HLEN)
        j = i - 1
        while j >= 0 and memcmp(hs + j * HLEN, tmp, HLEN) > 0:
            memcpy(hs + (j + 1) * HLEN, hs + j * HLEN, HLEN)
            j -= 1
        memcpy(hs + (j + 1) * HLEN, tmp, HLEN)


cdef void c_graph_digest(int n, const uint8_t* rows, const uint8_t* labels,
                         unsigned char* out) noexcept nogil:
    cdef unsigned char hashes[MAXV * HLEN]
    cdef unsigned char fresh[MAXV * HLEN]
    cdef unsigned char group[MAXV * HLEN]
    cdef unsigned char buf[BUFLEN]
    cdef unsigned char full[HLEN]
    cdef uint8_t leaf[3]
    cdef int indeg[MAXV]
    cdef int v, u, w, k, pos, rnd
    for v in range(n):
        indeg[v] = 0
    for u in range(n):
        for w in range(u + 1, n):
            if (rows[u] >> w) & 1:
                indeg[w] += 1
    for v in range(n):
        leaf[0] = <uint8_t>indeg[v]
        leaf[1] = <uint8_t>popcount(rows[v])
        leaf[2] = labels[v]
        SHA256(leaf, 3, hashes + v * HLEN)
    for rnd in range(n):
        for v in range(n):
            k = 0
            for u in range(v):
                if (rows[u] >> v) & 1:
                    memcpy(group + k * HLEN, hashes + u * HLEN, HLEN)
                    k += 1
            sort_hashes(group, k)
            buf[0] = <unsigned char>k
            memcpy(buf + 1, group, k * HLEN)
            pos = 1 + k * HLEN
            k = 0
            for w in range(v + 1, n):
                if (rows[v] >> w) & 1:
                    memcpy(group + k * HLEN, hashes + w * HLEN, HLEN)
                    k += 1
            sort_hashes(group, k)
            buf[pos] = <unsigned char>k
            memcpy(buf + pos + 1, group, k * HLEN)
            pos += 1 + k * HLEN
            memcpy(buf + pos, hashes + v * HLEN, HLEN)
            pos += HLEN
            SHA256(buf, pos, fresh + v * HLEN)
        memcpy(hashes, fresh, n * HLEN)
    sort_hashes(hashes, n)
    buf[0] = <unsigned char>n
    memcpy(buf + 1, hashes, n * HLEN)
    SHA256(buf, 1 + n * HLEN, full)
    memcpy(out, full, 16)


cdef inline void check_graph(const uint8_t[:] rows, const uint8_t[:] labels) except *:
    if rows.shape[0] < 2 or rows.shape[0] > MAXV - 1:
        raise ValueError("graphs must have between 2 and 7 vertices")
    if labels.shape[0] != rows.shape[0]:
        raise ValueError("labels and rows differ in length")


def path_vertices(const uint8_t[:] rows):
    return c_path_vertices(rows.shape[0], &rows[0])


def num_edges(const uint8_t[:] rows):
    cdef int v, total = 0
    for v in range(rows.shape[0]):
        total += popcount(rows[v])
    return total


def prune(const uint8_t[:] rows, const uint8_t[:] labels):
    check_graph(rows, labels)
    cdef uint8_t r[MAXV]
    cdef uint8_t l[MAXV]
    cdef int m = c_prune(rows.shape[0], &rows[0], &labels[0], r, l)
    if m == 0:
        return None
    return PyBytes_FromStringAndSize(<char*>r, m), PyBytes_FromStringAndSize(<char*>l, m)


def graph_digest(const uint8_t[:] rows, const uint8_t[:] labels):
    check_graph(rows, labels)
    cdef unsigned char out[16]
    c_graph_digest(rows.shape[0], &rows[0], &labels[0], out)
    return PyBytes_FromStringAndSize(<char*>out, 16)


def canonical_digest(const uint8_t[:] rows, const uint8_t[:] labels):
    check_graph(rows, labels)
    cdef uint8_t r[MAXV]
    cdef uint8_t l[MAXV]
    cdef unsigned char out[16]
    cdef int m = c_prune(rows.shape[0], &rows[0], &labels[0], r, l)
    if m == 0:
        return None
    c_graph_digest(m, r, l, out)
    return PyBytes_FromStringAndSize(<char*>out, 16)


def rows_from_mask(int n, long long mask):
    cdef uint8_t r[MAXV]
    cdef int i, j, k, top = n * (n - 1) // 2 - 1
    for i in range(n):
        r[i] = 0
    k = 0
    for i in range(n):
        for j in range(i + 1, n):
            if (mask >> (top - k)) & 1:
                r[i] |= <uint8_t>(1 << j)
            k += 1
    return PyBytes_FromStringAndSize(<char*>r, n)


def mask_from_rows(const uint8_t[:] rows):
    cdef int n = rows.shape[0], i, j
    cdef long long mask = 0
    for i in range(n):
        for j in range(i + 1, n):
            mask = (mask << 1) | ((rows[i] >> j) & 1)
    return mask


def enumerate_shard(int n, int max_edges, long long lo, long long hi, int num_ops=3):
    cdef dict buckets = {}
    cdef long long labeled = 0, mask
    cdef int npairs = n * (n - 1) // 2
    cdef int pi[32]
    cdef int pj[32]
    cdef int i, j, k, full = (1 << n) - 1, inner = n - 2, d
    cdef long long total_labelings = 1, lab, rem
    cdef uint8_t rows[MAXV]
    cdef uint8_t labels[MAXV]
    cdef unsigned char out[16]
    k = 0
    for i in range(n):
        for j in range(i + 1, n):
            pi[k] = i
            pj[k] = j
            k += 1
    for i in range(inner):
        total_labelings *= num_ops
    labels[0] = LABEL_IN
    labels[n - 1] = LABEL_OUT
    for mask in range(lo, hi):
        if popcount(<unsigned int>mask) > max_edges:
            continue
        for i in range(n):
            rows[i] = 0
        for k in range(npairs):
            if (mask >> (npairs - 1 - k)) & 1:
                rows[pi[k]] |= <uint8_t>(1 << pj[k])
        if c_path_vertices(n, rows) != full:
            continue
        for lab in range(total_labelings):
            rem = lab
            for d in range(inner - 1, -1, -1):
                labels[1 + d] = <uint8_t>(rem % num_ops)
                rem //= num_ops
            labeled += 1
            c_graph_digest(n, rows, labels, out)
            key = PyBytes_FromStringAndSize(<char*>out, 16)
            if key not in buckets:
                buckets[key] = (mask, PyBytes_FromStringAndSize(<char*>(labels + 1), inner))
    return buckets, labeled


def depth_width(const uint8_t[:] rows):
    cdef int n = rows.shape[0], v, w, assign, s, crossing, ok, width = 0
    cdef int longest[MAXV]
    for v in range(n):
        longest[v] = -1
    longest[0] = 0
    for v in range(n):
        if longest[v] < 0:
            continue
        for w in range(v + 1, n):
            if (rows[v] >> w) & 1 and longest[v] + 1 > longest[w]:
                longest[w] = longest[v] + 1
    for assign in range(1 << (n - 2)):
        s = 1 | (assign << 1)
        crossing = 0
        ok = 1
        for v in range(n):
            if (s >> v) & 1:
                crossing += popcount(rows[v] & ~s & 0xFF)
            elif rows[v] & s:
                ok = 0
                break
        if ok and crossing > width:
            width = crossing
    return longest[n - 1], width


cdef int c_vertex_channels(int n, const uint8_t* rows, int c_in, int c_out, int* ch) except -1:
    cdef int out = n - 1, v, w, k = 0, share, extra, i, best
    ch[0] = c_in
    ch[out] = c_out
    for v in range(1, out):
        ch[v] = 0
        if (rows[v] >> out) & 1:
            k += 1
    if k == 0:
        if not ((rows[0] >> out) & 1):
            raise ValueError("cell has no path into the output vertex")
        return 0
    share = c_out // k
    extra = c_out % k
    i = 0
    for v in range(1, out):
        if (rows[v] >> out) & 1:
            ch[v] = share + (1 if i < extra else 0)
            i += 1
    for v in range(out - 1, 0, -1):
        if (rows[v] >> out) & 1:
            continue
        best = 0
        for w in range(v + 1, out):
            if (rows[v] >> w) & 1 and ch[w] > best:
                best = ch[w]
        ch[v] = best
    return 0


def vertex_channels(const uint8_t[:] rows, int c_in, int c_out):
    cdef int ch[MAXV]
    cdef int n = rows.shape[0]
    c_vertex_channels(n, &rows[0], c_in, c_out, ch)
    return [ch[v] for v in range(n)]


def cell_params(const uint8_t[:] rows, const uint8_t[:] labels, long long c_in, long long c_out):
    cdef int ch[MAXV]
    cdef int n = rows.shape[0], w, v, k
    cdef long long total = 0, c
    c_vertex_channels(n, &rows[0], <int>c_in, <int>c_out, ch)
    for w in range(1, n):
        if (rows[0] >> w) & 1:
            total += c_in * ch[w] + 2 * ch[w]
    for v in range(1, n - 1):
        k = OP_KERNEL[labels[v]]
        if k:
            c = ch[v]
            total += k * k * c * c + 2 * c
    return total


def min_encoding_distances(sample_masks, sample_ops, peak_masks, peak_ops):
    cdef const uint32_t[:] sm = np.ascontiguousarray(sample_masks, dtype=np.uint32)
    cdef const uint8_t[:, :] so = np.ascontiguousarray(sample_ops, dtype=np.uint8)
    cdef const uint32_t[:] pm = np.ascontiguousarray(peak_masks, dtype=np.uint32)
    cdef const uint8_t[:, :] po = np.ascontiguousarray(peak_ops, dtype=np.uint8)
    result = np.empty(sm.shape[0], dtype=np.int32)
    cdef int32_t[:] res = result
    cdef Py_ssize_t s, p, ns = sm.shape[0], np_ = pm.shape[0]
    cdef int best, d, t, nops = so.shape[1]
    with nogil:
        for s in range(ns):
            best = 1 << 30
            for p in range(np_):
                d = popcount(sm[s] ^ pm[p])
                if d >= best:
                    continue
                for t in range(nops):
                    if so[s, t] != po[p, t]:
                        d += 1
                if d < best:
                    best = d
                    if best == 0:
                        break
            res[s] = best
    return result
