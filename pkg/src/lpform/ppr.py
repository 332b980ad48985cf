"""Personalized PageRank: local push approximation plus exact oracles.

The push kernel keeps per-node estimate/residual arrays and repeatedly
fires the node whose residual-to-degree ratio is largest (ties broken by
node id, then by update order). That firing sequence does not depend on
the tolerance ``eps``; a smaller tolerance only cuts the same sequence
later, so refining a cache can only grow its scores. Residuals satisfy
``r[v] <= eps * degree(v)`` for every node on exit, which bounds the
per-node error of the estimate by ``eps * degree(u)`` from below the
exact value.

Dangling nodes (degree 0) teleport their walk mass back to the root: an
isolated root keeps the full unit of mass, and every oracle here uses the
same convention so the identities between them hold on any input graph.
"""

from __future__ import annotations

import os
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from numba import njit

from .errors import ConfigError, DataError
from .graph import Graph

_MAGIC = b"LPPR"
_VERSION = 1


@njit(cache=True, nogil=True)
def _heap_before(hkey, hid, hver, i, j):
    # max-heap order: larger ratio first, then smaller id, then older entry
    if hkey[i] != hkey[j]:
        return hkey[i] > hkey[j]
    if hid[i] != hid[j]:
        return hid[i] < hid[j]
    return hver[i] < hver[j]


@njit(cache=True, nogil=True)
def _heap_swap(hkey, hid, hver, i, j):
    hkey[i], hkey[j] = hkey[j], hkey[i]
    hid[i], hid[j] = hid[j], hid[i]
    hver[i], hver[j] = hver[j], hver[i]


@njit(cache=True, nogil=True)
def _sift_down(hkey, hid, hver, i, size):
    while True:
        left = 2 * i + 1
        if left >= size:
            return
        best = left
        right = left + 1
        if right < size and _heap_before(hkey, hid, hver, right, left):
            best = right
        if _heap_before(hkey, hid, hver, best, i):
            _heap_swap(hkey, hid, hver, best, i)
            i = best
        else:
            return


@njit(cache=True, nogil=True)
def _heap_insert(hkey, hid, hver, size, key, node, ver):
    hkey[size] = key
    hid[size] = node
    hver[size] = ver
    i = size
    while i > 0:
        parent = (i - 1) // 2
        if _heap_before(hkey, hid, hver, i, parent):
            _heap_swap(hkey, hid, hver, i, parent)
            i = parent
        else:
            break
    return size + 1


@njit(cache=True, nogil=True)
def _heap_compact(hkey, hid, hver, size, version):
    # drop stale entries; at most one live entry per node survives
    w = 0
    for i in range(size):
        if hver[i] == version[hid[i]]:
            hkey[w] = hkey[i]
            hid[w] = hid[i]
            hver[w] = hver[i]
            w += 1
    for i in range(w // 2 - 1, -1, -1):
        _sift_down(hkey, hid, hver, i, w)
    return w


@njit(cache=True, nogil=True)
def _push_max_ratio(indptr, indices, degrees, root, alpha, eps):
    """Local push, firing the max residual/degree node first.

    Returns the dense estimate vector p with r[v] <= eps*degree(v) for all
    v at exit. The firing order is independent of eps (see module docstring).
    """
    n = len(indptr) - 1
    p = np.zeros(n, dtype=np.float64)
    r = np.zeros(n, dtype=np.float64)
    version = np.zeros(n, dtype=np.int64)

    cap = 2 * n + 16
    hkey = np.empty(cap, dtype=np.float64)
    hid = np.empty(cap, dtype=np.int64)
    hver = np.empty(cap, dtype=np.int64)

    r[root] = 1.0
    droot = degrees[root]
    key0 = r[root] / droot if droot > 0 else np.inf
    size = _heap_insert(hkey, hid, hver, 0, key0, root, 0)

    while size > 0:
        top_key = hkey[0]
        top_id = hid[0]
        top_ver = hver[0]
        size -= 1
        _heap_swap(hkey, hid, hver, 0, size)
        _sift_down(hkey, hid, hver, 0, size)
        if top_ver != version[top_id]:
            continue  # stale entry
        if top_key <= eps:
            break  # every remaining residual is within tolerance
        u = top_id
        ru = r[u]
        d = degrees[u]
        if d == 0:
            if u == root:
                # teleports land back here forever; the residual settles fully
                p[u] += ru
                r[u] = 0.0
                version[u] += 1
                continue
            p[u] += alpha * ru
            r[u] = 0.0
            version[u] += 1
            r[root] += (1.0 - alpha) * ru
            version[root] += 1
            droot = degrees[root]
            key = r[root] / droot if droot > 0 else np.inf
            if size == cap:
                size = _heap_compact(hkey, hid, hver, size, version)
            size = _heap_insert(hkey, hid, hver, size, key, root,
                                version[root])
            continue
        p[u] += alpha * ru
        r[u] = 0.0
        version[u] += 1
        share = (1.0 - alpha) * ru / d
        for idx in range(indptr[u], indptr[u + 1]):
            v = indices[idx]
            r[v] += share
            version[v] += 1
            dv = degrees[v]
            key = r[v] / dv if dv > 0 else np.inf
            if size == cap:
                size = _heap_compact(hkey, hid, hver, size, version)
            size = _heap_insert(hkey, hid, hver, size, key, v, version[v])
    return p


@njit(cache=True, nogil=True)
def _push_fifo(indptr, indices, degrees, root, alpha, eps):
    """FIFO-queue local push; kept as a cross-check for the priority kernel."""
    n = len(indptr) - 1
    p = np.zeros(n, dtype=np.float64)
    r = np.zeros(n, dtype=np.float64)
    queue = np.empty(n + 1, dtype=np.int64)
    in_queue = np.zeros(n, dtype=np.bool_)
    head = 0
    tail = 0
    r[root] = 1.0
    queue[tail] = root
    tail = (tail + 1) % (n + 1)
    in_queue[root] = True
    while head != tail:
        u = queue[head]
        head = (head + 1) % (n + 1)
        in_queue[u] = False
        ru = r[u]
        d = degrees[u]
        if ru <= eps * d or ru <= 0.0:
            continue
        if d == 0:
            if u == root:
                p[u] += ru
                r[u] = 0.0
                continue
            p[u] += alpha * ru
            r[u] = 0.0
            r[root] += (1.0 - alpha) * ru
            if not in_queue[root] and r[root] > eps * degrees[root]:
                queue[tail] = root
                tail = (tail + 1) % (n + 1)
                in_queue[root] = True
            continue
        p[u] += alpha * ru
        r[u] = 0.0
        share = (1.0 - alpha) * ru / d
        for idx in range(indptr[u], indptr[u + 1]):
            v = indices[idx]
            r[v] += share
            if not in_queue[v] and r[v] > eps * degrees[v]:
                queue[tail] = v
                tail = (tail + 1) % (n + 1)
                in_queue[v] = True
    return p


@dataclass
class SparsePprRow:
    """Approximate PPR scores above tolerance for one root node."""

    root: int
    alpha: float
    entries: dict[int, float] = field(default_factory=dict)

    def get(self, node: int) -> float:
        return self.entries.get(node, 0.0)


@dataclass
class PprCache:
    """One sparse PPR row per node, all computed at the same (alpha, eps)."""

    alpha: float
    eps: float
    rows: list[SparsePprRow]

    @property
    def num_nodes(self) -> int:
        return len(self.rows)

    def row(self, v: int) -> SparsePprRow:
        return self.rows[v]

    def score(self, a: int, b: int) -> float:
        return self.rows[a].get(b)


def _check_alpha_eps(alpha: float, eps: float) -> None:
    if not 0.0 < alpha < 1.0:
        raise ConfigError(f"alpha must lie in (0, 1), got {alpha}")
    if eps <= 0.0:
        raise ConfigError(f"eps must be positive, got {eps}")


def push_ppr(g: Graph, root: int, alpha: float, eps: float) -> SparsePprRow:
    """Approximate one PPR row by local push.

    Guarantees 0 <= exact(u) - approx(u) <= eps * degree(u) for every node
    u, and never stores a zero score. An isolated root yields {root: 1.0}.
    """
    _check_alpha_eps(alpha, eps)
    if not 0 <= root < g.num_nodes:
        raise DataError(f"root {root} out of range [0, {g.num_nodes})")
    p = _push_max_ratio(g.row_offsets, g.col_indices, g.degrees,
                        root, alpha, eps)
    ids = np.nonzero(p)[0]
    return SparsePprRow(root, alpha, {int(i): float(p[i]) for i in ids})


def _walk_matrix(g: Graph) -> sp.csr_matrix:
    """Row-stochastic walk matrix D^-1 A; dangling rows are all zero."""
    deg = g.degrees.astype(np.float64)
    inv = np.divide(1.0, deg, out=np.zeros_like(deg), where=deg > 0)
    data = inv[np.repeat(np.arange(g.num_nodes), g.degrees)]
    return sp.csr_matrix((data, g.col_indices.copy(), g.row_offsets.copy()),
                         shape=(g.num_nodes, g.num_nodes))


def _walk_steps(g: Graph, root: int, iters: int):
    """Yield the walk occupancy vectors r^0 .. r^iters for a given root."""
    wt = _walk_matrix(g).T.tocsr()
    dangling = g.degrees == 0
    walk = np.zeros(g.num_nodes, dtype=np.float64)
    walk[root] = 1.0
    yield walk
    for _ in range(iters):
        nxt = wt @ walk
        lost = walk[dangling].sum()
        if lost > 0.0:
            nxt[root] += lost
        walk = nxt
        yield walk


def power_iteration_ppr(g: Graph, root: int, alpha: float,
                        iters: int) -> np.ndarray:
    """Dense PPR row as the truncated geometric walk sum.

    Accumulates alpha * (1-alpha)^k times the k-step walk occupancy for
    k = 0..iters; the truncated tail is below (1-alpha)^(iters+1) in L1.
    """
    if iters < 1:
        raise ConfigError(f"iters must be >= 1, got {iters}")
    _check_alpha_eps(alpha, eps=1.0)
    if not 0 <= root < g.num_nodes:
        raise DataError(f"root {root} out of range [0, {g.num_nodes})")
    out = np.zeros(g.num_nodes, dtype=np.float64)
    weight = alpha
    for walk in _walk_steps(g, root, iters):
        out += weight * walk
        weight *= 1.0 - alpha
    return out


def walk_sum_gamma(g: Graph, a: int, b: int, u: int, alpha: float,
                   K: int) -> float:
    """Truncated sum of decay-weighted walk-arrival probabilities at u.

    Propagates the walk occupancy vectors of both endpoints explicitly for
    K steps and returns sum_k alpha*(1-alpha)^k * (r_a^k(u) + r_b^k(u)),
    which converges to ppr(a, u) + ppr(b, u) as K grows.
    """
    if K < 0:
        raise ConfigError(f"K must be >= 0, got {K}")
    total = 0.0
    for root in (a, b):
        weight = alpha
        for walk in _walk_steps(g, root, K):
            total += weight * walk[u]
            weight *= 1.0 - alpha
    return total


def exact_ppr_matrix(g: Graph, alpha: float, iters: int = 400) -> np.ndarray:
    """Dense matrix of PPR rows (row i is the row for root i), all roots at
    once. 400 iterations put the truncation tail below 1e-28 at alpha=0.15."""
    n = g.num_nodes
    wt = _walk_matrix(g).T.tocsr()
    dangling = np.where(g.degrees == 0)[0]
    walks = np.eye(n, dtype=np.float64)  # column j = occupancy for root j
    out = alpha * walks.copy()
    weight = alpha
    diag = np.arange(n)
    for _ in range(iters):
        nxt = wt @ walks
        if len(dangling):
            lost = walks[dangling, :].sum(axis=0)
            nxt[diag, diag] += lost
        walks = nxt
        weight *= 1.0 - alpha
        out += weight * walks
    return out.T


def precompute_cache(g: Graph, alpha: float, eps: float,
                     num_threads: int | None = None) -> PprCache:
    """Push one PPR row per node. Rows are independent, so distinct roots
    may be pushed concurrently; LPFORM_THREADS caps the worker count."""
    _check_alpha_eps(alpha, eps)
    if num_threads is None:
        env = os.environ.get("LPFORM_THREADS")
        num_threads = int(env) if env else min(4, os.cpu_count() or 1)
    num_threads = max(1, num_threads)

    def one(root: int) -> SparsePprRow:
        p = _push_max_ratio(g.row_offsets, g.col_indices, g.degrees,
                            root, alpha, eps)
        ids = np.nonzero(p)[0]
        return SparsePprRow(root, alpha, {int(i): float(p[i]) for i in ids})

    roots = range(g.num_nodes)
    if num_threads == 1 or g.num_nodes < 64:
        rows = [one(r) for r in roots]
    else:
        with ThreadPoolExecutor(max_workers=num_threads) as pool:
            rows = list(pool.map(one, roots))
    return PprCache(alpha, eps, rows)


def cache_from_matrix(matrix: np.ndarray, alpha: float,
                      eps: float = 0.0) -> PprCache:
    """Wrap a dense PPR matrix (e.g. from exact_ppr_matrix) as a cache."""
    rows = []
    for root in range(matrix.shape[0]):
        ids = np.nonzero(matrix[root])[0]
        rows.append(SparsePprRow(root, alpha,
                                 {int(i): float(matrix[root, i]) for i in ids}))
    return PprCache(alpha, eps, rows)


def save_cache(cache: PprCache, path: str | Path) -> None:
    """Write the cache in the binary row format (see load_cache)."""
    parts = [_MAGIC,
             struct.pack("<II", _VERSION, cache.num_nodes),
             struct.pack("<dd", cache.alpha, cache.eps)]
    entry_t = np.dtype([("id", "<u4"), ("score", "<f4")])
    for row in cache.rows:
        ids = np.fromiter(row.entries.keys(), dtype=np.uint32,
                          count=len(row.entries))
        scores = np.fromiter(row.entries.values(), dtype=np.float32,
                             count=len(row.entries))
        order = np.argsort(ids, kind="stable")
        rec = np.empty(len(ids), dtype=entry_t)
        rec["id"] = ids[order]
        rec["score"] = scores[order]
        parts.append(struct.pack("<I", len(ids)))
        parts.append(rec.tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_cache(path: str | Path) -> PprCache:
    """Read a cache file: magic "LPPR", u32 version, u32 num_nodes,
    f64 alpha, f64 eps, then per node u32 nnz and nnz (u32 id, f32 score)
    records, all little-endian."""
    raw = Path(path).read_bytes()
    if raw[:4] != _MAGIC:
        raise DataError(f"{path}: bad magic {raw[:4]!r}, expected {_MAGIC!r}")
    version, num_nodes = struct.unpack_from("<II", raw, 4)
    if version != _VERSION:
        raise DataError(f"{path}: unsupported cache version {version}")
    alpha, eps = struct.unpack_from("<dd", raw, 12)
    offset = 28
    entry_t = np.dtype([("id", "<u4"), ("score", "<f4")])
    rows = []
    for root in range(num_nodes):
        (nnz,) = struct.unpack_from("<I", raw, offset)
        offset += 4
        rec = np.frombuffer(raw, dtype=entry_t, count=nnz, offset=offset)
        offset += nnz * entry_t.itemsize
        rows.append(SparsePprRow(root, alpha,
                                 {int(i): float(s) for i, s in
                                  zip(rec["id"], rec["score"])}))
    if offset != len(raw):
        raise DataError(f"{path}: {len(raw) - offset} trailing bytes")
    return PprCache(alpha, eps, rows)
