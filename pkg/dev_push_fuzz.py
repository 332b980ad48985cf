"""Heavier fuzz of FIFO monotone refinement + timing comparison."""
import logging
import time

import numpy as np

logging.disable(logging.WARNING)

from lpform.graph import from_edges
from lpform.ppr import _push_fifo, _push_max_ratio


def random_graph(n, p, rng):
    edges = [(0, 1)]
    for i in range(n):
        for j in range(i + 1, n):
            if rng.random() < p:
                edges.append((i, j))
    return from_edges(np.array(edges), n)


rng = np.random.default_rng(7)
viol = 0
worst = 0.0
trials = 3000
for t in range(trials):
    n = int(rng.integers(4, 50))
    g = random_graph(n, rng.uniform(0.03, 0.7), rng)
    root = int(rng.integers(n))
    alpha = rng.uniform(0.05, 0.5)
    e1 = 10.0 ** rng.uniform(-5, -0.5)
    e2 = e1 / 10.0 ** rng.uniform(0.05, 3)
    p1 = _push_fifo(g.row_offsets, g.col_indices, g.degrees, root, alpha, e1)
    p2 = _push_fifo(g.row_offsets, g.col_indices, g.degrees, root, alpha, e2)
    drop = np.min(p2 - p1)
    if drop < -1e-15:
        viol += 1
        worst = min(worst, drop)
        if viol <= 3:
            print(f"violation trial={t} n={n} alpha={alpha:.3f} "
                  f"e1={e1:.2e} e2={e2:.2e} drop={drop:.3e}")
print(f"FIFO monotone violations: {viol}/{trials}, worst drop {worst:.3e}")

# timing comparison on Cora-scale
n = 2708
edges = rng.integers(0, n, size=(5300, 2))
g = from_edges(edges, n)
for kern, tag in ((_push_fifo, "fifo"), (_push_max_ratio, "prio")):
    kern(g.row_offsets, g.col_indices, g.degrees, 0, 0.15, 1e-7)  # warm
    t0 = time.time()
    for root in range(0, n, 10):
        kern(g.row_offsets, g.col_indices, g.degrees, root, 0.15, 1e-7)
    dt = time.time() - t0
    print(f"{tag}: {dt:.2f}s for {n // 10} roots "
          f"(full cache ~{dt * 10:.0f}s single-threaded)")
