"""Dev-only experiment: compare FIFO vs max-ratio push on
(1) correctness vs power iteration, (2) monotone refinement under
shrinking eps, (3) speed."""
import time

import numpy as np

from lpform.graph import from_edges
from lpform.ppr import (_push_fifo, _push_max_ratio, power_iteration_ppr,
                        exact_ppr_matrix)


def random_graph(n, p, rng, min_degree=1):
    edges = [(0, 1)]
    for i in range(n):
        for j in range(i + 1, n):
            if rng.random() < p:
                edges.append((i, j))
    g = from_edges(np.array(edges), n)
    if min_degree >= 1:
        deg = g.degrees
        extra = [(int(v), int((v + 1) % n)) for v in np.where(deg == 0)[0]]
        if extra:
            g = from_edges(np.concatenate([np.array(edges),
                                           np.array(extra)]), n)
    return g


rng = np.random.default_rng(0)
alpha = 0.15

# 1) correctness vs power iteration
worst_fifo = worst_prio = 0.0
for t in range(30):
    n = int(rng.integers(5, 40))
    g = random_graph(n, rng.uniform(0.05, 0.5), rng)
    eps = 10.0 ** rng.uniform(-7, -3)
    root = int(rng.integers(n))
    exact = power_iteration_ppr(g, root, alpha, 400)
    for kern, tag in ((_push_fifo, "fifo"), (_push_max_ratio, "prio")):
        p = kern(g.row_offsets, g.col_indices, g.degrees, root, alpha, eps)
        err = exact - p
        bound = eps * g.degrees
        ok_low = err.min() >= -1e-12
        ok_high = np.all(err <= bound + 1e-12)
        if not (ok_low and ok_high):
            print(f"GUARANTEE FAIL {tag} trial={t} min={err.min()} "
                  f"maxrel={np.max(err - bound)}")
        if tag == "fifo":
            worst_fifo = max(worst_fifo, np.max(err / np.maximum(bound, 1e-300)))
        else:
            worst_prio = max(worst_prio, np.max(err / np.maximum(bound, 1e-300)))
print(f"guarantee ratio err/(eps*deg): fifo={worst_fifo:.3f} prio={worst_prio:.3f}")

# 2) monotone refinement
viol_fifo = viol_prio = 0
checks = 0
for t in range(120):
    n = int(rng.integers(5, 40))
    g = random_graph(n, rng.uniform(0.05, 0.5), rng)
    root = int(rng.integers(n))
    e1 = 10.0 ** rng.uniform(-4, -1)
    e2 = e1 / 10.0 ** rng.uniform(0.2, 2)
    for kern, tag in ((_push_fifo, "fifo"), (_push_max_ratio, "prio")):
        p1 = kern(g.row_offsets, g.col_indices, g.degrees, root, alpha, e1)
        p2 = kern(g.row_offsets, g.col_indices, g.degrees, root, alpha, e2)
        drop = np.min(p2 - p1)
        checks += 1
        if drop < -1e-15:
            if tag == "fifo":
                viol_fifo += 1
            else:
                viol_prio += 1
print(f"monotone refinement violations out of {checks // 2} pairs: "
      f"fifo={viol_fifo} prio={viol_prio}")

# 3) speed on a Cora-scale graph
n = 2708
edges = rng.integers(0, n, size=(5300, 2))
g = from_edges(edges, n)
t0 = time.time()
for root in range(0, n, 15):
    _push_max_ratio(g.row_offsets, g.col_indices, g.degrees, root, alpha, 1e-7)
t1 = time.time()
print(f"prio push, {n // 15} roots at eps=1e-7: {t1 - t0:.2f}s "
      f"(projected full cache {(t1 - t0) * 15:.1f}s)")

# 4) exact matrix vs per-root power iteration
g = random_graph(25, 0.2, rng)
P = exact_ppr_matrix(g, alpha, iters=300)
for root in (0, 7, 24):
    v = power_iteration_ppr(g, root, alpha, 300)
    assert np.allclose(P[root], v, atol=1e-12), root
print("exact_ppr_matrix matches per-root power iteration")
