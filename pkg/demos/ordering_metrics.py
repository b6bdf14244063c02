"""
Ordering scores on a template similarity matrix
===============================================

The ordinality score (OS) asks one question of an M x M cosine matrix: in
every row, does similarity strictly decrease each time the rank distance
grows by one? OS is the percentage of ordered pairs; the local variant
(LOS) asks the same inside sliding diagonal windows, where nearby ranks
live.
"""

import numpy as np

from ordino.metrics import (
    load_similarity_csv,
    local_ordinality_score,
    ordinality_score,
    save_similarity_csv,
    similarity_matrix,
)

rng = np.random.default_rng(0)

# Random unit features know nothing about order, so they score near the
# 50% coin-flip line.
r = rng.normal(size=(10, 32))
r /= np.linalg.norm(r, axis=1, keepdims=True)
sim = similarity_matrix(r)
print(f"random features:   OS = {ordinality_score(sim):6.2f}")

# A 1-d embedding whose positions increase with rank is perfectly ordered.
t = np.linspace(0.0, 1.0, 10)
ordered = np.stack([np.cos(t), np.sin(t)], axis=1)  # points on an arc
sim = similarity_matrix(ordered)
print(f"arc features:      OS = {ordinality_score(sim):6.2f}")
print(f"local, window 4:  LOS = {local_ordinality_score(sim, 4):6.2f}")

# Break one far pair and watch the global score drop while the local one,
# which never sees that pair inside a window, stays perfect.
vals = sim.values.copy()
vals[0, 9] = vals[0, 8] + 0.01
vals[9, 0] = vals[0, 9]
print(f"one far swap:      OS = {ordinality_score(vals):6.2f}, "
      f"LOS(4) = {local_ordinality_score(vals, 4):6.2f}")

# Matrices round-trip through a small CSV format for offline analysis.
save_similarity_csv(sim, "/tmp/demo_similarity.csv")
again = load_similarity_csv("/tmp/demo_similarity.csv")
print("csv round trip identical:", np.allclose(sim.values, again.values, atol=1e-8))
