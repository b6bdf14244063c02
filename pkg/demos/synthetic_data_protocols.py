"""
Synthetic ordinal data and evaluation protocols
===============================================

The generator draws images whose filled-bar height grows with rank, so
rank information is visually real but cheap. On top of any dataset sit the
protocol subsamplers used by the sweep harness: few-shot truncation,
distribution shift, and stratified splits.
"""

import numpy as np

from ordino.data import (
    DatasetSpec,
    distribution_shift_subsample,
    few_shot_subsample,
    generate_synthetic,
    kfold_split,
    stratified_split,
)

spec = DatasetSpec(
    num_ranks=6,
    label_values=(1, 2, 3, 4, 5, 6),
    counts=(40, 40, 40, 40, 40, 40),
    split=(1.0, 0.0, 0.0),
)
ds = generate_synthetic(spec, noise_sigma=0.3, seed=0, height=16, width=16)
print("dataset:", len(ds), "samples, images", ds.images.shape)
print("per-class counts:", ds.class_counts().tolist())

# The bar mass is monotone in rank; even under noise the class means keep
# their order.
means = [ds.images[ds.rank_indices == c].sum(axis=(1, 2, 3)).mean() for c in range(6)]
print("mean image mass by rank:", np.round(means, 1).tolist())

# Few-shot: keep at most k per class, exactly min(k, n_c).
for k in (4, 16, 64):
    print(f"few-shot k={k:2d}:", few_shot_subsample(ds, k, seed=1).class_counts().tolist())

# Distribution shift: pick re_cls classes and discard re_smp percent of
# their samples, everyone else untouched.
shifted = distribution_shift_subsample(ds, re_cls=2, re_smp_percent=75, seed=2)
print("after shift (2 classes lose 75%):", shifted.class_counts().tolist())

# Splits are stratified per class so small classes never vanish from a fold.
train, _, test = stratified_split(ds, (0.8, 0.0, 0.2), seed=3)
print("80/20 split:", len(train), "train /", len(test), "test")

sizes = [len(kfold_split(ds, k=5, fold_index=i, seed=4)[1]) for i in range(5)]
print("5-fold test sizes:", sizes, "-> sum", sum(sizes))
