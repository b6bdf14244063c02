"""Shared test utilities: finite differences and batch factories."""

from __future__ import annotations

import numpy as np

from ordino.encoders import EncodedBatch

GRAD_TOL = 1e-4
ORACLE_TOL = 1e-10
EXACT_TOL = 1e-12


def central_diff(f, x: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    """Central finite differences of scalar f() with respect to x, mutating
    x one element at a time and restoring it."""
    g = np.zeros_like(x, dtype=np.float64)
    it = np.nditer(x, flags=["multi_index"])
    while not it.finished:
        idx = it.multi_index
        orig = x[idx]
        x[idx] = orig + eps
        fp = f()
        x[idx] = orig - eps
        fm = f()
        x[idx] = orig
        g[idx] = (fp - fm) / (2.0 * eps)
        it.iternext()
    return g


def assert_grad_close(analytic: np.ndarray, numeric: np.ndarray, tol: float = GRAD_TOL, what: str = ""):
    """Relative-error check with an absolute floor: when both gradients are
    numerically zero the finite-difference noise must not be amplified."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    assert analytic.shape == numeric.shape
    diff = np.abs(analytic - numeric).max() if analytic.size else 0.0
    scale = max(
        np.abs(analytic).max() if analytic.size else 0.0,
        np.abs(numeric).max() if numeric.size else 0.0,
    )
    if scale < 1e-8:
        assert diff < 1e-8, f"{what}: both near zero but differ by {diff}"
    else:
        rel = diff / scale
        assert rel <= tol, f"{what}: relative gradient error {rel:.3e} > {tol}"


def unit_rows(rng: np.random.Generator, n: int, d: int) -> np.ndarray:
    x = rng.normal(size=(n, d))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def random_batch(
    rng: np.random.Generator,
    b: int,
    m: int,
    d: int,
    distinct_labels: bool = False,
) -> EncodedBatch:
    v = unit_rows(rng, b, d)
    r = unit_rows(rng, m, d)
    if distinct_labels:
        assert b <= m
        labels = rng.permutation(m)[:b]
    else:
        labels = rng.integers(0, m, size=b)
    return EncodedBatch(v=v, r=r, labels=labels.astype(np.int64))
