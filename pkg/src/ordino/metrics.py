"""Ordering diagnostics and accuracy metrics for rank-text feature sets.

The central object is the pairwise similarity matrix of the M rank text
features. Its rows should fall off monotonically away from the diagonal
when the embedding respects the label order; the ordinality score counts
how often that holds.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

from .errors import DataError, ShapeError


@dataclass(frozen=True)
class SimilarityMatrix:
    """Symmetric rank-by-rank cosine similarity matrix."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2 or v.shape[0] != v.shape[1]:
            raise ShapeError(f"similarity matrix must be square, got {v.shape}")
        if v.shape[0] < 2:
            raise ShapeError("similarity matrix needs at least two ranks")
        if not np.isfinite(v).all():
            raise DataError("similarity matrix has non-finite entries")
        object.__setattr__(self, "values", v)

    @property
    def num_ranks(self) -> int:
        return self.values.shape[0]


def similarity_matrix(r: np.ndarray) -> SimilarityMatrix:
    """Cosine similarities between rank features (rows normalized first)."""
    r = np.asarray(r, dtype=np.float64)
    if r.ndim != 2:
        raise ShapeError(f"rank features must be 2-d, got shape {r.shape}")
    norms = np.linalg.norm(r, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise DataError("zero-norm rank feature")
    unit = r / norms
    return SimilarityMatrix(unit @ unit.T)


def ordinality_score(sim: SimilarityMatrix | np.ndarray) -> float:
    """Percentage of row-wise adjacent pairs ordered by distance from the
    diagonal: for every row i and column j >= i, s[i, j] must exceed
    s[i, j+1]. Ties count as violations. Upper triangle only; symmetric
    matrices make the lower triangle redundant.
    """
    s = sim.values if isinstance(sim, SimilarityMatrix) else SimilarityMatrix(sim).values
    m = s.shape[0]
    ordered = 0
    for i in range(m):
        row = s[i]
        ordered += int(np.sum(row[i : m - 1] > row[i + 1 : m]))
    return 100.0 * ordered / (m * (m - 1) / 2)


def local_ordinality_score(sim: SimilarityMatrix | np.ndarray, window: int) -> float:
    """Mean ordinality score over all principal submatrices of size
    ``window`` along the diagonal. window = M reduces to the global score.
    """
    s = sim.values if isinstance(sim, SimilarityMatrix) else SimilarityMatrix(sim).values
    m = s.shape[0]
    if not 2 <= window <= m:
        raise ShapeError(f"window must be in [2, {m}], got {window}")
    scores = [
        ordinality_score(SimilarityMatrix(s[t : t + window, t : t + window]))
        for t in range(m - window + 1)
    ]
    return float(np.mean(scores))


def predict_rank(v: np.ndarray, r: np.ndarray) -> np.ndarray:
    """Nearest rank text by similarity; ties break toward the lower rank."""
    v = np.asarray(v, dtype=np.float64)
    r = np.asarray(r, dtype=np.float64)
    if v.ndim != 2 or r.ndim != 2 or v.shape[1] != r.shape[1]:
        raise ShapeError(f"incompatible shapes {v.shape} and {r.shape}")
    return np.argmax(v @ r.T, axis=1).astype(np.int64)


def mae_accuracy(pred: np.ndarray, labels: np.ndarray) -> tuple[float, float]:
    """Mean absolute rank error and exact-match accuracy."""
    pred = np.asarray(pred)
    labels = np.asarray(labels)
    if pred.shape != labels.shape or pred.ndim != 1:
        raise ShapeError(f"prediction/label shape mismatch: {pred.shape} vs {labels.shape}")
    if pred.size == 0:
        raise DataError("empty prediction set")
    mae = float(np.mean(np.abs(pred.astype(np.float64) - labels.astype(np.float64))))
    acc = float(np.mean(pred == labels))
    return mae, acc


def save_similarity_csv(sim: SimilarityMatrix, path: str) -> None:
    """Write the matrix as CSV: header line ``m=<M>`` then M comma-separated
    rows with nine significant digits per value."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(_similarity_text(sim))


def _similarity_text(sim: SimilarityMatrix) -> str:
    buf = io.StringIO()
    buf.write(f"m={sim.num_ranks}\n")
    for row in sim.values:
        buf.write(",".join(f"{x:.9g}" for x in row))
        buf.write("\n")
    return buf.getvalue()


def load_similarity_csv(path: str) -> SimilarityMatrix:
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines or not lines[0].startswith("m="):
        raise DataError(f"{path}: expected first line 'm=<num_ranks>'")
    try:
        m = int(lines[0][2:])
    except ValueError as exc:
        raise DataError(f"{path}: bad rank count in header {lines[0]!r}") from exc
    rows = lines[1:]
    if len(rows) != m:
        raise DataError(f"{path}: header says {m} rows, found {len(rows)}")
    try:
        values = np.array([[float(x) for x in row.split(",")] for row in rows])
    except ValueError as exc:
        raise DataError(f"{path}: non-numeric matrix entry") from exc
    if values.shape != (m, m):
        raise DataError(f"{path}: expected {m}x{m} matrix, got {values.shape}")
    return SimilarityMatrix(values)
