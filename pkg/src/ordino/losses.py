"""Training objectives on unit-normalized cross-modal features.

All losses are pure functions of an :class:`~ordino.encoders.EncodedBatch`
(image rows ``v``, rank text rows ``r``, integer ``labels``) and return
scalars to be minimized. Each has a ``*_grad`` companion returning the same
value together with analytic gradients with respect to ``v`` and ``r``;
those gradients are what the trainer consumes and what the finite-difference
suite verifies.

Throughout, ``t`` denotes the batch-indexed text features ``r[labels]`` and
``s = v @ r.T`` the similarity matrix of one batch.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.special import logsumexp

from .encoders import EncodedBatch
from .errors import ConfigError, LossError, NonFiniteError

WEIGHT_FORMS = ("linear", "absolute", "squared")
I2T_DENOMINATORS = ("all", "batch")


@dataclass
class LossConfig:
    """Knobs shared by the loss family.

    lam scales the pairwise cross-entropy reference; gamma sets how strongly
    an anchor's own rank text is pushed along with its image against other
    ranks' texts; tau is the softmax temperature; weight_form picks the
    label-distance weighting; eps_log floors every logarithm argument.
    stage1_weights are (t2i, i2t, ordinal-pairwise), stage2_weights are
    (cross-entropy, simplified ordinal-pairwise).
    """

    lam: float = 1.0
    gamma: float = 1.0
    tau: float = 0.07
    weight_form: str = "squared"
    eps_log: float = 1e-6
    i2t_denominator: str = "all"
    stage1_weights: tuple[float, float, float] = (0.1, 0.1, 3.0)
    stage2_weights: tuple[float, float] = (1.0, 1.0)

    def __post_init__(self):
        self.stage1_weights = tuple(float(w) for w in self.stage1_weights)
        self.stage2_weights = tuple(float(w) for w in self.stage2_weights)
        if self.lam <= 0 or self.tau <= 0:
            raise ConfigError("lam and tau must be positive")
        if self.gamma < 0:
            raise ConfigError("gamma must be non-negative")
        if self.eps_log <= 0:
            raise ConfigError("eps_log must be positive")
        if self.weight_form not in WEIGHT_FORMS:
            raise ConfigError(f"weight_form must be one of {WEIGHT_FORMS}")
        if self.i2t_denominator not in I2T_DENOMINATORS:
            raise ConfigError(f"i2t_denominator must be one of {I2T_DENOMINATORS}")
        if len(self.stage1_weights) != 3 or len(self.stage2_weights) != 2:
            raise ConfigError("stage1_weights needs 3 entries, stage2_weights needs 2")
        if any(w < 0 for w in self.stage1_weights + self.stage2_weights):
            raise ConfigError("stage weights must be non-negative")

    @classmethod
    def from_dict(cls, d: dict) -> "LossConfig":
        from .config import check_keys

        allowed = {f for f in cls.__dataclass_fields__}
        check_keys(d, allowed, "loss")
        return cls(**d)

    def to_dict(self) -> dict:
        return {
            "lam": self.lam,
            "gamma": self.gamma,
            "tau": self.tau,
            "weight_form": self.weight_form,
            "eps_log": self.eps_log,
            "i2t_denominator": self.i2t_denominator,
            "stage1_weights": list(self.stage1_weights),
            "stage2_weights": list(self.stage2_weights),
        }


def label_distance_weights(num_ranks: int, form: str = "linear") -> np.ndarray:
    """Symmetric rank-distance weights with zero diagonal.

    linear: |i - j| / (M - 1); absolute: |i - j|; squared: (|i - j| / (M - 1))^2.
    """
    if num_ranks < 2:
        raise LossError("need at least two ranks for distance weights")
    idx = np.arange(num_ranks, dtype=np.float64)
    dist = np.abs(idx[:, None] - idx[None, :])
    if form == "linear":
        return dist / (num_ranks - 1)
    if form == "absolute":
        return dist
    if form == "squared":
        return (dist / (num_ranks - 1)) ** 2
    raise ConfigError(f"unknown weight_form {form!r}")


def softmax_probs(v: np.ndarray, r: np.ndarray, tau: float) -> np.ndarray:
    """Row-stochastic class probabilities from feature similarities."""
    if tau <= 0:
        raise LossError("tau must be positive")
    logits = (v @ r.T) / tau
    if not np.isfinite(logits).all():
        raise NonFiniteError("non-finite similarity logits")
    logits = logits - logits.max(axis=1, keepdims=True)
    p = np.exp(logits)
    p /= p.sum(axis=1, keepdims=True)
    return p


def cross_entropy(p: np.ndarray, labels: np.ndarray, eps: float = 1e-6) -> float:
    """Mean negative log-probability of the true rank."""
    labels = np.asarray(labels)
    py = p[np.arange(p.shape[0]), labels]
    if not np.isfinite(py).all() or np.any(py < 0):
        raise LossError("invalid probabilities for cross-entropy")
    return float(-np.mean(np.log(np.maximum(py, eps))))


def ce_softmax_grad(batch: EncodedBatch, tau: float, eps: float = 1e-6):
    """Cross-entropy of softmax similarities; value plus dv, dr."""
    v, r, labels = batch.v, batch.r, batch.labels
    b = v.shape[0]
    p = softmax_probs(v, r, tau)
    py = p[np.arange(b), labels]
    value = float(-np.mean(np.log(np.maximum(py, eps))))
    d_logits = p.copy()
    d_logits[np.arange(b), labels] -= 1.0
    d_logits[py < eps] = 0.0  # clamped rows contribute a constant
    d_logits /= b * tau
    return value, d_logits @ r, d_logits.T @ v


def asym_contrastive_t2i(batch: EncodedBatch, tau: float) -> float:
    return _t2i(batch, tau, want_grad=False)[0]


def asym_contrastive_t2i_grad(batch: EncodedBatch, tau: float):
    return _t2i(batch, tau, want_grad=True)


def _t2i(batch: EncodedBatch, tau: float, want_grad: bool):
    """Text-anchored contrastive loss where every same-rank image is a positive.

    For each rank c present in the batch, the positives are all images of
    that rank and the denominator runs over the whole batch column
    s[:, c] / tau. Anchors sharing a rank share a term, so the batch mean
    groups by distinct label.
    """
    v, r, labels = batch.v, batch.r, batch.labels
    b = v.shape[0]
    if b < 1:
        raise LossError("empty batch")
    s = v @ r.T
    total = 0.0
    d_s = np.zeros_like(s) if want_grad else None
    for c in np.unique(labels):
        members = labels == c
        u = s[:, c] / tau
        lse = logsumexp(u)
        total -= float((u[members] - lse).sum())
        if want_grad:
            q = np.exp(u - lse)
            d_s[:, c] = (members.sum() * q - members.astype(np.float64)) / (b * tau)
    value = total / b
    if not want_grad:
        return (value,)
    return value, d_s @ r, d_s.T @ v


def asym_contrastive_i2t(batch: EncodedBatch, tau: float, denominator: str = "all") -> float:
    return _i2t(batch, tau, denominator, want_grad=False)[0]


def asym_contrastive_i2t_grad(batch: EncodedBatch, tau: float, denominator: str = "all"):
    return _i2t(batch, tau, denominator, want_grad=True)


def _i2t(batch: EncodedBatch, tau: float, denominator: str, want_grad: bool):
    """Image-anchored contrastive loss against rank texts.

    "all" normalizes each image over all M rank texts (classification
    style); "batch" normalizes over the batch's label texts, counting
    duplicated ranks as often as they occur.
    """
    v, r, labels = batch.v, batch.r, batch.labels
    b, m = v.shape[0], r.shape[0]
    if b < 1:
        raise LossError("empty batch")
    if denominator == "all":
        s = (v @ r.T) / tau
        lse = logsumexp(s, axis=1)
        pos = s[np.arange(b), labels]
        value = float(np.mean(lse - pos))
        if not want_grad:
            return (value,)
        q = np.exp(s - lse[:, None])
        q[np.arange(b), labels] -= 1.0
        q /= b * tau
        return value, q @ r, q.T @ v
    if denominator != "batch":
        raise ConfigError(f"unknown i2t denominator {denominator!r}")
    t = r[labels]
    u = (v @ t.T) / tau  # u[i, j] = sim(v_i, text of sample j's rank)
    lse = logsumexp(u, axis=1)
    pos = (v * t).sum(axis=1) / tau
    value = float(np.mean(lse - pos))
    if not want_grad:
        return (value,)
    q = np.exp(u - lse[:, None]) / (b * tau)
    d_s = np.zeros((b, m))
    np.add.at(d_s.T, labels, q.T)  # fold batch columns back onto rank columns
    d_s[np.arange(b), labels] -= 1.0 / (b * tau)
    return value, d_s @ r, d_s.T @ v


class PceTerms(NamedTuple):
    tightness: float
    diversity: float
    total: float


def pce_reference(
    z: np.ndarray,
    labels: np.ndarray,
    lam: float = 1.0,
    p: np.ndarray | None = None,
    n_classes: int | None = None,
) -> PceTerms:
    """Pairwise bound decomposition of cross-entropy on one embedding set.

    Attraction sums same-class dot products (self pairs included); the
    spread term combines a soft log-partition with the norms of the soft
    class means c_k = sum_i p_ik z_i. Analysis/oracle use only, not trained.
    """
    z = np.asarray(z, dtype=np.float64)
    labels = np.asarray(labels)
    n = z.shape[0]
    if n < 2:
        raise LossError("pce_reference needs at least two samples")
    if lam <= 0:
        raise LossError("lam must be positive")
    k = int(n_classes) if n_classes is not None else int(labels.max()) + 1
    if p is None:
        means = np.empty((k, z.shape[1]))
        for c in range(k):
            rows = z[labels == c]
            if rows.shape[0] == 0:
                raise LossError(f"class {c} has no samples; pass p or n_classes explicitly")
            means[c] = rows.mean(axis=0)
        logits = z @ means.T
        logits = logits - logits.max(axis=1, keepdims=True)
        p = np.exp(logits)
        p /= p.sum(axis=1, keepdims=True)
    p = np.asarray(p, dtype=np.float64)
    if p.shape != (n, k):
        raise LossError(f"p must have shape {(n, k)}, got {p.shape}")

    gram = z @ z.T
    same = labels[:, None] == labels[None, :]
    tightness = float(-gram[same].sum() / (2.0 * lam * n * n))

    inner = (gram @ p) / (lam * n)  # inner[i, k] = sum_j p_jk z_i.z_j / (lam N)
    log_part = float(logsumexp(inner, axis=1).mean())
    soft_means = p.T @ z
    norm_term = float(np.linalg.norm(soft_means, axis=1).sum() / (2.0 * lam))
    diversity = log_part - norm_term
    return PceTerms(tightness, diversity, tightness + diversity)


def cpce_tightness(batch: EncodedBatch) -> float:
    return _tightness(batch, want_grad=False)[0]


def cpce_tightness_grad(batch: EncodedBatch):
    return _tightness(batch, want_grad=True)


def _tightness(batch: EncodedBatch, want_grad: bool):
    """Mean attraction between each image and its own rank text, negated."""
    v, r, labels = batch.v, batch.r, batch.labels
    b = v.shape[0]
    if b < 1:
        raise LossError("empty batch")
    t = r[labels]
    value = float(-(v * t).sum() / b)
    if not want_grad:
        return (value,)
    dv = -t / b
    dr = np.zeros_like(r)
    np.add.at(dr, labels, -v / b)
    return value, dv, dr


def cpce_diversity(batch: EncodedBatch, d_feat: int | None = None, eps_log: float = 1e-6) -> float:
    return _diversity(batch, d_feat, eps_log, want_grad=False)[0]


def cpce_diversity_grad(batch: EncodedBatch, d_feat: int | None = None, eps_log: float = 1e-6):
    return _diversity(batch, d_feat, eps_log, want_grad=True)


def _diversity(batch: EncodedBatch, d_feat: int | None, eps_log: float, want_grad: bool):
    """Pairwise log-spread estimate over cross-modal and text-text products.

    Argument of each log is v_i.t_j + t_i.t_j for i != j, floored at
    eps_log (cosine sums can be non-positive); floored pairs contribute a
    constant and no gradient.
    """
    v, r, labels = batch.v, batch.r, batch.labels
    b = v.shape[0]
    if b < 2:
        raise LossError("diversity needs at least two samples")
    d = int(d_feat) if d_feat is not None else v.shape[1]
    t = r[labels]
    args = v @ t.T + t @ t.T
    off = ~np.eye(b, dtype=bool)
    clamped = np.maximum(args, eps_log)
    scale = d / (b * (b - 1))
    value = float(scale * np.log(clamped[off]).sum())
    if not want_grad:
        return (value,)
    g = np.where(off & (args > eps_log), scale / clamped, 0.0)
    dv = g @ t
    dt = g.T @ (v + t) + g @ t
    dr = np.zeros_like(r)
    np.add.at(dr, labels, dt)
    return value, dv, dr


def cop_loss(batch: EncodedBatch, cfg: LossConfig) -> float:
    return _cop(batch, cfg.gamma, cfg.weight_form, want_grad=False)[0]


def cop_loss_grad(batch: EncodedBatch, cfg: LossConfig):
    """Returns (value, dv, dr, dgamma)."""
    return _cop(batch, cfg.gamma, cfg.weight_form, want_grad=True)


def _cop(batch: EncodedBatch, gamma: float, weight_form: str, want_grad: bool):
    """Ordinal pairwise objective: repel rank texts of other samples in
    proportion to label distance while attracting the anchor's own text.

    Per anchor i: (1/(B-1)) sum_{j != i} w[y_i, y_j] (v_i + gamma t_i).t_j
    - v_i.t_i, averaged over the batch; the pairwise sum is empty at B = 1.
    """
    v, r, labels = batch.v, batch.r, batch.labels
    b, m = v.shape[0], r.shape[0]
    if b < 1:
        raise LossError("empty batch")
    t = r[labels]
    attract = float(-(v * t).sum() / b)
    if b == 1:
        value = attract
        if not want_grad:
            return (value,)
        dv = -t / b
        dr = np.zeros_like(r)
        np.add.at(dr, labels, -v / b)
        return value, dv, dr, 0.0

    w = label_distance_weights(m, weight_form)
    pair = w[labels[:, None], labels[None, :]] / (b * (b - 1))
    np.fill_diagonal(pair, 0.0)
    q = v + gamma * t
    value = float((pair * (q @ t.T)).sum()) + attract
    if not want_grad:
        return (value,)

    pt = pair @ t
    dv = pt - t / b
    dt = pair.T @ q + gamma * pt - v / b
    dr = np.zeros_like(r)
    np.add.at(dr, labels, dt)
    dgamma = float((pair * (t @ t.T)).sum())
    return value, dv, dr, dgamma


def scop_loss(batch: EncodedBatch, cfg: LossConfig) -> float:
    """Simplified ordinal pairwise loss: gamma pinned to zero, text frozen."""
    return _cop(batch, 0.0, cfg.weight_form, want_grad=False)[0]


def scop_loss_grad(batch: EncodedBatch, cfg: LossConfig):
    """Returns (value, dv). Text features are constants here: dr is zero by
    contract, so none is produced."""
    parts = _cop(batch, 0.0, cfg.weight_form, want_grad=True)
    return parts[0], parts[1]


def stage_loss(stage: int, batch: EncodedBatch, cfg: LossConfig, probs: np.ndarray | None = None):
    """Weighted objective for one training stage plus per-term breakdown."""
    total, breakdown, _, _ = stage_loss_grad(stage, batch, cfg, probs=probs, want_grad=False)
    return total, breakdown


def stage_loss_grad(
    stage: int,
    batch: EncodedBatch,
    cfg: LossConfig,
    probs: np.ndarray | None = None,
    want_grad: bool = True,
):
    """Stage objective with gradients: returns (total, breakdown, dv, dr)."""
    v, r = batch.v, batch.r
    dv = np.zeros_like(v) if want_grad else None
    dr = np.zeros_like(r) if want_grad else None
    breakdown: dict[str, float] = {}

    if stage == 1:
        a_t2i, a_i2t, b_cop = cfg.stage1_weights
        if want_grad:
            l_t2i, g_v, g_r = asym_contrastive_t2i_grad(batch, cfg.tau)
            dv += a_t2i * g_v
            dr += a_t2i * g_r
            l_i2t, g_v, g_r = asym_contrastive_i2t_grad(batch, cfg.tau, cfg.i2t_denominator)
            dv += a_i2t * g_v
            dr += a_i2t * g_r
            l_cop, g_v, g_r, _ = cop_loss_grad(batch, cfg)
            dv += b_cop * g_v
            dr += b_cop * g_r
        else:
            l_t2i = asym_contrastive_t2i(batch, cfg.tau)
            l_i2t = asym_contrastive_i2t(batch, cfg.tau, cfg.i2t_denominator)
            l_cop = cop_loss(batch, cfg)
        breakdown = {"t2i": l_t2i, "i2t": l_i2t, "cop": l_cop}
        total = a_t2i * l_t2i + a_i2t * l_i2t + b_cop * l_cop
    elif stage == 2:
        c_ce, c_scop = cfg.stage2_weights
        if want_grad:
            l_ce, g_v, g_r = ce_softmax_grad(batch, cfg.tau, cfg.eps_log)
            dv += c_ce * g_v
            dr += c_ce * g_r
            l_scop, g_v = scop_loss_grad(batch, cfg)
            dv += c_scop * g_v
        else:
            if probs is None:
                probs = softmax_probs(v, r, cfg.tau)
            l_ce = cross_entropy(probs, batch.labels, cfg.eps_log)
            l_scop = scop_loss(batch, cfg)
        breakdown = {"ce": l_ce, "scop": l_scop}
        total = c_ce * l_ce + c_scop * l_scop
    else:
        raise ConfigError(f"stage must be 1 or 2, got {stage}")

    breakdown["total"] = total
    return total, breakdown, dv, dr
