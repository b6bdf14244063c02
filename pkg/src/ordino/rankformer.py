"""Residual-style refinement of rank-token embeddings.

A single block computes out = (1 - alpha) * R + alpha * FFN(MSA(LN(R))) on an
(M, n, d) array of rank-token embeddings. Attention runs across the M
templates independently for each of the n token positions, so information
flows between ranks while token slots stay separate; no positional encoding
is added, which makes the block permutation-equivariant along the template
axis. Forward and backward passes are written out explicitly so analytic
gradients can be checked against finite differences.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import erf

from .errors import NonFiniteError, ShapeError

_SQRT2 = np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def gelu(x: np.ndarray) -> np.ndarray:
    return 0.5 * x * (1.0 + erf(x / _SQRT2))


def gelu_grad(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + erf(x / _SQRT2)) + x * np.exp(-0.5 * x * x) * _INV_SQRT_2PI


@dataclass
class RankFormerParams:
    """Parameters of the refinement block.

    alpha is the residual blending ratio (fixed hyperparameter, not trained).
    The attention input/output width equals d_embed; d_embed must divide
    evenly into the head count.
    """

    alpha: float
    heads: int
    ln_scale: np.ndarray
    ln_shift: np.ndarray
    wq: np.ndarray
    bq: np.ndarray
    wk: np.ndarray
    bk: np.ndarray
    wv: np.ndarray
    bv: np.ndarray
    wo: np.ndarray
    bo: np.ndarray
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    ln_eps: float = 1e-5

    def __post_init__(self):
        d = self.ln_scale.shape[0]
        if not 0.0 <= self.alpha <= 1.0:
            raise ShapeError(f"alpha must lie in [0, 1], got {self.alpha}")
        if d % self.heads != 0:
            raise ShapeError(f"d_embed={d} not divisible by heads={self.heads}")
        for name, arr in self.arrays().items():
            if not np.isfinite(arr).all():
                raise NonFiniteError(f"parameter {name} contains non-finite values")

    @property
    def d_embed(self) -> int:
        return self.ln_scale.shape[0]

    def arrays(self) -> dict[str, np.ndarray]:
        return {
            "ln_scale": self.ln_scale,
            "ln_shift": self.ln_shift,
            "wq": self.wq,
            "bq": self.bq,
            "wk": self.wk,
            "bk": self.bk,
            "wv": self.wv,
            "bv": self.bv,
            "wo": self.wo,
            "bo": self.bo,
            "w1": self.w1,
            "b1": self.b1,
            "w2": self.w2,
            "b2": self.b2,
        }

    trainable = arrays


def init_rankformer(
    d_embed: int,
    heads: int = 8,
    d_ff: int | None = None,
    alpha: float = 0.1,
    seed=0,
) -> RankFormerParams:
    """Fan-in scaled init; the FFN output projection starts at zero.

    With w2 = b2 = 0 the block's first output is exactly (1 - alpha) * R, so
    training starts from a pure scaling of the original templates.
    """
    if d_ff is None:
        d_ff = 4 * d_embed
    rng = np.random.default_rng(seed)

    def fan_in(n_in, n_out):
        return rng.normal(0.0, 1.0 / np.sqrt(n_in), size=(n_in, n_out))

    return RankFormerParams(
        alpha=float(alpha),
        heads=heads,
        ln_scale=np.ones(d_embed),
        ln_shift=np.zeros(d_embed),
        wq=fan_in(d_embed, d_embed),
        bq=np.zeros(d_embed),
        wk=fan_in(d_embed, d_embed),
        bk=np.zeros(d_embed),
        wv=fan_in(d_embed, d_embed),
        bv=np.zeros(d_embed),
        wo=fan_in(d_embed, d_embed),
        bo=np.zeros(d_embed),
        w1=fan_in(d_embed, d_ff),
        b1=np.zeros(d_ff),
        w2=np.zeros((d_ff, d_embed)),
        b2=np.zeros(d_embed),
    )


def refine(r_tokens: np.ndarray, params: RankFormerParams) -> np.ndarray:
    """Refined rank-token embeddings, same (M, n, d) shape as the input."""
    out, _ = refine_with_cache(r_tokens, params)
    return out


def refine_with_cache(r_tokens: np.ndarray, params: RankFormerParams):
    r_tokens = np.asarray(r_tokens, dtype=np.float64)
    if r_tokens.ndim != 3 or r_tokens.shape[2] != params.d_embed:
        raise ShapeError(
            f"expected (M, n, {params.d_embed}) rank tokens, got {r_tokens.shape}"
        )
    if not np.isfinite(r_tokens).all():
        raise NonFiniteError("rank-token embeddings contain non-finite values")

    if params.alpha == 0.0:
        # Exact identity; transformer branch multiplied by zero anyway.
        return r_tokens.copy(), {"alpha_zero": True, "shape": r_tokens.shape}

    m, n, d = r_tokens.shape
    h = params.heads
    dh = d // h

    x = r_tokens.transpose(1, 0, 2)  # (n, M, d): one length-M sequence per token slot

    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    istd = 1.0 / np.sqrt(var + params.ln_eps)
    xhat = xc * istd
    y = params.ln_scale * xhat + params.ln_shift

    q = y @ params.wq + params.bq
    k = y @ params.wk + params.bk
    v = y @ params.wv + params.bv
    qh = q.reshape(n, m, h, dh).transpose(0, 2, 1, 3)
    kh = k.reshape(n, m, h, dh).transpose(0, 2, 1, 3)
    vh = v.reshape(n, m, h, dh).transpose(0, 2, 1, 3)

    scores = qh @ kh.swapaxes(-1, -2) / np.sqrt(dh)
    scores -= scores.max(axis=-1, keepdims=True)
    attn = np.exp(scores)
    attn /= attn.sum(axis=-1, keepdims=True)

    ctx = attn @ vh
    ctx_m = ctx.transpose(0, 2, 1, 3).reshape(n, m, d)
    msa = ctx_m @ params.wo + params.bo

    pre = msa @ params.w1 + params.b1
    act = gelu(pre)
    ffn = act @ params.w2 + params.b2

    out = (1.0 - params.alpha) * r_tokens + params.alpha * ffn.transpose(1, 0, 2)
    cache = {
        "alpha_zero": False,
        "x": r_tokens,
        "xhat": xhat,
        "istd": istd,
        "y": y,
        "qh": qh,
        "kh": kh,
        "vh": vh,
        "attn": attn,
        "ctx_m": ctx_m,
        "msa": msa,
        "pre": pre,
        "act": act,
    }
    return out, cache


def refine_vjp(cache: dict, d_out: np.ndarray, params: RankFormerParams):
    """Backward pass: gradients for the input tokens and every parameter."""
    if cache["alpha_zero"]:
        zeros = {name: np.zeros_like(arr) for name, arr in params.arrays().items()}
        return d_out.copy(), zeros

    a = params.alpha
    x = cache["x"]
    m, n, d = x.shape
    h = params.heads
    dh = d // h

    d_x_direct = (1.0 - a) * d_out
    d_ffn = a * d_out.transpose(1, 0, 2)  # (n, M, d)

    # FFN
    act = cache["act"]
    d_w2 = act.reshape(-1, act.shape[-1]).T @ d_ffn.reshape(-1, d)
    d_b2 = d_ffn.sum(axis=(0, 1))
    d_act = d_ffn @ params.w2.T
    d_pre = d_act * gelu_grad(cache["pre"])
    msa = cache["msa"]
    d_w1 = msa.reshape(-1, d).T @ d_pre.reshape(-1, d_pre.shape[-1])
    d_b1 = d_pre.sum(axis=(0, 1))
    d_msa = d_pre @ params.w1.T

    # attention output projection
    ctx_m = cache["ctx_m"]
    d_wo = ctx_m.reshape(-1, d).T @ d_msa.reshape(-1, d)
    d_bo = d_msa.sum(axis=(0, 1))
    d_ctx_m = d_msa @ params.wo.T
    d_ctx = d_ctx_m.reshape(n, m, h, dh).transpose(0, 2, 1, 3)

    # attention core
    attn, vh, qh, kh = cache["attn"], cache["vh"], cache["qh"], cache["kh"]
    d_attn = d_ctx @ vh.swapaxes(-1, -2)
    d_vh = attn.swapaxes(-1, -2) @ d_ctx
    d_scores = attn * (d_attn - (d_attn * attn).sum(axis=-1, keepdims=True))
    d_scores /= np.sqrt(dh)
    d_qh = d_scores @ kh
    d_kh = d_scores.swapaxes(-1, -2) @ qh

    def merge(t):
        return t.transpose(0, 2, 1, 3).reshape(n, m, d)

    d_q, d_k, d_v = merge(d_qh), merge(d_kh), merge(d_vh)

    y = cache["y"]
    y_flat = y.reshape(-1, d)
    d_wq = y_flat.T @ d_q.reshape(-1, d)
    d_wk = y_flat.T @ d_k.reshape(-1, d)
    d_wv = y_flat.T @ d_v.reshape(-1, d)
    d_bq = d_q.sum(axis=(0, 1))
    d_bk = d_k.sum(axis=(0, 1))
    d_bv = d_v.sum(axis=(0, 1))
    d_y = d_q @ params.wq.T + d_k @ params.wk.T + d_v @ params.wv.T

    # layer norm
    xhat, istd = cache["xhat"], cache["istd"]
    d_ln_scale = (d_y * xhat).sum(axis=(0, 1))
    d_ln_shift = d_y.sum(axis=(0, 1))
    d_xhat = d_y * params.ln_scale
    d_x_ln = istd * (
        d_xhat
        - d_xhat.mean(axis=-1, keepdims=True)
        - xhat * (d_xhat * xhat).mean(axis=-1, keepdims=True)
    )

    d_x = d_x_direct + d_x_ln.transpose(1, 0, 2)
    grads = {
        "ln_scale": d_ln_scale,
        "ln_shift": d_ln_shift,
        "wq": d_wq,
        "bq": d_bq,
        "wk": d_wk,
        "bk": d_bk,
        "wv": d_wv,
        "bv": d_bv,
        "wo": d_wo,
        "bo": d_bo,
        "w1": d_w1,
        "b1": d_b1,
        "w2": d_w2,
        "b2": d_b2,
    }
    return d_x, grads
