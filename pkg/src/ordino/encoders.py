"""Text/image encoders producing unit-normalized features.

Encoder contract (duck-typed so real pretrained backbones can slot in):

* ``encode(x) -> features``: batched, (B, ...) -> (B, d_feat), raw
  (un-normalized) outputs;
* ``trainable``: bool, whether the trainer may update its parameters;
* trainable encoders additionally expose ``arrays()`` (name -> parameter),
  ``forward_with_cache(x)`` and ``vjp(cache, d_out)``.

The toy encoders here are small deterministic MLPs meant for desk-scale
runs. A real backbone is loaded through :func:`load_backbone_adapter` and
must supply ``(tokenizer, text_encoder, image_encoder, d_feat)``.
"""

from __future__ import annotations

import importlib
from dataclasses import dataclass

import numpy as np

from .errors import BackboneUnavailableError, LossError, NonFiniteError, ShapeError, ZeroFeatureError

NORM_EPS = 1e-10


def normalize(x: np.ndarray, eps: float = NORM_EPS) -> np.ndarray:
    """Scale a vector (or each row of a matrix) to unit Euclidean norm."""
    x = np.asarray(x, dtype=np.float64)
    norms = np.linalg.norm(x, axis=-1, keepdims=True)
    if np.any(norms <= eps):
        raise ZeroFeatureError(f"cannot normalize a near-zero feature (|x| <= {eps})")
    return x / norms


def normalize_vjp(x_raw: np.ndarray, d_unit: np.ndarray) -> np.ndarray:
    """Backward of row-wise normalize: project out the radial component."""
    norms = np.linalg.norm(x_raw, axis=-1, keepdims=True)
    unit = x_raw / norms
    return (d_unit - unit * (unit * d_unit).sum(axis=-1, keepdims=True)) / norms


def _mlp_init(rng: np.random.Generator, n_in: int, n_out: int):
    w = rng.normal(0.0, 1.0 / np.sqrt(n_in), size=(n_in, n_out))
    b = rng.normal(0.0, 0.01, size=n_out)
    return w, b


@dataclass
class ToyTextEncoder:
    """Mean-pool over tokens, one hidden affine + tanh, project to d_feat."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    trainable: bool = False

    @classmethod
    def create(cls, d_embed: int, d_feat: int, hidden: int = 64, seed=0, trainable: bool = False):
        rng = np.random.default_rng(seed)
        w1, b1 = _mlp_init(rng, d_embed, hidden)
        w2, b2 = _mlp_init(rng, hidden, d_feat)
        return cls(w1, b1, w2, b2, trainable)

    def arrays(self) -> dict[str, np.ndarray]:
        return {"w1": self.w1, "b1": self.b1, "w2": self.w2, "b2": self.b2}

    def encode(self, seqs: np.ndarray) -> np.ndarray:
        return self.forward_with_cache(seqs)[0]

    def forward_with_cache(self, seqs: np.ndarray):
        seqs = np.asarray(seqs, dtype=np.float64)
        if seqs.ndim != 3 or seqs.shape[2] != self.w1.shape[0]:
            raise ShapeError(f"expected (B, T, {self.w1.shape[0]}) sequences, got {seqs.shape}")
        pooled = seqs.mean(axis=1)
        hid = np.tanh(pooled @ self.w1 + self.b1)
        out = hid @ self.w2 + self.b2
        return out, {"seq_len": seqs.shape[1], "pooled": pooled, "hid": hid}

    def vjp(self, cache: dict, d_out: np.ndarray):
        """Returns (d_seqs, param_grads); param_grads is None when frozen."""
        hid, pooled = cache["hid"], cache["pooled"]
        d_hid = d_out @ self.w2.T
        d_pre = d_hid * (1.0 - hid * hid)
        d_pooled = d_pre @ self.w1.T
        t = cache["seq_len"]
        d_seqs = np.broadcast_to(d_pooled[:, None, :] / t, (d_pooled.shape[0], t, d_pooled.shape[1])).copy()
        if not self.trainable:
            return d_seqs, None
        grads = {
            "w1": pooled.T @ d_pre,
            "b1": d_pre.sum(axis=0),
            "w2": hid.T @ d_out,
            "b2": d_out.sum(axis=0),
        }
        return d_seqs, grads


@dataclass
class ToyImageEncoder:
    """Flatten, two affine layers with tanh in between, output d_feat."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    trainable: bool = True

    @classmethod
    def create(cls, input_dim: int, d_feat: int, hidden: int = 128, seed=0, trainable: bool = True):
        rng = np.random.default_rng(seed)
        w1, b1 = _mlp_init(rng, input_dim, hidden)
        w2, b2 = _mlp_init(rng, hidden, d_feat)
        return cls(w1, b1, w2, b2, trainable)

    def arrays(self) -> dict[str, np.ndarray]:
        return {"w1": self.w1, "b1": self.b1, "w2": self.w2, "b2": self.b2}

    def encode(self, images: np.ndarray) -> np.ndarray:
        return self.forward_with_cache(images)[0]

    def forward_with_cache(self, images: np.ndarray):
        images = np.asarray(images, dtype=np.float64)
        flat = images.reshape(images.shape[0], -1)
        if flat.shape[1] != self.w1.shape[0]:
            raise ShapeError(f"flattened image size {flat.shape[1]} != encoder input {self.w1.shape[0]}")
        hid = np.tanh(flat @ self.w1 + self.b1)
        out = hid @ self.w2 + self.b2
        return out, {"flat": flat, "hid": hid}

    def vjp(self, cache: dict, d_out: np.ndarray):
        hid, flat = cache["hid"], cache["flat"]
        d_hid = d_out @ self.w2.T
        d_pre = d_hid * (1.0 - hid * hid)
        if not self.trainable:
            return None
        return {
            "w1": flat.T @ d_pre,
            "b1": d_pre.sum(axis=0),
            "w2": hid.T @ d_out,
            "b2": d_out.sum(axis=0),
        }


def encode_text(prompt_seqs: np.ndarray, enc) -> np.ndarray:
    """Unit-normalized rank text features, one row per prompt sequence."""
    raw = enc.encode(prompt_seqs)
    if not np.isfinite(raw).all():
        raise NonFiniteError("text encoder produced non-finite features")
    return normalize(raw)


def encode_image(images: np.ndarray, enc) -> np.ndarray:
    """Unit-normalized image features, one row per image."""
    raw = enc.encode(images)
    if not np.isfinite(raw).all():
        raise NonFiniteError("image encoder produced non-finite features")
    return normalize(raw)


@dataclass
class EncodedBatch:
    """Aligned features for one batch: image rows v, rank text rows r, labels.

    ``check()`` enforces the contract (unit rows, labels in range); encode
    paths call it once per batch, pure math on the arrays does not.
    """

    v: np.ndarray
    r: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.v = np.asarray(self.v, dtype=np.float64)
        self.r = np.asarray(self.r, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)

    @property
    def batch_size(self) -> int:
        return self.v.shape[0]

    @property
    def num_ranks(self) -> int:
        return self.r.shape[0]

    def check(self, tol: float = 1e-6) -> "EncodedBatch":
        if self.v.ndim != 2 or self.r.ndim != 2 or self.v.shape[1] != self.r.shape[1]:
            raise ShapeError("v and r must be 2-D with a common feature width")
        if self.labels.shape != (self.v.shape[0],):
            raise ShapeError("labels must align with the image rows")
        for name, arr in (("v", self.v), ("r", self.r)):
            if not np.isfinite(arr).all():
                raise NonFiniteError(f"{name} contains non-finite entries")
            norms = np.linalg.norm(arr, axis=1)
            if np.any(np.abs(norms - 1.0) > tol):
                raise LossError(f"rows of {name} must be unit-norm within {tol}")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_ranks):
            raise LossError("labels outside [0, M)")
        return self


def load_backbone_adapter(spec: str, **kwargs):
    """Load a real-backbone entry point given as "package.module:function".

    The callable must return (tokenizer, text_encoder, image_encoder, d_feat).
    """
    if ":" not in spec:
        raise BackboneUnavailableError(f"adapter spec {spec!r} must look like 'module:function'")
    mod_name, attr = spec.split(":", 1)
    try:
        module = importlib.import_module(mod_name)
        factory = getattr(module, attr)
    except (ImportError, AttributeError) as exc:
        raise BackboneUnavailableError(f"cannot load backbone adapter {spec!r}: {exc}") from exc
    result = factory(**kwargs)
    try:
        tokenizer, text_enc, image_enc, d_feat = result
    except (TypeError, ValueError) as exc:
        raise BackboneUnavailableError(
            f"adapter {spec!r} must return (tokenizer, text_encoder, image_encoder, d_feat)"
        ) from exc
    return tokenizer, text_enc, image_enc, int(d_feat)
