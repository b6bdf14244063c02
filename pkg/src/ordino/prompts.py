"""Rank templates, tokenization, context prompts, and prompt assembly.

A task is described by a template string with a single ``{...}`` slot plus an
ordered list of label names. Filling the slot yields M concrete rank
templates. Templates are tokenized to a fixed length, the tokens occupied by
the rank label (padded to a common width n) are tracked as the rank-token
span, and everything is mapped into a word-embedding table so the refinement
block and the text encoder can operate on dense arrays.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ShapeError, TemplateError, UnknownTokenError

PAD_TOKEN = "<pad>"

_SLOT_RE = re.compile(r"\{[^{}]*\}")


def split_tokens(text: str) -> list[str]:
    """Whitespace/greedy-digit tokenization.

    Pieces are split on whitespace; inside a piece, maximal digit runs are
    emitted one token per digit and non-digit runs become a single lowercase
    token. "A photo of 30 years" -> [a, photo, of, 3, 0, years].
    """
    tokens: list[str] = []
    for piece in text.split():
        i = 0
        while i < len(piece):
            if piece[i].isdigit():
                tokens.append(piece[i])
                i += 1
            else:
                j = i
                while j < len(piece) and not piece[j].isdigit():
                    j += 1
                tokens.append(piece[i:j].lower())
                i = j
    return tokens


class ToyTokenizer:
    """Fixed-vocabulary tokenizer for desk-scale runs.

    Vocabulary id 0 is reserved for the pad token. Real-backbone adapters
    supply their own object with the same ``encode``/``pad_id`` surface.
    """

    def __init__(self, vocab: Sequence[str]):
        if not vocab or vocab[0] != PAD_TOKEN:
            vocab = [PAD_TOKEN] + [t for t in vocab if t != PAD_TOKEN]
        self.vocab = list(vocab)
        self._ids = {tok: i for i, tok in enumerate(self.vocab)}

    @classmethod
    def from_texts(cls, texts: Sequence[str]) -> "ToyTokenizer":
        seen = set()
        for text in texts:
            seen.update(split_tokens(text))
        return cls([PAD_TOKEN] + sorted(seen))

    @property
    def pad_id(self) -> int:
        return 0

    @property
    def vocab_size(self) -> int:
        return len(self.vocab)

    def encode(self, text: str) -> list[int]:
        ids = []
        for tok in split_tokens(text):
            if tok not in self._ids:
                raise UnknownTokenError(f"token {tok!r} not in vocabulary")
            ids.append(self._ids[tok])
        return ids


@dataclass(frozen=True)
class TaskSpec:
    """Ordinal task descriptor: one slotted template plus ordered labels."""

    template: str
    label_names: tuple[str, ...]
    rank_labels: tuple[int, ...]

    def __post_init__(self):
        if len(self.label_names) != len(self.rank_labels):
            raise TemplateError("label_names and rank_labels must have equal length")
        if any(b <= a for a, b in zip(self.rank_labels, self.rank_labels[1:])):
            raise TemplateError("rank_labels must be strictly increasing")

    @property
    def num_ranks(self) -> int:
        return len(self.label_names)

    @classmethod
    def from_dict(cls, d: dict) -> "TaskSpec":
        from .config import check_keys

        check_keys(d, {"template", "label_names", "rank_labels"}, "task")
        return cls(
            template=d["template"],
            label_names=tuple(str(x) for x in d["label_names"]),
            rank_labels=tuple(int(x) for x in d["rank_labels"]),
        )

    def to_dict(self) -> dict:
        return {
            "template": self.template,
            "label_names": list(self.label_names),
            "rank_labels": list(self.rank_labels),
        }


@dataclass(frozen=True)
class RankTemplateSet:
    """M concrete templates with aligned tokenization.

    token_ids has shape (M, T); every row has the same length and the same
    (start, n) rank-token span. Rank labels shorter than n are padded with
    the reserved pad token inside the span.
    """

    templates: tuple[str, ...]
    rank_labels: tuple[int, ...]
    token_ids: np.ndarray
    rank_token_span: tuple[int, int]

    def __post_init__(self):
        m, t = self.token_ids.shape
        start, n = self.rank_token_span
        if m != len(self.templates) or m != len(self.rank_labels):
            raise TemplateError("token_ids rows must match template count")
        if n < 1 or start < 0 or start + n > t:
            raise TemplateError(f"rank token span {self.rank_token_span} outside sequence of length {t}")

    @property
    def num_ranks(self) -> int:
        return len(self.templates)

    @property
    def rank_token_width(self) -> int:
        return self.rank_token_span[1]

    @property
    def seq_len(self) -> int:
        return self.token_ids.shape[1]

    def to_text(self) -> str:
        start, n = self.rank_token_span
        lines = [f"M={self.num_ranks} n={n} span_start={start}"]
        lines.extend(self.templates)
        return "\n".join(lines) + "\n"

    def write_text(self, path: str | Path) -> None:
        Path(path).write_text(self.to_text())


def build_templates(task: TaskSpec, tokenizer=None, n_max: int = 8) -> RankTemplateSet:
    """Fill the task's slot with each label and tokenize to a common layout.

    The template must contain exactly one ``{...}`` slot. Rank labels are
    padded to the widest label's token count so the rank-token block is
    rectangular; a label tokenizing to more than n_max tokens is an error.
    """
    slots = _SLOT_RE.findall(task.template)
    if len(slots) != 1:
        raise TemplateError(
            f"template must contain exactly one rank slot, found {len(slots)}: {task.template!r}"
        )
    if task.num_ranks < 2:
        raise TemplateError("need at least two ranks")
    if tokenizer is None:
        tokenizer = tokenizer_for_task(task)

    prefix, suffix = _SLOT_RE.split(task.template, maxsplit=1)
    prefix_ids = tokenizer.encode(prefix)
    suffix_ids = tokenizer.encode(suffix)

    label_ids = []
    for name in task.label_names:
        ids = tokenizer.encode(name)
        if not ids:
            raise TemplateError(f"label {name!r} tokenizes to nothing")
        if len(ids) > n_max:
            raise TemplateError(f"label {name!r} tokenizes to {len(ids)} tokens, above n_max={n_max}")
        label_ids.append(ids)
    n = max(len(ids) for ids in label_ids)

    rows = []
    templates = []
    for name, ids in zip(task.label_names, label_ids):
        padded = ids + [tokenizer.pad_id] * (n - len(ids))
        rows.append(prefix_ids + padded + suffix_ids)
        templates.append(task.template.replace(slots[0], name, 1))

    return RankTemplateSet(
        templates=tuple(templates),
        rank_labels=tuple(task.rank_labels),
        token_ids=np.asarray(rows, dtype=np.int64),
        rank_token_span=(len(prefix_ids), n),
    )


def tokenizer_for_task(task: TaskSpec) -> ToyTokenizer:
    """Toy tokenizer whose vocabulary covers the task's template and labels."""
    scaffold = _SLOT_RE.sub(" ", task.template)
    return ToyTokenizer.from_texts([scaffold, *task.label_names])


def embedding_table(vocab_size: int, d_embed: int, seed) -> np.ndarray:
    """Seeded word-embedding lookup table, rows ~ N(0, 1/d_embed)."""
    rng = np.random.default_rng(seed)
    return rng.normal(0.0, 1.0 / np.sqrt(d_embed), size=(vocab_size, d_embed))


def _lookup(ids: np.ndarray, table: np.ndarray) -> np.ndarray:
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise UnknownTokenError(
            f"token id outside embedding table of size {table.shape[0]}"
        )
    return table[ids]


def embed_rank_tokens(tset: RankTemplateSet, table: np.ndarray) -> np.ndarray:
    """Rank-token embeddings, shape (M, n, d_embed); padded slots get the pad row."""
    start, n = tset.rank_token_span
    return _lookup(tset.token_ids[:, start : start + n], table)


def embed_tokens(tset: RankTemplateSet, table: np.ndarray) -> np.ndarray:
    """Full template embeddings, shape (M, T, d_embed)."""
    return _lookup(tset.token_ids, table)


@dataclass
class ContextPrompts:
    """L learnable prompt vectors shared across ranks (may be empty)."""

    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ShapeError("context prompts must be (L, d_embed)")
        if not np.isfinite(self.values).all():
            raise ShapeError("context prompts must be finite")

    @property
    def count(self) -> int:
        return self.values.shape[0]


def init_context_prompts(n_context: int, d_embed: int, seed, std: float = 0.02) -> ContextPrompts:
    rng = np.random.default_rng(seed)
    return ContextPrompts(rng.normal(0.0, std, size=(n_context, d_embed)))


def assemble_prompts(
    context: ContextPrompts | np.ndarray,
    refined: np.ndarray,
    tset: RankTemplateSet,
    table: np.ndarray,
) -> np.ndarray:
    """Per-rank prompt sequences: [context | template with refined rank tokens].

    Returns (M, L + T, d_embed). The scaffold (non-rank) positions come
    straight from the embedding table; only the rank-token span is replaced
    by ``refined``, so passing the original rank embeddings reproduces the
    plain template embedding exactly.
    """
    ctx = context.values if isinstance(context, ContextPrompts) else np.asarray(context)
    m, t = tset.token_ids.shape
    start, n = tset.rank_token_span
    if refined.shape != (m, n, table.shape[1]):
        raise ShapeError(f"refined rank tokens must be {(m, n, table.shape[1])}, got {refined.shape}")
    if ctx.ndim != 2 or ctx.shape[1] != table.shape[1]:
        raise ShapeError("context prompts and embedding table disagree on d_embed")

    seqs = np.empty((m, ctx.shape[0] + t, table.shape[1]), dtype=np.float64)
    seqs[:, : ctx.shape[0]] = ctx[None, :, :]
    seqs[:, ctx.shape[0] :] = embed_tokens(tset, table)
    seqs[:, ctx.shape[0] + start : ctx.shape[0] + start + n] = refined
    return seqs


def assemble_vjp(
    d_seqs: np.ndarray, tset: RankTemplateSet, n_context: int
) -> tuple[np.ndarray, np.ndarray]:
    """Backward of assemble_prompts for the trainable inputs.

    Returns (d_context, d_refined). Scaffold tokens are fixed template
    content, so their gradient is dropped.
    """
    start, n = tset.rank_token_span
    d_context = d_seqs[:, :n_context, :].sum(axis=0)
    d_refined = d_seqs[:, n_context + start : n_context + start + n, :].copy()
    return d_context, d_refined


@dataclass
class RankPromptBank:
    """Everything the text side owns: templates, table, base rank tokens, context."""

    task: TaskSpec
    tokenizer: object
    template_set: RankTemplateSet
    table: np.ndarray
    rank_embeddings: np.ndarray = field(repr=False)
    context: ContextPrompts = field(repr=False)

    @classmethod
    def build(
        cls,
        task: TaskSpec,
        d_embed: int,
        n_context: int,
        seed,
        n_max: int = 8,
        tokenizer=None,
        context_std: float = 0.02,
    ) -> "RankPromptBank":
        tok = tokenizer if tokenizer is not None else tokenizer_for_task(task)
        tset = build_templates(task, tok, n_max=n_max)
        table = embedding_table(tok.vocab_size, d_embed, seed=[_seed_int(seed), 0])
        context = init_context_prompts(n_context, d_embed, seed=[_seed_int(seed), 1], std=context_std)
        return cls(
            task=task,
            tokenizer=tok,
            template_set=tset,
            table=table,
            rank_embeddings=embed_rank_tokens(tset, table),
            context=context,
        )


def _seed_int(seed) -> int:
    if isinstance(seed, (list, tuple)):
        raise ValueError("bank seed must be a plain integer")
    return int(seed)
