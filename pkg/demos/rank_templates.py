"""
Rank templates and learnable context
====================================

A rank template is an ordinary prompt with a rank-valued slot. Filling the
slot once per rank gives M sentences whose encoded features later act as
the classifier weights, one per rank.
"""

import numpy as np

from ordino.prompts import (
    RankPromptBank,
    TaskSpec,
    assemble_prompts,
    build_templates,
    split_tokens,
)

# A task is one slotted template plus the ordered labels that fill it.
task = TaskSpec(
    template="a photo of a {} year old face.",
    label_names=("1", "5", "10", "25", "50", "75"),
    rank_labels=(1, 5, 10, 25, 50, 75),
)

tset = build_templates(task)
print("filled templates:")
for line in tset.templates:
    print("  ", line)

# The toy tokenizer splits on whitespace and then emits each digit as its
# own token, so "25" becomes ("2", "5"). That makes labels ragged; the
# builder pads every label to the widest one so the rank-token block is a
# rectangle and the span below is the same for every row.
print("\ntokens of '25 year':", split_tokens("25 year"))
start, width = tset.rank_token_span
print(f"rank token span: start={start} width={width} (seq_len={tset.seq_len})")
print("token id matrix:\n", tset.token_ids)

# A bank bundles the template set with a seeded embedding table and the
# L learnable context vectors shared by all ranks.
bank = RankPromptBank.build(task, d_embed=16, n_context=4, seed=0)
print("\nrank embeddings:", bank.rank_embeddings.shape, "(M, width, d)")
print("context:", bank.context.values.shape, "(L, d)")

# assemble_prompts produces the full prompt tensor that the text encoder
# consumes: context vectors prepended, rank tokens spliced into the span.
seqs = assemble_prompts(bank.context, bank.rank_embeddings, bank.template_set, bank.table)
print("assembled prompts:", seqs.shape, "(M, L + seq_len, d)")

# Refined rank tokens (from the attention block) drop into the same slot;
# nothing outside the span changes.
refined = bank.rank_embeddings + 0.1
seqs2 = assemble_prompts(bank.context, refined, bank.template_set, bank.table)
delta = np.abs(seqs2 - seqs).sum(axis=2)
print("positions touched by refinement (row 0):", np.flatnonzero(delta[0]).tolist())
