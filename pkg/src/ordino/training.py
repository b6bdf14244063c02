"""Two-stage trainer, checkpointing, evaluation, and experiment sweeps.

Stage 1 learns the language side: rank-token refinement, context prompts,
and the image encoder train jointly under contrastive plus ordinal pairwise
objectives. Stage 2 freezes everything language-related, caches the rank
text features once, and fine-tunes the image encoder under cross-entropy
plus the simplified ordinal pairwise loss.

All randomness flows from the run seed through fixed per-purpose stream
tags, so identical configs give bit-identical runs.
"""

from __future__ import annotations

import csv
import itertools
import json
import logging
import os
import tempfile
from dataclasses import dataclass, replace as dc_replace

import numpy as np

from .config import TEST_SEED_OFFSET, RunConfig, TrainConfig, config_hash
from .data import (
    DatasetSpec,
    OrdinalDataset,
    distribution_shift_subsample,
    few_shot_subsample,
    generate_synthetic,
)
from .encoders import (
    EncodedBatch,
    ToyImageEncoder,
    ToyTextEncoder,
    encode_image,
    normalize,
    normalize_vjp,
)
from .errors import CheckpointError, ConfigError, DataError, DivergenceError
from .losses import stage_loss_grad
from .metrics import (
    SimilarityMatrix,
    local_ordinality_score,
    mae_accuracy,
    ordinality_score,
    predict_rank,
    save_similarity_csv,
    similarity_matrix,
)
from .optim import Adam
from .prompts import RankPromptBank, assemble_prompts, assemble_vjp
from .rankformer import RankFormerParams, init_rankformer, refine_vjp, refine_with_cache

logger = logging.getLogger("ordino.training")

CHECKPOINT_VERSION = 1

# RNG stream tags (the prompt bank claims 0 and 1 for table and context).
_STREAM_RANKFORMER = 2
_STREAM_TEXT_ENC = 3
_STREAM_IMAGE_ENC = 4
_STREAM_SHUFFLE = 5


@dataclass
class Model:
    """Everything trainable plus the fixed scaffolding, bundled."""

    cfg: RunConfig
    bank: RankPromptBank
    rf: RankFormerParams
    text_enc: ToyTextEncoder
    image_enc: ToyImageEncoder

    @property
    def num_ranks(self) -> int:
        return self.bank.template_set.num_ranks


def build_model(cfg: RunConfig, input_dim: int | None = None) -> Model:
    """Deterministically initialize a model from the run config and seed."""
    seed = cfg.train.seed
    mc = cfg.model
    if mc.backbone is not None:
        from .encoders import load_backbone_adapter

        tokenizer, text_enc, image_enc, _ = load_backbone_adapter(mc.backbone, cfg=cfg)
        bank = RankPromptBank.build(
            cfg.task, mc.d_embed, cfg.train.n_context, seed,
            n_max=mc.max_rank_tokens, tokenizer=tokenizer,
        )
        rf = init_rankformer(
            mc.d_embed, heads=mc.heads, d_ff=mc.d_ff, alpha=mc.alpha,
            seed=[seed, _STREAM_RANKFORMER],
        )
        return Model(cfg=cfg, bank=bank, rf=rf, text_enc=text_enc, image_enc=image_enc)

    bank = RankPromptBank.build(
        cfg.task, mc.d_embed, cfg.train.n_context, seed, n_max=mc.max_rank_tokens
    )
    rf = init_rankformer(
        mc.d_embed, heads=mc.heads, d_ff=mc.d_ff, alpha=mc.alpha,
        seed=[seed, _STREAM_RANKFORMER],
    )
    text_enc = ToyTextEncoder.create(
        mc.d_embed, mc.d_feat, hidden=mc.text_hidden, seed=[seed, _STREAM_TEXT_ENC]
    )
    if input_dim is None:
        input_dim = cfg.data.height * cfg.data.width * 1
    image_enc = ToyImageEncoder.create(
        input_dim, mc.d_feat, hidden=mc.image_hidden, seed=[seed, _STREAM_IMAGE_ENC]
    )
    return Model(cfg=cfg, bank=bank, rf=rf, text_enc=text_enc, image_enc=image_enc)


def compute_rank_features(model: Model, use_rankformer: bool | None = None) -> np.ndarray:
    """Current rank text features: refine (if enabled) -> assemble -> encode."""
    if use_rankformer is None:
        use_rankformer = model.cfg.train.effective_flags()[0]
    r, _ = _text_forward(model, use_rankformer)
    return r


def _text_forward(model: Model, use_rankformer: bool):
    bank = model.bank
    if use_rankformer:
        refined, rf_cache = refine_with_cache(bank.rank_embeddings, model.rf)
    else:
        refined, rf_cache = bank.rank_embeddings, None
    seqs = assemble_prompts(bank.context, refined, bank.template_set, bank.table)
    raw, txt_cache = model.text_enc.forward_with_cache(seqs)
    r = normalize(raw)
    return r, {"rf": rf_cache, "txt": txt_cache, "raw": raw}


def _text_backward(model: Model, caches: dict, d_r: np.ndarray, use_rankformer: bool):
    """Push dL/dr back to (d_context, rankformer grads or None)."""
    d_raw = normalize_vjp(caches["raw"], d_r)
    d_seqs, _ = model.text_enc.vjp(caches["txt"], d_raw)
    d_context, d_refined = assemble_vjp(
        d_seqs, model.bank.template_set, model.bank.context.count
    )
    rf_grads = None
    if use_rankformer:
        _, rf_grads = refine_vjp(caches["rf"], d_refined, model.rf)
    return d_context, rf_grads


def _iter_batches(dataset: OrdinalDataset, batch_size: int, rng: np.random.Generator):
    perm = rng.permutation(len(dataset))
    for start in range(0, perm.size, batch_size):
        idx = perm[start : start + batch_size]
        images = dataset.images[idx]
        if dataset.augment_flip:
            flips = rng.random(idx.size) < 0.5
            if flips.any():
                images[flips] = images[flips][:, :, ::-1, :]
        yield images, dataset.rank_indices[idx]


@dataclass
class Checkpoint:
    """Self-contained training state: config, all parameter arrays, and the
    cached rank text features used for evaluation."""

    stage: int
    config: dict
    seed: int
    rank_features: np.ndarray
    table: np.ndarray
    context_values: np.ndarray
    rf_arrays: dict
    rf_meta: dict
    text_arrays: dict
    image_arrays: dict
    rng_state: dict | None = None
    version: int = CHECKPOINT_VERSION

    @property
    def config_hash(self) -> str:
        return config_hash(self.config)


def checkpoint_from_model(
    model: Model,
    stage: int,
    rng_state: dict | None = None,
    use_rankformer: bool | None = None,
) -> Checkpoint:
    return Checkpoint(
        stage=stage,
        config=model.cfg.to_dict(),
        seed=model.cfg.train.seed,
        rank_features=compute_rank_features(model, use_rankformer),
        table=model.bank.table.copy(),
        context_values=model.bank.context.values.copy(),
        rf_arrays={k: v.copy() for k, v in model.rf.arrays().items()},
        rf_meta={
            "alpha": model.rf.alpha,
            "heads": model.rf.heads,
            "ln_eps": model.rf.ln_eps,
        },
        text_arrays={k: v.copy() for k, v in model.text_enc.arrays().items()},
        image_arrays={k: v.copy() for k, v in model.image_enc.arrays().items()},
        rng_state=rng_state,
    )


def save_checkpoint(ckpt: Checkpoint, path: str) -> None:
    """Atomic write: serialize to a temp file in the target directory, then
    rename over the destination."""
    meta = {
        "version": ckpt.version,
        "stage": ckpt.stage,
        "seed": ckpt.seed,
        "config": ckpt.config,
        "rf_meta": ckpt.rf_meta,
        "rng_state": ckpt.rng_state,
    }
    arrays = {
        "rank_features": ckpt.rank_features,
        "table": ckpt.table,
        "context_values": ckpt.context_values,
    }
    arrays.update({f"rf.{k}": v for k, v in ckpt.rf_arrays.items()})
    arrays.update({f"text.{k}": v for k, v in ckpt.text_arrays.items()})
    arrays.update({f"image.{k}": v for k, v in ckpt.image_arrays.items()})

    out_dir = os.path.dirname(os.path.abspath(path))
    os.makedirs(out_dir, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=out_dir, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            np.savez(fh, meta=np.array(json.dumps(meta)), **arrays)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path: str) -> Checkpoint:
    if not os.path.isfile(path):
        raise CheckpointError(f"checkpoint not found: {path}")
    try:
        with np.load(path, allow_pickle=False) as z:
            meta = json.loads(str(z["meta"]))
            arrays = {k: z[k] for k in z.files if k != "meta"}
    except (OSError, ValueError, KeyError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if meta.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"checkpoint version {meta.get('version')} unsupported "
            f"(expected {CHECKPOINT_VERSION})"
        )

    def group(prefix: str) -> dict:
        return {
            k[len(prefix):]: arrays[k] for k in arrays if k.startswith(prefix)
        }

    return Checkpoint(
        stage=int(meta["stage"]),
        config=meta["config"],
        seed=int(meta["seed"]),
        rank_features=arrays["rank_features"],
        table=arrays["table"],
        context_values=arrays["context_values"],
        rf_arrays=group("rf."),
        rf_meta=meta["rf_meta"],
        text_arrays=group("text."),
        image_arrays=group("image."),
        rng_state=meta.get("rng_state"),
    )


def model_from_checkpoint(ckpt: Checkpoint) -> Model:
    """Rebuild a model and overwrite every parameter with the stored values."""
    cfg = RunConfig.from_dict(ckpt.config)
    model = build_model(cfg, input_dim=int(ckpt.image_arrays["w1"].shape[0]))
    if model.bank.table.shape != ckpt.table.shape:
        raise CheckpointError(
            f"embedding table shape {ckpt.table.shape} does not match the "
            f"rebuilt vocabulary {model.bank.table.shape}"
        )
    model.bank.table = ckpt.table.copy()
    model.bank.rank_embeddings = _rank_embeddings(model.bank)
    model.bank.context.values = ckpt.context_values.copy()
    for name, value in ckpt.rf_arrays.items():
        setattr(model.rf, name, value.copy())
    model.rf.alpha = float(ckpt.rf_meta["alpha"])
    model.rf.heads = int(ckpt.rf_meta["heads"])
    model.rf.ln_eps = float(ckpt.rf_meta["ln_eps"])
    for name, value in ckpt.text_arrays.items():
        setattr(model.text_enc, name, value.copy())
    for name, value in ckpt.image_arrays.items():
        setattr(model.image_enc, name, value.copy())
    return model


def _rank_embeddings(bank: RankPromptBank) -> np.ndarray:
    from .prompts import embed_rank_tokens

    return embed_rank_tokens(bank.template_set, bank.table)


def initial_checkpoint(model: Model) -> Checkpoint:
    """State before any training; stage marker 0."""
    return checkpoint_from_model(model, stage=0)


def train_stage1(
    model: Model,
    dataset: OrdinalDataset,
    cfg: TrainConfig | None = None,
    log_records: list | None = None,
) -> Checkpoint:
    """First stage: align the language side. Trains the refiner (when
    enabled), the context prompts, and the image encoder; the text encoder
    stays frozen throughout."""
    cfg = cfg if cfg is not None else model.cfg.train
    if len(dataset) == 0:
        raise DataError("training dataset is empty")
    use_rankformer, use_cop, _ = cfg.effective_flags()
    loss_cfg = model.cfg.loss
    if not use_cop:
        w = loss_cfg.stage1_weights
        loss_cfg = dc_replace(loss_cfg, stage1_weights=(w[0], w[1], 0.0))

    groups = {
        "context": {"values": model.bank.context.values},
        "image": model.image_enc.arrays(),
    }
    lrs = {"context": cfg.effective_lr_context, "image": cfg.lr_visual}
    if use_rankformer:
        groups["rankformer"] = model.rf.arrays()
        lrs["rankformer"] = cfg.lr_rankformer
    opt = Adam(groups, lrs)

    rng = np.random.default_rng([cfg.seed, _STREAM_SHUFFLE, 1])
    step = 0
    for epoch in range(1, cfg.stage1_epochs + 1):
        for images, labels in _iter_batches(dataset, cfg.batch_size, rng):
            r, caches = _text_forward(model, use_rankformer)
            raw_v, img_cache = model.image_enc.forward_with_cache(images)
            v = normalize(raw_v)
            total, breakdown, dv, dr = stage_loss_grad(
                1, EncodedBatch(v=v, r=r, labels=labels), loss_cfg
            )
            if not np.isfinite(total):
                raise DivergenceError("non-finite stage-1 loss", step=step)
            d_context, rf_grads = _text_backward(model, caches, dr, use_rankformer)
            grads = {
                "image": model.image_enc.vjp(img_cache, normalize_vjp(raw_v, dv)),
                "context": {"values": d_context},
            }
            if use_rankformer:
                grads["rankformer"] = rf_grads
            opt.step(grads)
            step += 1
            record = {
                "stage": 1,
                "epoch": epoch,
                "step": step,
                "lr_rankformer": lrs.get("rankformer"),
                "lr_context": lrs["context"],
                "lr_visual": lrs["image"],
                **breakdown,
            }
            if log_records is not None:
                log_records.append(record)
            logger.debug("stage1 %s", record)
    return checkpoint_from_model(
        model, stage=1, rng_state=rng.bit_generator.state, use_rankformer=use_rankformer
    )


def train_stage2(
    ckpt: Checkpoint,
    dataset: OrdinalDataset,
    cfg: TrainConfig | None = None,
    log_records: list | None = None,
) -> Checkpoint:
    """Second stage: language side frozen. The rank features cached in the
    incoming checkpoint are reused verbatim; only the image encoder trains,
    with the learning rate decayed once at decay_epoch."""
    model = model_from_checkpoint(ckpt)
    cfg = cfg if cfg is not None else model.cfg.train
    if len(dataset) == 0:
        raise DataError("training dataset is empty")
    _, _, use_scop = cfg.effective_flags()
    loss_cfg = model.cfg.loss
    if not use_scop:
        w = loss_cfg.stage2_weights
        loss_cfg = dc_replace(loss_cfg, stage2_weights=(w[0], 0.0))

    r = ckpt.rank_features.copy()
    opt = Adam({"image": model.image_enc.arrays()}, {"image": cfg.lr_visual})
    rng = np.random.default_rng([cfg.seed, _STREAM_SHUFFLE, 2])
    step = 0
    for epoch in range(1, cfg.stage2_epochs + 1):
        if epoch == cfg.decay_epoch:
            opt.set_lr("image", cfg.lr_visual * cfg.decay_factor)
        for images, labels in _iter_batches(dataset, cfg.batch_size, rng):
            raw_v, img_cache = model.image_enc.forward_with_cache(images)
            v = normalize(raw_v)
            total, breakdown, dv, _ = stage_loss_grad(
                2, EncodedBatch(v=v, r=r, labels=labels), loss_cfg
            )
            if not np.isfinite(total):
                raise DivergenceError("non-finite stage-2 loss", step=step)
            opt.step({"image": model.image_enc.vjp(img_cache, normalize_vjp(raw_v, dv))})
            step += 1
            record = {
                "stage": 2,
                "epoch": epoch,
                "step": step,
                "lr_visual": opt.lrs["image"],
                **breakdown,
            }
            if log_records is not None:
                log_records.append(record)
            logger.debug("stage2 %s", record)

    return Checkpoint(
        stage=2,
        config=ckpt.config,
        seed=ckpt.seed,
        rank_features=ckpt.rank_features,
        table=ckpt.table,
        context_values=ckpt.context_values,
        rf_arrays=ckpt.rf_arrays,
        rf_meta=ckpt.rf_meta,
        text_arrays=ckpt.text_arrays,
        image_arrays={k: v.copy() for k, v in model.image_enc.arrays().items()},
        rng_state=rng.bit_generator.state,
    )


def _encode_dataset(model: Model, dataset: OrdinalDataset, chunk: int = 256) -> np.ndarray:
    parts = [
        encode_image(dataset.images[s : s + chunk], model.image_enc)
        for s in range(0, len(dataset), chunk)
    ]
    return np.concatenate(parts, axis=0)


def evaluate(
    ckpt: Checkpoint,
    dataset: OrdinalDataset,
    los_windows: tuple[int, ...] = (4,),
    out_dir: str | None = None,
) -> tuple[dict, SimilarityMatrix]:
    """Deterministic evaluation against the checkpoint's cached rank
    features. Returns (report, similarity matrix); with out_dir set, writes
    report.json and similarity.csv there."""
    if len(dataset) == 0:
        raise DataError("evaluation dataset is empty")
    model = model_from_checkpoint(ckpt)
    r = ckpt.rank_features
    v = _encode_dataset(model, dataset)
    pred = predict_rank(v, r)
    mae, acc = mae_accuracy(pred, dataset.rank_indices)
    sim = similarity_matrix(r)
    m = sim.num_ranks
    los = {}
    for k in los_windows:
        k_eff = min(int(k), m)
        los[str(k_eff)] = local_ordinality_score(sim, k_eff)
    report = {
        "mae": mae,
        "accuracy": acc,
        "os": ordinality_score(sim),
        "los": los,
        "config_hash": ckpt.config_hash,
        "seed": ckpt.seed,
    }
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "report.json"), "w", encoding="utf-8") as fh:
            json.dump(report, fh, indent=2, sort_keys=True)
            fh.write("\n")
        save_similarity_csv(sim, os.path.join(out_dir, "similarity.csv"))
    return report, sim


def generate_run_datasets(cfg: RunConfig) -> tuple[OrdinalDataset, OrdinalDataset]:
    """Seeded synthetic train/test pair; the test split draws from an
    offset seed so the two never share a noise stream."""
    dc = cfg.data
    seed = cfg.train.seed
    m = dc.num_ranks
    train_spec = DatasetSpec(
        num_ranks=m, label_values=dc.label_values,
        counts=(dc.train_per_class,) * m, split=(1.0, 0.0, 0.0), seed=seed,
    )
    test_spec = DatasetSpec(
        num_ranks=m, label_values=dc.label_values,
        counts=(dc.test_per_class,) * m, split=(1.0, 0.0, 0.0), seed=seed,
    )
    train = generate_synthetic(train_spec, dc.noise_sigma, seed, dc.height, dc.width)
    test = generate_synthetic(
        test_spec, dc.noise_sigma, seed + TEST_SEED_OFFSET, dc.height, dc.width
    )
    return train, test


def run_two_stage(
    cfg: RunConfig,
    train_ds: OrdinalDataset | None = None,
    test_ds: OrdinalDataset | None = None,
    out_dir: str | None = None,
    log_records: list | None = None,
) -> tuple[Checkpoint, dict]:
    """Full pipeline: build, stage 1, stage 2, evaluate."""
    if (train_ds is None) != (test_ds is None):
        raise ConfigError("pass both datasets or neither")
    if train_ds is None:
        train_ds, test_ds = generate_run_datasets(cfg)
    model = build_model(cfg, input_dim=int(np.prod(train_ds.images.shape[1:])))
    ck1 = train_stage1(model, train_ds, log_records=log_records)
    if out_dir is not None:
        save_checkpoint(ck1, os.path.join(out_dir, "stage1.npz"))
    ck2 = train_stage2(ck1, train_ds, log_records=log_records)
    if out_dir is not None:
        save_checkpoint(ck2, os.path.join(out_dir, "stage2.npz"))
    report, _ = evaluate(ck2, test_ds, out_dir=out_dir)
    return ck2, report


def _with_train_overrides(cfg: RunConfig, **train_fields) -> RunConfig:
    d = cfg.to_dict()
    d["train"].update(train_fields)
    return RunConfig.from_dict(d)


SWEEP_KINDS = ("few_shot", "shift", "ablation")


def sweep(
    kind: str,
    base_cfg: RunConfig,
    grid: dict | None = None,
    out_path: str | None = None,
) -> list[dict]:
    """One full two-stage run per grid cell; returns (and optionally writes
    as CSV) one report row per cell."""
    if kind not in SWEEP_KINDS:
        raise ConfigError(f"sweep kind must be one of {SWEEP_KINDS}")
    grid = dict(grid or {})
    seeds = list(grid.pop("seeds", [base_cfg.train.seed]))
    rows: list[dict] = []

    if kind == "few_shot":
        ks = list(grid.pop("k", [1, 2, 4, 8, 16, 32, 64]))
        _reject_extra(grid, kind)
        for k, seed in itertools.product(ks, seeds):
            cfg = _with_train_overrides(base_cfg, seed=int(seed))
            train_ds, test_ds = generate_run_datasets(cfg)
            sub = few_shot_subsample(train_ds, int(k), seed=int(seed))
            _, report = run_two_stage(cfg, sub, test_ds)
            rows.append({"kind": kind, "k": int(k), "seed": int(seed), **_flat(report)})
    elif kind == "shift":
        re_cls_list = list(grid.pop("re_cls", [2, 4]))
        re_smp_list = list(grid.pop("re_smp", [80, 90]))
        _reject_extra(grid, kind)
        for re_cls, re_smp, seed in itertools.product(re_cls_list, re_smp_list, seeds):
            cfg = _with_train_overrides(base_cfg, seed=int(seed))
            train_ds, test_ds = generate_run_datasets(cfg)
            sub = distribution_shift_subsample(train_ds, int(re_cls), float(re_smp), seed=int(seed))
            _, report = run_two_stage(cfg, sub, test_ds)
            rows.append(
                {
                    "kind": kind,
                    "re_cls": int(re_cls),
                    "re_smp": float(re_smp),
                    "seed": int(seed),
                    **_flat(report),
                }
            )
    else:
        combos = list(
            grid.pop("flags", list(itertools.product((False, True), repeat=3)))
        )
        _reject_extra(grid, kind)
        for (use_rf, use_cop, use_scop), seed in itertools.product(combos, seeds):
            cfg = _with_train_overrides(
                base_cfg,
                seed=int(seed),
                use_rankformer=bool(use_rf),
                use_cop=bool(use_cop),
                use_scop=bool(use_scop),
                baseline_coop_mode=False,
            )
            _, report = run_two_stage(cfg)
            rows.append(
                {
                    "kind": kind,
                    "use_rankformer": bool(use_rf),
                    "use_cop": bool(use_cop),
                    "use_scop": bool(use_scop),
                    "seed": int(seed),
                    **_flat(report),
                }
            )

    if out_path is not None:
        _write_rows(rows, out_path)
    return rows


def _reject_extra(grid: dict, kind: str) -> None:
    if grid:
        raise ConfigError(f"unknown {kind} sweep grid keys: {sorted(grid)}")


def _flat(report: dict) -> dict:
    row = {k: v for k, v in report.items() if k != "los"}
    for w, value in report["los"].items():
        row[f"los_{w}"] = value
    return row


def _write_rows(rows: list[dict], path: str) -> None:
    if not rows:
        raise DataError("no sweep rows to write")
    out_dir = os.path.dirname(os.path.abspath(path))
    os.makedirs(out_dir, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)
