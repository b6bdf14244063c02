"""Command-line entry point.

Subcommands: generate-data, train, eval, ordinality, sweep, plot. Every
error surfaces as a one-line diagnostic on stderr with a nonzero exit.
Setting ORDINO_DETERMINISTIC=1 pins math-library thread pools to one
thread so repeated runs are bit-identical.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from .config import PRESETS, RunConfig
from .data import save_image_folder
from .errors import ConfigError, OrdinoError
from .metrics import (
    load_similarity_csv,
    local_ordinality_score,
    ordinality_score,
    similarity_matrix,
)
from .training import (
    evaluate,
    generate_run_datasets,
    load_checkpoint,
    run_two_stage,
    save_checkpoint,
    sweep,
    train_stage1,
    train_stage2,
)

_LIMITER = None


def _apply_determinism() -> None:
    global _LIMITER
    if os.environ.get("ORDINO_DETERMINISTIC") != "1":
        return
    try:
        from threadpoolctl import threadpool_limits

        _LIMITER = threadpool_limits(limits=1)
    except ImportError:  # fall back to env hints for not-yet-loaded pools
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ.setdefault(var, "1")


def _load_config(args) -> RunConfig:
    preset = getattr(args, "preset", "default")
    if args.config is not None:
        cfg = RunConfig.from_file(args.config, preset=preset)
    else:
        cfg = RunConfig.from_dict({}, preset=preset)
    if getattr(args, "seed", None) is not None:
        d = cfg.to_dict()
        d["train"]["seed"] = args.seed
        cfg = RunConfig.from_dict(d, preset=preset)
    return cfg


def _cmd_generate_data(args) -> int:
    cfg = _load_config(args)
    train_ds, test_ds = generate_run_datasets(cfg)
    save_image_folder(train_ds, os.path.join(args.out, "train"))
    save_image_folder(test_ds, os.path.join(args.out, "test"))
    print(f"wrote {len(train_ds)} train and {len(test_ds)} test samples to {args.out}")
    return 0


def _cmd_train(args) -> int:
    from .training import build_model  # local import keeps startup light

    cfg = _load_config(args)
    os.makedirs(args.out, exist_ok=True)
    train_ds, test_ds = generate_run_datasets(cfg)

    if args.stage == "both":
        _, report = run_two_stage(cfg, train_ds, test_ds, out_dir=args.out)
    elif args.stage == "1":
        import numpy as np

        model = build_model(cfg, input_dim=int(np.prod(train_ds.images.shape[1:])))
        ck1 = train_stage1(model, train_ds)
        save_checkpoint(ck1, os.path.join(args.out, "stage1.npz"))
        report, _ = evaluate(ck1, test_ds, out_dir=args.out)
    else:
        stage1_path = os.path.join(args.out, "stage1.npz")
        ck1 = load_checkpoint(stage1_path)
        ck2 = train_stage2(ck1, train_ds)
        save_checkpoint(ck2, os.path.join(args.out, "stage2.npz"))
        report, _ = evaluate(ck2, test_ds, out_dir=args.out)

    print(json.dumps(report, sort_keys=True))
    return 0


def _cmd_eval(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    cfg = RunConfig.from_dict(ckpt.config)
    _, test_ds = generate_run_datasets(cfg)
    report, _ = evaluate(ckpt, test_ds, out_dir=args.out)
    print(json.dumps(report, sort_keys=True))
    return 0


def _cmd_ordinality(args) -> int:
    if (args.matrix is None) == (args.checkpoint is None):
        raise ConfigError("pass exactly one of --matrix or --checkpoint")
    if args.matrix is not None:
        sim = load_similarity_csv(args.matrix)
    else:
        ckpt = load_checkpoint(args.checkpoint)
        sim = similarity_matrix(ckpt.rank_features)
    print(f"OS {ordinality_score(sim):.2f}")
    if args.window is not None:
        print(f"LOS({args.window}) {local_ordinality_score(sim, args.window):.2f}")
    return 0


def _cmd_sweep(args) -> int:
    cfg = _load_config(args)
    out_path = os.path.join(args.out, f"{args.kind}.csv")
    rows = sweep(args.kind, cfg, out_path=out_path)
    print(f"wrote {len(rows)} rows to {out_path}")
    return 0


def _cmd_plot(args) -> int:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    sim = load_similarity_csv(args.matrix)
    fig, ax = plt.subplots(figsize=(6, 5))
    im = ax.imshow(sim.values, cmap="viridis")
    ax.set_xlabel("rank")
    ax.set_ylabel("rank")
    ax.set_title("rank template similarity")
    fig.colorbar(im, ax=ax)
    fig.tight_layout()
    fig.savefig(args.out, dpi=150)
    plt.close(fig)
    print(f"wrote {args.out}")
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ordino",
        description="Ordinal classification via rank-template alignment.",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, seedable=True):
        p.add_argument("--config", default=None, help="run config JSON")
        p.add_argument("--preset", choices=PRESETS, default="default")
        if seedable:
            p.add_argument("--seed", type=int, default=None, help="override run seed")

    p = sub.add_parser("generate-data", help="write a synthetic dataset to disk")
    add_common(p)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=_cmd_generate_data)

    p = sub.add_parser("train", help="run the two-stage trainer")
    add_common(p)
    p.add_argument("--out", required=True, help="checkpoint/report directory")
    p.add_argument("--stage", choices=("1", "2", "both"), default="both")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", default=None, help="directory for report.json and similarity.csv")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("ordinality", help="ordering scores from a matrix or checkpoint")
    p.add_argument("--matrix", default=None, help="similarity CSV")
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--window", type=int, default=None, help="local score window")
    p.set_defaults(func=_cmd_ordinality)

    p = sub.add_parser("sweep", help="run an experiment grid")
    add_common(p)
    p.add_argument("--kind", choices=("few_shot", "shift", "ablation"), required=True)
    p.add_argument("--out", required=True, help="directory for the results CSV")
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("plot", help="heatmap a similarity CSV")
    p.add_argument("--matrix", required=True)
    p.add_argument("--out", required=True, help="output image path")
    p.set_defaults(func=_cmd_plot)

    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO)
    _apply_determinism()
    try:
        return args.func(args)
    except OrdinoError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
