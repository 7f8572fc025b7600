"""Command line entry point: corpus generation, morph-wise augmentation,
post-processing, training, evaluation, and the ablation harness.

Exit codes: 0 success, 2 invalid argument, 3 I/O failure, 4 numeric failure.
Failures print a one-line JSON object to stderr.
"""

from __future__ import annotations

import argparse
import glob
import json
import os
import sys
import zlib

import numpy as np

from . import bioeval, morphkit, postops, stylemix, synthface, trainer
from .grlnet import load_checkpoint, strip_inference
from .samples import LABEL_BONAFIDE, load_png, read_manifest, write_corpus


def _child_seed(*parts) -> int:
    return int(np.random.SeedSequence(list(parts)).generate_state(1)[0])


def _row_seed(seed: int, sample_id: str) -> int:
    return _child_seed(seed, zlib.crc32(sample_id.encode()))


def augment_corpus(
    manifest_path: str,
    ops,
    out_dir: str,
    seed: int,
    style_pool_dir: str | None = None,
    split: str = "train",
    mode: str = "color_wct",
    sm_per_identity: int = 2,
) -> str:
    """Expand a corpus with self-morphs and/or style-mixed counterparts.

    The output corpus contains every input row plus the augmented rows; the
    augmented rows keep their source's split so pairing stays split-local.
    """
    for op in ops:
        if op not in ("sm", "ism"):
            raise ValueError(f"unknown augment op {op!r}; known: sm, ism")
    samples = read_manifest(manifest_path)
    chosen = [s for s in samples if s.split == split]
    out = list(samples)

    if "sm" in ops:
        by_identity: dict[int, list] = {}
        for s in chosen:
            if s.label == LABEL_BONAFIDE:
                by_identity.setdefault(s.identity_ids[0], []).append(s)
        for ident in sorted(by_identity):
            insts = sorted(by_identity[ident], key=lambda s: s.id)
            if len(insts) < 2:
                continue
            for k in range(sm_per_identity):
                rng = np.random.default_rng([seed, 0xA5, ident, k])
                p, q = rng.choice(len(insts), size=2, replace=False)
                spec = morphkit.MorphSpec(
                    alpha=0.5,
                    seed=_child_seed(seed, 0xA5, ident, k),
                    pre_augment_ops=morphkit.sample_transform_ops(rng),
                )
                morph = morphkit.self_morph(insts[int(p)], insts[int(q)], spec)
                morph.id = morph.origin = f"sm-{ident:03d}-{k:02d}"
                morph.split = split
                out.append(morph)
                chosen.append(morph)

    if "ism" in ops:
        if not style_pool_dir:
            raise ValueError("ism augmentation requires --style-pool")
        pool_paths = sorted(glob.glob(os.path.join(style_pool_dir, "**", "*.png"), recursive=True))
        if not pool_paths:
            raise ValueError(f"no PNG style images under {style_pool_dir}")
        pool = [load_png(p) for p in pool_paths]
        spec = stylemix.StyleSpec(mode=mode)
        for s in sorted(chosen, key=lambda s: s.id):
            out.append(stylemix.ism_augment(s, pool, spec, seed=_row_seed(seed, s.id)))

    return write_corpus(out, out_dir)


def postproc_corpus(
    manifest_path: str,
    op: str,
    out_dir: str,
    quality: int = 75,
    resolution: int = 64,
    seed: int = 0,
    split: str = "test",
) -> str:
    """Apply a post-processing op to one split (in place, ids unchanged)."""
    if op not in ("jpg", "ps"):
        raise ValueError(f"unknown postproc op {op!r}; known: jpg, ps")
    samples = read_manifest(manifest_path)
    out = []
    for s in samples:
        if s.split != split:
            out.append(s)
        elif op == "jpg":
            out.append(postops.apply_jpeg(s, quality, resolution))
        else:
            out.append(postops.apply_print_scan(s, _row_seed(seed, s.id)))
    return write_corpus(out, out_dir)


def _manifest_of(data: str) -> str:
    if os.path.isdir(data):
        return os.path.join(data, "manifest.jsonl")
    return data


def _cmd_datagen(args) -> int:
    config = synthface.CorpusConfig(
        out_dir=args.out,
        identities=args.identities,
        instances=args.instances,
        attacks=tuple(a for a in args.attacks.split(",") if a) if args.attacks else (),
        seed=args.seed,
        size=args.size,
        train_fraction=args.train_fraction,
        domain=args.domain,
        sm_per_identity=args.sm_per_identity,
        color_bias=tuple(float(v) for v in args.color_bias.split(",")) if args.color_bias else (0.0, 0.0, 0.0),
    )
    manifest = synthface.build_corpus(config)
    print(manifest)
    return 0


def _cmd_augment(args) -> int:
    manifest = augment_corpus(
        args.manifest,
        ops=[o for o in args.ops.split(",") if o],
        out_dir=args.out,
        seed=args.seed,
        style_pool_dir=args.style_pool,
        split=args.split,
        mode=args.mode,
        sm_per_identity=args.sm_per_identity,
    )
    print(manifest)
    return 0


def _cmd_postproc(args) -> int:
    manifest = postproc_corpus(
        args.manifest,
        op=args.op,
        out_dir=args.out,
        quality=args.quality,
        resolution=args.resolution,
        seed=args.seed,
        split=args.split,
    )
    print(manifest)
    return 0


def _cmd_train(args) -> int:
    cfg = trainer.parse_config(args.config)
    ckpt = trainer.fit(cfg, _manifest_of(args.data), args.out)
    print(ckpt)
    return 0


def _cmd_eval(args) -> int:
    model, _bank, _sidecar, _extra = load_checkpoint(args.ckpt)
    scores = bioeval.score_dataset(strip_inference(model), _manifest_of(args.data), args.split)
    summary = bioeval.report(scores, args.report, det_path=args.det)
    if args.scores:
        bioeval.write_scores(scores, args.scores)
    print(json.dumps(summary, sort_keys=True))
    return 0


def _cmd_ablate(args) -> int:
    cfg = trainer.parse_config(args.config)
    variants = [v for v in args.variants.split(",") if v]
    seeds = [cfg.seed + i for i in range(args.seeds)]
    sweep = [int(v) for v in args.sweep_levels.split(",")] if args.sweep_levels else None
    result = trainer.ablate(
        cfg,
        _manifest_of(args.data),
        variants,
        seeds=seeds,
        n_level_sweep=sweep,
        out_path=args.out,
        work_dir=args.workdir,
    )
    print(json.dumps(result["summary"], sort_keys=True))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="morphdet", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("datagen", help="generate a synthetic corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--identities", type=int, default=10)
    p.add_argument("--instances", type=int, default=4)
    p.add_argument("--attacks", default="")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--train-fraction", type=float, default=0.75)
    p.add_argument("--domain", default="synth")
    p.add_argument("--sm-per-identity", type=int, default=2)
    p.add_argument("--color-bias", default="")
    p.set_defaults(func=_cmd_datagen)

    p = sub.add_parser("augment", help="add self-morph / style-mix rows")
    p.add_argument("--manifest", required=True)
    p.add_argument("--ops", required=True)
    p.add_argument("--style-pool")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--split", default="train")
    p.add_argument("--mode", default="color_wct", choices=stylemix.STYLE_MODES)
    p.add_argument("--sm-per-identity", type=int, default=2)
    p.set_defaults(func=_cmd_augment)

    p = sub.add_parser("postproc", help="JPEG / print-scan a split")
    p.add_argument("--manifest", required=True)
    p.add_argument("--op", required=True)
    p.add_argument("--quality", type=int, default=75)
    p.add_argument("--resolution", type=int, default=64)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--split", default="test")
    p.set_defaults(func=_cmd_postproc)

    p = sub.add_parser("train", help="train a detector")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="score a split and write the report")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--report", required=True)
    p.add_argument("--det")
    p.add_argument("--scores")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("ablate", help="train/evaluate several variants")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--variants", default="baseline,grl")
    p.add_argument("--seeds", type=int, default=1)
    p.add_argument("--out", required=True)
    p.add_argument("--sweep-levels", default="")
    p.add_argument("--workdir")
    p.set_defaults(func=_cmd_ablate)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ValueError as exc:
        print(json.dumps({"error": "invalid-argument", "message": str(exc)}), file=sys.stderr)
        return 2
    except OSError as exc:
        print(json.dumps({"error": "io", "message": str(exc)}), file=sys.stderr)
        return 3
    except (FloatingPointError, ArithmeticError) as exc:
        print(json.dumps({"error": "numeric", "message": str(exc)}), file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
