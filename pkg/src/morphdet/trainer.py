"""Source/target pairing, the SGD training loop with adversarial alternation,
and the ablation harness.

Variants gate both the training data and the loss terms:

  baseline  pristine rows only, CE
  sm        + self-morph rows, CE
  ism       + style-mixed rows, CE
  label     + all augmented rows, CE + prediction-level consistency
  emb       + all augmented rows, CE + embedding-level consistency
  grl       + all augmented rows, CE + both consistency terms

Pairing rule: a morph pairs with a same-content row under a different domain
tag when one exists, otherwise with a same-identity-pair morph of a different
attack; a bona fide pairs with a style-mixed/pre-augmented version of itself.
Unpaired rows contribute to the CE term only.
"""

from __future__ import annotations

import json
import os
import statistics
import zlib
from dataclasses import dataclass, field, replace

import numpy as np
import torch

from . import bioeval
from .grlnet import BackboneSpec, build_model, save_checkpoint, strip_inference
from .regloss import LossWeights, loss_cls, loss_emb, loss_label, loss_total
from .samples import LABEL_MORPH, FaceSample, manifest_sha256, read_manifest

VARIANTS = ("baseline", "sm", "ism", "label", "emb", "grl")

LOSS_CSV_HEADER = "epoch,l_cls,l_label,l_emb,l_disc,l_total"

CONFIG_KEYS = (
    "tau",
    "eta",
    "mu",
    "delta",
    "levels",
    "aligned_dim",
    "lr",
    "momentum",
    "batch_size",
    "epochs",
    "image_size",
    "seed",
    "variant",
    "n_level",
)


@dataclass
class TrainConfig:
    """Desk-scale defaults; ``TrainConfig.paper()`` restores the published
    schedule (lr 1e-4, batch 64, 50 epochs)."""

    lr: float = 0.02
    momentum: float = 0.9
    batch_size: int = 32
    epochs: int = 10
    seed: int = 0
    variant: str = "grl"
    levels: int = 4
    aligned_dim: int = 64
    image_size: int = 64
    loss_weights: LossWeights = field(default_factory=LossWeights)
    n_level: int | None = None  # embedding-consistency levels; None = all

    def __post_init__(self):
        if self.lr <= 0 or self.batch_size <= 0 or self.epochs <= 0:
            raise ValueError("lr, batch_size, and epochs must be positive")
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; known: {VARIANTS}")
        if self.n_level is not None and not 1 <= self.n_level <= self.levels - 1:
            raise ValueError("n_level must lie in [1, levels-1]")

    @classmethod
    def paper(cls, **overrides):
        base = dict(lr=1e-4, batch_size=64, epochs=50)
        base.update(overrides)
        return cls(**base)

    def backbone_spec(self) -> BackboneSpec:
        channels = tuple(min(16 << i, 256) for i in range(self.levels))
        return BackboneSpec(
            levels=self.levels,
            channels=channels,
            aligned_dim=self.aligned_dim,
            input_size=self.image_size,
        )

    @property
    def uses_label(self) -> bool:
        return self.variant in ("label", "grl")

    @property
    def uses_emb(self) -> bool:
        return self.variant in ("emb", "grl")


def parse_config(path: str) -> TrainConfig:
    """Read a flat ``key = value`` config file."""
    raw = {}
    with open(path) as fh:
        for ln, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            sep = "=" if "=" in line else (":" if ":" in line else None)
            if sep is None:
                raise ValueError(f"{path}:{ln}: expected 'key = value', got {line!r}")
            key, value = (part.strip() for part in line.split(sep, 1))
            if key not in CONFIG_KEYS:
                raise ValueError(f"{path}:{ln}: unknown config key {key!r}")
            raw[key] = value
    weights = LossWeights(
        tau=float(raw.pop("tau", 0.1)),
        eta=float(raw.pop("eta", 0.1)),
        mu=float(raw.pop("mu", 0.05)),
        delta=float(raw.pop("delta", 0.1)),
    )
    kwargs = {"loss_weights": weights}
    casts = {
        "lr": float,
        "momentum": float,
        "batch_size": int,
        "epochs": int,
        "seed": int,
        "levels": int,
        "aligned_dim": int,
        "image_size": int,
        "variant": str,
        "n_level": int,
    }
    for key, value in raw.items():
        kwargs[key] = casts[key](value)
    return TrainConfig(**kwargs)


@dataclass
class PairedBatch:
    source: list  # FaceSample
    target: list  # FaceSample, compacted (only existing counterparts)
    pairing: list  # per source row: index into target, or None

    def __post_init__(self):
        if len(self.pairing) != len(self.source):
            raise ValueError("pairing map must cover every source row")
        for i, j in enumerate(self.pairing):
            if j is None:
                continue
            if self.source[i].label != self.target[j].label:
                raise ValueError("paired samples must share a label")


class CorpusIndex:
    """Lookup tables for pairing: by content origin and by morph identity pair."""

    def __init__(self, rows: list[FaceSample]):
        self.by_origin: dict[str, list[FaceSample]] = {}
        self.morph_by_pair: dict[tuple, list[FaceSample]] = {}
        for row in sorted(rows, key=lambda r: r.id):
            self.by_origin.setdefault(row.origin, []).append(row)
            if row.label == LABEL_MORPH:
                key = tuple(sorted(row.identity_ids))
                self.morph_by_pair.setdefault(key, []).append(row)


def _candidates(sample: FaceSample, index: CorpusIndex) -> list[FaceSample]:
    same_content = [
        r
        for r in index.by_origin.get(sample.origin, [])
        if r.id != sample.id and r.domain != sample.domain and r.label == sample.label
    ]
    if same_content:
        return same_content
    if sample.label == LABEL_MORPH:
        key = tuple(sorted(sample.identity_ids))
        return [
            r
            for r in index.morph_by_pair.get(key, [])
            if r.id != sample.id and r.attack != sample.attack
        ]
    return []


def make_pairs(batch: list[FaceSample], index: CorpusIndex, seed: int = 0) -> PairedBatch:
    """Pair each row with a consistency target; unmatched rows get None."""
    targets: list[FaceSample] = []
    pairing: list = []
    for sample in batch:
        cands = _candidates(sample, index)
        if not cands:
            pairing.append(None)
            continue
        rng = np.random.default_rng([seed, zlib.crc32(sample.id.encode())])
        pick = cands[int(rng.integers(0, len(cands)))]
        pairing.append(len(targets))
        targets.append(pick)
    return PairedBatch(source=list(batch), target=targets, pairing=pairing)


def _variant_rows(samples: list[FaceSample], variant: str) -> list[FaceSample]:
    include_sm = variant in ("sm", "label", "emb", "grl")
    include_ism = variant in ("ism", "label", "emb", "grl")
    rows = []
    for s in samples:
        if s.attack == "self-morph" and not include_sm:
            continue
        if s.domain == "ism" and not include_ism:
            continue
        rows.append(s)
    return rows


def _to_tensor(samples, cache) -> torch.Tensor:
    return torch.stack([cache[s.id] for s in samples])


def _labels(samples) -> torch.Tensor:
    return torch.tensor([1 if s.label == LABEL_MORPH else 0 for s in samples], dtype=torch.long)


def _select_outputs(outputs, idx: torch.Tensor):
    from .grlnet import LevelOutputs

    return LevelOutputs(
        features=tuple(f[idx] for f in outputs.features),
        f_cat=outputs.f_cat[idx],
        logits_aux=tuple(z[idx] for z in outputs.logits_aux),
        logits_final=outputs.logits_final[idx],
        logits_cat=outputs.logits_cat[idx],
    )


def _emb_subset(outputs, cfg: TrainConfig):
    feats = outputs.emb_features
    if cfg.n_level is None:
        return feats, list(range(len(feats)))
    indices = list(range(cfg.n_level)) + [len(feats) - 1]
    return [feats[i] for i in indices], indices


def train_step(model, bank, pbatch: PairedBatch, cfg: TrainConfig, optimizers=None, cache=None):
    """One alternating update: the detector descends the total objective, the
    discriminator bank then descends its own CE on detached features."""
    if optimizers is None:
        optimizers = build_optimizers(model, bank, cfg)
    opt_model, opt_bank = optimizers
    if cache is None:
        cache = {s.id: _image_tensor(s) for s in pbatch.source + pbatch.target}
    w = cfg.loss_weights

    model.train()
    out_s = model(_to_tensor(pbatch.source, cache))
    l_cls = loss_cls(out_s, _labels(pbatch.source), w)

    zero = torch.zeros((), dtype=l_cls.dtype)
    l_label = zero
    l_emb = zero
    l_disc = zero
    paired_src = [i for i, j in enumerate(pbatch.pairing) if j is not None]
    if pbatch.target and (cfg.uses_label or cfg.uses_emb):
        src_idx = torch.tensor(paired_src, dtype=torch.long)
        out_src = _select_outputs(out_s, src_idx)
        out_tgt = model(_to_tensor(pbatch.target, cache))
        if cfg.uses_label:
            l_label = loss_label(out_src, out_tgt, w)
        if cfg.uses_emb:
            feats_s, indices = _emb_subset(out_src, cfg)
            feats_t, _ = _emb_subset(out_tgt, cfg)
            l_emb, l_disc = loss_emb(feats_s, feats_t, bank, w, indices=indices)

    l_tot = loss_total(l_cls, l_label, l_emb, w)
    opt_model.zero_grad()
    l_tot.backward()
    opt_model.step()

    if cfg.uses_emb and l_disc.requires_grad:
        if not torch.isfinite(l_disc):
            raise FloatingPointError(f"non-finite loss term l_disc: {l_disc}")
        opt_bank.zero_grad()
        l_disc.backward()
        opt_bank.step()

    return {
        "l_cls": float(l_cls),
        "l_label": float(l_label),
        "l_emb": float(l_emb),
        "l_disc": float(l_disc),
        "l_total": float(l_tot),
    }


def build_optimizers(model, bank, cfg: TrainConfig):
    opt_model = torch.optim.SGD(model.parameters(), lr=cfg.lr, momentum=cfg.momentum)
    opt_bank = torch.optim.SGD(bank.parameters(), lr=cfg.lr, momentum=cfg.momentum)
    return opt_model, opt_bank


def _image_tensor(sample: FaceSample) -> torch.Tensor:
    arr = np.ascontiguousarray(sample.image.transpose(2, 0, 1), dtype=np.float32)
    return torch.from_numpy(arr)


def fit_samples(cfg: TrainConfig, samples: list[FaceSample], start_state=None):
    """Train on an in-memory sample list; returns (model, bank, loss_rows, state).

    ``start_state`` resumes from a checkpoint's extra-state dict; the loss
    trace then continues exactly where the interrupted run left off.
    """
    # tiny per-core tensors: oversubscribed BLAS threads cost more than they buy
    torch.set_num_threads(1)
    for s in samples:
        s.validate()
    rows = _variant_rows(samples, cfg.variant)
    if not rows:
        raise ValueError("no training rows left after variant filtering")
    for s in rows:
        if s.image.shape[:2] != (cfg.image_size, cfg.image_size):
            raise ValueError(
                f"sample {s.id} has shape {s.image.shape[:2]}, expected"
                f" {(cfg.image_size, cfg.image_size)}"
            )
    index = CorpusIndex(rows)
    cache = {s.id: _image_tensor(s) for s in rows}

    model, bank = build_model(cfg.backbone_spec(), cfg.seed)
    optimizers = build_optimizers(model, bank, cfg)
    loss_rows: list[dict] = []
    start_epoch = 0
    if start_state:
        model.load_state_dict(start_state["model"])
        bank.load_state_dict(start_state["bank"])
        optimizers[0].load_state_dict(start_state["opt_model"])
        optimizers[1].load_state_dict(start_state["opt_bank"])
        loss_rows = list(start_state["loss_rows"])
        start_epoch = int(start_state["epoch_done"])

    by_pos = sorted(rows, key=lambda s: s.id)
    for epoch in range(start_epoch, cfg.epochs):
        order = np.random.default_rng([cfg.seed, 0xE9, epoch]).permutation(len(by_pos))
        sums = dict.fromkeys(("l_cls", "l_label", "l_emb", "l_disc", "l_total"), 0.0)
        steps = 0
        for lo in range(0, len(order), cfg.batch_size):
            batch = [by_pos[i] for i in order[lo : lo + cfg.batch_size]]
            pbatch = make_pairs(batch, index, cfg.seed)
            metrics = train_step(model, bank, pbatch, cfg, optimizers, cache)
            for key, value in metrics.items():
                sums[key] += value
            steps += 1
        loss_rows.append({"epoch": epoch, **{k: v / steps for k, v in sums.items()}})

    state = {
        "opt_model": optimizers[0].state_dict(),
        "opt_bank": optimizers[1].state_dict(),
        "loss_rows": loss_rows,
        "epoch_done": cfg.epochs,
    }
    return model, bank, loss_rows, state


def write_loss_csv(loss_rows: list[dict], path: str) -> None:
    with open(path, "w") as fh:
        fh.write(LOSS_CSV_HEADER + "\n")
        for row in loss_rows:
            fh.write(
                f"{row['epoch']},{row['l_cls']!r},{row['l_label']!r},"
                f"{row['l_emb']!r},{row['l_disc']!r},{row['l_total']!r}\n"
            )


def fit(cfg: TrainConfig, manifest_path: str, out_ckpt: str, resume_from: str | None = None):
    """Full training run from a manifest: epoch loop over shuffled paired
    batches, per-epoch loss CSV next to the checkpoint, checkpoint + sidecar.

    Returns the checkpoint path.
    """
    samples = read_manifest(manifest_path, split="train")
    start_state = None
    if resume_from is not None:
        from .grlnet import load_checkpoint

        model0, bank0, sidecar, extra = load_checkpoint(resume_from)
        if sidecar["corpus_hash"] != manifest_sha256(manifest_path):
            raise ValueError("checkpoint was trained on a different corpus")
        start_state = {
            "model": model0.state_dict(),
            "bank": bank0.state_dict(),
            **extra,
        }
    model, bank, loss_rows, state = fit_samples(cfg, samples, start_state)
    out_dir = os.path.dirname(os.path.abspath(out_ckpt))
    os.makedirs(out_dir, exist_ok=True)
    write_loss_csv(loss_rows, out_ckpt + ".losses.csv")
    save_checkpoint(
        out_ckpt,
        model,
        bank,
        loss_weights=cfg.loss_weights,
        seed=cfg.seed,
        epoch=cfg.epochs,
        corpus_hash=manifest_sha256(manifest_path),
        extra_state=state,
    )
    return out_ckpt


def evaluate_split(model, manifest_path: str, split: str = "test"):
    scores = bioeval.score_dataset(strip_inference(model), manifest_path, split)
    return {"eer": bioeval.eer(scores), "auc": bioeval.auc(scores)}


def ablate(
    cfg: TrainConfig,
    manifest_path: str,
    variants,
    seeds=None,
    n_level_sweep=None,
    out_path: str | None = None,
    work_dir: str | None = None,
):
    """Train each variant under identical seeds and evaluate the held-out
    split; emits a machine-readable table of per-run EER/AUC plus medians."""
    for v in variants:
        if v not in VARIANTS:
            raise ValueError(f"unknown variant {v!r}")
    if seeds is None:
        seeds = [cfg.seed]
    runs = [(v, None) for v in variants]
    for n in n_level_sweep or ():
        runs.append(("grl", int(n)))

    table = []
    for variant, n_level in runs:
        for seed in seeds:
            run_cfg = replace(cfg, variant=variant, seed=int(seed), n_level=n_level)
            samples = read_manifest(manifest_path, split="train")
            model, bank, loss_rows, state = fit_samples(run_cfg, samples)
            row = {
                "variant": variant if n_level is None else f"{variant}-n{n_level}",
                "seed": int(seed),
                **evaluate_split(model, manifest_path),
            }
            if work_dir is not None:
                os.makedirs(work_dir, exist_ok=True)
                ckpt = os.path.join(work_dir, f"{row['variant']}-s{seed}.pt")
                save_checkpoint(
                    ckpt,
                    model,
                    bank,
                    loss_weights=run_cfg.loss_weights,
                    seed=seed,
                    epoch=run_cfg.epochs,
                    corpus_hash=manifest_sha256(manifest_path),
                    extra_state=state,
                )
                row["ckpt"] = ckpt
            table.append(row)

    summary = {}
    for row in table:
        summary.setdefault(row["variant"], {"eer": [], "auc": []})
        summary[row["variant"]]["eer"].append(row["eer"])
        summary[row["variant"]]["auc"].append(row["auc"])
    summary = {
        name: {
            "eer_median": statistics.median(vals["eer"]),
            "auc_median": statistics.median(vals["auc"]),
        }
        for name, vals in summary.items()
    }
    result = {"rows": table, "summary": summary}
    if out_path is not None:
        with open(out_path, "w") as fh:
            json.dump(result, fh, indent=2, sort_keys=True)
            fh.write("\n")
    return result
