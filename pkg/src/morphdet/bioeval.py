"""Attack-detection metrics: APCER at a BPCER budget, detection EER, AUC, and
DET curves, plus score/report file writers.

Conventions (fixed and oracle-checkable):

* the score is the model's morph probability: higher = more attack-like;
* the decision is "morph if score >= t";
* APCER(t) = fraction of morphs below t, BPCER(t) = fraction of bona fide at
  or above t;
* thresholds are restricted to observed scores (plus +/- infinity for curve
  endpoints) with no interpolation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .samples import LABEL_BONAFIDE, LABEL_MORPH, read_manifest


@dataclass
class ScoreSet:
    entries: list  # (sample_id, label, score) triples

    def split(self):
        morph, bona = [], []
        for _, label, score in self.entries:
            if not math.isfinite(score):
                raise ValueError("scores must be finite")
            if label == LABEL_MORPH:
                morph.append(score)
            elif label == LABEL_BONAFIDE:
                bona.append(score)
            else:
                raise ValueError(f"bad label {label!r}")
        if not morph or not bona:
            raise ValueError("need at least one entry of each label class")
        return np.asarray(morph, dtype=np.float64), np.asarray(bona, dtype=np.float64)


def _rates(morph: np.ndarray, bona: np.ndarray, t: float):
    apcer = float(np.count_nonzero(morph < t)) / len(morph)
    bpcer = float(np.count_nonzero(bona >= t)) / len(bona)
    return apcer, bpcer


def apcer_at_bpcer(scores: ScoreSet, bpcer_target: float) -> float:
    """APCER at the smallest observed threshold meeting the BPCER budget."""
    if not 0.0 < bpcer_target < 1.0:
        raise ValueError("bpcer_target must lie in (0, 1)")
    morph, bona = scores.split()
    for t in np.unique(np.concatenate([morph, bona])):
        apcer, bpcer = _rates(morph, bona, float(t))
        if bpcer <= bpcer_target:
            return apcer
    return _rates(morph, bona, math.inf)[0]


def eer(scores: ScoreSet) -> float:
    """Detection equal error rate: (APCER+BPCER)/2 where they come closest,
    ties broken toward the smaller threshold."""
    morph, bona = scores.split()
    best_gap = None
    best = None
    for t in np.unique(np.concatenate([morph, bona])):
        apcer, bpcer = _rates(morph, bona, float(t))
        gap = abs(apcer - bpcer)
        if best_gap is None or gap < best_gap:
            best_gap = gap
            best = 0.5 * (apcer + bpcer)
    return best


def auc(scores: ScoreSet) -> float:
    """Rank statistic: P(morph outscores bona fide) + half the tie mass."""
    morph, bona = scores.split()
    both = np.concatenate([morph, bona])
    order = np.argsort(both, kind="mergesort")
    ranks = np.empty(len(both), dtype=np.float64)
    # average ranks over tied groups (1-based)
    sorted_vals = both[order]
    i = 0
    while i < len(both):
        j = i
        while j + 1 < len(both) and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    n_m, n_b = len(morph), len(bona)
    r_morph = ranks[:n_m].sum()
    return (r_morph - n_m * (n_m + 1) / 2.0) / (n_m * n_b)


def det_curve(scores: ScoreSet):
    """(BPCER, APCER) staircase over distinct thresholds, endpoints included."""
    morph, bona = scores.split()
    thresholds = [-math.inf] + [float(t) for t in np.unique(np.concatenate([morph, bona]))]
    thresholds.append(math.inf)
    points = []
    for t in thresholds:
        apcer, bpcer = _rates(morph, bona, t)
        points.append((bpcer, apcer))
    return points


def report(scores: ScoreSet, out_path: str, det_path: str | None = None) -> dict:
    """Write the summary JSON (values in percent, 2 decimals) and optionally
    the DET curve CSV; returns the summary as a dict."""
    values = [
        ("apcer@1", 100.0 * apcer_at_bpcer(scores, 0.01)),
        ("apcer@5", 100.0 * apcer_at_bpcer(scores, 0.05)),
        ("apcer@10", 100.0 * apcer_at_bpcer(scores, 0.10)),
        ("eer", 100.0 * eer(scores)),
        ("auc", 100.0 * auc(scores)),
    ]
    body = ",\n".join(f'  "{k}": {v:.2f}' for k, v in values)
    with open(out_path, "w") as fh:
        fh.write("{\n" + body + "\n}\n")
    if det_path is not None:
        with open(det_path, "w") as fh:
            fh.write("bpcer,apcer\n")
            for bpcer, apcer in det_curve(scores):
                fh.write(f"{bpcer!r},{apcer!r}\n")
    return dict(values)


def write_scores(scores: ScoreSet, path: str) -> None:
    with open(path, "w") as fh:
        fh.write("sample_id,label,score\n")
        for sid, label, score in scores.entries:
            fh.write(f"{sid},{label},{score!r}\n")


def read_scores(path: str) -> ScoreSet:
    entries = []
    with open(path) as fh:
        header = fh.readline().strip()
        if header != "sample_id,label,score":
            raise ValueError(f"unexpected scores CSV header: {header}")
        for line in fh:
            sid, label, score = line.strip().split(",")
            entries.append((sid, label, float(score)))
    return ScoreSet(entries)


def _resize_batch(images: np.ndarray, size: int) -> np.ndarray:
    from .postops import _resize_float

    if images.shape[1] == size and images.shape[2] == size:
        return images
    return np.stack([_resize_float(img, (size, size)) for img in images])


def score_dataset(inference_model, manifest_path: str, split: str = "test") -> ScoreSet:
    """Score every sample of a split with a stripped inference model.

    Images whose resolution differs from the model input (post-processed
    corpora) are bicubically resized up front. The score is the softmax
    morph probability at temperature 1.
    """
    import torch

    from .regloss import tempered_softmax

    samples = read_manifest(manifest_path, split=split)
    if not samples:
        raise ValueError(f"no samples in split {split!r} of {manifest_path}")
    size = inference_model.spec.input_size
    entries = []
    inference_model.eval()
    with torch.no_grad():
        for start in range(0, len(samples), 256):
            chunk = samples[start : start + 256]
            imgs = _resize_batch(np.stack([s.image for s in chunk]), size)
            x = torch.from_numpy(
                np.ascontiguousarray(imgs.transpose(0, 3, 1, 2), dtype=np.float32)
            )
            probs = tempered_softmax(inference_model(x), 1.0)[:, 1]
            entries.extend(
                (s.id, s.label, float(p)) for s, p in zip(chunk, probs)
            )
    return ScoreSet(entries)
