"""Corpus records: landmarked face samples and the JSON Lines manifest format.

A corpus on disk is a directory containing 8-bit PNG images plus a
``manifest.jsonl`` with one record per sample.  Required manifest keys are
``{id, path, label, identity_ids, domain, attack, split}``; two extra keys are
carried for downstream machinery: ``landmarks`` (so geometric ops round-trip
without a face detector) and ``origin`` (the id of the sample whose content an
augmented sample was derived from; equals ``id`` for pristine samples).

Image paths are stored relative to the manifest's directory.  Pixel values are
quantized as ``round(255 * v)`` on write and mapped back to ``v = px / 255`` on
read.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, replace

import numpy as np
from PIL import Image

LABEL_BONAFIDE = "bonafide"
LABEL_MORPH = "morph"

# landmark layout: 8 head contour, 3 left eye, 3 right eye, 3 nose, 4 mouth,
# 4 image corners appended for triangulation
N_SEMANTIC = 21
N_POINTS = 25
CORNER_SLICE = slice(21, 25)

MANIFEST_KEYS = ("id", "path", "label", "identity_ids", "domain", "attack", "split")


@dataclass(frozen=True)
class LandmarkSet:
    """Ordered 2-D control points (21 semantic + 4 corners), pixel coordinates."""

    points: np.ndarray  # (25, 2) float64, columns (x, y)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.shape != (N_POINTS, 2):
            raise ValueError(f"expected ({N_POINTS}, 2) landmark array, got {pts.shape}")
        object.__setattr__(self, "points", pts)

    @property
    def semantic(self) -> np.ndarray:
        return self.points[:N_SEMANTIC]

    @property
    def corners(self) -> np.ndarray:
        return self.points[CORNER_SLICE]

    def validate(self, width: int, height: int) -> None:
        pts = self.points
        if not (np.all(pts[:, 0] >= 0) and np.all(pts[:, 0] < width)):
            raise ValueError("landmark x coordinates out of image bounds")
        if not (np.all(pts[:, 1] >= 0) and np.all(pts[:, 1] < height)):
            raise ValueError("landmark y coordinates out of image bounds")
        expect = corner_points(width, height)
        if not np.array_equal(self.corners, expect):
            raise ValueError("corner landmarks must sit exactly at the image corners")


def corner_points(width: int, height: int) -> np.ndarray:
    """The 4 corner anchors, clockwise from the origin."""
    return np.array(
        [[0.0, 0.0], [width - 1.0, 0.0], [width - 1.0, height - 1.0], [0.0, height - 1.0]]
    )


@dataclass
class FaceSample:
    """One corpus record: image, landmarks, label, and provenance tags."""

    id: str
    image: np.ndarray  # (H, W, 3) float in [0, 1]
    landmarks: LandmarkSet | None
    label: str
    identity_ids: list[int]
    domain: str = "synth"
    attack: str = "none"
    split: str = "train"
    origin: str = ""  # content-origin sample id; defaults to own id

    def __post_init__(self):
        if not self.origin:
            self.origin = self.id

    def validate(self) -> None:
        img = self.image
        if img.ndim != 3 or img.shape[2] != 3:
            raise ValueError(f"sample {self.id}: image must be HxWx3, got {img.shape}")
        if img.min() < 0.0 or img.max() > 1.0:
            raise ValueError(f"sample {self.id}: image values outside [0, 1]")
        if self.label not in (LABEL_BONAFIDE, LABEL_MORPH):
            raise ValueError(f"sample {self.id}: bad label {self.label!r}")
        if self.label == LABEL_BONAFIDE and len(self.identity_ids) != 1:
            raise ValueError(f"sample {self.id}: bona fide needs exactly 1 identity id")
        if self.label == LABEL_MORPH:
            if len(self.identity_ids) != 2:
                raise ValueError(f"sample {self.id}: morph needs exactly 2 identity ids")
            if self.identity_ids[0] == self.identity_ids[1] and self.attack != "self-morph":
                raise ValueError(
                    f"sample {self.id}: equal identity ids only allowed for self-morph"
                )
        if self.split not in ("train", "test"):
            raise ValueError(f"sample {self.id}: bad split {self.split!r}")
        if self.landmarks is not None:
            h, w = img.shape[:2]
            self.landmarks.validate(w, h)

    def with_image(self, image: np.ndarray, **changes) -> "FaceSample":
        return replace(self, image=image, **changes)


def quantize(img: np.ndarray) -> np.ndarray:
    """Map a [0,1] float image to 8-bit via round(255 * v)."""
    return np.clip(np.round(np.asarray(img) * 255.0), 0, 255).astype(np.uint8)


def save_png(img: np.ndarray, path: str) -> None:
    Image.fromarray(quantize(img), mode="RGB").save(path, format="PNG")


def load_png(path: str) -> np.ndarray:
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float64)
    return arr / 255.0


def _row(sample: FaceSample, path: str) -> dict:
    return {
        "id": sample.id,
        "path": path,
        "label": sample.label,
        "identity_ids": list(sample.identity_ids),
        "domain": sample.domain,
        "attack": sample.attack,
        "split": sample.split,
        "landmarks": None
        if sample.landmarks is None
        else [[float(x), float(y)] for x, y in sample.landmarks.points],
        "origin": sample.origin,
    }


def write_corpus(samples: list[FaceSample], out_dir: str) -> str:
    """Write images + manifest for a corpus; returns the manifest path.

    Rows are sorted by sample id so the manifest content is independent of the
    order samples were generated in.
    """
    ids = [s.id for s in samples]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate sample ids in corpus")
    try:
        os.makedirs(out_dir, exist_ok=True)
        os.makedirs(os.path.join(out_dir, "images"), exist_ok=True)
        rows = []
        for s in sorted(samples, key=lambda s: s.id):
            s.validate()
            rel = os.path.join("images", f"{s.id}.png")
            save_png(s.image, os.path.join(out_dir, rel))
            rows.append(_row(s, rel))
        manifest = os.path.join(out_dir, "manifest.jsonl")
        with open(manifest, "w") as fh:
            for row in rows:
                fh.write(json.dumps(row, sort_keys=True) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write corpus under {out_dir}: {exc}") from exc
    return manifest


def read_manifest(manifest_path: str, split: str | None = None) -> list[FaceSample]:
    """Load samples (with images) from a manifest, optionally one split."""
    base = os.path.dirname(os.path.abspath(manifest_path))
    samples = []
    missing = []
    with open(manifest_path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            row = json.loads(line)
            for key in MANIFEST_KEYS:
                if key not in row:
                    raise ValueError(f"manifest row missing key {key!r}: {row.get('id')}")
            if split is not None and row["split"] != split:
                continue
            img_path = os.path.join(base, row["path"])
            if not os.path.isfile(img_path):
                missing.append(row["id"])
                continue
            lms = row.get("landmarks")
            samples.append(
                FaceSample(
                    id=row["id"],
                    image=load_png(img_path),
                    landmarks=None if lms is None else LandmarkSet(np.asarray(lms)),
                    label=row["label"],
                    identity_ids=[int(i) for i in row["identity_ids"]],
                    domain=row["domain"],
                    attack=row["attack"],
                    split=row["split"],
                    origin=row.get("origin", row["id"]),
                )
            )
    if missing:
        raise OSError(f"manifest references missing images: {missing}")
    return samples


def manifest_sha256(manifest_path: str) -> str:
    with open(manifest_path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()
