"""Post-processing artifact simulation: JPEG re-compression cycles and a
synthetic print-scan pipeline for robustness protocols.

Applied to a corpus sample, both ops alter only the image (and rescale the
landmarks when the resolution changes), setting the domain tag to
``jpg-<quality>-<resolution>`` or ``ps``.
"""

from __future__ import annotations

import io

import numpy as np
from PIL import Image
from scipy import ndimage

from .samples import FaceSample, LandmarkSet, corner_points, quantize


def jpeg_cycle(img: np.ndarray, quality: int, resolution: int) -> np.ndarray:
    """Resize to resolution x resolution, run one baseline-JPEG encode/decode.

    Encoding uses 4:4:4 chroma (no subsampling) so the quality knob is the
    only lossy parameter.
    """
    if not 1 <= int(quality) <= 100:
        raise ValueError(f"JPEG quality must be in [1, 100], got {quality}")
    if resolution < 16:
        raise ValueError(f"resolution must be >= 16, got {resolution}")
    im = Image.fromarray(quantize(img), mode="RGB")
    if im.size != (resolution, resolution):
        im = im.resize((resolution, resolution), Image.BICUBIC)
    buf = io.BytesIO()
    im.save(buf, format="JPEG", quality=int(quality), subsampling=0)
    buf.seek(0)
    with Image.open(buf) as dec:
        out = np.asarray(dec.convert("RGB"), dtype=np.float64)
    return out / 255.0


def _resize_float(img: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    """Bicubic resize of a float image, channel by channel (no quantization)."""
    out = np.empty((size[1], size[0], img.shape[2]))
    for c in range(img.shape[2]):
        chan = Image.fromarray(img[..., c].astype(np.float32), mode="F")
        out[..., c] = np.asarray(chan.resize(size, Image.BICUBIC), dtype=np.float64)
    return out


def print_scan_sim(img: np.ndarray, seed: int) -> np.ndarray:
    """Fixed print-scan surrogate: blur, gamma jitter, noise, 2% down-up resample."""
    rng = np.random.default_rng([int(seed), 0x50])
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape[:2]

    x = ndimage.gaussian_filter(img, sigma=(0.8, 0.8, 0.0), mode="nearest")
    gamma = 1.0 + rng.uniform(-0.1, 0.1, 3)
    x = np.clip(x, 0.0, 1.0) ** gamma
    x = x + rng.normal(0.0, 0.01, x.shape)
    x = np.clip(x, 0.0, 1.0)

    dw, dh = max(1, round(w * 0.98)), max(1, round(h * 0.98))
    x = _resize_float(_resize_float(x, (dw, dh)), (w, h))
    return np.clip(x, 0.0, 1.0)


def _scaled_landmarks(lms: LandmarkSet | None, old: int, new: int) -> LandmarkSet | None:
    if lms is None or old == new:
        return lms
    pts = lms.points * (new / old)
    pts[-4:] = corner_points(new, new)
    return LandmarkSet(np.clip(pts, 0.0, new - 1.0))


def apply_jpeg(sample: FaceSample, quality: int, resolution: int) -> FaceSample:
    out = jpeg_cycle(sample.image, quality, resolution)
    return sample.with_image(
        out,
        landmarks=_scaled_landmarks(sample.landmarks, sample.image.shape[1], resolution),
        domain=f"jpg-{int(quality)}-{int(resolution)}",
    )


def apply_print_scan(sample: FaceSample, seed: int) -> FaceSample:
    return sample.with_image(print_scan_sim(sample.image, seed), domain="ps")
