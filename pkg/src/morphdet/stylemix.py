"""Inter-domain style mixup: transfer low-level style statistics onto a sample
without touching its content, label, or geometry.

Two closed-form realizations are provided: a whitening-coloring transform on
the 3x3 color covariance, and Fourier amplitude mixing of the low-frequency
band. Both leave the content's spatial structure in place.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .samples import FaceSample

STYLE_MODES = ("color_wct", "fourier_mix")


@dataclass(frozen=True)
class StyleSpec:
    mode: str = "color_wct"
    epsilon: float = 1e-5
    beta_low: float = 0.1

    def __post_init__(self):
        if self.mode not in STYLE_MODES:
            raise ValueError(f"unknown style mode {self.mode!r}")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be > 0")
        if not 0.0 < self.beta_low <= 0.5:
            raise ValueError("beta_low must lie in (0, 0.5]")


def _color_stats(img: np.ndarray):
    flat = img.reshape(-1, 3)
    mean = flat.mean(axis=0)
    centered = flat - mean
    cov = centered.T @ centered / flat.shape[0]
    return mean, cov


def color_wct(content: np.ndarray, style: np.ndarray, epsilon: float = 1e-5, clip: bool = True):
    """Whiten the content's color distribution and re-color it with the style's.

    Whitening eigenvalues are clamped at ``epsilon`` so singular covariances
    (constant images) are handled without error; mean and covariance of the
    pre-clipping output match the style's exactly on non-degenerate content.
    """
    content = np.asarray(content, dtype=np.float64)
    style = np.asarray(style, dtype=np.float64)
    mc, cov_c = _color_stats(content)
    ms, cov_s = _color_stats(style)

    wc, vc = np.linalg.eigh(cov_c)
    whiten = vc @ np.diag(1.0 / np.sqrt(np.maximum(wc, epsilon))) @ vc.T
    ws, vs = np.linalg.eigh(cov_s)
    color = vs @ np.diag(np.sqrt(np.maximum(ws, 0.0))) @ vs.T

    flat = content.reshape(-1, 3)
    out = (flat - mc) @ (color @ whiten).T + ms
    out = out.reshape(content.shape)
    return np.clip(out, 0.0, 1.0) if clip else out


def fourier_mix(content: np.ndarray, style: np.ndarray, beta_low: float = 0.1, clip: bool = True):
    """Swap the low-frequency amplitude spectrum of the content for the style's.

    Per channel, amplitudes inside the centered square of half-width
    ``beta_low * min(H, W)`` are replaced; the content phase is kept
    everywhere, so spatial structure survives.
    """
    content = np.asarray(content, dtype=np.float64)
    style = np.asarray(style, dtype=np.float64)
    if content.shape != style.shape:
        raise ValueError("content and style must have the same shape")
    if not 0.0 < beta_low <= 0.5:
        raise ValueError("beta_low must lie in (0, 0.5]")

    h, w = content.shape[:2]
    half = beta_low * min(h, w)
    fy = np.arange(h) - h // 2
    fx = np.arange(w) - w // 2
    mask = (np.abs(fy)[:, None] <= half) & (np.abs(fx)[None, :] <= half)

    out = np.empty_like(content)
    for c in range(content.shape[2]):
        f_c = np.fft.fftshift(np.fft.fft2(content[..., c]))
        f_s = np.fft.fftshift(np.fft.fft2(style[..., c]))
        amp = np.abs(f_c)
        amp[mask] = np.abs(f_s)[mask]
        mixed = amp * np.exp(1j * np.angle(f_c))
        out[..., c] = np.real(np.fft.ifft2(np.fft.ifftshift(mixed)))
    return np.clip(out, 0.0, 1.0) if clip else out


def ism_augment(sample: FaceSample, style_pool, spec: StyleSpec, seed: int) -> FaceSample:
    """Restyle a sample with a seeded pick from the style pool.

    Label, identity ids, and landmarks are untouched; only pixel statistics
    change, and the result carries domain tag "ism".
    """
    if len(style_pool) == 0:
        raise ValueError("style pool must be non-empty")
    rng = np.random.default_rng([int(seed), 0x15])
    style = np.asarray(style_pool[int(rng.integers(0, len(style_pool)))])
    if spec.mode == "color_wct":
        out = color_wct(sample.image, style, spec.epsilon)
    else:
        out = fourier_mix(sample.image, style, spec.beta_low)
    return replace(
        sample,
        id=f"{sample.id}-ism",
        image=out,
        domain="ism",
        origin=sample.origin,
    )
