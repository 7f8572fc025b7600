"""Procedural generator of face-like images with analytically known landmarks.

Stands in for real face datasets at desk scale: every sample is a pure
function of integer seeds, and the 21 semantic landmarks are computed in
closed form from the identity/nuisance parameters (no detector involved).

Shape vector layout (16 components, each in [-1, 1]):

  0 head width     4 eye height     8 mouth curvature   12 skin blue
  1 head height    5 nose length    9 mouth height      13 jaw/chin stretch
  2 eye spacing    6 nose width    10 skin red          14 iris shade
  3 eye size       7 mouth width   11 skin green        15 cheek shading
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from . import morphkit
from .samples import (
    LABEL_BONAFIDE,
    FaceSample,
    LandmarkSet,
    corner_points,
    write_corpus,
)

KNOWN_ATTACKS = ("lm", "self-morph")


@dataclass(frozen=True)
class IdentityParams:
    id: int
    shape: np.ndarray  # (16,) in [-1, 1]

    def __post_init__(self):
        shape = np.asarray(self.shape, dtype=np.float64)
        if shape.shape != (16,):
            raise ValueError(f"shape vector must have 16 components, got {shape.shape}")
        if np.any(np.abs(shape) > 1.0):
            raise ValueError("shape components must lie in [-1, 1]")
        object.__setattr__(self, "shape", shape)


@dataclass(frozen=True)
class NuisanceParams:
    pose_shift: tuple[float, float] = (0.0, 0.0)
    illum_angle: float = 0.0
    illum_strength: float = 0.0
    background_texture_seed: int = 0
    sensor_noise_sigma: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.illum_strength <= 0.3:
            raise ValueError("illumination strength must be in [0, 0.3]")
        if not 0.0 <= self.sensor_noise_sigma <= 0.05:
            raise ValueError("sensor noise sigma must be in [0, 0.05]")


def sample_identity(seed: int) -> IdentityParams:
    """Deterministic identity draw; the seed doubles as the identity id."""
    rng = np.random.default_rng([int(seed), 0x1D])
    return IdentityParams(id=int(seed), shape=rng.uniform(-1.0, 1.0, 16))


def sample_nuisance(seed: int, size: int = 64) -> NuisanceParams:
    rng = np.random.default_rng([int(seed), 0x2E])
    lim = 0.04 * size
    return NuisanceParams(
        pose_shift=(rng.uniform(-lim, lim), rng.uniform(-lim, lim)),
        illum_angle=rng.uniform(0.0, 2.0 * math.pi),
        illum_strength=rng.uniform(0.0, 0.3),
        background_texture_seed=int(rng.integers(0, 2**31 - 1)),
        sensor_noise_sigma=rng.uniform(0.002, 0.03),
    )


# head contour angles, y-down image coordinates: top, upper-right, right,
# jaw-right, chin, jaw-left, left, upper-left
_HEAD_ANGLES = np.deg2rad([-90.0, -45.0, 0.0, 40.0, 90.0, 140.0, 180.0, -135.0])


def _geometry(shape: np.ndarray, pose_shift, size: int) -> dict:
    s = shape
    S = float(size)
    cx = S / 2.0 + pose_shift[0]
    cy = S / 2.0 + pose_shift[1]
    geo = {
        "cx": cx,
        "cy": cy,
        "head_rx": S * (0.28 + 0.04 * s[0]),
        "head_ry": S * (0.36 + 0.03 * s[1]),
        "jaw_stretch": 1.0 + 0.08 * s[13],
        "eye_dx": S * (0.16 + 0.04 * s[2]),
        "eye_r": S * (0.035 + 0.012 * s[3]),
        "eye_y": cy - S * (0.10 + 0.02 * s[4]),
        "nose_w": S * (0.035 + 0.012 * s[6]),
        "mouth_w": S * (0.10 + 0.03 * s[7]),
        "mouth_curve": S * 0.02 * s[8],
        "lip_h": S * 0.018,
    }
    geo["nose_y"] = geo["eye_y"] + S * (0.14 + 0.03 * s[5])
    geo["mouth_y"] = geo["nose_y"] + S * (0.12 + 0.02 * s[9])
    return geo


def face_landmarks(params: IdentityParams, nuisance: NuisanceParams, size: int) -> LandmarkSet:
    """Closed-form landmark map: 21 semantic points plus the 4 image corners."""
    g = _geometry(params.shape, nuisance.pose_shift, size)
    cx, cy = g["cx"], g["cy"]
    pts = np.empty((25, 2), dtype=np.float64)

    for k, ang in enumerate(_HEAD_ANGLES):
        sin_a = math.sin(ang)
        ry = g["head_ry"] * (g["jaw_stretch"] if sin_a > 0 else 1.0)
        pts[k] = (cx + g["head_rx"] * math.cos(ang), cy + ry * sin_a)

    ey, er, edx = g["eye_y"], g["eye_r"], g["eye_dx"]
    lx, rx = cx - edx, cx + edx
    pts[8:11] = [(lx - er, ey), (lx, ey), (lx + er, ey)]
    pts[11:14] = [(rx - er, ey), (rx, ey), (rx + er, ey)]

    ny, nw = g["nose_y"], g["nose_w"]
    pts[14:17] = [(cx - nw, ny), (cx, ny), (cx + nw, ny)]

    my, mw, curve, lip = g["mouth_y"], g["mouth_w"], g["mouth_curve"], g["lip_h"]
    pts[17:21] = [(cx - mw, my + curve), (cx, my - lip), (cx + mw, my + curve), (cx, my + lip)]

    pts[21:25] = corner_points(size, size)
    return LandmarkSet(pts)


def _value_noise(seed, shape, grid=9):
    """Smooth per-channel noise field from a coarse bicubic-upsampled grid."""
    rng = np.random.default_rng(seed)
    coarse = rng.uniform(-1.0, 1.0, (grid, grid, 3))
    gy = np.linspace(0.0, grid - 1.0, shape[0])
    gx = np.linspace(0.0, grid - 1.0, shape[1])
    coords = np.stack(np.meshgrid(gy, gx, indexing="ij"))
    out = np.empty((shape[0], shape[1], 3))
    for c in range(3):
        out[..., c] = ndimage.map_coordinates(coarse[..., c], coords, order=3, mode="nearest")
    return out


def _soft(mask_q: np.ndarray, sharp: float = 6.0) -> np.ndarray:
    """Soft inside-mask from a normalized quadratic (1 at center, 1 = boundary)."""
    return np.clip((1.0 - mask_q) * sharp, 0.0, 1.0)


def render_face(
    params: IdentityParams,
    nuisance: NuisanceParams,
    size: int,
    sample_id: str | None = None,
    domain: str = "synth",
    split: str = "train",
) -> FaceSample:
    """Render one bona fide sample; deterministic in (params, nuisance, size)."""
    if size < 32:
        raise ValueError(f"size must be >= 32, got {size}")
    s = params.shape
    g = _geometry(s, nuisance.pose_shift, size)
    cx, cy = g["cx"], g["cy"]

    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)

    noise = _value_noise([nuisance.background_texture_seed, 0x0B], (size, size))
    img = 0.55 + 0.09 * noise * np.array([1.0, 0.9, 0.8])

    # head: ellipse with a jaw-stretched lower half
    dx, dy = xx - cx, yy - cy
    ry = np.where(dy > 0, g["head_ry"] * g["jaw_stretch"], g["head_ry"])
    e_head = (dx / g["head_rx"]) ** 2 + (dy / ry) ** 2
    m_head = _soft(e_head)
    skin = np.array([0.80, 0.62, 0.50]) + 0.10 * s[10:13]
    shade = 1.0 - 0.10 * s[15] * np.clip(e_head, 0.0, 1.0)
    face = skin[None, None, :] * shade[..., None]
    img = img * (1.0 - m_head[..., None]) + face * m_head[..., None]

    # eyes with pupils
    pupil_v = 0.12 + 0.06 * s[14]
    for ex in (cx - g["eye_dx"], cx + g["eye_dx"]):
        dxe, dye = xx - ex, yy - g["eye_y"]
        m_eye = _soft((dxe / g["eye_r"]) ** 2 + (dye / (0.62 * g["eye_r"])) ** 2)
        img = img * (1.0 - m_eye[..., None]) + 0.93 * m_eye[..., None]
        m_pup = _soft((dxe**2 + dye**2) / (0.45 * g["eye_r"]) ** 2)
        img = img * (1.0 - m_pup[..., None]) + pupil_v * m_pup[..., None]

    # nose wedge + nostril dots
    bridge_y = g["eye_y"] + 0.02 * size
    span = np.clip((yy - bridge_y) / max(g["nose_y"] - bridge_y, 1e-6), 0.0, 1.0)
    inside = np.clip((span * g["nose_w"] - np.abs(dx)) * 2.0, 0.0, 1.0)
    yband = np.clip((g["nose_y"] - yy) * 2.0, 0.0, 1.0) * np.clip((yy - bridge_y) * 2.0, 0.0, 1.0)
    m_nose = inside * yband
    img = img * (1.0 - 0.10 * m_nose[..., None])
    for nx in (cx - g["nose_w"], cx + g["nose_w"]):
        m_dot = _soft(((xx - nx) ** 2 + (yy - g["nose_y"]) ** 2) / (0.016 * size) ** 2)
        img = img * (1.0 - 0.45 * m_dot[..., None])

    # mouth: parabolic lip band
    band_c = g["mouth_y"] + g["mouth_curve"] * (dx / g["mouth_w"]) ** 2
    q = np.maximum(((yy - band_c) / g["lip_h"]) ** 2, (dx / g["mouth_w"]) ** 2)
    m_mouth = _soft(q, sharp=5.0)
    lip = np.array([0.62, 0.30, 0.30])
    img = img * (1.0 - m_mouth[..., None]) + lip[None, None, :] * m_mouth[..., None]

    # multiplicative illumination ramp
    proj = xx * math.cos(nuisance.illum_angle) + yy * math.sin(nuisance.illum_angle)
    lo, hi = proj.min(), proj.max()
    grad = 2.0 * (proj - lo) / max(hi - lo, 1e-9) - 1.0
    img = img * (1.0 + nuisance.illum_strength * grad[..., None])

    if nuisance.sensor_noise_sigma > 0:
        rng = np.random.default_rng([nuisance.background_texture_seed, 0x17])
        img = img + rng.normal(0.0, nuisance.sensor_noise_sigma, img.shape)

    img = np.clip(img, 0.0, 1.0)
    return FaceSample(
        id=sample_id or f"bf-{params.id:04d}",
        image=img,
        landmarks=face_landmarks(params, nuisance, size),
        label=LABEL_BONAFIDE,
        identity_ids=[params.id],
        domain=domain,
        split=split,
    )


@dataclass
class CorpusConfig:
    """Knobs for one synthetic corpus (bona fide renders plus optional attacks).

    Cross-identity "lm" morphs are built from train-split instances (one per
    distinct identity pair) and tagged train; "self-morph" morphs are built
    from test-split instances and tagged test, so they form a held-out attack.
    """

    out_dir: str
    identities: int = 10
    instances: int = 4
    attacks: tuple = ()
    seed: int = 0
    size: int = 64
    train_fraction: float = 0.75
    domain: str = "synth"
    sm_per_identity: int = 2
    alpha: float = 0.5
    color_bias: tuple = (0.0, 0.0, 0.0)


def _child_seed(*parts) -> int:
    return int(np.random.SeedSequence(list(parts)).generate_state(1)[0])


def build_corpus(config: CorpusConfig) -> str:
    """Generate a corpus under ``config.out_dir``; returns the manifest path.

    Content is a pure function of the config, so the manifest hash is
    reproducible. Per-sample seeds are derived independently from the corpus
    seed, keeping sample generation order-free.
    """
    for attack in config.attacks:
        if attack not in KNOWN_ATTACKS:
            raise ValueError(f"unknown attack tag {attack!r}; known: {KNOWN_ATTACKS}")
    n_train = int(round(config.train_fraction * config.instances))
    n_train = min(max(n_train, 0), config.instances)

    renders: dict[tuple[int, int], FaceSample] = {}
    samples: list[FaceSample] = []
    bias = np.asarray(config.color_bias, dtype=np.float64)

    for i in range(config.identities):
        ident = sample_identity(_child_seed(config.seed, 1, i))
        for k in range(config.instances):
            nuis = sample_nuisance(_child_seed(config.seed, 2, i, k), config.size)
            split = "train" if k < n_train else "test"
            smp = render_face(
                ident,
                nuis,
                config.size,
                sample_id=f"bf-{i:03d}-{k:02d}",
                domain=config.domain,
                split=split,
            )
            if np.any(bias != 0.0):
                smp.image = np.clip(smp.image + bias, 0.0, 1.0)
            renders[(i, k)] = smp
            samples.append(smp)

    if "lm" in config.attacks:
        if n_train < 1:
            raise ValueError("lm attack requires at least one train instance per identity")
        for a in range(config.identities):
            for b in range(a + 1, config.identities):
                rng = np.random.default_rng([config.seed, 3, a, b])
                ka = int(rng.integers(0, n_train))
                kb = int(rng.integers(0, n_train))
                spec = morphkit.MorphSpec(alpha=config.alpha, seed=_child_seed(config.seed, 3, a, b))
                morph = morphkit.cross_morph(renders[(a, ka)], renders[(b, kb)], spec)
                morph.id = morph.origin = f"m-lm-{a:03d}-{b:03d}"
                morph.split = "train"
                morph.domain = config.domain
                samples.append(morph)

    if "self-morph" in config.attacks:
        n_test = config.instances - n_train
        if n_test < 2:
            raise ValueError("self-morph attack requires >= 2 test instances per identity")
        for i in range(config.identities):
            for k in range(config.sm_per_identity):
                rng = np.random.default_rng([config.seed, 4, i, k])
                p, q = rng.choice(np.arange(n_train, config.instances), size=2, replace=False)
                spec = morphkit.MorphSpec(
                    alpha=config.alpha,
                    seed=_child_seed(config.seed, 4, i, k),
                    pre_augment_ops=morphkit.sample_transform_ops(rng),
                )
                morph = morphkit.self_morph(renders[(i, int(p))], renders[(i, int(q))], spec)
                morph.id = morph.origin = f"m-sm-{i:03d}-{k}"
                morph.split = "test"
                morph.domain = config.domain
                samples.append(morph)

    return write_corpus(samples, config.out_dir)
