"""Landmark-based morphing: Delaunay warping, the pre-morph transform bank,
self-morphs (same identity, two instances) and cross-identity morphs.

Magnitude-to-parameter maps for the transform bank (magnitude m in [0, 1]):

  color_shift     per-channel offset, uniform in +-0.2*m
  gaussian_noise  additive noise, sigma = 0.05*m
  blur            Gaussian sigma = 2*m px
  contrast        factor 1 + 0.8*m*u about mid-gray, u ~ U(-1, 1)
  brightness      offset 0.3*m*u, u ~ U(-1, 1)
  shear           horizontal shear 0.3*m*u about the image center
  translate       round(8*m) px along a seeded axis direction
  jpeg_compress   encode/decode at quality round(100 - 70*m)

An op with magnitude 0 returns its input bit-exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from scipy.spatial import Delaunay as _SciDelaunay
from scipy.spatial import QhullError

from .samples import LABEL_BONAFIDE, LABEL_MORPH, N_SEMANTIC, FaceSample, LandmarkSet, corner_points

TRANSFORM_KINDS = (
    "color_shift",
    "gaussian_noise",
    "blur",
    "contrast",
    "brightness",
    "shear",
    "translate",
    "jpeg_compress",
)


@dataclass(frozen=True)
class TransformOp:
    kind: str
    magnitude: float

    def __post_init__(self):
        if self.kind not in TRANSFORM_KINDS:
            raise ValueError(f"unknown transform kind {self.kind!r}")
        if not 0.0 <= self.magnitude <= 1.0:
            raise ValueError("transform magnitude must be in [0, 1]")


@dataclass(frozen=True)
class MorphSpec:
    alpha: float = 0.5
    method: str = "lm"
    pre_augment_ops: tuple = ()
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie in the open interval (0, 1)")
        object.__setattr__(self, "pre_augment_ops", tuple(self.pre_augment_ops))


@dataclass(frozen=True)
class TriangleMesh:
    triangles: tuple  # tuple of (i, j, k) index triples


def sample_transform_ops(rng, count: int = 3, lo: float = 0.1, hi: float = 0.5) -> list:
    """Seeded draw of distinct transform-bank ops with moderate magnitudes."""
    kinds = rng.choice(TRANSFORM_KINDS, size=count, replace=False)
    return [TransformOp(kind=str(k), magnitude=float(rng.uniform(lo, hi))) for k in kinds]


def _as_points(landmarks) -> np.ndarray:
    if isinstance(landmarks, LandmarkSet):
        return landmarks.points
    pts = np.asarray(landmarks, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ValueError(f"landmarks must be (N, 2), got {pts.shape}")
    return pts


def delaunay(landmarks) -> TriangleMesh:
    """Delaunay triangulation with deterministic tie-breaking.

    Points are passed to the triangulator in lexicographic order so that
    cocircular configurations resolve the same way on every run.
    """
    pts = _as_points(landmarks)
    if len(pts) < 3:
        raise ValueError("need at least 3 points to triangulate")
    order = np.lexsort((pts[:, 1], pts[:, 0]))
    try:
        tri = _SciDelaunay(pts[order])
    except QhullError as exc:
        raise ValueError(f"degenerate geometry, cannot triangulate: {exc}") from exc
    triangles = []
    for simplex in tri.simplices:
        mapped = tuple(sorted(int(order[v]) for v in simplex))
        a, b, c = pts[mapped[0]], pts[mapped[1]], pts[mapped[2]]
        area = 0.5 * abs((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
        if area < 1e-12:
            raise ValueError("triangulation produced a degenerate (zero-area) triangle")
        triangles.append(mapped)
    return TriangleMesh(triangles=tuple(sorted(triangles)))


def _bilinear(img: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    h, w = img.shape[:2]
    x = np.clip(x, 0.0, w - 1.0)
    y = np.clip(y, 0.0, h - 1.0)
    x0 = np.floor(x).astype(np.intp)
    y0 = np.floor(y).astype(np.intp)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    wx = (x - x0)[..., None]
    wy = (y - y0)[..., None]
    return (
        img[y0, x0] * (1 - wx) * (1 - wy)
        + img[y0, x1] * wx * (1 - wy)
        + img[y1, x0] * (1 - wx) * wy
        + img[y1, x1] * wx * wy
    )


def _warp_coords(points: np.ndarray, mesh: TriangleMesh, dst: np.ndarray, src: np.ndarray):
    """Map pixel centers through the piecewise-affine dst->src transform.

    Pixels outside every triangle keep their own coordinates (with
    corner-augmented landmark sets the mesh covers the full frame, so this
    fallback is never hit there).
    """
    n = len(points)
    sx = points[:, 0].astype(np.float64).copy()
    sy = points[:, 1].astype(np.float64).copy()
    unassigned = np.ones(n, dtype=bool)
    for i, j, k in mesh.triangles:
        if not unassigned.any():
            break
        ax, ay = dst[i]
        bx, by = dst[j]
        cx, cy = dst[k]
        det = (bx - ax) * (cy - ay) - (cx - ax) * (by - ay)
        if abs(det) < 1e-12:
            continue
        vx = points[:, 0] - ax
        vy = points[:, 1] - ay
        l1 = ((cy - ay) * vx - (cx - ax) * vy) / det
        l2 = (-(by - ay) * vx + (bx - ax) * vy) / det
        l0 = 1.0 - l1 - l2
        inside = unassigned & (l0 >= -1e-9) & (l1 >= -1e-9) & (l2 >= -1e-9)
        if not inside.any():
            continue
        sx[inside] = l0[inside] * src[i, 0] + l1[inside] * src[j, 0] + l2[inside] * src[k, 0]
        sy[inside] = l0[inside] * src[i, 1] + l1[inside] * src[j, 1] + l2[inside] * src[k, 1]
        unassigned[inside] = False
    return sx, sy


def warp_blend(img_a, lm_a, img_b, lm_b, alpha: float):
    """Morph two landmarked images.

    Output landmarks are exactly ``alpha*lm_a + (1-alpha)*lm_b``; both images
    are piecewise-affinely warped onto that geometry through its Delaunay
    mesh and pixel-blended with weights (alpha, 1-alpha).

    Returns ``(image, landmarks)`` with the image clipped to [0, 1].
    """
    a_pts = _as_points(lm_a)
    b_pts = _as_points(lm_b)
    img_a = np.asarray(img_a, dtype=np.float64)
    img_b = np.asarray(img_b, dtype=np.float64)
    if a_pts.shape != b_pts.shape:
        raise ValueError("landmark sets must have the same cardinality and ordering")
    if img_a.shape != img_b.shape:
        raise ValueError("images must have the same shape")

    target = alpha * a_pts + (1.0 - alpha) * b_pts
    mesh = delaunay(target)

    h, w = img_a.shape[:2]
    yy, xx = np.mgrid[0:h, 0:w]
    pix = np.stack([xx.ravel(), yy.ravel()], axis=1).astype(np.float64)

    ax, ay = _warp_coords(pix, mesh, target, a_pts)
    bx, by = _warp_coords(pix, mesh, target, b_pts)
    warped_a = _bilinear(img_a, ax, ay).reshape(img_a.shape)
    warped_b = _bilinear(img_b, bx, by).reshape(img_b.shape)

    out = np.clip(alpha * warped_a + (1.0 - alpha) * warped_b, 0.0, 1.0)
    return out, target


def _shift_image(img: np.ndarray, dx: int, dy: int) -> np.ndarray:
    out = np.zeros_like(img)
    h, w = img.shape[:2]
    xs_src = slice(max(0, -dx), min(w, w - dx))
    ys_src = slice(max(0, -dy), min(h, h - dy))
    xs_dst = slice(max(0, dx), min(w, w + dx))
    ys_dst = slice(max(0, dy), min(h, h + dy))
    out[ys_dst, xs_dst] = img[ys_src, xs_src]
    return out


def pre_augment(img: np.ndarray, ops, seed: int, landmarks=None):
    """Apply a seeded chain of transform-bank ops.

    Geometric ops (shear, translate) move the semantic landmarks along with
    the pixels when a landmark set is supplied; the 4 corner anchors stay
    pinned so downstream triangulations keep covering the frame.

    Returns the image, or ``(image, landmarks)`` when landmarks were given.
    """
    if not ops:
        raise ValueError("ops must be non-empty")
    rng = np.random.default_rng(seed)
    img = np.asarray(img, dtype=np.float64)
    pts = None if landmarks is None else _as_points(landmarks).copy()
    h, w = img.shape[:2]

    for op in ops:
        m = op.magnitude
        if m == 0.0:
            continue
        if op.kind == "color_shift":
            img = np.clip(img + rng.uniform(-0.2 * m, 0.2 * m, 3), 0.0, 1.0)
        elif op.kind == "gaussian_noise":
            img = np.clip(img + rng.normal(0.0, 0.05 * m, img.shape), 0.0, 1.0)
        elif op.kind == "blur":
            img = ndimage.gaussian_filter(img, sigma=(2.0 * m, 2.0 * m, 0.0), mode="nearest")
        elif op.kind == "contrast":
            f = 1.0 + 0.8 * m * rng.uniform(-1.0, 1.0)
            img = np.clip((img - 0.5) * f + 0.5, 0.0, 1.0)
        elif op.kind == "brightness":
            img = np.clip(img + 0.3 * m * rng.uniform(-1.0, 1.0), 0.0, 1.0)
        elif op.kind == "shear":
            s = 0.3 * m * rng.uniform(-1.0, 1.0)
            cy = (h - 1) / 2.0
            yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
            img = _bilinear(img, xx - s * (yy - cy), yy)
            if pts is not None:
                sem = pts[:N_SEMANTIC]
                sem[:, 0] = np.clip(sem[:, 0] + s * (sem[:, 1] - cy), 0.0, w - 1.0)
        elif op.kind == "translate":
            k = int(round(8.0 * m))
            axis = rng.integers(0, 4)
            dx, dy = [(k, 0), (-k, 0), (0, k), (0, -k)][axis]
            img = _shift_image(img, dx, dy)
            if pts is not None:
                sem = pts[:N_SEMANTIC]
                sem[:, 0] = np.clip(sem[:, 0] + dx, 0.0, w - 1.0)
                sem[:, 1] = np.clip(sem[:, 1] + dy, 0.0, h - 1.0)
        elif op.kind == "jpeg_compress":
            from .postops import jpeg_cycle

            img = jpeg_cycle(img, quality=int(round(100.0 - 70.0 * m)), resolution=h)
        else:  # pragma: no cover - TransformOp already validates
            raise ValueError(f"unknown transform kind {op.kind!r}")

    if landmarks is None:
        return img
    return img, pts


def _snap_corners(points: np.ndarray, w: int, h: int) -> np.ndarray:
    pts = points.copy()
    pts[N_SEMANTIC:] = corner_points(w, h)
    return pts


def self_morph(inst_i: FaceSample, inst_j: FaceSample, spec: MorphSpec) -> FaceSample:
    """Morph two instances of the same identity, pre-augmenting the first."""
    if inst_i.label != LABEL_BONAFIDE or inst_j.label != LABEL_BONAFIDE:
        raise ValueError("self-morph inputs must both be bona fide")
    if inst_i.identity_ids != inst_j.identity_ids:
        raise ValueError(
            "self-morph requires two instances of the same identity "
            "(cross-identity morphing is a different attack)"
        )
    if inst_i.landmarks is None or inst_j.landmarks is None:
        raise ValueError("self-morph requires landmarked samples")

    if spec.pre_augment_ops:
        aug_img, aug_pts = pre_augment(
            inst_i.image, spec.pre_augment_ops, spec.seed, inst_i.landmarks
        )
    else:
        aug_img, aug_pts = inst_i.image, inst_i.landmarks.points

    out_img, out_pts = warp_blend(aug_img, aug_pts, inst_j.image, inst_j.landmarks, spec.alpha)
    h, w = out_img.shape[:2]
    ident = inst_i.identity_ids[0]
    return FaceSample(
        id=f"sm-{inst_i.id}+{inst_j.id}",
        image=out_img,
        landmarks=LandmarkSet(_snap_corners(out_pts, w, h)),
        label=LABEL_MORPH,
        identity_ids=[ident, ident],
        domain=inst_i.domain,
        attack="self-morph",
        split=inst_i.split,
    )


def cross_morph(a: FaceSample, b: FaceSample, spec: MorphSpec) -> FaceSample:
    """Landmark morph of two distinct identities (no pre-augmentation)."""
    if a.label != LABEL_BONAFIDE or b.label != LABEL_BONAFIDE:
        raise ValueError("cross-morph inputs must both be bona fide")
    if a.identity_ids == b.identity_ids:
        raise ValueError("cross-morph requires two distinct identities")
    if a.landmarks is None or b.landmarks is None:
        raise ValueError("cross-morph requires landmarked samples")

    out_img, out_pts = warp_blend(a.image, a.landmarks, b.image, b.landmarks, spec.alpha)
    h, w = out_img.shape[:2]
    return FaceSample(
        id=f"lm-{a.id}+{b.id}",
        image=out_img,
        landmarks=LandmarkSet(_snap_corners(out_pts, w, h)),
        label=LABEL_MORPH,
        identity_ids=[a.identity_ids[0], b.identity_ids[0]],
        domain=a.domain,
        attack="lm",
        split=a.split,
    )
