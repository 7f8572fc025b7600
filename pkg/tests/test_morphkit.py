import numpy as np
import pytest

from morphdet import synthface
from morphdet.morphkit import (
    MorphSpec,
    TransformOp,
    cross_morph,
    delaunay,
    pre_augment,
    sample_transform_ops,
    self_morph,
    warp_blend,
)


def _render(ident_seed, nuis_seed, size=64, **kwargs):
    return synthface.render_face(
        synthface.sample_identity(ident_seed), synthface.sample_nuisance(nuis_seed), size, **kwargs
    )


def circumcircle(a, b, c):
    ax, ay = a
    bx, by = b
    cx, cy = c
    d = 2.0 * (ax * (by - cy) + bx * (cy - ay) + cx * (ay - by))
    ux = ((ax**2 + ay**2) * (by - cy) + (bx**2 + by**2) * (cy - ay) + (cx**2 + cy**2) * (ay - by)) / d
    uy = ((ax**2 + ay**2) * (cx - bx) + (bx**2 + by**2) * (ax - cx) + (cx**2 + cy**2) * (bx - ax)) / d
    r = np.hypot(ax - ux, ay - uy)
    return (ux, uy), r


def brute_force_empty_circumcircle(points, triangles, tol=1e-9):
    """Oracle: no point lies strictly inside any triangle's circumcircle."""
    for tri in triangles:
        (ux, uy), r = circumcircle(*[points[v] for v in tri])
        for k, (px, py) in enumerate(points):
            if k in tri:
                continue
            if np.hypot(px - ux, py - uy) < r - tol:
                return False
    return True


def hull_area(points):
    from scipy.spatial import ConvexHull

    return ConvexHull(points).volume


def tri_area(points, tri):
    a, b, c = (points[v] for v in tri)
    return 0.5 * abs((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))


class TestDelaunay:
    def test_square_two_triangles(self):
        mesh = delaunay(np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]))
        assert len(mesh.triangles) == 2

    def test_square_plus_center(self):
        pts = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0], [0.5, 0.5]])
        mesh = delaunay(pts)
        assert len(mesh.triangles) == 4
        assert brute_force_empty_circumcircle(pts, mesh.triangles)

    def test_covering_property(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            pts = rng.uniform(0, 10, (rng.integers(5, 20), 2))
            mesh = delaunay(pts)
            total = sum(tri_area(pts, t) for t in mesh.triangles)
            assert abs(total - hull_area(pts)) < 1e-6

    def test_empty_circumcircle_brute_force(self):
        rng = np.random.default_rng(7)
        for _ in range(100):
            pts = rng.uniform(0, 100, (rng.integers(4, 26), 2))
            mesh = delaunay(pts)
            assert brute_force_empty_circumcircle(pts, mesh.triangles)

    def test_deterministic_on_cocircular(self):
        pts = np.array([[0.0, 0.0], [2.0, 0.0], [2.0, 2.0], [0.0, 2.0]])
        assert delaunay(pts).triangles == delaunay(pts).triangles

    def test_collinear_raises(self):
        with pytest.raises(ValueError):
            delaunay(np.array([[0.0, 0.0], [1.0, 1.0], [2.0, 2.0], [3.0, 3.0]]))

    def test_too_few_points(self):
        with pytest.raises(ValueError):
            delaunay(np.array([[0.0, 0.0], [1.0, 1.0]]))


class TestWarpBlend:
    def test_identity_warp(self):
        s = _render(1, 1)
        out, _ = warp_blend(s.image, s.landmarks, s.image, s.landmarks, 0.5)
        assert np.abs(out - s.image).max() <= 1e-6

    def test_landmark_interpolation_exact(self):
        a = _render(1, 1)
        b = _render(2, 2)
        alpha = 0.37
        _, lms = warp_blend(a.image, a.landmarks, b.image, b.landmarks, alpha)
        expect = alpha * a.landmarks.points + (1 - alpha) * b.landmarks.points
        assert np.array_equal(lms, expect)

    def test_single_point_midpoint(self):
        a = _render(1, 1)
        b = _render(2, 2)
        la = a.landmarks.points.copy()
        lb = b.landmarks.points.copy()
        la[9] = (10.0, 10.0)
        lb[9] = (20.0, 20.0)
        _, lms = warp_blend(a.image, la, b.image, lb, 0.5)
        assert tuple(lms[9]) == (15.0, 15.0)

    def test_constant_blend_oracle(self):
        # warps of constant images are constant, so every pixel is the blend
        red = np.zeros((64, 64, 3))
        red[..., 0] = 1.0
        blue = np.zeros((64, 64, 3))
        blue[..., 2] = 1.0
        a = _render(1, 1)
        b = _render(2, 2)
        out, _ = warp_blend(red, a.landmarks, blue, b.landmarks, 0.5)
        assert np.abs(out - np.array([0.5, 0.0, 0.5])).max() <= 1e-9

    def test_blend_symmetry(self):
        a = _render(3, 1)
        b = _render(4, 2)
        o1, _ = warp_blend(a.image, a.landmarks, b.image, b.landmarks, 0.3)
        o2, _ = warp_blend(b.image, b.landmarks, a.image, a.landmarks, 0.7)
        assert np.abs(o1 - o2).max() <= 1e-6

    def test_pixel_range(self):
        a = _render(5, 1)
        b = _render(6, 2)
        out, _ = warp_blend(a.image, a.landmarks, b.image, b.landmarks, 0.5)
        assert out.min() >= 0.0 and out.max() <= 1.0

    def test_shape_mismatch(self):
        a = _render(1, 1)
        b = _render(2, 2)
        with pytest.raises(ValueError):
            warp_blend(a.image, a.landmarks, b.image[:32], b.landmarks, 0.5)
        with pytest.raises(ValueError):
            warp_blend(a.image, a.landmarks.points[:10], b.image, b.landmarks, 0.5)


class TestPreAugment:
    def test_zero_magnitudes_bit_exact(self):
        s = _render(1, 1)
        ops = [TransformOp(k, 0.0) for k in
               ("color_shift", "gaussian_noise", "blur", "contrast",
                "brightness", "shear", "translate", "jpeg_compress")]
        out = pre_augment(s.image, ops, seed=3)
        assert np.array_equal(out, s.image)

    def test_requires_ops(self):
        with pytest.raises(ValueError):
            pre_augment(np.zeros((8, 8, 3)), [], seed=0)

    def test_gaussian_noise_magnitude(self):
        const = np.full((64, 64, 3), 0.5)
        for m in (0.3, 0.6, 1.0):
            out = pre_augment(const, [TransformOp("gaussian_noise", m)], seed=11)
            sigma = np.std(out - const)
            assert abs(sigma - 0.05 * m) <= 0.1 * (0.05 * m)

    def test_translate_centroid_shift(self):
        delta = np.zeros((64, 64, 3))
        delta[32, 32] = 1.0
        for m in (0.25, 0.5, 1.0):
            out = pre_augment(delta, [TransformOp("translate", m)], seed=4)
            (cy, cx) = np.argwhere(out[..., 0] > 0)[0]
            assert np.hypot(cy - 32, cx - 32) == round(8 * m)

    def test_output_range_random_chains(self):
        s = _render(2, 5)
        for seed in range(10):
            ops = sample_transform_ops(np.random.default_rng(seed), count=4, hi=1.0)
            out = pre_augment(s.image, ops, seed=seed)
            assert out.min() >= 0.0 and out.max() <= 1.0

    def test_geometric_ops_move_landmarks(self):
        s = _render(1, 1)
        out, pts = pre_augment(
            s.image, [TransformOp("translate", 0.5)], seed=4, landmarks=s.landmarks
        )
        moved = pts[:21] - s.landmarks.points[:21]
        assert np.all(np.hypot(moved[:, 0], moved[:, 1]) > 0)
        # frame anchors stay pinned
        assert np.array_equal(pts[21:], s.landmarks.points[21:])

    def test_deterministic(self):
        s = _render(1, 1)
        ops = [TransformOp("gaussian_noise", 0.5), TransformOp("contrast", 0.5)]
        assert np.array_equal(pre_augment(s.image, ops, 9), pre_augment(s.image, ops, 9))


class TestSelfMorph:
    def test_identity_case(self):
        s = _render(1, 1)
        spec = MorphSpec(alpha=0.4, pre_augment_ops=[TransformOp("blur", 0.0)], seed=0)
        out = self_morph(s, s, spec)
        assert np.abs(out.image - s.image).max() <= 1e-6

    def test_contract_fields(self):
        a = _render(1, 1)
        b = _render(1, 2)
        out = self_morph(a, b, MorphSpec(alpha=0.5, seed=1))
        assert out.label == "morph"
        assert out.attack == "self-morph"
        assert out.identity_ids == [1, 1]
        out.validate()

    def test_landmarks_midway_for_pose_shift(self):
        params = synthface.sample_identity(5)
        n0 = synthface.NuisanceParams(pose_shift=(0.0, 0.0))
        n1 = synthface.NuisanceParams(pose_shift=(4.0, 0.0))
        a = synthface.render_face(params, n0, 64)
        b = synthface.render_face(params, n1, 64)
        out = self_morph(a, b, MorphSpec(alpha=0.5, seed=0))
        expect = 0.5 * a.landmarks.points + 0.5 * b.landmarks.points
        assert np.abs(out.landmarks.points[:21] - expect[:21]).max() <= 1e-12

    def test_rejects_cross_identity(self):
        with pytest.raises(ValueError):
            self_morph(_render(1, 1), _render(2, 2), MorphSpec(alpha=0.5))

    def test_psnr_identity_morph(self):
        s = _render(8, 3)
        out = self_morph(s, s, MorphSpec(alpha=0.25, seed=0))
        mse = np.mean((out.image - s.image) ** 2)
        psnr = 10 * np.log10(1.0 / max(mse, 1e-300))
        assert psnr >= 50.0


class TestCrossMorph:
    def test_contract_fields(self):
        out = cross_morph(_render(1, 1), _render(2, 2), MorphSpec(alpha=0.5))
        assert out.label == "morph"
        assert out.attack == "lm"
        assert out.identity_ids == [1, 2]
        out.validate()

    def test_alpha_near_one_recovers_first_input(self):
        a = _render(1, 1)
        b = _render(2, 2)
        out = cross_morph(a, b, MorphSpec(alpha=0.999))
        assert np.abs(out.image - a.image).mean() <= 2.0 / 255.0

    def test_swapped_arguments_symmetric(self):
        a = _render(3, 1)
        b = _render(4, 2)
        o1 = cross_morph(a, b, MorphSpec(alpha=0.4))
        o2 = cross_morph(b, a, MorphSpec(alpha=0.6))
        assert np.abs(o1.image - o2.image).max() <= 1e-6

    def test_rejects_same_identity(self):
        with pytest.raises(ValueError):
            cross_morph(_render(1, 1), _render(1, 2), MorphSpec(alpha=0.5))

    def test_alpha_bounds(self):
        with pytest.raises(ValueError):
            MorphSpec(alpha=0.0)
        with pytest.raises(ValueError):
            MorphSpec(alpha=1.0)
