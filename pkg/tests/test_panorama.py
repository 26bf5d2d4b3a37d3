import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import ndimage

from evrot.errors import ConfigError, ProjectionError
from evrot.evaluation import RotationTrajectory
from evrot.events import EventArray
from evrot.panorama import (
    PanoramaSpec,
    accumulate,
    cylinder_to_pixel,
    normalize_counts,
    read_pgm,
    render_events,
    render_panorama,
    sphere_to_cylinder,
    window_points,
    write_pgm,
)
from evrot.sim import default_camera, generate_edge_scene

IDENTITY = np.eye(3)


def random_sphere(rng, n):
    p = rng.normal(size=(n, 3))
    return p / np.linalg.norm(p, axis=1, keepdims=True)


class TestProjection:
    def test_equator_fixed(self):
        assert np.allclose(sphere_to_cylinder([1.0, 0, 0]), [1, 0, 0])

    def test_forced_example(self):
        s = np.sqrt(0.5)
        assert np.allclose(sphere_to_cylinder([s, 0, s]), [1, 0, 1])

    def test_pole_raises(self):
        with pytest.raises(ProjectionError):
            sphere_to_cylinder([0, 0, 1.0])

    def test_on_unit_circle(self):
        pc = sphere_to_cylinder(random_sphere(np.random.default_rng(0), 1000))
        assert np.allclose(np.hypot(pc[:, 0], pc[:, 1]), 1.0, atol=1e-14)

    def test_seam_center(self):
        spec = PanoramaSpec(width=400, height=200)
        assert cylinder_to_pixel([1, 0, 0], spec) == (0.0, 100.0)

    def test_top_edge(self):
        spec = PanoramaSpec(width=400, height=200, phi_v=np.deg2rad(90))
        col, row = cylinder_to_pixel([0, 1, np.tan(np.deg2rad(45))], spec)
        assert row == 0.0 and col == pytest.approx(100.0)

    def test_out_of_range(self):
        spec = PanoramaSpec(phi_v=np.deg2rad(90))
        assert cylinder_to_pixel([1, 0, 1.01], spec) is None
        half = PanoramaSpec(phi_h=np.pi)
        assert cylinder_to_pixel([-1, -1e-3, 0], half) is None

    @pytest.mark.parametrize("field,kw", [
        ("phi_h", {"phi_h": 7.0}), ("phi_v", {"phi_v": np.pi}), ("width", {"width": 0}),
        ("percentile", {"percentile": 0.0}),
    ])
    def test_spec_validation(self, field, kw):
        with pytest.raises(ConfigError) as exc:
            PanoramaSpec(**kw)
        assert exc.value.field == field


class TestRender:
    def test_single_point(self):
        img = render_panorama([[1.0, 0.0, 0.0]], PanoramaSpec(width=100, height=50), IDENTITY)
        assert np.count_nonzero(img.image) == 1 and img.image.max() == 255

    def test_empty(self):
        img = render_panorama(np.empty((0, 3)), PanoramaSpec(width=10, height=5))
        assert img.image.shape == (5, 10) and not img.image.any()

    def test_doubling_counts(self):
        rng = np.random.default_rng(1)
        counts = rng.poisson(2.0, size=(40, 80))
        assert np.array_equal(normalize_counts(counts), normalize_counts(2 * counts))

    def test_normalization_formula(self):
        counts = np.array([[0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10]])
        c90 = np.quantile(np.arange(1, 11), 0.9)
        expect = np.minimum(255, np.rint(255 * counts / c90))
        assert np.array_equal(normalize_counts(counts), expect)

    def test_conservation(self):
        rng = np.random.default_rng(2)
        spec = PanoramaSpec(width=300, height=150)
        P = random_sphere(rng, 20000)
        counts = accumulate(P, spec, IDENTITY)
        inside = np.abs(P[:, 2]) / np.hypot(P[:, 0], P[:, 1]) <= spec.z_max
        assert counts.sum() == inside.sum()
        assert counts.min() >= 0

    def test_deterministic(self):
        P = random_sphere(np.random.default_rng(3), 5000)
        a = render_panorama(P, PanoramaSpec(width=200, height=100))
        b = render_panorama(P, PanoramaSpec(width=200, height=100))
        assert np.array_equal(a.counts, b.counts) and np.array_equal(a.image, b.image)

    def test_merge_order_free(self):
        P = random_sphere(np.random.default_rng(4), 4000)
        spec = PanoramaSpec(width=200, height=100)
        whole = accumulate(P, spec)
        parts = accumulate(P[:1500], spec) + accumulate(P[1500:], spec)
        assert np.array_equal(whole, parts)

    def test_resolution_consistency(self):
        scene = generate_edge_scene(0)
        small = render_panorama(scene.landmarks, PanoramaSpec(width=1000, height=500)).counts > 0
        big = render_panorama(scene.landmarks, PanoramaSpec(width=2000, height=1000)).counts > 0
        down = big.reshape(500, 2, 1000, 2).max(axis=(1, 3))
        grow = np.ones((3, 3), dtype=bool)
        assert not (down & ~ndimage.binary_dilation(small, grow)).any()
        assert not (small & ~ndimage.binary_dilation(down, grow)).any()

    @settings(max_examples=200, deadline=None)
    @given(st.floats(-np.pi / 2, np.pi / 2), st.floats(1e-6, 0.05), st.floats(-0.5, 0.5))
    def test_seam_continuity(self, elev, delta, z):
        spec = PanoramaSpec(width=2000, height=1000)
        a, b = -0.5 * delta, 0.5 * delta
        pts = np.array([[np.cos(a), np.sin(a), z], [np.cos(b), np.sin(b), z]])
        pts /= np.linalg.norm(pts, axis=1, keepdims=True)
        ca, _ = cylinder_to_pixel(sphere_to_cylinder(pts[0]), spec)
        cb, _ = cylinder_to_pixel(sphere_to_cylinder(pts[1]), spec)
        ia, ib = int(ca), int(cb)
        circ = min(abs(ia - ib), spec.width - abs(ia - ib))
        assert circ <= np.ceil(delta / spec.phi_h * spec.width) + 1


class TestEventWindow:
    def test_window_selection(self):
        cam = default_camera()
        traj = RotationTrajectory([0.0, 1e-3], [np.eye(3), np.eye(3)])
        ev = EventArray([0.0001, 0.0003, 0.0011, 0.0015], [10, 11, 12, 13], [20, 20, 20, 20], [1, 0, 1, 0])
        pts = window_points(ev, traj, cam, window=0.2e-3)
        assert len(pts) == 2
        assert np.allclose(pts, cam.bearings(np.array([10, 12]), np.array([20, 20])))

    def test_rotated_by_pose(self):
        cam = default_camera()
        from evrot.geometry import exp_map

        R = exp_map([0, 0.3, 0])
        traj = RotationTrajectory([0.0], [R])
        ev = EventArray([0.0], [50], [60], [1])
        assert np.allclose(window_points(ev, traj, cam)[0], R @ cam.bearings(np.array([50]), np.array([60]))[0])

    def test_render_events_runs(self):
        cam = default_camera()
        traj = RotationTrajectory([0.0], [np.eye(3)])
        ev = EventArray([0.0, 0.0001], [10, 200], [20, 100], [1, 0])
        img = render_events(ev, traj, cam, PanoramaSpec(width=200, height=100))
        assert img.counts.sum() == 2


def test_pgm_roundtrip(tmp_path):
    img = np.random.default_rng(5).integers(0, 256, size=(7, 13)).astype(np.uint8)
    write_pgm(img, tmp_path / "a.pgm")
    assert (tmp_path / "a.pgm").read_bytes().startswith(b"P5\n13 7\n255\n")
    assert np.array_equal(read_pgm(tmp_path / "a.pgm"), img)
