import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from evrot.errors import InvalidRotationError, ParseError, ProjectionError, UndistortionError
from evrot.geometry import (
    CameraModel,
    check_rotation,
    exp_map,
    exp_map_batch,
    geodesic_angle,
    hat,
    load_camera,
    log_map,
    log_map_batch,
    orthonormalize,
    parse_camera,
    pixel_to_sphere,
    random_rotation,
    rotate_batch,
    save_camera,
    sphere_to_pixel,
    undistort,
    vee,
)

finite = st.floats(-10, 10, allow_nan=False)
vec3 = st.tuples(finite, finite, finite).map(np.array)


def series_exp(v, terms=20):
    """Truncated power series of the matrix exponential."""
    K = hat(v)
    out = np.eye(3)
    term = np.eye(3)
    for n in range(1, terms + 1):
        term = term @ K / n
        out = out + term
    return out


def eig_axis_angle(R):
    """Axis from the eigenvector of eigenvalue 1, angle from the trace."""
    w, V = np.linalg.eig(R)
    axis = np.real(V[:, np.argmin(np.abs(w - 1.0))])
    angle = np.arccos(np.clip((np.trace(R) - 1) / 2, -1, 1))
    return axis / np.linalg.norm(axis), angle


class TestHat:
    def test_zero(self):
        assert np.array_equal(hat([0, 0, 0]), np.zeros((3, 3)))

    def test_z_basis(self):
        assert np.array_equal(hat([0, 0, 1]), [[0, -1, 0], [1, 0, 0], [0, 0, 0]])

    def test_matches_cross_product(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            v, w = rng.normal(size=(2, 3))
            expected = np.array([v[1] * w[2] - v[2] * w[1], v[2] * w[0] - v[0] * w[2], v[0] * w[1] - v[1] * w[0]])
            assert np.max(np.abs(hat(v) @ w - expected)) <= 1e-14

    @given(vec3)
    def test_skew_and_vee(self, v):
        M = hat(v)
        assert np.array_equal(M.T, -M)
        assert np.array_equal(vee(M), v)

    def test_conjugation(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            R = random_rotation(rng)
            v = rng.normal(size=3)
            assert np.max(np.abs(hat(R @ v) - R @ hat(v) @ R.T)) < 1e-12


class TestExpLog:
    def test_exp_zero(self):
        assert np.array_equal(exp_map([0, 0, 0]), np.eye(3))

    def test_quarter_turn(self):
        R = exp_map([0, 0, np.pi / 2])
        assert np.allclose(R @ [1, 0, 0], [0, 1, 0], atol=1e-15)

    def test_exp_vs_series(self):
        rng = np.random.default_rng(2)
        for _ in range(200):
            v = rng.normal(size=3)
            v *= rng.uniform(0, 1) / np.linalg.norm(v)
            assert np.max(np.abs(exp_map(v) - series_exp(v))) < 1e-12

    def test_exp_tiny_angle(self):
        v = np.array([3e-9, -1e-9, 2e-9])
        assert np.max(np.abs(exp_map(v) - series_exp(v))) < 1e-16

    def test_batch_matches_scalar(self):
        rng = np.random.default_rng(3)
        V = rng.normal(size=(50, 3))
        V[0] = 0
        V[1] = 1e-10
        Rs = exp_map_batch(V)
        for v, R in zip(V, Rs):
            assert np.max(np.abs(R - exp_map(v))) < 1e-14
        P = rng.normal(size=(50, 3))
        assert np.max(np.abs(rotate_batch(V, P) - np.einsum("nij,nj->ni", Rs, P))) < 1e-13

    def test_log_batch_matches_scalar(self):
        rng = np.random.default_rng(5)
        axes = rng.normal(size=(60, 3))
        axes /= np.linalg.norm(axes, axis=1, keepdims=True)
        angles = np.concatenate([[0.0, 1e-10, 3e-8, 1e-4, 2e-3, np.pi - 1e-6, np.pi], rng.uniform(0, np.pi, 53)])
        Rs = exp_map_batch(axes * angles[:, None])
        for R, v in zip(Rs, log_map_batch(Rs)):
            assert np.max(np.abs(v - log_map(R, check=False))) < 1e-15

    def test_log_identity(self):
        assert np.array_equal(log_map(np.eye(3)), np.zeros(3))

    def test_log_roundtrip_example(self):
        v = np.array([0.1, -0.2, 0.3])
        assert np.max(np.abs(log_map(exp_map(v)) - v)) < 1e-9

    @pytest.mark.parametrize("angle", [1e-9, 3e-8, 1e-6, 1e-4, 9e-4, 2e-3])
    def test_log_small_angles(self, angle):
        rng = np.random.default_rng(40)
        for _ in range(20):
            v = rng.normal(size=3)
            v *= angle / np.linalg.norm(v)
            assert np.linalg.norm(log_map(exp_map(v)) - v) < 1e-12 * max(1.0, angle / 1e-4)

    def test_log_at_pi(self):
        R = np.diag([-1.0, -1.0, 1.0])  # pi about z
        v = log_map(R)
        axis, angle = eig_axis_angle(R)
        assert abs(np.linalg.norm(v) - np.pi) < 1e-6
        assert abs(angle - np.pi) < 1e-6
        assert abs(abs(v @ axis) - np.pi) < 1e-6
        assert np.allclose(np.abs(v), [0, 0, np.pi], atol=1e-6)

    @pytest.mark.parametrize("gap", [1e-2, 1e-4, 1e-6, 1e-8])
    def test_log_near_pi_vs_eig(self, gap):
        rng = np.random.default_rng(4)
        for _ in range(20):
            axis = rng.normal(size=3)
            axis /= np.linalg.norm(axis)
            R = exp_map(axis * (np.pi - gap))
            v = log_map(R)
            assert np.max(np.abs(exp_map(v) - R)) < 1e-9
            ref_axis, ref_angle = eig_axis_angle(R)
            assert abs(np.linalg.norm(v) - ref_angle) < 1e-6
            assert abs(abs(v @ ref_axis) / np.linalg.norm(v) - 1) < 1e-6

    def test_log_rejects_non_rotation(self):
        with pytest.raises(InvalidRotationError):
            log_map(np.diag([1.0, 1.0, -1.0]))
        with pytest.raises(InvalidRotationError):
            log_map(np.eye(3) * (1 + 1e-6))
        check_rotation(np.eye(3) + 1e-12)

    def test_orthonormalize_explicit(self):
        R = exp_map([0.3, 0.2, -0.1]) + 1e-5
        with pytest.raises(InvalidRotationError):
            check_rotation(R)
        check_rotation(orthonormalize(R))

    def test_roundtrip_random(self):
        rng = np.random.default_rng(5)
        v = rng.normal(size=(5000, 3))
        v *= (rng.uniform(0, np.pi - 1e-3, size=5000) / np.linalg.norm(v, axis=1))[:, None]
        for x in v:
            assert np.linalg.norm(log_map(exp_map(x)) - x) < 1e-9

    @settings(max_examples=200)
    @given(vec3, vec3)
    def test_group_closure(self, a, b):
        check_rotation(exp_map(a) @ exp_map(b))

    @given(vec3, vec3)
    def test_norm_preservation(self, v, p):
        assert abs(np.linalg.norm(exp_map(v) @ p) - np.linalg.norm(p)) <= 1e-12 * max(1.0, np.linalg.norm(p))

    def test_geodesic_angle(self):
        R = random_rotation(np.random.default_rng(6))
        assert abs(geodesic_angle(R, R @ exp_map([0, 0.25, 0])) - 0.25) < 1e-12


@pytest.fixture
def cam():
    return CameraModel(fx=200, fy=200, cx=120, cy=90, width=240, height=180)


@pytest.fixture
def dcam():
    return CameraModel(fx=200, fy=210, cx=121.3, cy=88.7, width=240, height=180,
                       distortion=(-0.3, 0.08, 0.001, -0.002, 0.01))


class TestCamera:
    def test_undistort_identity_without_distortion(self, cam):
        assert np.array_equal(undistort(cam, [100, 50]), [100, 50])

    def test_principal_point_fixed(self, dcam):
        assert np.allclose(undistort(dcam, [dcam.cx, dcam.cy]), [dcam.cx, dcam.cy], atol=0)

    def test_k1_roundtrip(self):
        cam = CameraModel(fx=300, fy=300, cx=160, cy=120, width=320, height=240, distortion=(-0.3, 0, 0, 0, 0))
        for phi in np.linspace(0, 2 * np.pi, 17):
            pix = cam.normalized_to_pixel(0.5 * np.array([np.cos(phi), np.sin(phi)]))
            und = undistort(cam, pix)
            # oracle: the forward model
            back = cam.normalized_to_pixel(cam.distort_normalized(cam.pixel_to_normalized(und)))
            assert np.max(np.abs(back - pix)) < 1e-6

    def test_undistort_reports_nonconvergence(self):
        cam = CameraModel(fx=100, fy=100, cx=0, cy=0, width=10, height=10,
                          distortion=(-0.3, 0, 0, 0, 0), max_iterations=2)
        with pytest.raises(UndistortionError):
            undistort(cam, [80.0, 0.0])

    def test_principal_ray(self, cam):
        assert np.allclose(pixel_to_sphere(cam, [120, 90]), [0, 0, 1])

    def test_45_degrees(self, cam):
        assert np.allclose(pixel_to_sphere(cam, [320, 90]), [1 / np.sqrt(2), 0, 1 / np.sqrt(2)], atol=1e-15)

    def test_unit_norm_positive_z(self, dcam):
        rng = np.random.default_rng(7)
        pix = rng.uniform([-50, -50], [290, 230], size=(2000, 2))
        p = pixel_to_sphere(dcam, pix)
        assert np.max(np.abs(np.linalg.norm(p, axis=1) - 1)) < 1e-12
        assert np.all(p[:, 2] > 0)

    def test_sphere_to_pixel_center(self, dcam):
        assert np.allclose(sphere_to_pixel(dcam, [0, 0, 1]), [dcam.cx, dcam.cy], atol=1e-12)

    def test_roundtrip_in_bounds(self, dcam):
        rng = np.random.default_rng(8)
        pix = rng.uniform([0, 0], [240, 180], size=(1000, 2))
        back = sphere_to_pixel(dcam, pixel_to_sphere(dcam, pix))
        assert np.max(np.abs(back - pix)) < 1e-6

    def test_behind_camera(self, cam):
        with pytest.raises(ProjectionError):
            sphere_to_pixel(cam, [0, 0, -1])
        with pytest.raises(ProjectionError):
            sphere_to_pixel(cam, [1, 0, 0])

    def test_bearing_table(self, dcam):
        t = dcam.bearing_table
        assert t.shape == (180, 240, 3)
        assert np.allclose(t[17, 33], pixel_to_sphere(dcam, [33, 17]), atol=1e-15)

    def test_calibration_file_roundtrip(self, dcam, tmp_path):
        path = tmp_path / "cam.txt"
        save_camera(dcam, path)
        assert load_camera(path) == dcam

    def test_calibration_parse_errors(self):
        with pytest.raises(ParseError, match="line 2"):
            parse_camera("fx 1\nfy\n")
        with pytest.raises(ParseError, match="missing"):
            parse_camera("fx 200\nfy 200\n")
        with pytest.raises(ParseError, match="unknown"):
            parse_camera("fx 1\nfy 1\ncx 1\ncy 1\nwidth 2\nheight 2\nk9 0\n")

    def test_invalid_camera(self):
        with pytest.raises(ValueError):
            CameraModel(fx=-1, fy=1, cx=0, cy=0, width=1, height=1)
