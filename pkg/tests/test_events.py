import io

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from evrot.errors import ConfigError, ParseError
from evrot.events import (
    Event,
    EventArray,
    FrameConfig,
    compensate_frame,
    estimate_omega,
    format_events,
    iter_event_file,
    iter_segments,
    max_warp_angle,
    parse_event_stream,
    segment_events,
    write_events,
)
from evrot.geometry import CameraModel, exp_map, pixel_to_sphere


def make_events(t, u=None, v=None):
    t = np.asarray(t, dtype=float)
    n = len(t)
    u = np.zeros(n, int) if u is None else u
    v = np.zeros(n, int) if v is None else v
    return EventArray(t, u, v, np.ones(n))


class TestParse:
    def test_single_line(self):
        ev = parse_event_stream("0.000100 12 34 1\n")
        assert ev[0] == Event(t=1e-4, u=12, v=34, p=1)

    def test_negative_polarity(self):
        assert parse_event_stream("0.5 1 2 0")[0].p == -1

    def test_empty(self):
        assert len(parse_event_stream("")) == 0
        assert len(parse_event_stream(io.StringIO(""))) == 0

    def test_decreasing_timestamp(self):
        with pytest.raises(ParseError, match="line 2") as info:
            parse_event_stream("0.2 1 1 1\n0.1 1 1 1\n")
        assert info.value.lineno == 2

    @pytest.mark.parametrize("bad", ["0.1 1 1", "0.1 a 1 1", "0.1 1 1 2", "-0.1 1 1 1", "0.1 1.5 1 1"])
    def test_malformed_line_number(self, bad):
        with pytest.raises(ParseError) as info:
            parse_event_stream(f"0.0 1 1 1\n{bad}\n0.3 1 1 1\n")
        assert info.value.lineno == 2

    def test_out_of_bounds_names_event(self):
        with pytest.raises(ParseError, match=r"u=240") as info:
            parse_event_stream("0.1 239 0 1\n0.2 240 5 1\n", width=240, height=180)
        assert info.value.lineno == 2

    def test_byte_roundtrip(self, tmp_path):
        text = "0.000100 12 34 1\n0.000100 13 34 0\n0.001250 0 179 1\n"
        ev = parse_event_stream(text)
        assert format_events(ev) == text
        path = tmp_path / "ev.txt"
        path.write_text(text)
        buf = io.StringIO()
        write_events(parse_event_stream(path), buf)
        assert buf.getvalue() == text

    @given(st.lists(st.tuples(st.integers(0, 10**9), st.integers(0, 239), st.integers(0, 179), st.booleans()),
                    max_size=30))
    def test_roundtrip_property(self, rows):
        rows.sort(key=lambda r: r[0])
        text = "".join(f"{t / 1e9:.9f} {u} {v} {int(p)}\n" for t, u, v, p in rows)
        assert format_events(parse_event_stream(text)) == text

    def test_chunked_file_reader(self, tmp_path):
        rng = np.random.default_rng(0)
        t = np.sort(rng.uniform(0, 1, 5000))
        ev = EventArray(t, rng.integers(0, 10, 5000), rng.integers(0, 10, 5000), np.ones(5000))
        write_events(ev, tmp_path / "e.txt")
        parts = list(iter_event_file(tmp_path / "e.txt", chunk_lines=300))
        assert len(parts) > 1
        joined = EventArray.concatenate(parts)
        assert np.allclose(joined.t, t, atol=1e-9, rtol=0) and np.array_equal(joined.u, ev.u)

    def test_chunked_reader_global_line_numbers(self, tmp_path):
        lines = [f"{i * 1e-3:.6f} 1 1 1\n" for i in range(2000)]
        lines[1500] = "oops\n"
        (tmp_path / "e.txt").write_text("".join(lines))
        with pytest.raises(ParseError) as info:
            list(iter_event_file(tmp_path / "e.txt", chunk_lines=100))
        assert info.value.lineno == 1501


class TestSegmentation:
    def test_config_validation(self):
        with pytest.raises(ConfigError, match="^f"):
            FrameConfig(f=0)
        with pytest.raises(ConfigError, match="^n"):
            FrameConfig(n=10, min_events=20)

    def test_segment_count(self):
        t = np.arange(0, 5.0, 1e-4)
        segs = segment_events(make_events(t), FrameConfig(f=1000, n=1500, min_events=1))
        assert len(segs) == 5000
        assert all(s.count == 10 for s in segs)

    def test_truncation(self):
        segs = segment_events(make_events([0.0001, 0.0002, 0.0003]), FrameConfig(f=1000, n=2, min_events=1))
        assert len(segs) == 1
        assert np.array_equal(segs[0].events.t, [0.0001, 0.0002])
        assert segs[0].count == 3

    def test_empty_segment_skipped(self):
        segs = segment_events(make_events([0.0, 0.0005, 0.0035]), FrameConfig(f=1000, n=5, min_events=1))
        assert [s.skipped for s in segs] == [False, True, True, False]
        assert [s.index for s in segs] == [0, 1, 2, 3]

    def test_min_events(self):
        segs = segment_events(make_events([0.0, 0.0001, 0.0012]), FrameConfig(f=1000, n=5, min_events=2))
        assert [s.skipped for s in segs] == [False, True]

    def test_anchor_at_first_event(self):
        segs = segment_events(make_events([10.0004, 10.0012, 10.0015]), FrameConfig(f=1000, n=5, min_events=1))
        assert segs[0].t_start == 10.0004
        assert [s.count for s in segs] == [2, 1]

    def test_chunking_is_transparent(self):
        rng = np.random.default_rng(1)
        t = np.sort(rng.exponential(1e-4, 20000).cumsum())
        ev = make_events(t)
        cfg = FrameConfig(f=1000, n=30, min_events=3)
        whole = segment_events(ev, cfg)
        cuts = np.sort(rng.choice(len(t), 40, replace=False))
        chunks = [ev[a:b] for a, b in zip(np.r_[0, cuts], np.r_[cuts, len(t)])]
        parts = list(iter_segments(chunks, cfg))
        assert len(parts) == len(whole)
        for a, b in zip(whole, parts):
            assert (a.index, a.t_start, a.count, a.skipped) == (b.index, b.t_start, b.count, b.skipped)
            if not a.skipped:
                assert a.events.equals(b.events)

    def test_cardinality(self):
        rng = np.random.default_rng(2)
        t = np.sort(rng.uniform(0, 0.2, 30000))
        cfg = FrameConfig(f=1000, n=100, min_events=120 - 100)
        for s in segment_events(make_events(t), cfg):
            if not s.skipped:
                assert cfg.min_events <= len(s.events) <= cfg.n


def euler_zy(alpha, beta):
    ca, sa, cb, sb = np.cos(alpha), np.sin(alpha), np.cos(beta), np.sin(beta)
    Rz = np.array([[ca, -sa, 0], [sa, ca, 0], [0, 0, 1]])
    Ry = np.array([[cb, 0, sb], [0, 1, 0], [-sb, 0, cb]])
    return Rz @ Ry, Ry


class TestOmega:
    def test_bootstrap(self):
        assert np.array_equal(estimate_omega([(0.0, np.eye(3))]), np.zeros(3))
        assert np.array_equal(estimate_omega([]), np.zeros(3))

    def test_formula(self):
        w = estimate_omega([(0.0, np.eye(3)), (0.001, exp_map([0, 0, 0.01]))])
        assert np.allclose(w, [0, 0, 10], atol=1e-9)

    def test_equal_timestamps(self):
        with pytest.raises(ValueError):
            estimate_omega([(1.0, np.eye(3)), (1.0, np.eye(3))])

    def test_smooth_trajectory(self):
        # R(t) = Rz(alpha) Ry(beta): body rate = Ry^T (alpha' e_z) + beta' e_y
        a0, a1, fa = 3.0, 0.3, 2.0
        b1, fb = 0.2, 1.5
        for t in np.arange(0.002, 2.0, 0.0137):
            def pose(s):
                return euler_zy(a0 * s + a1 * np.sin(fa * s), b1 * np.sin(fb * s))[0]

            alpha_dot = a0 + a1 * fa * np.cos(fa * t)
            beta_dot = b1 * fb * np.cos(fb * t)
            _, Ry = euler_zy(0, b1 * np.sin(fb * t))
            truth = Ry.T @ [0, 0, alpha_dot] + np.array([0, beta_dot, 0])
            est = estimate_omega([(t - 1e-3, pose(t - 1e-3)), (t, pose(t))])
            assert np.linalg.norm(est - truth) <= 0.01 * np.linalg.norm(truth)


@pytest.fixture
def cam():
    return CameraModel(fx=200, fy=200, cx=120, cy=90, width=240, height=180,
                       distortion=(-0.05, 0.01, 0.0005, -0.0005, 0.0))


class TestCompensation:
    def test_zero_omega_is_projection(self, cam):
        ev = EventArray([0.1, 0.1002], [10, 200], [5, 170], [1, -1])
        frame = compensate_frame(ev, np.zeros(3), cam)
        assert frame.t0 == 0.1
        assert np.allclose(frame.points, pixel_to_sphere(cam, [[10, 5], [200, 170]]), atol=1e-15)

    def test_first_event_unchanged_and_unit_norm(self, cam):
        rng = np.random.default_rng(3)
        t = np.sort(rng.uniform(0, 1e-3, 500))
        ev = EventArray(t, rng.integers(0, 240, 500), rng.integers(0, 180, 500), np.ones(500))
        frame = compensate_frame(ev, [1.0, -2.0, 3.0], cam)
        assert np.array_equal(frame.points[0], cam.bearings(ev.u[:1], ev.v[:1])[0])
        assert np.max(np.abs(np.linalg.norm(frame.points, axis=1) - 1)) < 1e-12

    def test_warp_angle_example(self):
        omega = np.array([0.0, np.deg2rad(120.0), 0.0])
        ev = make_events([0.0, 0.121e-3])
        assert np.isclose(np.rad2deg(max_warp_angle(ev, omega)), 0.0145, atol=5e-5)

    def test_warp_sign_undoes_rotation(self, cam):
        # a fixed world direction seen at t_i by a camera spinning at omega
        omega = np.array([0.3, -2.0, 0.5])
        world = pixel_to_sphere(cam, [150.0, 80.0])
        ts = np.linspace(0, 2e-3, 9)
        seen = []
        for t in ts:
            d = exp_map(omega * t).T @ world
            seen.append(d)
        # exact bearings (no pixel rounding) pushed through the same warp
        from evrot.geometry import rotate_batch

        warped = rotate_batch((ts - ts[0])[:, None] * omega, np.array(seen))
        assert np.max(np.abs(warped - world)) < 1e-12
