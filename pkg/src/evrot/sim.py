"""Idealized rotation-only event simulator with exact ground truth.

A landmark is a fixed world direction. Once visible, it fires an event
whenever its projection has moved at least ``pixel_threshold`` pixels since
its last event. On entering the view its reference point is set a random
sub-threshold distance from its projection, so first events are staggered
the way random initial brightness states stagger them on a real sensor.
That is enough geometric ground truth to exercise the full tracking
pipeline without a photometric model.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from . import _kernels as K
from .errors import ConfigError, SimulationError
from .evaluation import RotationTrajectory
from .events import EventArray
from .geometry import CameraModel, exp_map, exp_map_batch, right_jacobian

DEFAULT_STEP = 1e-5
DEFAULT_THRESHOLD = 1.0

# average speed of the slowest DM-like sequence is ~50 deg/s; rate_scale multiplies it
DM_BASE_SPEED_DEG = 50.0
LD_SPEED_DEG = 107.0


@dataclass(frozen=True)
class Scene:
    landmarks: np.ndarray
    seed: int = 0

    def __post_init__(self):
        L = np.ascontiguousarray(self.landmarks, dtype=float).reshape(-1, 3)
        if np.any(np.abs(np.linalg.norm(L, axis=1) - 1.0) > 1e-12):
            raise ValueError("scene landmarks must be unit vectors")
        L.flags.writeable = False
        object.__setattr__(self, "landmarks", L)

    def __len__(self):
        return len(self.landmarks)


def _cap_frame(axis):
    a = np.asarray(axis, dtype=float)
    a = a / np.linalg.norm(a)
    helper = np.array([1.0, 0, 0]) if abs(a[0]) < 0.9 else np.array([0, 1.0, 0])
    e1 = np.cross(a, helper)
    e1 /= np.linalg.norm(e1)
    return np.stack([e1, np.cross(a, e1), a], axis=1)


def sample_cap(rng, count, axis=(0, 0, 1), half_angle=np.deg2rad(100)):
    """``count`` directions uniform on the cap of angular radius ``half_angle`` around ``axis``."""
    z = rng.uniform(np.cos(half_angle), 1.0, count)
    phi = rng.uniform(0.0, 2 * np.pi, count)
    r = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    local = np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)
    pts = local @ _cap_frame(axis).T
    return pts / np.linalg.norm(pts, axis=1, keepdims=True)


def generate_scene(seed, count, axis=(0, 0, 1), half_angle=np.deg2rad(100)):
    """Isolated landmarks drawn uniformly from a spherical cap."""
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    return Scene(sample_cap(np.random.default_rng(seed), count, axis, half_angle), seed)


def generate_edge_scene(seed, n_edges=250, spacing=0.003, axis=(0, 0, 1), half_angle=np.deg2rad(100),
                        length_range=(0.05, 0.25)):
    """Landmarks densely spaced along short great-circle arcs ("edges").

    Point-to-line alignment needs locally linear structure, which isolated
    landmarks do not provide. Landmarks are shuffled so that truncating a
    busy time slice does not favour one region of the scene.
    """
    rng = np.random.default_rng(seed)
    centers = sample_cap(rng, n_edges, axis, half_angle)
    pts = []
    for c in centers:
        t = np.cross(c, rng.normal(size=3))
        t /= np.linalg.norm(t)
        length = rng.uniform(*length_range)
        s = np.arange(-length / 2, length / 2, spacing)
        pts.append(np.cos(s)[:, None] * c + np.sin(s)[:, None] * t)
    pts = np.concatenate(pts)
    pts /= np.linalg.norm(pts, axis=1, keepdims=True)
    return Scene(pts[rng.permutation(len(pts))], seed)


@dataclass(frozen=True)
class MotionProfile:
    """Closed-form rotation vector ``theta(t) = rate * t + a * sin(2 pi f t + phase)``.

    ``constant_rate`` uses only ``rate`` (rad/s); ``sinusoidal_multi_axis``
    uses the per-axis ``amplitude`` (rad), ``frequency`` (Hz) and
    ``phase`` (rad). The camera-to-world rotation is ``exp_map(theta(t))``.
    """

    kind: str
    duration: float
    rate: tuple = (0.0, 0.0, 0.0)
    amplitude: tuple = (0.0, 0.0, 0.0)
    frequency: tuple = (0.0, 0.0, 0.0)
    phase: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        for name in ("rate", "amplitude", "frequency", "phase"):
            val = np.asarray(getattr(self, name), dtype=float)
            if val.shape != (3,) or not np.all(np.isfinite(val)):
                raise ConfigError(name, "expected three finite values")
            object.__setattr__(self, name, tuple(float(x) for x in val))
        if self.kind not in ("constant_rate", "sinusoidal_multi_axis"):
            raise ConfigError("kind", f"unknown motion kind {self.kind!r}")
        if not self.duration > 0:
            raise ConfigError("duration", f"must be > 0, got {self.duration}")
        if self.kind == "constant_rate" and any(self.amplitude):
            raise ConfigError("amplitude", "constant_rate profiles have no sinusoidal part")
        if self.kind == "sinusoidal_multi_axis" and any(self.rate):
            raise ConfigError("rate", "sinusoidal profiles have no constant-rate part")

    @classmethod
    def constant_rate(cls, omega, duration):
        return cls("constant_rate", duration, rate=tuple(omega))

    @classmethod
    def sinusoidal(cls, amplitude, frequency, duration, phase=(0.0, 0.0, 0.0)):
        return cls("sinusoidal_multi_axis", duration, amplitude=tuple(amplitude),
                   frequency=tuple(frequency), phase=tuple(phase))

    def theta(self, t):
        """Rotation vector(s) at time(s) ``t``; shape ``(..., 3)``."""
        t = np.asarray(t, dtype=float)[..., None]
        a, f, ph = (np.array(x) for x in (self.amplitude, self.frequency, self.phase))
        return np.array(self.rate) * t + a * np.sin(2 * np.pi * f * t + ph)

    def theta_dot(self, t):
        t = np.asarray(t, dtype=float)[..., None]
        a, f, ph = (np.array(x) for x in (self.amplitude, self.frequency, self.phase))
        return np.array(self.rate) + a * 2 * np.pi * f * np.cos(2 * np.pi * f * t + ph)

    def max_rate_bound(self):
        """Upper bound on the body angular speed (rad/s) over all time."""
        a, f = np.array(self.amplitude), np.array(self.frequency)
        return float(np.linalg.norm(self.rate) + np.linalg.norm(a * 2 * np.pi * f))


def _check_time(profile, t):
    t = np.asarray(t, dtype=float)
    if np.any(t < 0) or np.any(t > profile.duration):
        raise ValueError(f"t must lie in [0, {profile.duration}], got {t.min() if t.ndim else t}")
    return t


def trajectory_at(profile, t):
    """Ground-truth camera-to-world rotation at time ``t`` (scalar or array)."""
    t = _check_time(profile, t)
    th = profile.theta(t)
    return exp_map(th) if th.ndim == 1 else exp_map_batch(th)


def angular_velocity(profile, t):
    """Body angular velocity (rad/s): ``R^T dR/dt = hat(Jr(theta) theta')``."""
    t = float(_check_time(profile, t))
    return right_jacobian(profile.theta(t)) @ profile.theta_dot(t)


def mean_speed(profile, step=1e-3):
    ts = np.arange(0.0, profile.duration, step)
    return float(np.mean([np.linalg.norm(angular_velocity(profile, t)) for t in ts]))


def _scaled_sinusoid(amplitude, base_frequency, duration, speed):
    """Sinusoidal profile whose frequencies are scaled to average ``speed`` rad/s."""
    base = np.array(base_frequency, dtype=float)

    def gap(s):
        return mean_speed(MotionProfile.sinusoidal(amplitude, base * s, duration), step=2e-3) - speed

    s = brentq(gap, 1e-3, 1e3, xtol=1e-6)
    return MotionProfile.sinusoidal(amplitude, tuple(base * s), duration)


# the DM-like profile swings mostly in yaw (camera y), starting at rest orientation
DM_AMPLITUDE = (0.30, 0.90, 0.35)
DM_FREQUENCY = (0.31, 0.23, 0.37)
LD_AMPLITUDE = (0.35, 1.30, 0.30)
LD_FREQUENCY = (0.071, 0.053, 0.089)
# LD covers a wider cap, so it gets more edges at about the same density
DM_EDGES = 500
LD_EDGES = 600


def default_camera():
    """240x180 sensor with mild radial and tangential distortion."""
    return CameraModel(fx=200.0, fy=200.0, cx=119.5, cy=89.5, width=240, height=180,
                       distortion=(-0.05, 0.01, 0.0005, -0.0005, 0.0))


@dataclass
class Preset:
    name: str
    scene: Scene
    profile: MotionProfile
    camera: CameraModel = field(default_factory=default_camera)
    pixel_threshold: float = DEFAULT_THRESHOLD


def dm_preset(rate_scale=1.0, duration=5.0, seed=0, n_edges=DM_EDGES):
    """DM-like sequence: multi-axis sinusoid averaging ``50 * rate_scale`` deg/s."""
    speed = np.deg2rad(DM_BASE_SPEED_DEG * rate_scale)
    profile = _scaled_sinusoid(DM_AMPLITUDE, DM_FREQUENCY, duration, speed)
    scene = generate_edge_scene(seed, n_edges=n_edges, half_angle=np.deg2rad(100))
    return Preset("dm", scene, profile)


def ld_preset(rate_scale=1.0, duration=80.0, seed=0, n_edges=LD_EDGES):
    """LD-like sequence: long, slower multi-axis sinusoid averaging ``107 * rate_scale`` deg/s."""
    speed = np.deg2rad(LD_SPEED_DEG * rate_scale)
    profile = _scaled_sinusoid(LD_AMPLITUDE, LD_FREQUENCY, duration, speed)
    scene = generate_edge_scene(seed, n_edges=n_edges, half_angle=np.deg2rad(115))
    return Preset("ld", scene, profile)


PRESETS = {"dm": dm_preset, "ld": ld_preset}


def make_preset(name, rate_scale=1.0, duration=None, seed=0):
    if name not in PRESETS:
        raise ConfigError("preset", f"unknown preset {name!r} (choose from {sorted(PRESETS)})")
    kwargs = {"rate_scale": rate_scale, "seed": seed}
    if duration is not None:
        kwargs["duration"] = duration
    return PRESETS[name](**kwargs)


# --------------------------------------------------------------------------
# Event generation
# --------------------------------------------------------------------------


def _steps_per_second(dt):
    sps = round(1.0 / dt)
    if sps < 1 or abs(sps * dt - 1.0) > 1e-9:
        raise ConfigError("dt", f"1/dt must be an integer number of steps per second, got dt={dt}")
    return sps


def _visibility_cone(camera, margin=np.deg2rad(0.5)):
    """Half-angle of a cone around the optical axis containing every pixel's ray."""
    W, H = camera.width, camera.height
    border = np.concatenate([
        np.stack([np.arange(W), np.zeros(W)], 1), np.stack([np.arange(W), np.full(W, H - 1)], 1),
        np.stack([np.zeros(H), np.arange(H)], 1), np.stack([np.full(H, W - 1), np.arange(H)], 1),
    ]).astype(float)
    # half a pixel beyond the border still rounds in bounds
    centre = np.array([camera.cx, camera.cy])
    out = centre + (border - centre) * (1 + 1.0 / np.linalg.norm(border - centre, axis=1, keepdims=True))
    z = camera.pixels_to_sphere(out)[:, 2]
    return float(np.arccos(z.min()) + margin)


def _pixel_lipschitz(camera, cone_half, n=120, safety=1.25):
    """Bound on pixel speed per unit angular speed of a direction inside the cone."""
    ang = np.linspace(0, cone_half, n)
    phi = np.linspace(0, 2 * np.pi, n, endpoint=False)
    A, P = np.meshgrid(ang, phi)
    x = np.stack([np.sin(A) * np.cos(P), np.sin(A) * np.sin(P), np.cos(A)], -1).reshape(-1, 3)
    h = 1e-6
    e1 = np.cross(x, [0.3, 0.5, 0.8])
    e1 /= np.linalg.norm(e1, axis=1, keepdims=True)
    e2 = np.cross(x, e1)
    cols = []
    for e in (e1, e2):
        cols.append((camera.sphere_to_pixels(x + h * e) - camera.sphere_to_pixels(x - h * e)) / (2 * h))
    J = np.stack(cols, axis=-1)
    return safety * float(np.max(np.linalg.norm(J, ord=2, axis=(1, 2))))


def _camera_vector(camera):
    k1, k2, p1, p2, k3 = camera.distortion
    return np.array([camera.fx, camera.fy, camera.cx, camera.cy, k1, k2, p1, p2, k3], dtype=float)


def iter_simulated_events(scene, profile, camera, pixel_threshold=DEFAULT_THRESHOLD, dt=DEFAULT_STEP,
                          chunk_steps=2000):
    """Stream time-ordered ``EventArray`` chunks for a rotation-only sequence.

    Events are stamped on the ``dt`` grid (``t = j / steps_per_second``),
    ordered by time then landmark index. Chunking does not change the stream.
    """
    if not pixel_threshold > 0:
        raise ConfigError("pixel_threshold", f"must be > 0, got {pixel_threshold}")
    sps = _steps_per_second(dt)
    n_steps = int(np.floor(profile.duration * sps + 1e-9)) + 1
    L = np.ascontiguousarray(scene.landmarks)
    nl = len(L)
    cam = _camera_vector(camera)
    cone_half = _visibility_cone(camera)
    w_max = max(profile.max_rate_bound(), 1e-12)
    ang_step = w_max / sps
    pix_step = _pixel_lipschitz(camera, cone_half) * ang_step
    state = dict(
        next_step=np.zeros(nl, dtype=np.int64),
        ref_u=np.zeros(nl),
        ref_v=np.zeros(nl),
        has_ref=np.zeros(nl, dtype=np.bool_),
        pol=np.ones(nl, dtype=np.int8),
    )
    # sub-threshold reference offsets, uniform in the disk of radius pixel_threshold
    rng = np.random.default_rng([scene.seed, 0x5EED])
    rad = pixel_threshold * np.sqrt(rng.uniform(0.0, 1.0, nl)) * (1.0 - 1e-9)
    phi = rng.uniform(0.0, 2 * np.pi, nl)
    off_u, off_v = rad * np.cos(phi), rad * np.sin(phi)
    cap = max(4096, 2 * nl)
    for j0 in range(0, n_steps, chunk_steps):
        m = min(chunk_steps, n_steps - j0)
        Rs = exp_map_batch(profile.theta(np.arange(j0, j0 + m) / sps))
        while True:
            saved = {k: v.copy() for k, v in state.items()}
            out = (np.empty(cap, np.int64), np.empty(cap, np.int64), np.empty(cap, np.int32),
                   np.empty(cap, np.int32), np.empty(cap, np.int8))
            n = K.simulate_chunk(L, Rs, j0, cam, camera.width, camera.height, float(pixel_threshold),
                                 np.cos(cone_half), cone_half, ang_step, pix_step, state["next_step"],
                                 state["ref_u"], state["ref_v"], state["has_ref"], state["pol"],
                                 off_u, off_v, *out)
            if n >= 0:
                break
            state = saved
            cap *= 2
        if n == 0:
            continue
        oj, oi, ou, ov, op = (a[:n] for a in out)
        order = np.lexsort((oi, oj))
        yield EventArray(oj[order] / sps, ou[order], ov[order], op[order], time_decimals=6)


def ground_truth(profile, dt=DEFAULT_STEP):
    """Ground-truth trajectory sampled on the simulator's ``dt`` grid."""
    sps = _steps_per_second(dt)
    n_steps = int(np.floor(profile.duration * sps + 1e-9)) + 1
    t = np.arange(n_steps) / sps
    return RotationTrajectory(t, exp_map_batch(profile.theta(t)), validate=False)


def simulate_events(scene, profile, camera, pixel_threshold=DEFAULT_THRESHOLD, dt=DEFAULT_STEP):
    """``(events, ground_truth)`` for a whole sequence; raises if no event fires."""
    events = EventArray.concatenate(
        list(iter_simulated_events(scene, profile, camera, pixel_threshold, dt))
    )
    if not len(events):
        raise SimulationError("no events were generated: the scene is never visible or the camera never moves")
    events.time_decimals = 6 if _steps_per_second(dt) <= 10**6 else 9
    return events, ground_truth(profile, dt)
