"""Tracking and mapping loop: segment, compensate, align, insert keyframes."""

import logging
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import AlignmentError, ConfigError, DegenerateGeometryError, ParseError, RunError
from .evaluation import RotationTrajectory
from .events import (
    EventArray,
    FrameConfig,
    compensate_frame,
    estimate_omega,
    iter_event_file,
    iter_segments,
    parse_event_stream,
)
from .geometry import CameraModel, exp_map, load_camera, parse_key_values
from .icp import IcpConfig, align_frame
from .panorama import PanoramaSpec
from .spherical_map import MapConfig, SphericalMap, is_keyframe

log = logging.getLogger(__name__)

FAILURE_LIMIT = 0.5

# config-file key -> (section, field, type)
_CONFIG_KEYS = {
    "f": ("frame", "f", float),
    "n": ("frame", "n", int),
    "min_events": ("frame", "min_events", int),
    "k": ("icp", "k_neighbors", int),
    "max_iterations": ("icp", "max_iterations", int),
    "convergence_eps": ("icp", "convergence_eps", float),
    "max_corr_dist": ("icp", "max_corr_dist", float),
    "line_condition_min": ("icp", "line_condition_min", float),
    "theta_t": ("map", "theta_t", float),
    "voxel_size": ("map", "voxel_size", float),
}


@dataclass
class PipelineConfig:
    camera: CameraModel
    frame: FrameConfig = field(default_factory=FrameConfig)
    icp: IcpConfig = field(default_factory=IcpConfig)
    map: MapConfig = field(default_factory=MapConfig)
    panorama: PanoramaSpec = None
    out_dir: Path = None
    camera_path: Path = None

    @classmethod
    def from_mapping(cls, values, camera=None, base_dir=None, source="<config>"):
        """Build from ``key -> str`` pairs; ``camera`` names a calibration file unless given directly."""
        values = dict(values)
        cam_path = values.pop("camera", None)
        out = values.pop("out", None)
        sections = {"frame": {}, "icp": {}, "map": {}}
        for key, raw in values.items():
            if key not in _CONFIG_KEYS:
                raise ConfigError(key, f"unknown configuration key in {source}")
            section, name, typ = _CONFIG_KEYS[key]
            try:
                val = typ(float(raw)) if typ is int else typ(raw)
            except (TypeError, ValueError):
                raise ConfigError(key, f"cannot parse {raw!r} as {typ.__name__}") from None
            if typ is int and float(raw) != int(float(raw)):
                raise ConfigError(key, f"must be an integer, got {raw!r}")
            sections[section][name] = val
        if camera is None:
            if cam_path is None:
                raise ConfigError("camera", "no calibration file given")
            cam_path = Path(cam_path)
            if base_dir is not None and not cam_path.is_absolute():
                cam_path = Path(base_dir) / cam_path
            if not cam_path.is_file():
                raise ConfigError("camera", f"calibration file {cam_path} does not exist")
            camera = load_camera(cam_path)
        return cls(
            camera=camera,
            frame=FrameConfig(**sections["frame"]),
            icp=IcpConfig(**sections["icp"]),
            map=MapConfig(**sections["map"]),
            out_dir=Path(out) if out else None,
            camera_path=Path(cam_path) if cam_path else None,
        )

    @classmethod
    def load(cls, path, overrides=None):
        """Key-value config file; ``overrides`` (same keys) win over file values."""
        path = Path(path)
        if not path.is_file():
            raise ConfigError("config", f"file {path} does not exist")
        values = parse_key_values(path.read_text(), source=str(path))
        values.update({k: str(v) for k, v in (overrides or {}).items() if v is not None})
        return cls.from_mapping(values, base_dir=path.parent, source=str(path))

    def with_overrides(self, **kw):
        """Copy with ``f``/``n``/``theta_t``/... replaced (same keys as the config file)."""
        sections = {"frame": {}, "icp": {}, "map": {}}
        for key, val in kw.items():
            if val is None:
                continue
            if key not in _CONFIG_KEYS:
                raise ConfigError(key, "unknown configuration key")
            section, name, _ = _CONFIG_KEYS[key]
            sections[section][name] = val
        return replace(
            self,
            frame=replace(self.frame, **sections["frame"]),
            icp=replace(self.icp, **sections["icp"]),
            map=replace(self.map, **sections["map"]),
        )

    def to_text(self):
        lines = []
        if self.camera_path:
            lines.append(f"camera {self.camera_path}")
        for key, (section, name, _) in _CONFIG_KEYS.items():
            lines.append(f"{key} {getattr(getattr(self, section), name)!r}")
        return "\n".join(lines) + "\n"


@dataclass
class RotationEstimate:
    """Pose at a frame's reference time ``t`` plus the alignment summary."""

    t: float
    R: np.ndarray
    status: str = "ok"
    iterations: int = 0
    cost: float = 0.0
    inliers: int = 0
    converged: bool = True

    def diagnostics_line(self):
        return f"{self.t:.9f} {self.iterations} {self.cost:.6e} {self.inliers} {self.status}"


@dataclass
class OdometryResult:
    estimates: list
    map: SphericalMap
    processing_time: float
    sequence_duration: float

    @property
    def trajectory(self):
        return RotationTrajectory.from_poses(self.estimates)

    @property
    def realtime_ratio(self):
        """Processing time over sequence duration (below 1 is faster than real time)."""
        return self.processing_time / self.sequence_duration if self.sequence_duration > 0 else float("inf")

    def count(self, status):
        return sum(e.status == status for e in self.estimates)

    @property
    def failed_fraction(self):
        processed = sum(e.status != "held" for e in self.estimates)
        return self.count("failed") / processed if processed else 0.0

    def diagnostics_text(self):
        return "".join(e.diagnostics_line() + "\n" for e in self.estimates)

    def summary(self):
        return {
            "frames": len(self.estimates),
            "ok": self.count("ok"),
            "held": self.count("held"),
            "failed": self.count("failed"),
            "keyframes": self.map.n_keyframes,
            "map_points": len(self.map),
            "processing_time_s": self.processing_time,
            "sequence_duration_s": self.sequence_duration,
            "realtime_ratio": self.realtime_ratio,
        }


def _as_chunks(source, camera, stream):
    """Normalize an event source to an iterable of ``EventArray`` chunks."""
    if isinstance(source, EventArray):
        _check_bounds(source, camera)
        return [source]
    if isinstance(source, (str, Path)):
        if stream:
            return iter_event_file(source, camera.width, camera.height)
        # parse everything up front so a bad line fails before any frame runs
        return [parse_event_stream(Path(source), camera.width, camera.height)]
    return source


def _check_bounds(events, camera):
    bad = (events.u < 0) | (events.u >= camera.width) | (events.v < 0) | (events.v >= camera.height)
    if bad.any():
        i = int(np.argmax(bad))
        raise ParseError(
            f"event (t={events.t[i]!r}, u={events.u[i]}, v={events.v[i]}) lies outside the "
            f"{camera.width}x{camera.height} sensor", i + 1,
        )


def predict_rotation(history, omega, t, horizon):
    """Constant-velocity guess at ``t``, extrapolating the latest pose by at most ``horizon`` s.

    A gap of held segments means too few events, which means slow motion;
    carrying a velocity measured over one frame period across the whole gap
    would only amplify its noise.
    """
    t_prev, R_prev = history[-1]
    return R_prev @ exp_map(omega * min(t - t_prev, horizon))


def run_odometry(config, source, stream=False, on_frame=None):
    """Run tracking and mapping over an event source.

    ``source`` is an ``EventArray``, an iterable of time-ordered chunks, or
    a path to an event file (parsed fully first unless ``stream``). Every
    segment yields one :class:`RotationEstimate`: ``bootstrap`` for the
    first frame, ``ok`` after alignment, ``held`` for skipped segments and
    ``failed`` when alignment raised. ``on_frame(estimate, frame)`` is called
    after each processed frame.
    """
    camera = config.camera
    camera.bearing_table  # build the lookup table outside the timed loop
    chunks = _as_chunks(source, camera, stream)
    smap = SphericalMap(voxel_size=config.map.voxel_size)
    estimates = []
    history = []  # (t, R) of aligned frames, newest last
    R_last = np.eye(3)
    t_first = t_last_event = None
    started = time.perf_counter()
    for seg in iter_segments(_track_span(chunks), config.frame):
        if t_first is None:
            t_first = seg.t_start
        if seg.skipped:
            estimates.append(RotationEstimate(seg.t_start, R_last.copy(), "held", converged=False))
            continue
        t_last_event = float(seg.events.t[-1])
        omega = estimate_omega(history[-2:])
        frame = compensate_frame(seg.events, omega, camera)
        if not len(smap):
            R = np.eye(3)
            smap.insert(frame.points, R, frame.t0)
            est = RotationEstimate(frame.t0, R, "bootstrap", inliers=len(frame))
            history.append((frame.t0, R))
        else:
            R_init = predict_rotation(history, omega, frame.t0, 1.0 / config.frame.f)
            try:
                res = align_frame(frame, smap, R_init, config.icp)
            except (AlignmentError, DegenerateGeometryError) as exc:
                log.debug("frame at t=%.6f failed: %s", frame.t0, exc)
                est = RotationEstimate(frame.t0, R_last.copy(), "failed", converged=False)
            else:
                R = res.rotation
                est = RotationEstimate(frame.t0, R, "ok", res.iterations, res.final_cost, res.inlier_count,
                                       res.converged)
                history.append((frame.t0, R))
                del history[:-2]
                if is_keyframe(R, smap.last_keyframe_rotation, config.map.theta_t):
                    smap.insert(frame.points, R, frame.t0)
        R_last = est.R
        estimates.append(est)
        if on_frame is not None:
            on_frame(est, frame)
    elapsed = time.perf_counter() - started
    if not estimates:
        raise RunError("the event source contains no events")
    duration = (t_last_event - t_first) if t_last_event is not None else 0.0
    result = OdometryResult(estimates, smap, elapsed, duration)
    if result.failed_fraction >= FAILURE_LIMIT:
        err = RunError(f"{result.count('failed')} of {len(estimates) - result.count('held')} frames "
                       f"failed to align (limit {FAILURE_LIMIT:.0%})")
        err.result = result
        raise err
    return result


def _track_span(chunks):
    for chunk in chunks:
        if len(chunk):
            yield chunk


def write_outputs(result, out_dir):
    """``trajectory.txt``, ``map.txt``, ``diagnostics.txt`` and ``summary.txt`` under ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    result.trajectory.save(out / "trajectory.txt")
    result.map.save(out / "map.txt")
    (out / "diagnostics.txt").write_text(result.diagnostics_text())
    (out / "summary.txt").write_text("".join(f"{k} {v}\n" for k, v in result.summary().items()))
    return out

