"""Cylindrical panoramas from spherical points or rotated event windows."""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ParseError, ProjectionError

DEFAULT_WINDOW = 0.2e-3
DEFAULT_PERCENTILE = 0.9

# world (camera convention at rest: x right, y down, z forward) -> panorama frame
# with z up and the rest-pose optical axis at the centre column
DEFAULT_VIEW = np.array([[0.0, 0.0, -1.0], [1.0, 0.0, 0.0], [0.0, -1.0, 0.0]])


@dataclass(frozen=True)
class PanoramaSpec:
    width: int = 2000
    height: int = 1000
    phi_h: float = 2 * np.pi
    phi_v: float = np.deg2rad(90.0)
    percentile: float = DEFAULT_PERCENTILE

    def __post_init__(self):
        if not 0 < self.phi_h <= 2 * np.pi:
            raise ConfigError("phi_h", f"must lie in (0, 2pi], got {self.phi_h}")
        if not 0 < self.phi_v < np.pi:
            raise ConfigError("phi_v", f"must lie in (0, pi), got {self.phi_v}")
        if int(self.width) != self.width or self.width < 1:
            raise ConfigError("width", f"must be a positive integer, got {self.width}")
        if int(self.height) != self.height or self.height < 1:
            raise ConfigError("height", f"must be a positive integer, got {self.height}")
        if not 0 < self.percentile <= 1:
            raise ConfigError("percentile", f"must lie in (0, 1], got {self.percentile}")

    @property
    def z_max(self):
        return float(np.tan(0.5 * self.phi_v))


@dataclass
class PanoramaImage:
    counts: np.ndarray
    image: np.ndarray

    @property
    def shape(self):
        return self.counts.shape


def sphere_to_cylinder(p):
    """Radial projection of ``(..., 3)`` points onto the unit cylinder around z."""
    p = np.asarray(p, dtype=float)
    rho = np.sqrt(p[..., 0] ** 2 + p[..., 1] ** 2)
    if np.any(rho == 0.0):
        raise ProjectionError("point lies on the cylinder axis (x = y = 0)")
    return p / rho[..., None]


def cylinder_to_pixels(pc, spec):
    """``(col, row, valid)`` for ``(..., 3)`` cylinder points; coordinates are continuous."""
    pc = np.asarray(pc, dtype=float)
    az = np.mod(np.arctan2(pc[..., 1], pc[..., 0]), 2 * np.pi)
    z = pc[..., 2]
    zm = spec.z_max
    col = az / spec.phi_h * spec.width
    row = (zm - z) / (2 * zm) * spec.height
    valid = (np.abs(z) <= zm) & (az < spec.phi_h)
    return col, row, valid


def cylinder_to_pixel(pc, spec):
    """Pixel ``(col, row)`` of one cylinder point, or None when out of bounds."""
    col, row, valid = cylinder_to_pixels(np.asarray(pc, dtype=float).reshape(1, 3), spec)
    return (float(col[0]), float(row[0])) if valid[0] else None


def accumulate(points, spec, view=DEFAULT_VIEW):
    """Nearest-pixel count grid ``(height, width)`` of world points seen through ``view``."""
    counts = np.zeros((spec.height, spec.width), dtype=np.int64)
    P = np.asarray(points, dtype=float).reshape(-1, 3)
    if not len(P):
        return counts
    P = P @ np.asarray(view).T
    off_axis = P[:, 0] ** 2 + P[:, 1] ** 2 > 0.0
    col, row, valid = cylinder_to_pixels(sphere_to_cylinder(P[off_axis]), spec)
    ci = np.clip(np.floor(col[valid]).astype(np.int64), 0, spec.width - 1)
    ri = np.clip(np.floor(row[valid]).astype(np.int64), 0, spec.height - 1)
    np.add.at(counts, (ri, ci), 1)
    return counts


def normalize_counts(counts, percentile=DEFAULT_PERCENTILE):
    """8-bit intensities with the ``percentile`` of nonzero counts mapped to 255."""
    nz = counts[counts > 0]
    if not len(nz):
        return np.zeros(counts.shape, dtype=np.uint8)
    ref = float(np.quantile(nz, percentile))
    return np.minimum(255, np.rint(255.0 * counts / ref)).astype(np.uint8)


def render_panorama(points, spec=None, view=DEFAULT_VIEW):
    """Rasterize world-frame unit vectors (for example map points)."""
    spec = spec or PanoramaSpec()
    counts = accumulate(points, spec, view)
    return PanoramaImage(counts, normalize_counts(counts, spec.percentile))


def window_points(events, trajectory, camera, window=DEFAULT_WINDOW):
    """World directions of events within ``window`` s after their frame's pose.

    Each event belongs to the latest pose at or before its timestamp and is
    rotated by that pose; events before the first pose are ignored.
    """
    times = np.asarray(trajectory.times)
    k = np.searchsorted(times, events.t, side="right") - 1
    keep = (k >= 0) & (events.t - times[np.maximum(k, 0)] <= window)
    if not keep.any():
        return np.empty((0, 3))
    bearings = camera.bearings(events.u[keep], events.v[keep])
    R = np.asarray(trajectory.rotations)[k[keep]]
    return np.einsum("nij,nj->ni", R, bearings)


def render_events(events, trajectory, camera, spec=None, window=DEFAULT_WINDOW, view=DEFAULT_VIEW):
    """Panorama of event windows warped by an estimated (or true) trajectory."""
    return render_panorama(window_points(events, trajectory, camera, window), spec, view)


def write_pgm(image, path):
    """Binary PGM (P5), maxval 255."""
    img = np.asarray(image, dtype=np.uint8)
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(img).tobytes())


def read_pgm(path):
    with open(path, "rb") as fh:
        data = fh.read()
    parts = data.split(maxsplit=4)
    if len(parts) < 4 or parts[0] != b"P5":
        raise ParseError(f"{path}: not a binary PGM")
    w, h, maxval = int(parts[1]), int(parts[2]), int(parts[3])
    if maxval != 255:
        raise ParseError(f"{path}: unsupported maxval {maxval}")
    pixels = data[len(data) - w * h:]
    return np.frombuffer(pixels, dtype=np.uint8).reshape(h, w)
