"""SO(3) primitives and the pinhole + Brown-Conrady camera model.

Rotations are plain ``(3, 3)`` float arrays; vectors are ``(3,)`` arrays.
Batched helpers take a leading axis.
"""

from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from .errors import InvalidRotationError, ParseError, ProjectionError, UndistortionError

ROTATION_TOL = 1e-9

_SMALL_ANGLE = 1e-8
# below this sin(angle) the antisymmetric part no longer pins down the axis
_NEAR_PI_SIN = 1e-3


def hat(v):
    """Skew-symmetric matrix ``M`` with ``M @ w == cross(v, w)``."""
    x, y, z = np.asarray(v, dtype=float)
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def vee(m):
    """Inverse of :func:`hat` (reads the antisymmetric entries)."""
    m = np.asarray(m, dtype=float)
    return np.array([m[2, 1], m[0, 2], m[1, 0]])


def hat_batch(v):
    v = np.asarray(v, dtype=float)
    out = np.zeros(v.shape[:-1] + (3, 3))
    out[..., 0, 1] = -v[..., 2]
    out[..., 0, 2] = v[..., 1]
    out[..., 1, 0] = v[..., 2]
    out[..., 1, 2] = -v[..., 0]
    out[..., 2, 0] = -v[..., 1]
    out[..., 2, 1] = v[..., 0]
    return out


def exp_map(v):
    """Rotation by angle ``|v|`` about ``v / |v|`` (Rodrigues)."""
    v = np.asarray(v, dtype=float)
    theta2 = float(v @ v)
    K = hat(v)
    if theta2 < _SMALL_ANGLE**2:
        # second-order Taylor; the cubic term is below 1e-24
        return np.eye(3) + K + 0.5 * (K @ K)
    theta = np.sqrt(theta2)
    a = np.sin(theta) / theta
    b = (1.0 - np.cos(theta)) / theta2
    return np.eye(3) + a * K + b * (K @ K)


def exp_map_batch(v):
    """Vectorized :func:`exp_map` over ``(N, 3)`` rotation vectors."""
    v = np.asarray(v, dtype=float)
    theta2 = np.einsum("...i,...i->...", v, v)
    theta = np.sqrt(theta2)
    small = theta < _SMALL_ANGLE
    safe = np.where(small, 1.0, theta)
    a = np.where(small, 1.0 - theta2 / 6.0, np.sin(safe) / safe)
    b = np.where(small, 0.5 - theta2 / 24.0, (1.0 - np.cos(safe)) / (safe * safe))
    K = hat_batch(v)
    K2 = K @ K
    return np.eye(3) + a[..., None, None] * K + b[..., None, None] * K2


def rotate_batch(v, p):
    """Apply ``exp_map(v[i])`` to ``p[i]`` without forming matrices."""
    v = np.asarray(v, dtype=float)
    p = np.asarray(p, dtype=float)
    theta2 = np.einsum("ij,ij->i", v, v)
    theta = np.sqrt(theta2)
    small = theta < _SMALL_ANGLE
    safe = np.where(small, 1.0, theta)
    a = np.where(small, 1.0 - theta2 / 6.0, np.sin(safe) / safe)
    b = np.where(small, 0.5 - theta2 / 24.0, (1.0 - np.cos(safe)) / (safe * safe))
    vxp = np.cross(v, p)
    return p + a[:, None] * vxp + b[:, None] * np.cross(v, vxp)


def check_rotation(R, tol=ROTATION_TOL):
    """Raise :class:`InvalidRotationError` unless ``R`` is in SO(3) within ``tol``."""
    R = np.asarray(R, dtype=float)
    if R.shape != (3, 3) or not np.all(np.isfinite(R)):
        raise InvalidRotationError(f"expected a finite 3x3 matrix, got shape {R.shape}")
    err = np.max(np.abs(R.T @ R - np.eye(3)))
    if err > tol:
        raise InvalidRotationError(f"R^T R deviates from I by {err:.3e} (> {tol:g})")
    det = np.linalg.det(R)
    if abs(det - 1.0) > tol:
        raise InvalidRotationError(f"det(R) = {det:.12f}, expected 1")
    return R


def is_rotation(R, tol=ROTATION_TOL):
    try:
        check_rotation(R, tol)
    except InvalidRotationError:
        return False
    return True


def orthonormalize(R):
    """Nearest rotation to ``R`` in Frobenius norm (SVD projection).

    Never applied implicitly; call it when a matrix is known to have drifted.
    """
    U, _, Vt = np.linalg.svd(np.asarray(R, dtype=float))
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(U @ Vt))])
    return U @ D @ Vt


def log_map(R, check=True):
    """Rotation vector ``v`` with ``exp_map(v) == R`` and ``|v|`` in ``[0, pi]``."""
    R = check_rotation(R) if check else np.asarray(R, dtype=float)
    w = 0.5 * vee(R - R.T)  # sin(theta) * axis
    s = np.linalg.norm(w)
    c = 0.5 * (np.trace(R) - 1.0)
    theta = np.arctan2(s, c)
    if theta < _SMALL_ANGLE:
        return w * (1.0 + theta * theta / 6.0)
    if c > 0.0 or s > _NEAR_PI_SIN:
        return w * (theta / s)
    # near pi: axis from the symmetric part (1 - cos) k k^T, sign from w
    B = 0.5 * (R + R.T) - c * np.eye(3)
    i = int(np.argmax(np.diag(B)))
    k = B[:, i] / np.sqrt(max(B[i, i], 1e-300))
    k /= np.linalg.norm(k)
    if k @ w < 0.0:
        k = -k
    return theta * k


def log_map_batch(R):
    """Vectorized :func:`log_map` over ``(N, 3, 3)`` rotations (no validity check)."""
    R = np.asarray(R, dtype=float).reshape(-1, 3, 3)
    w = 0.5 * np.stack([R[:, 2, 1] - R[:, 1, 2], R[:, 0, 2] - R[:, 2, 0], R[:, 1, 0] - R[:, 0, 1]], axis=1)
    s = np.linalg.norm(w, axis=1)
    c = 0.5 * (np.trace(R, axis1=1, axis2=2) - 1.0)
    theta = np.arctan2(s, c)
    small = theta < _SMALL_ANGLE
    scale = np.where(small, 1.0 + theta * theta / 6.0, theta / np.where(s > 0, s, 1.0))
    out = w * scale[:, None]
    for i in np.flatnonzero(~small & (c <= 0.0) & (s <= _NEAR_PI_SIN)):
        out[i] = log_map(R[i], check=False)
    return out


def geodesic_angle(R1, R2):
    """Angle in radians of ``R1^T R2``."""
    return float(np.linalg.norm(log_map(np.asarray(R1).T @ np.asarray(R2), check=False)))


def right_jacobian(v):
    """Right Jacobian of SO(3): ``exp(v + dv) ~= exp(v) exp(Jr(v) dv)``."""
    v = np.asarray(v, dtype=float)
    theta2 = float(v @ v)
    K = hat(v)
    if theta2 < 1e-10:
        return np.eye(3) - 0.5 * K + (K @ K) / 6.0
    theta = np.sqrt(theta2)
    a = (1.0 - np.cos(theta)) / theta2
    b = (theta - np.sin(theta)) / (theta2 * theta)
    return np.eye(3) - a * K + b * (K @ K)


def random_rotation(rng, max_angle=np.pi):
    """Rotation about a uniformly random axis by an angle uniform in [0, max_angle)."""
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    return exp_map(axis * rng.uniform(0.0, max_angle))


# --------------------------------------------------------------------------
# Camera model
# --------------------------------------------------------------------------

_CAMERA_KEYS = ("fx", "fy", "cx", "cy", "k1", "k2", "p1", "p2", "k3", "width", "height")


@dataclass(frozen=True)
class CameraModel:
    """Pinhole intrinsics with Brown-Conrady (k1, k2, p1, p2, k3) distortion."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    distortion: tuple = (0.0, 0.0, 0.0, 0.0, 0.0)
    max_iterations: int = field(default=50, compare=False)
    tolerance: float = field(default=1e-10, compare=False)

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (self.width > 0 and self.height > 0):
            raise ValueError("image size must be positive")
        d = tuple(float(x) for x in self.distortion)
        if len(d) != 5:
            raise ValueError("distortion needs 5 coefficients (k1, k2, p1, p2, k3)")
        object.__setattr__(self, "distortion", d)

    @property
    def K(self):
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    @property
    def has_distortion(self):
        return any(c != 0.0 for c in self.distortion)

    # -- normalized-plane distortion ------------------------------------
    def distort_normalized(self, xy):
        """Forward Brown-Conrady model on ``(..., 2)`` normalized coordinates."""
        k1, k2, p1, p2, k3 = self.distortion
        xy = np.asarray(xy, dtype=float)
        x, y = xy[..., 0], xy[..., 1]
        r2 = x * x + y * y
        radial = 1.0 + r2 * (k1 + r2 * (k2 + r2 * k3))
        xd = x * radial + 2.0 * p1 * x * y + p2 * (r2 + 2.0 * x * x)
        yd = y * radial + p1 * (r2 + 2.0 * y * y) + 2.0 * p2 * x * y
        return np.stack([xd, yd], axis=-1)

    def undistort_normalized(self, xy_d):
        """Invert :meth:`distort_normalized` by damped fixed-point iteration.

        Each element iterates ``x <- (x_d - tangential(x)) / radial(x)``; an
        element whose forward residual grows has its step halved.
        """
        xy_d = np.asarray(xy_d, dtype=float)
        if not self.has_distortion:
            return xy_d.copy()
        k1, k2, p1, p2, k3 = self.distortion
        shape = xy_d.shape
        target = xy_d.reshape(-1, 2)
        xy = target.copy()
        err = np.linalg.norm(self.distort_normalized(xy) - target, axis=1)
        step = np.ones(len(xy))
        active = err >= self.tolerance
        for _ in range(self.max_iterations):
            if not active.any():
                break
            cur = xy[active]
            x, y = cur[:, 0], cur[:, 1]
            r2 = x * x + y * y
            radial = 1.0 + r2 * (k1 + r2 * (k2 + r2 * k3))
            tx = 2.0 * p1 * x * y + p2 * (r2 + 2.0 * x * x)
            ty = p1 * (r2 + 2.0 * y * y) + 2.0 * p2 * x * y
            t = target[active]
            fp = np.stack([(t[:, 0] - tx) / radial, (t[:, 1] - ty) / radial], axis=1)
            lam = step[active]
            cand = cur + lam[:, None] * (fp - cur)
            cand_err = np.linalg.norm(self.distort_normalized(cand) - t, axis=1)
            better = cand_err < err[active]
            idx = np.flatnonzero(active)
            xy[idx[better]] = cand[better]
            err[idx[better]] = cand_err[better]
            step[idx[~better]] *= 0.5
            active = err >= self.tolerance
        if active.any():
            worst = int(np.argmax(np.where(active, err, -1.0)))
            raise UndistortionError(
                f"undistortion did not converge for {int(active.sum())} point(s); "
                f"worst residual {err[worst]:.3e} at normalized {target[worst]}"
            )
        return xy.reshape(shape)

    # -- pixel <-> sphere ------------------------------------------------
    def pixel_to_normalized(self, pix):
        pix = np.asarray(pix, dtype=float)
        return np.stack([(pix[..., 0] - self.cx) / self.fx, (pix[..., 1] - self.cy) / self.fy], axis=-1)

    def normalized_to_pixel(self, xy):
        xy = np.asarray(xy, dtype=float)
        return np.stack([self.fx * xy[..., 0] + self.cx, self.fy * xy[..., 1] + self.cy], axis=-1)

    def undistort_pixels(self, pix):
        return self.normalized_to_pixel(self.undistort_normalized(self.pixel_to_normalized(pix)))

    def pixels_to_sphere(self, pix):
        """Unit bearings for ``(..., 2)`` pixel coordinates."""
        xy = self.undistort_normalized(self.pixel_to_normalized(pix))
        p = np.concatenate([xy, np.ones(xy.shape[:-1] + (1,))], axis=-1)
        return p / np.linalg.norm(p, axis=-1, keepdims=True)

    def sphere_to_pixels(self, p):
        """Distorted pixel coordinates of ``(..., 3)`` directions; all need z > 0."""
        p = np.asarray(p, dtype=float)
        z = p[..., 2]
        if np.any(~(z > 0.0)):
            raise ProjectionError("direction is behind the camera or on its horizon (z <= 0)")
        xy = p[..., :2] / z[..., None]
        return self.normalized_to_pixel(self.distort_normalized(xy))

    @cached_property
    def bearing_table(self):
        """``(height, width, 3)`` unit bearings for every integer pixel."""
        v, u = np.mgrid[0 : self.height, 0 : self.width]
        pix = np.stack([u, v], axis=-1).astype(float)
        table = self.pixels_to_sphere(pix)
        table.flags.writeable = False
        return table

    def bearings(self, u, v):
        """Table lookup of unit bearings for integer pixel arrays."""
        return self.bearing_table[np.asarray(v), np.asarray(u)]

    # -- serialization ---------------------------------------------------
    def to_text(self):
        k1, k2, p1, p2, k3 = self.distortion
        vals = dict(fx=self.fx, fy=self.fy, cx=self.cx, cy=self.cy, k1=k1, k2=k2, p1=p1, p2=p2,
                    k3=k3, width=self.width, height=self.height)
        return "".join(f"{k} {vals[k]!r}\n" for k in _CAMERA_KEYS)


def undistort(m, pixel):
    """Undistorted pixel position for a (possibly distorted) pixel."""
    return m.undistort_pixels(pixel)


def pixel_to_sphere(m, pixel):
    """Unit-sphere direction of a pixel: undistort, apply K^-1, normalize."""
    return m.pixels_to_sphere(pixel)


def sphere_to_pixel(m, p):
    """Forward projection of a unit direction (z > 0) to distorted pixels."""
    return m.sphere_to_pixels(p)


def parse_key_values(text, source="<text>"):
    """Parse ``key value`` lines; blank lines and ``#`` comments are skipped."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2:
            raise ParseError(f"{source}: expected 'key value', got {raw!r}", lineno)
        key, value = parts
        if key in out:
            raise ParseError(f"{source}: duplicate key {key!r}", lineno)
        out[key] = value
    return out


def parse_camera(text, source="<text>"):
    kv = parse_key_values(text, source)
    missing = [k for k in ("fx", "fy", "cx", "cy", "width", "height") if k not in kv]
    if missing:
        raise ParseError(f"{source}: missing calibration keys {missing}")
    unknown = sorted(set(kv) - set(_CAMERA_KEYS))
    if unknown:
        raise ParseError(f"{source}: unknown calibration keys {unknown}")
    try:
        num = {k: float(v) for k, v in kv.items()}
    except ValueError as exc:
        raise ParseError(f"{source}: {exc}") from None
    for k in ("width", "height"):
        if num[k] != int(num[k]):
            raise ParseError(f"{source}: {k} must be an integer")
    return CameraModel(
        fx=num["fx"], fy=num["fy"], cx=num["cx"], cy=num["cy"],
        width=int(num["width"]), height=int(num["height"]),
        distortion=tuple(num.get(k, 0.0) for k in ("k1", "k2", "p1", "p2", "k3")),
    )


def load_camera(path):
    path = Path(path)
    return parse_camera(path.read_text(), source=str(path))


def save_camera(camera, path):
    Path(path).write_text(camera.to_text())
