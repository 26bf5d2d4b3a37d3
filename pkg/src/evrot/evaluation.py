"""Absolute and relative rotation error between two timestamped trajectories."""

import os
from dataclasses import dataclass

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import AlignmentError, ParseError
from .geometry import check_rotation

QUAT_NORM_TOL = 1e-6
# slack on the accumulated-angle crossing test, in degrees
RPE_CROSSING_TOL = 1e-9


class RotationTrajectory:
    """Strictly time-ordered ``(t, R)`` samples stored as ``times (n,)`` and ``rotations (n, 3, 3)``."""

    def __init__(self, times, rotations, validate=True):
        self.times = np.asarray(times, dtype=float).reshape(-1)
        self.rotations = np.asarray(rotations, dtype=float).reshape(-1, 3, 3)
        if len(self.times) != len(self.rotations):
            raise ValueError("times and rotations differ in length")
        if validate:
            if np.any(np.diff(self.times) <= 0):
                i = int(np.argmax(np.diff(self.times) <= 0)) + 1
                raise ValueError(f"timestamps must be strictly increasing (sample {i}: {self.times[i]!r})")
            for R in self.rotations:
                check_rotation(R)

    @classmethod
    def from_poses(cls, poses):
        """Build from ``(t, R)`` pairs or objects with ``t`` and ``R``."""
        ts, Rs = [], []
        for item in poses:
            t, R = (item.t, item.R) if hasattr(item, "R") else item
            ts.append(t)
            Rs.append(R)
        return cls(ts, np.array(Rs).reshape(-1, 3, 3))

    def __len__(self):
        return len(self.times)

    def __iter__(self):
        return iter(zip(self.times, self.rotations))

    def __repr__(self):
        return f"RotationTrajectory(n={len(self)})"

    def save(self, dest):
        write_trajectory(self, dest)

    @classmethod
    def load(cls, source):
        return read_trajectory(source)


def format_trajectory(traj):
    q = Rotation.from_matrix(traj.rotations).as_quat() if len(traj) else np.empty((0, 4))
    return "".join(
        f"{t:.9f} {x:.17g} {y:.17g} {z:.17g} {w:.17g}\n"
        for t, (x, y, z, w) in zip(traj.times.tolist(), q.tolist())
    )


def write_trajectory(traj, dest):
    """One ``t qx qy qz qw`` line per pose (w last)."""
    text = format_trajectory(traj)
    if isinstance(dest, (str, os.PathLike)):
        with open(dest, "w") as fh:
            fh.write(text)
    else:
        dest.write(text)


def read_trajectory(source):
    if isinstance(source, (str, os.PathLike)):
        with open(source) as fh:
            lines = fh.read().splitlines()
    else:
        lines = source.read().splitlines()
    ts, qs = [], []
    for lineno, line in enumerate(lines, start=1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 5:
            raise ParseError(f"expected 't qx qy qz qw', got {line!r}", lineno)
        try:
            vals = [float(s) for s in parts]
        except ValueError:
            raise ParseError(f"non-numeric field in {line!r}", lineno) from None
        q = np.array(vals[1:])
        if not np.all(np.isfinite(vals)) or abs(np.linalg.norm(q) - 1.0) > QUAT_NORM_TOL:
            raise ParseError(f"quaternion norm {np.linalg.norm(q):.9g} is not 1 within {QUAT_NORM_TOL}", lineno)
        if ts and vals[0] <= ts[-1]:
            raise ParseError(f"timestamp {parts[0]} does not increase", lineno)
        ts.append(vals[0])
        qs.append(q / np.linalg.norm(q))
    Rs = Rotation.from_quat(np.array(qs)).as_matrix() if qs else np.empty((0, 3, 3))
    return RotationTrajectory(ts, Rs, validate=False)


@dataclass
class PairedPoses:
    """Estimate/ground-truth rotations matched in time."""

    times: np.ndarray
    est: np.ndarray
    gt: np.ndarray
    dropped: int = 0

    def __len__(self):
        return len(self.times)


def default_max_dt(est):
    """Half the median sampling period of the estimate."""
    if len(est) < 2:
        return np.inf
    return 0.5 * float(np.median(np.diff(est.times)))


def associate(est, gt, max_dt=None):
    """Pair each estimate with the nearest-in-time ground-truth pose within ``max_dt``."""
    if not len(est) or not len(gt):
        raise AlignmentError("cannot associate an empty trajectory")
    if max_dt is None:
        max_dt = default_max_dt(est)
    j = np.searchsorted(gt.times, est.times)
    lo = np.clip(j - 1, 0, len(gt) - 1)
    hi = np.clip(j, 0, len(gt) - 1)
    d_lo = np.abs(est.times - gt.times[lo])
    d_hi = np.abs(gt.times[hi] - est.times)
    # ties go to the earlier sample
    nearest = np.where(d_hi < d_lo, hi, lo)
    dist = np.minimum(d_lo, d_hi)
    keep = dist <= max_dt
    if not keep.any():
        raise AlignmentError(f"no estimate lies within max_dt={max_dt:g} s of a ground-truth pose")
    return PairedPoses(est.times[keep], est.rotations[keep], gt.rotations[nearest[keep]], int((~keep).sum()))


def rotation_angles(M):
    """Rotation angle of each matrix in a stack, via atan2 of its antisymmetric part and trace.

    An exactly symmetric input (such as ``A @ A.T`` computed in floating
    point) yields exactly zero.
    """
    M = np.asarray(M, dtype=float).reshape(-1, 3, 3)
    s = 0.5 * np.sqrt(
        (M[:, 2, 1] - M[:, 1, 2]) ** 2 + (M[:, 0, 2] - M[:, 2, 0]) ** 2 + (M[:, 1, 0] - M[:, 0, 1]) ** 2
    )
    c = 0.5 * (M[:, 0, 0] + M[:, 1, 1] + M[:, 2, 2] - 1.0)
    return np.arctan2(s, c)


def _angles(A, B):
    """Geodesic angles (rad) between matching rotations in two stacks."""
    return rotation_angles(np.einsum("nji,njk->nik", A, B))


def ape_errors(pairs, alignment=True):
    """Per-pair angle ``|log(R'_k^T G R_k)|`` in radians, with ``G = R'_0 R_0^T`` when aligned."""
    if not alignment:
        return _angles(pairs.gt, pairs.est)
    # grouped as (R'_k^T R'_0)(R_0^T R_k) so identical inputs give exact zeros
    a = np.einsum("nji,jk->nik", pairs.gt, pairs.gt[0])
    b = np.einsum("ji,njk->nik", pairs.est[0], pairs.est)
    return rotation_angles(a @ b)


def mean_ape(pairs, alignment=True):
    """Mean absolute rotation error in degrees (first-pose alignment when ``alignment``)."""
    return float(np.rad2deg(np.mean(ape_errors(pairs, alignment))))


def rpe_windows(gt_rotations, delta_deg=10.0):
    """Non-overlapping ``(start, end)`` index windows of ``delta_deg`` accumulated gt rotation."""
    steps = np.rad2deg(_angles(gt_rotations[:-1], gt_rotations[1:]))
    windows = []
    start, acc = 0, 0.0
    for i, s in enumerate(steps):
        acc += s
        if acc >= delta_deg - RPE_CROSSING_TOL:
            windows.append((start, i + 1))
            start, acc = i + 1, 0.0
    return windows


def mean_rpe(pairs, delta_deg=10.0):
    """Mean relative rotation error (degrees) over ``delta_deg`` ground-truth windows."""
    windows = rpe_windows(pairs.gt, delta_deg)
    if not windows:
        raise AlignmentError(f"ground truth never accumulates {delta_deg} degrees of rotation")
    a, b = np.array(windows).T
    rel_gt = np.einsum("nji,njk->nik", pairs.gt[a], pairs.gt[b])
    rel_est = np.einsum("nji,njk->nik", pairs.est[a], pairs.est[b])
    return float(np.rad2deg(np.mean(_angles(rel_gt, rel_est))))


def evaluate(est, gt, alignment=True, delta_deg=10.0, max_dt=None):
    """Metrics dict: ``ape_mean_deg``, ``rpe_mean_deg``, ``pairs``, ``dropped``, ``alignment``."""
    pairs = associate(est, gt, max_dt)
    try:
        rpe = mean_rpe(pairs, delta_deg)
    except AlignmentError:
        rpe = float("nan")
    return {
        "ape_mean_deg": mean_ape(pairs, alignment),
        "rpe_mean_deg": rpe,
        "pairs": len(pairs),
        "dropped": pairs.dropped,
        "alignment": "first_pose" if alignment else "none",
    }


def format_report(report):
    lines = []
    for key, value in report.items():
        if isinstance(value, float):
            value = f"{value:.9f}"
        lines.append(f"{key} {value}\n")
    return "".join(lines)


def write_report(report, dest):
    with open(dest, "w") as fh:
        fh.write(format_report(report))


def read_report(path):
    out = {}
    with open(path) as fh:
        for line in fh:
            if line.strip():
                key, value = line.split(None, 1)
                value = value.strip()
                try:
                    out[key] = int(value)
                except ValueError:
                    try:
                        out[key] = float(value)
                    except ValueError:
                        out[key] = value
    return out

