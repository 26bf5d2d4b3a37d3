"""Frame-to-map alignment by point-to-line Gauss-Newton on SO(3)."""

from dataclasses import dataclass

import numpy as np

from . import _kernels as K
from .errors import AlignmentError, ConfigError, DegenerateGeometryError
from .geometry import exp_map, hat, log_map

MAX_CONDITION = 1e12
# how far (chord) rotated frame points may drift before neighbor candidates are rebuilt
CANDIDATE_SLACK = 0.002


@dataclass(frozen=True)
class LineCorrespondence:
    """Frame point ``p`` (before rotation) paired with the line ``d * tau + c``."""

    p: np.ndarray
    d: np.ndarray
    c: np.ndarray


@dataclass(frozen=True)
class IcpConfig:
    k_neighbors: int = 5
    max_iterations: int = 20
    # tighter values chase re-association limit cycles of ~1e-5 rad
    convergence_eps: float = 1e-4
    # angular gate (rad) on the nearest map point
    max_corr_dist: float = 0.02
    line_condition_min: float = 0.75

    def __post_init__(self):
        if not self.k_neighbors >= 2:
            raise ConfigError("k_neighbors", f"must be >= 2, got {self.k_neighbors}")
        if not self.max_iterations >= 1:
            raise ConfigError("max_iterations", f"must be >= 1, got {self.max_iterations}")
        if not self.convergence_eps > 0:
            raise ConfigError("convergence_eps", f"must be > 0, got {self.convergence_eps}")
        if not self.max_corr_dist > 0:
            raise ConfigError("max_corr_dist", f"must be > 0, got {self.max_corr_dist}")
        if not 0 < self.line_condition_min <= 1:
            raise ConfigError("line_condition_min", f"must lie in (0, 1], got {self.line_condition_min}")

    @property
    def gate_chord(self):
        """Euclidean distance between unit vectors ``max_corr_dist`` apart."""
        return 2.0 * np.sin(0.5 * min(self.max_corr_dist, np.pi))


@dataclass
class IcpResult:
    rotation: np.ndarray
    iterations: int
    final_cost: float
    inlier_count: int
    converged: bool
    gated_count: int = 0
    degenerate_count: int = 0


def fit_line(neighbors, line_condition_min=0.75):
    """``(d, c)`` for the best-fit line through ``neighbors``, or None if degenerate.

    ``c`` is the mean and ``d`` the unit principal axis of the scatter,
    signed so its first nonzero component is positive.
    """
    nb = np.ascontiguousarray(neighbors, dtype=float).reshape(-1, 3)
    if len(nb) < 2:
        return None
    d, c = np.empty(3), np.empty(3)
    if not K.fit_line_kernel(nb, float(line_condition_min), d, c, np.empty((3, 3))):
        return None
    return d, c


def residual(R, corr):
    """``d x (R p - c)``; its norm is the distance from ``R p`` to the line."""
    return np.cross(corr.d, R @ corr.p - corr.c)


def jacobian(R, corr):
    """Derivative of :func:`residual` under ``R -> R exp(delta)``."""
    return -hat(corr.d) @ R @ hat(corr.p)


def normal_equations(correspondences, R):
    """``(H, g, cost_sum)`` with ``H = sum J^T J`` and ``g = -sum J^T r``."""
    H = np.zeros((3, 3))
    g = np.zeros(3)
    cost = 0.0
    for corr in correspondences:
        J = jacobian(R, corr)
        r = residual(R, corr)
        H += J.T @ J
        g -= J.T @ r
        cost += r @ r
    return H, g, cost


def solve_normal_equations(H, g):
    """Solve ``H dx = g``; raise :class:`DegenerateGeometryError` if ill-conditioned."""
    H = 0.5 * (H + H.T)
    w, V = np.linalg.eigh(H)
    cond = np.inf if w[0] <= 0 else w[-1] / w[0]
    if not cond <= MAX_CONDITION:
        null = V[:, 0]
        raise DegenerateGeometryError(
            f"rotation is unobservable about {np.round(null, 6).tolist()} (condition {cond:.3g})",
            null_direction=null,
            condition=cond,
        )
    return V @ ((V.T @ g) / w)


def gauss_newton_step(correspondences, R):
    """One Gauss-Newton increment ``dx`` (rad) for a fixed set of correspondences."""
    correspondences = list(correspondences)
    if len(correspondences) < 3:
        raise DegenerateGeometryError(
            f"need at least 3 correspondences, got {len(correspondences)}",
            null_direction=None, condition=np.inf,
        )
    H, g, _ = normal_equations(correspondences, np.asarray(R, dtype=float))
    if not np.any(g):
        return np.zeros(3)
    return solve_normal_equations(H, g)


def build_correspondences(frame_points, smap, R, cfg):
    """Gated, non-degenerate correspondences for ``frame_points`` rotated by ``R``."""
    P = np.asarray(frame_points, dtype=float).reshape(-1, 3)
    idx, dist = smap.knn(P @ np.asarray(R).T, cfg.k_neighbors, gate=cfg.gate_chord)
    out = []
    for p, row, dr in zip(P, idx, dist):
        if row[0] < 0 or dr[0] > cfg.gate_chord:
            continue
        line = fit_line(smap.points[row], cfg.line_condition_min)
        if line is not None:
            out.append(LineCorrespondence(p, *line))
    return out


def align_frame(frame, smap, R_init, cfg=None):
    """Align a frame (``EventSphericalFrame`` or ``(n, 3)`` array) to ``smap``.

    Correspondences are re-associated at every iteration. Iteration stops
    when ``|dx| < convergence_eps`` or after ``max_iterations``; the
    reported cost is the mean squared residual of the last association.
    """
    cfg = cfg or IcpConfig()
    P = np.ascontiguousarray(getattr(frame, "points", frame), dtype=float).reshape(-1, 3)
    if len(smap) < cfg.k_neighbors:
        raise AlignmentError(f"map holds {len(smap)} points, fewer than k={cfg.k_neighbors}")
    R = np.array(R_init, dtype=float)
    index = smap.index
    gate2 = cfg.gate_chord ** 2
    line_min = float(cfg.line_condition_min)
    converged = False
    cost = 0.0
    n_in = n_gated = n_deg = 0
    it = 0
    R_ref = cand = None
    for it in range(1, cfg.max_iterations + 1):
        if R_ref is None or _angle(R_ref.T @ R) > CANDIDATE_SLACK:
            # neighbor candidates stay exact while points move less than the slack
            R_ref = R.copy()
            cand = K.icp_candidates(P, R_ref, index.points, *index.tables, index.cell_size, index.m,
                                    cfg.k_neighbors, cfg.gate_chord, CANDIDATE_SLACK, index.max_ring)
        H, g, cost_sum, n_in, n_gated, n_deg = K.icp_accumulate_cached(
            P, R, index.points, *cand, cfg.k_neighbors, gate2, line_min)
        if n_in == 0:
            raise AlignmentError(
                f"no inlier correspondences at iteration {it} "
                f"({n_gated} gated, {n_deg} degenerate of {len(P)} points)"
            )
        cost = cost_sum / n_in
        if not np.any(g):
            converged = True
            break
        dx = solve_normal_equations(H, g)
        R = R @ exp_map(dx)
        if np.linalg.norm(dx) < cfg.convergence_eps:
            converged = True
            break
    return IcpResult(R, it, float(cost), int(n_in), converged, int(n_gated), int(n_deg))


def _angle(R):
    # upper bound on how far any unit vector moves under R (chord <= angle)
    return float(np.linalg.norm(log_map(R, check=False))) * (1 + 1e-9) + 1e-12
