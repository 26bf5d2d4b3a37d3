# # Point-to-line alignment on the sphere
#
# A frame of bearings is aligned to the map by Gauss-Newton over rotations.
# Each frame point is paired with a line fitted through its k nearest map
# points, and the residual is the point's offset from that line.

import numpy as np

from evrot.geometry import exp_map, geodesic_angle, random_rotation
from evrot.icp import IcpConfig, align_frame, build_correspondences, fit_line
from evrot.sim import generate_edge_scene
from evrot.spherical_map import SphericalMap

# Lines need locally linear structure, so the scene is made of short arcs.
landmarks = generate_edge_scene(1, n_edges=300).landmarks
smap = SphericalMap(landmarks)
print("map points:", len(smap))

# ## Line fitting
#
# The direction is the principal axis of the neighbours; blobs without a
# dominant direction are rejected.
idx, _ = smap.knn(landmarks[:1], 5)
print("line through 5 neighbours:", fit_line(smap.points[idx[0]]))
blob = landmarks[0] + 1e-3 * np.random.default_rng(0).normal(size=(50, 3))
print("isotropic blob:", fit_line(blob / np.linalg.norm(blob, axis=1, keepdims=True)))

# ## Recovering a rotation
#
# The frame is a subset of the landmarks seen from R_true. We start half a
# degree away and iterate.
rng = np.random.default_rng(3)
R_true = random_rotation(rng)
visible = landmarks @ R_true
frame = visible[visible[:, 2] > 0.7][:1500]
R_init = R_true @ exp_map(np.deg2rad(0.5) * np.array([0.6, -0.8, 0.0]))

cfg = IcpConfig()
corrs = build_correspondences(frame, smap, R_init, cfg)
print(f"{len(corrs)} of {len(frame)} points have a usable line at the start")

res = align_frame(frame, smap, R_init, cfg)
print(f"converged={res.converged} after {res.iterations} iterations, cost {res.final_cost:.3e}, inliers {res.inlier_count}")
print(f"error: {np.rad2deg(geodesic_angle(res.rotation, R_true)) * 3600:.3f} arcsec "
      f"(started at {np.rad2deg(geodesic_angle(R_init, R_true)):.2f} deg)")
