# # The spherical map
#
# The map is a set of unit vectors. New keyframes are rotated into the world
# frame, merged, and thinned with a voxel grid laid over the cube that holds
# the sphere. Each occupied voxel keeps one point: the normalized centroid.

import numpy as np

from evrot.geometry import exp_map
from evrot.spherical_map import SphericalMap, bucket_keys, is_keyframe, voxel_downsample

rng = np.random.default_rng(0)
cloud = rng.normal(size=(20000, 3))
cloud /= np.linalg.norm(cloud, axis=1, keepdims=True)

thin, stats = voxel_downsample(cloud, 0.05, return_stats=True)
print(f"{len(cloud)} points -> {len(thin)} after voxel filtering; stats: {stats}")
print("max |norm - 1|:", np.abs(np.linalg.norm(thin, axis=1) - 1).max())
keys = bucket_keys(thin, 0.05)
print("one point per bucket:", len(np.unique(keys)) == len(keys))

# ## Keyframes
#
# A frame becomes a keyframe when its rotation is more than theta_t away
# from the last keyframe.

R_last = np.eye(3)
for deg in (0.3, 0.57, 0.58, 2.0):
    R = exp_map([0, np.deg2rad(deg), 0])
    print(f"{deg:5.2f} deg -> keyframe: {is_keyframe(R, R_last, theta_t=0.01)}")

# ## Inserting frames and querying neighbours

smap = SphericalMap(voxel_size=0.004)
patch = cloud[cloud[:, 2] > 0.8]
smap.insert(patch, np.eye(3), t=0.0)
smap.insert(patch, exp_map([0.0, 0.2, 0.0]), t=0.1)
print(smap.n_keyframes, "keyframes,", len(smap), "points")

q = np.array([[0.1, 0.0, 1.0]])
q /= np.linalg.norm(q)
idx, dist = smap.knn(q, 5)
print("5 nearest:", idx[0], dist[0].round(5))
# a gate turns far-away queries into misses
idx, dist = smap.knn(np.array([[0.0, 0.0, -1.0]]), 5, gate=0.02)
print("gated query:", idx[0], dist[0])
