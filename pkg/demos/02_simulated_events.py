# # Synthetic event streams
#
# The simulator rotates a camera inside a sphere of point landmarks and fires
# an event whenever a landmark's projection has moved a threshold distance
# since the pixel last fired. Ground truth comes for free.

import numpy as np

from evrot.events import FrameConfig, compensate_frame, estimate_omega, segment_events
from evrot.geometry import log_map
from evrot.sim import dm_preset, mean_speed, simulate_events

# A short DM-like sequence at about 120 deg/s.
preset = dm_preset(rate_scale=2.4, duration=0.3)
print("landmarks:", len(preset.scene), " mean speed (deg/s):", np.rad2deg(mean_speed(preset.profile)).round(1))

events, gt = simulate_events(preset.scene, preset.profile, preset.camera)
print(events)
print("first events:")
for e in list(events[:5]):
    print("  ", e)

# ## Segments and frames
#
# Time is cut into 1/f slots starting at the first event; each slot keeps its
# first n events. Slots with too few events are skipped, not merged.

cfg = FrameConfig(f=1000, n=1500, min_events=50)
segments = segment_events(events, cfg)
counts = np.array([len(s.events) for s in segments])
print(f"{len(segments)} segments, {sum(s.skipped for s in segments)} skipped, "
      f"events per frame: min {counts.min()} median {int(np.median(counts))} max {counts.max()}")

# ## Motion compensation
#
# Within one millisecond the camera still turns by a tenth of a degree or
# more. Warping every event to the frame's first timestamp with the angular
# velocity removes that smear. Here the velocity comes from ground truth.

seg = segments[100]
t0 = seg.events.t[0]
sps = round(1 / (gt.times[1] - gt.times[0]))
j = int(round(t0 * sps))
omega = log_map(gt.rotations[j].T @ gt.rotations[j + 10]) / (10 / sps)
raw = compensate_frame(seg.events, np.zeros(3), preset.camera)
comp = compensate_frame(seg.events, omega, preset.camera)

from scipy.spatial import cKDTree

tree = cKDTree(preset.scene.landmarks)
R0 = gt.rotations[j]
for name, frame in [("raw", raw), ("compensated", comp)]:
    d, _ = tree.query(frame.points @ R0.T)
    print(f"{name:>12}: mean distance to nearest landmark {np.rad2deg(d.mean()) * 60:.2f} arcmin")

# During tracking the velocity is extrapolated from the last two estimates.
history = [(gt.times[j - 10], gt.rotations[j - 10]), (gt.times[j], gt.rotations[j])]
print("extrapolated omega:", estimate_omega(history).round(3), " truth:", omega.round(3))
