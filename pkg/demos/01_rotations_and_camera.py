# # Rotations and the event camera model
#
# Everything downstream rests on two small pieces: the SO(3) exponential and
# logarithm, and the map from a pixel to a unit bearing on the sphere.

import numpy as np

from evrot.geometry import exp_map, geodesic_angle, hat, log_map, right_jacobian
from evrot.sim import default_camera

# ## exp and log
#
# A rotation vector's direction is the axis and its norm the angle.

v = np.array([0.1, -0.4, 0.25])
R = exp_map(v)
print("R =\n", R.round(6))
print("log(exp(v)) - v =", log_map(R) - v)

# The log is well defined right up to pi, where the axis comes from the
# symmetric part of R instead of its antisymmetric part.
axis = np.array([1.0, 2.0, -1.0]) / np.sqrt(6)
near_pi = exp_map(axis * (np.pi - 1e-7))
print("angle near pi:", np.linalg.norm(log_map(near_pi)), "axis:", log_map(near_pi) / np.linalg.norm(log_map(near_pi)))

# hat(v) @ w is the cross product, and the right Jacobian relates a small
# change of v to a right perturbation of exp(v).
w = np.array([0.3, 0.1, -0.2])
print("hat(v) @ w == cross(v, w):", np.allclose(hat(v) @ w, np.cross(v, w)))
dv = 1e-6 * np.array([1.0, -2.0, 0.5])
lhs = exp_map(v + dv)
rhs = R @ exp_map(right_jacobian(v) @ dv)
print("right Jacobian check:", np.max(np.abs(lhs - rhs)))

# The geodesic angle between two rotations is the angle of R1^T R2.
print("geodesic angle (deg):", np.rad2deg(geodesic_angle(R, R @ exp_map([0, 0, np.deg2rad(3)]))))

# ## Pixels to the sphere
#
# The demo camera is a small 240x180 sensor with mild Brown-Conrady
# distortion. Undistortion is a fixed-point iteration on normalized
# coordinates; the result is lifted to z = 1 and normalized.

cam = default_camera()
print(cam.to_text())
corners = np.array([[0.0, 0.0], [cam.width - 1, 0.0], [cam.cx, cam.cy], [cam.width - 1, cam.height - 1]])
bearings = cam.pixels_to_sphere(corners)
print("bearings:\n", bearings.round(5))
print("norms:", np.linalg.norm(bearings, axis=1))

# Projecting back recovers the pixels, which is how the simulator renders
# landmarks onto the sensor.
print("reprojection error (px):", np.max(np.abs(cam.sphere_to_pixels(bearings) - corners)))

# The whole sensor is tabulated once so events turn into bearings by lookup.
table = cam.bearing_table
fov_x = np.rad2deg(np.arccos(table[int(cam.cy), 0] @ table[int(cam.cy), -1]))
print(f"horizontal field of view: {fov_x:.1f} deg")
