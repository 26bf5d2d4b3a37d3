"""Event-camera rotational odometry and mapping on the unit sphere."""
