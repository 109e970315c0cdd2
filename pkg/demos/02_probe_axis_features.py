"""
Probe axis and principal points
===============================

The second network branch never sees pixels. It gets 50 points sampled along
the probe's 2D axis, found by PCA of the probe mask and oriented so the last
point sits at the tip.
"""

import numpy as np

from sensearea import axis as ax
from sensearea import scene as sc

config = sc.SceneConfig(width=160, height=120, focal=100.0)
sample = sc.generate_sample(7, 0, 0, config)
mask = sample.probe_mask_left
print("probe mask pixels:", int(mask.sum()))

# Principal axis of the silhouette.
axis = ax.pca_axis(mask)
print("centroid:", np.round(axis.centroid, 2))
print("direction:", np.round(axis.direction, 4), f"anisotropy {axis.anisotropy:.1f}")

# Flip the axis so it runs from where the shaft enters the frame toward the tip.
axis = ax.orient_axis(axis, mask)
pts = ax.sample_principal_points(axis, 50, image_size=(config.width, config.height))
print("first point:", np.round(pts.points[0], 1), " last point:", np.round(pts.points[-1], 1))
print("tip pixel:  ", np.round(sample.tip_px_left, 1))

# The points are evenly spaced on one line.
gaps = np.linalg.norm(np.diff(pts.points, axis=0), axis=1)
print(f"spacing {gaps.mean():.3f} px, spread {np.ptp(gaps):.1e} px")

# Normalized coordinates are what the model consumes.
print("normalized range:", np.round(pts.normalized.min(axis=0), 3), np.round(pts.normalized.max(axis=0), 3))

# The stereo model gets both views, so 100 points in all.
right = ax.probe_points(sample.probe_mask_right, 50)
print("right-view tip end:", np.round(right.points[-1], 1))
