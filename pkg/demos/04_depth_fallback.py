"""
3D error with holes in the depth map
====================================

Pixel errors do not say how far off a prediction is on the tissue. The 3D
error backprojects the predicted pixel with the depth map. Where that depth is
missing, the median of the valid depths in the 5x5 window around it stands in.
"""

import numpy as np

from sensearea import evaluation as ev
from sensearea import geometry as geo
from sensearea import scene as sc

config = sc.SceneConfig(width=160, height=120, focal=100.0)
scene = sc.sample_scene(5, 1, 0, config)
full = geo.render_depth(scene)
gt_px = sc.geometric_oracle(scene)
gt_3d = sc.axis_surface_point(scene)
print("truth:", np.round(gt_px, 2), "px at depth", round(gt_3d[2], 4), "m")

# Knock out a fifth of the pixels, as a stereo matcher might.
holes = geo.DepthMap(geo.knock_out_depth(full.values, 0.2, seed=1))
print(f"valid depth: full {full.valid.mean():.0%}, with holes {holes.valid.mean():.0%}")

rng = np.random.default_rng(0)
rows = []
for _ in range(8):
    pred = gt_px + rng.normal(0, 4.0, 2)
    z, fallback = ev.lookup_depth(holes, pred)
    a = ev.error_3d(pred, full, gt_3d, scene.rig)
    b = ev.error_3d(pred, holes, gt_3d, scene.rig)
    rows.append((np.linalg.norm(pred - gt_px), a, b, fallback))

print(" 2D px   3D mm (full)   3D mm (holes)   fallback")
for px, a, b, fb in rows:
    print(f"{px:6.2f}   {a:12.2f}   {b:13.2f}   {'yes' if fb else 'no'}")

# One pixel at this depth spans roughly z / f meters on the surface.
print(f"scale: {1000 * gt_3d[2] / config.focal:.2f} mm per pixel")
