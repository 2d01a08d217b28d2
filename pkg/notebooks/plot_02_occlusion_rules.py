"""
Occlusion rate and the two occlusion tests
==========================================

Small worked examples of the occlusion rate between two boxes and of the
full and partial occlusion predicates that use it.
"""

import numpy as np

from oplab.annotator import FrameGeometry, fully_occluded, occlusion_rate, partially_occluded
from oplab.scene_sim import BBox, Vec3

target = BBox(0.40, 0.40, 0.50, 0.50)

# a bigger box covering the right half of the target
print(occlusion_rate(target, BBox(0.45, 0.30, 0.65, 0.60)))

# a smaller box never occludes, however it overlaps
print(occlusion_rate(target, BBox(0.42, 0.42, 0.48, 0.48)))

###############################################################################
# Depth decides who is in front: positions are compared by squared distance
# from the camera, here placed at the origin.

def frame(occluder, target_dist, occluder_dist):
    return FrameGeometry(boxes={0: target, 1: occluder},
                         positions={0: Vec3(0.0, target_dist, 0.0),
                                    1: Vec3(0.0, occluder_dist, 0.0)},
                         camera_position=Vec3(0.0, 0.0, 0.0))


cover = BBox(0.42, 0.30, 0.62, 0.60)           # covers 80% of the target
for name, g in [("in front", frame(cover, 5.0, 4.0)), ("behind", frame(cover, 5.0, 6.0))]:
    print(name, fully_occluded(0, g), partially_occluded(0, g, 0.7))

###############################################################################
# Sweep the occluder across the target and watch the rate fall off linearly.

for dx in np.linspace(0.0, 0.12, 7):
    occ = BBox(0.38 + dx, 0.38, 0.52 + dx, 0.52)
    print(f"shift {dx:.2f}  OR {occlusion_rate(target, occ):.2f}")
