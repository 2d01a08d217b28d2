"""
Where the attention goes during a carry
=======================================

Script a cone that covers the snitch and slides away with it, then print the
who-to-track attention of a model frame by frame. A model that tracks the
carrier should move its mass from slot 0 to the cone's slot once the snitch
disappears.

Pass the path of a trained checkpoint (``oplab train`` writes ``model.json``)
as the first argument; without one a freshly initialised model is used.
"""

import sys

import numpy as np

from oplab.annotator import AnnotationConfig
from oplab.dataset_io import record_from_scenario
from oplab.models import Model, ModelConfig, ModelVariant
from oplab.scene_sim import (ActionEvent, ActionKind, CameraParams, ObjectSpec, Scenario,
                             Shape, Size, SIZE_RADIUS, Vec3)

snitch = ObjectSpec(0, Shape.SNITCH, Size.SMALL, SIZE_RADIUS[Size.SMALL])
cone = ObjectSpec(1, Shape.CONE, Size.LARGE, SIZE_RADIUS[Size.LARGE])
cube = ObjectSpec(2, Shape.CUBE, Size.MEDIUM, SIZE_RADIUS[Size.MEDIUM])
scenario = Scenario(
    objects=(snitch, cone, cube),
    initial_positions=(Vec3(0.0, 0.0, snitch.radius), Vec3(-2.0, 0.5, cone.radius),
                       Vec3(1.5, 1.5, cube.radius)),
    events=(ActionEvent(ActionKind.CONTAIN, 1, 5, 13, Vec3(0.0, 0.0, cone.radius), target=0),
            ActionEvent(ActionKind.SLIDE, 1, 20, 32, Vec3(1.8, -1.5, cone.radius))),
    num_frames=40, camera=CameraParams(), seed=0)
rec = record_from_scenario(scenario, "demo", AnnotationConfig(slots=6))

###############################################################################
# Load or build the model and run it on the single video.

if len(sys.argv) > 1:
    model = Model.load(sys.argv[1])
else:
    model = Model(ModelConfig(ModelVariant.OPNET, slots=6, hidden=32))
boxes, attn = model.predict(rec.observations[None])

cover = np.asarray(rec.cover_slots)
for t, lab in enumerate(rec.labels):
    bar = " ".join(f"{a:.2f}" for a in attn[0, t])
    print(f"{t:2d} {lab.value:9s} cover={cover[t]:2d} argmax={attn[0, t].argmax()}  {bar}")
