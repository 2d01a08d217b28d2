"""
Training OPNet on a small dataset
=================================

Generate a handful of videos, train a narrow OPNet for a few epochs and
compare it with the two programmed baselines. Everything runs on one core in
well under a minute; the acceptance suite does the same at desk scale.
"""

import tempfile
from pathlib import Path

from oplab.annotator import AnnotationConfig
from oplab.dataset_io import compute_stats, generate_split, stack_records
from oplab.models import Model, ModelConfig, ModelVariant
from oplab.scene_sim import ScenarioConfig
from oplab.train_eval import TrainConfig, evaluate, export_reports, map_curve, train

cfg, ann = ScenarioConfig(), AnnotationConfig(slots=6)
splits = {s: generate_split(1, s, n, cfg, ann) for s, n in
          [("train", 60), ("dev", 20), ("test", 20)]}
print(compute_stats(splits["train"]).table("train"))
arrays = {s: stack_records(r, 6) for s, r in splits.items()}

###############################################################################
# A narrow model with small batches keeps the demo fast; the defaults are a
# hidden size of 256, batches of 16 and a learning rate of 1e-3.

result = train(arrays["train"], arrays["dev"],
               ModelConfig(ModelVariant.OPNET, slots=6, hidden=32, seed=1),
               TrainConfig(max_epochs=25, seed=1, lr=3e-3, batch_size=4),
               on_epoch=lambda e: print(e["epoch"], round(e["dev_iou"], 3)))
print("best epoch", result.best_epoch)

###############################################################################
# Programmed baselines need no training.

test = arrays["test"]
reports = []
for name, model in [("opnet", result.model),
                    ("heuristic", Model(ModelConfig(ModelVariant.HEURISTIC, slots=6))),
                    ("static", Model(ModelConfig(ModelVariant.STATIC, slots=6)))]:
    pred, _ = model.predict(test["obs"])
    r = evaluate(pred, test["boxes"], test["labels"], name=name,
                 video_ids=[v.video_id for v in splits["test"]])
    reports.append(r)
    print(r.table())
    print("MAP@0.5", map_curve(pred, test["boxes"], [0.5])[0.5])

out = Path(tempfile.mkdtemp())
export_reports(reports, out)
print(sorted(p.name for p in out.iterdir()))
