"""Losses, training loop, metrics and report export."""
from .losses import combined_loss, consistency_loss, localization_loss
from .metrics import (THRESHOLDS, GridResult, MetricsReport, evaluate, floor_cell, grid_eval,
                      iou, iou_batch, map_curve, mean_sem, reporting_boxes)
from .training import (PlateauSchedule, SupervisedSplit, Supervision, TrainConfig,
                       TrainingDiverged, TrainResult, supervision_mask, train)
from .reports import (CARRIED_HEAVY, compare_per_video, export_reports, read_per_video_csv,
                      svg_heatmap, svg_line_plot, svg_scatter, write_attention_csv,
                      write_compare_csv, write_map_csv, write_metrics_csv, write_per_video_csv)
