"""``oplab``: generate datasets, train and evaluate models, compare runs.

Every command takes ``--config`` (a JSON :class:`ExperimentConfig`) and flag
overrides. Outputs go under ``--out``; without it they go under
``$OPLAB_OUT`` (default ``./runs``) in a directory named after the command.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .annotator import LABELS, AnnotationConfig, DetectorNoise, emulate_detector
from .dataset_io import (DEFAULT_SPLITS, compute_stats, generate_split,
                         load_split, stack_records, write_splits)
from .models import Model, ModelConfig, ModelVariant
from .scene_sim import PRESETS, InvalidConfigError, ScenarioConfig
from .train_eval import (THRESHOLDS, Supervision, TrainConfig, TrainingDiverged,
                         compare_per_video, evaluate, export_reports, grid_eval, map_curve,
                         read_per_video_csv, svg_scatter, train, write_compare_csv)

log = logging.getLogger("oplab")

ENV_OUT = "OPLAB_OUT"
DEFAULT_NOISE = DetectorNoise(miss_rate=0.1, jitter_sigma=0.01, swap_rate=0.02)


class CliError(Exception):
    """A user-facing failure; the message says what to do about it."""


@dataclass
class ExperimentConfig:
    seed: Optional[int] = None
    preset: str = "desk"
    scenario: dict = field(default_factory=dict)
    annotation: dict = field(default_factory=dict)
    detector_noise: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    model: dict = field(default_factory=dict)
    splits: dict = field(default_factory=lambda: dict(DEFAULT_SPLITS))
    out: Optional[str] = None
    workers: int = 1

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise CliError(f"unknown config keys {sorted(unknown)}; allowed: {sorted(known)}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            with open(path) as fh:
                return cls.from_dict(json.load(fh))
        except FileNotFoundError:
            raise CliError(f"config file {path} does not exist") from None
        except json.JSONDecodeError as e:
            raise CliError(f"config file {path} is not valid JSON: {e}") from None

    def scenario_config(self) -> ScenarioConfig:
        if self.preset not in PRESETS:
            raise CliError(f"unknown preset {self.preset!r}; choose from {sorted(PRESETS)}")
        base = PRESETS[self.preset].to_dict()
        base.update(self.scenario)
        try:
            cfg = ScenarioConfig.from_dict(base)
            cfg.validate()
        except InvalidConfigError as e:
            raise CliError(f"bad scenario config: {e}") from None
        return cfg

    def annotation_config(self) -> AnnotationConfig:
        d = dict(self.annotation)
        # one slot per object the preset can place
        d.setdefault("slots", self.scenario_config().max_objects)
        return AnnotationConfig(**d)

    def noise(self) -> DetectorNoise:
        d = {"seed": self.seed or 0, **self.detector_noise}
        return DetectorNoise(**d) if self.detector_noise else dataclasses.replace(
            DEFAULT_NOISE, seed=d["seed"])

    def train_config(self) -> TrainConfig:
        d = {"seed": self.seed or 0, **self.train}
        return TrainConfig.from_dict(d)

    def require_seed(self) -> int:
        if self.seed is None:
            raise CliError("a seed is required: pass --seed N or set \"seed\" in the config")
        return int(self.seed)


def _out_dir(args, cfg: ExperimentConfig, default_name: str) -> Path:
    if args.out:
        return Path(args.out)
    if cfg.out:
        return Path(cfg.out)
    return Path(os.environ.get(ENV_OUT, "runs")) / default_name


def _load_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "preset", None):
        cfg.preset = args.preset
    if getattr(args, "workers", None) is not None:
        cfg.workers = args.workers
    return cfg


def _write_json(path: Path, doc) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _dataset(path) -> Path:
    d = Path(path)
    if not (d / "manifest.json").exists():
        raise CliError(f"no dataset at {d} (missing manifest.json); "
                       f"create one with `oplab generate --out {d} --seed N`")
    return d


def _manifest(data: Path) -> dict:
    with open(data / "manifest.json") as fh:
        return json.load(fh)


# ---------------------------------------------------------------------------
# generate
# ---------------------------------------------------------------------------

def cmd_generate(args) -> int:
    cfg = _load_config(args)
    seed = cfg.require_seed()
    scenario = cfg.scenario_config()
    annotation = cfg.annotation_config()
    counts = dict(cfg.splits)
    if args.counts:
        try:
            counts = dict(zip(("train", "dev", "test"), (int(c) for c in args.counts.split(","))))
        except ValueError:
            raise CliError(f"--counts expects three integers like 500,100,100, "
                           f"got {args.counts!r}") from None
    out = _out_dir(args, cfg, f"dataset-{cfg.preset}-{seed}")
    splits = {name: generate_split(seed, name, n, scenario, annotation, workers=cfg.workers)
              for name, n in counts.items()}
    manifest = write_splits(out, splits, seed=seed, scenario_config=scenario,
                            annotation=annotation, compress=args.compress)
    _write_json(out / "experiment.json", dataclasses.asdict(cfg))
    for name, recs in splits.items():
        if recs:
            print(compute_stats(recs).table(name))
    print(f"config hash {manifest['config_hash']}")
    print(f"wrote {out}")
    return 0


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------

def cmd_train(args) -> int:
    cfg = _load_config(args)
    seed = cfg.require_seed()
    data = _dataset(args.data)
    variant = ModelVariant.parse(args.variant or cfg.model.get("variant", "opnet"))
    if not variant.learned:
        raise CliError(f"{variant.value} has nothing to train; evaluate it directly "
                       f"with `oplab eval --variant {variant.value}`")
    train_overrides = dict(cfg.train)
    if args.supervision:
        train_overrides["supervision"] = args.supervision
    if args.epochs is not None:
        train_overrides["max_epochs"] = args.epochs
    cfg.train = train_overrides
    tcfg = cfg.train_config()
    tr_recs, dev_recs = load_split(data, "train"), load_split(data, "dev")
    K = max(r.observations.shape[1] for r in tr_recs + dev_recs)
    model_kw = {k: v for k, v in cfg.model.items() if k != "variant"}
    mcfg = ModelConfig(variant=variant, slots=K, seed=seed, **model_kw)
    out = _out_dir(args, cfg, f"train-{variant.value}-{tcfg.supervision.value}-{seed}")
    out.mkdir(parents=True, exist_ok=True)
    log_path = out / "train_log.jsonl"
    if not args.resume and log_path.exists():
        log_path.unlink()

    def on_epoch(entry):
        with open(log_path, "a") as fh:
            fh.write(json.dumps(entry, sort_keys=True) + "\n")
        print(f"epoch {entry['epoch']:>3}  train {entry['train_loss']:.5f}  "
              f"dev {entry['dev_loss']:.5f}  dev IoU {entry['dev_iou']:.4f}  "
              f"lr {entry['lr']:.2e}", flush=True)

    try:
        result = train(stack_records(tr_recs, K), stack_records(dev_recs, K), mcfg, tcfg,
                       on_epoch=on_epoch, state_path=out / "state.json", resume=args.resume)
    except TrainingDiverged as e:
        raise CliError(f"training diverged: {e}; try a smaller --lr") from None
    meta = {"seed": seed, "train": tcfg.to_dict(), "best_epoch": result.best_epoch,
            "best_dev_iou": result.best_dev_iou,
            "dataset": {"path": str(data), "config_hash": _manifest(data)["config_hash"]}}
    result.model.save(out / "model.json", meta)
    _write_json(out / "run.json", {**meta, "model": mcfg.to_dict(),
                                   "audit_hidden_reads": result.audit_hidden_reads,
                                   "experiment": dataclasses.asdict(cfg)})
    print(f"best epoch {result.best_epoch} dev IoU {result.best_dev_iou:.4f}; wrote {out}")
    return 0


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------

def _parse_noise(spec: str, seed: int) -> DetectorNoise:
    try:
        miss, jitter, swap = (float(v) for v in spec.split(","))
    except ValueError:
        raise CliError(f"--detector-noise expects MISS,JITTER,SWAP like 0.1,0.01,0.02, "
                       f"got {spec!r}") from None
    return DetectorNoise(miss, jitter, swap, seed)


def noisy_observations(obs: np.ndarray, noise: DetectorNoise) -> np.ndarray:
    """Apply the detector emulator video by video with per-video seeds."""
    return np.stack([emulate_detector(v, noise, np.random.default_rng([noise.seed, i]))
                     for i, v in enumerate(obs)])


def cmd_eval(args) -> int:
    cfg = _load_config(args)
    data = _dataset(args.data)
    if args.checkpoint:
        try:
            model = Model.load(args.checkpoint)
        except FileNotFoundError:
            raise CliError(f"checkpoint {args.checkpoint} does not exist") from None
    else:
        variant = ModelVariant.parse(args.variant or "heuristic")
        if variant.learned:
            raise CliError(f"{variant.value} needs --checkpoint (train one with `oplab train`)")
        model = Model(ModelConfig(variant=variant))
    recs = load_split(data, args.split)
    K = model.config.slots if model.variant.learned else None
    arrays = stack_records(recs, K)
    obs = arrays["obs"]
    observation = "perfect" if args.perfect_perception else args.observation
    if args.detector_noise:
        observation = "noisy"
    noise = None
    if observation == "noisy":
        noise = (_parse_noise(args.detector_noise, cfg.seed or 0) if args.detector_noise
                 else cfg.noise())
        obs = noisy_observations(obs, noise)
    pred, attn = model.predict(obs)
    name = args.name or model.variant.value
    ids = [r.video_id for r in recs]
    report = evaluate(pred, arrays["boxes"], arrays["labels"], ids, name=name)
    report.map_curve = map_curve(pred, arrays["boxes"], THRESHOLDS)
    report.label_map_curves = {l.value: map_curve(pred, arrays["boxes"], THRESHOLDS,
                                                  arrays["labels"], l) for l in LABELS}
    if args.grid:
        camera = ScenarioConfig.from_dict(_manifest(data)["scenario_config"]).camera
        report.grid = grid_eval(pred[:, -1], np.stack([r.target_positions[-1] for r in recs]),
                                camera, recs[0].floor_half_extent, recs[0].target_radius)
    out = _out_dir(args, cfg, f"eval-{name}-{args.split}")
    traces = {}
    if attn is not None:
        traces = {ids[i]: attn[i] for i in range(min(args.attention, len(ids)))}
    export_reports([report], out, traces)
    summary = {"model": name, "split": args.split, "observation": observation,
               "detector_noise": dataclasses.asdict(noise) if noise else None,
               "checkpoint": str(args.checkpoint) if args.checkpoint else None,
               "dataset": {"path": str(data), "config_hash": _manifest(data)["config_hash"]},
               "metrics": report.row()}
    if report.grid is not None:
        summary["grid"] = {"accuracy": report.grid.accuracy, "mean_l1": report.grid.mean_l1}
    _write_json(out / "report.json", summary)
    print(report.table())
    if report.grid is not None:
        print(f"grid accuracy {100 * report.grid.accuracy:.1f}%  L1 {report.grid.mean_l1:.3f}")
    print(f"wrote {out}")
    return 0


# ---------------------------------------------------------------------------
# compare
# ---------------------------------------------------------------------------

def _per_video_path(p) -> Path:
    p = Path(p)
    if p.is_dir():
        p = p / "per_video.csv"
    if not p.exists():
        raise CliError(f"{p} not found; point compare at an `oplab eval` output directory")
    return p


def cmd_compare(args) -> int:
    cfg = _load_config(args)
    a = read_per_video_csv(_per_video_path(args.a))
    b = read_per_video_csv(_per_video_path(args.b))
    rows, summary = compare_per_video(a, b, args.carried_threshold)
    if not rows:
        raise CliError("the two reports share no videos")
    out = _out_dir(args, cfg, "compare")
    write_compare_csv(rows, out / "compare.csv")
    svg_scatter([(r[1], r[2], r[5]) for r in rows], out / "scatter.svg",
                title="per-video mean IoU (red: carried-heavy)",
                xlabel=f"A: {args.a}", ylabel=f"B: {args.b}")
    _write_json(out / "compare.json", {**summary, "a": str(args.a), "b": str(args.b),
                                       "carried_threshold": args.carried_threshold})
    print(f"{summary['videos']} videos: B below A on {summary['below_diagonal']}, "
          f"above on {summary['above_diagonal']}; mean delta {summary['mean_delta']:+.4f}; "
          f"{summary['carried_heavy']} carried-heavy")
    print(f"wrote {out}")
    return 0


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="oplab", description=__doc__.split("\n")[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="JSON experiment config")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", help=f"output directory (default under ${ENV_OUT} or ./runs)")

    g = sub.add_parser("generate", help="build a seeded dataset with manifest and statistics")
    common(g)
    g.add_argument("--preset", choices=sorted(PRESETS))
    g.add_argument("--counts", help="train,dev,test video counts (default 500,100,100)")
    g.add_argument("--workers", type=int)
    g.add_argument("--compress", action="store_true", help="gzip the JSONL files")
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="train a learned model variant")
    common(t)
    t.add_argument("--data", required=True, help="dataset directory from `generate`")
    t.add_argument("--variant", help="opnet, opnet-mlp, baseline-lstm, nonlinear-lstm")
    t.add_argument("--supervision", choices=[s.value for s in Supervision])
    t.add_argument("--epochs", type=int)
    t.add_argument("--resume", action="store_true", help="continue from <out>/state.json")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="score a checkpoint or programmed baseline on a split")
    common(e)
    e.add_argument("--data", required=True)
    e.add_argument("--split", default="test")
    e.add_argument("--checkpoint")
    e.add_argument("--variant", help="heuristic or static when no checkpoint is given")
    e.add_argument("--name", help="model name used in the report")
    e.add_argument("--observation", choices=["perfect", "noisy"], default="perfect")
    e.add_argument("--perfect-perception", action="store_true")
    e.add_argument("--detector-noise", metavar="MISS,JITTER,SWAP")
    e.add_argument("--grid", action="store_true", help="also score the 6x6 floor grid")
    e.add_argument("--attention", type=int, default=3,
                   help="export attention traces for this many videos")
    e.set_defaults(func=cmd_eval)

    c = sub.add_parser("compare", help="per-video comparison of two eval outputs")
    common(c)
    c.add_argument("a")
    c.add_argument("b")
    c.add_argument("--carried-threshold", type=float, default=0.07)
    c.set_defaults(func=cmd_compare)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (CliError, ValueError, KeyError) as e:
        msg = e.args[0] if isinstance(e, KeyError) and e.args else e
        print(f"oplab {args.command}: error: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
