"""Command-line entry point.

Subcommands: synth, train, detect, evaluate, forecast, gradcheck. All
randomness flows from --seed; running the same command twice produces
byte-identical output files. A JSON --config file can supply any flag's
value; explicit flags win.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import pipeline
from .affinity import ModelParams, grad_check, random_small_batch
from .checkpoint import Checkpoint, CheckpointError, load_checkpoint, save_checkpoint
from .dominant_sets import DSConfig, Symmetrization
from .features import CHANNELS
from .scene import (
    GroupPartition, SceneFormatError, SceneValidationError,
    load_scene_sequences, save_scene_sequences,
)
from .synth import SynthConfig, SynthConfigError, generate
from .training import (
    TrainConfig, TrainingDivergedError, WindowRef, apply_scaler, build_batch,
    collect_windows, fit_scaler_on_batch, time_split_bounds, train,
)

DETECTIONS_VERSION = 1


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def write_json(path: str | Path, obj) -> None:
    Path(path).write_text(
        json.dumps(_jsonable(obj), sort_keys=True, indent=1) + "\n", encoding="utf-8"
    )


def write_csv(path: str | Path, rows: list[dict]) -> None:
    if not rows:
        Path(path).write_text("", encoding="utf-8")
        return
    fields = sorted({k for row in rows for k in row})
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row.get(k, "") for k in fields})


def _load_config(path: Optional[str]) -> dict:
    if not path:
        return {}
    blob = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(blob, dict):
        raise ValueError("--config file must contain a JSON object")
    return blob


def _pick(args: argparse.Namespace, cfg: dict, key: str, default):
    """Flag value if given, else config-file value, else default."""
    val = getattr(args, key.replace("-", "_"), None)
    if val is not None:
        return val
    if key in cfg:
        return cfg[key]
    return default


def _snap_thr(value: float) -> float:
    # 0.667 and friends mean the conventional 2/3 tolerance.
    if abs(value - 2.0 / 3.0) < 2e-3:
        return 2.0 / 3.0
    return value


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_synth(args: argparse.Namespace) -> int:
    cfg = _load_config(args.config)
    sizes = _pick(args, cfg, "group-sizes", None)
    if isinstance(sizes, str):
        dist = {}
        for part in sizes.split(","):
            size, weight = part.split(":")
            dist[int(size)] = float(weight)
    elif isinstance(sizes, dict):
        dist = {int(k): float(v) for k, v in sizes.items()}
    else:
        dist = {1: 0.2, 2: 0.35, 3: 0.25, 4: 0.2}
    synth_cfg = SynthConfig(
        n_people=int(_pick(args, cfg, "n-people", 8)),
        n_scenes=int(_pick(args, cfg, "n-scenes", 20)),
        steps_per_scene=int(_pick(args, cfg, "steps", 40)),
        group_size_distribution=dist,
        event_rate=float(_pick(args, cfg, "event-rate", 4.0)),
        o_space_radius=float(_pick(args, cfg, "o-space-radius", 0.55)),
        position_noise_std=float(_pick(args, cfg, "position-noise", 0.04)),
        orientation_noise_std=float(_pick(args, cfg, "orientation-noise", 0.12)),
        seed=int(_pick(args, cfg, "seed", 0)),
    )
    scenes = generate(synth_cfg)
    save_scene_sequences(scenes, args.out)
    print(f"wrote {len(scenes)} scenes to {args.out}")
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    cfg = _load_config(args.config)
    train_cfg = TrainConfig(
        hidden_size=int(_pick(args, cfg, "hidden-size", 64)),
        seq_len=int(_pick(args, cfg, "seq-len", 10)),
        learning_rate=float(_pick(args, cfg, "lr", 1e-3)),
        epochs=int(_pick(args, cfg, "epochs", 30)),
        batch_size=int(_pick(args, cfg, "batch-size", 32)),
        seed=int(_pick(args, cfg, "seed", 0)),
        window_stride=int(_pick(args, cfg, "stride", 1)),
    )
    train_frac = float(_pick(args, cfg, "train-frac", 0.7))
    val_frac = float(_pick(args, cfg, "val-frac", 0.1))

    seqs = load_scene_sequences(args.data)
    labeled = [s for s in seqs if s.gt_partitions is not None]
    if not labeled:
        print("error: no labeled scenes in the dataset", file=sys.stderr)
        return 2

    train_refs, val_refs = [], []
    for idx, seq in enumerate(labeled):
        q1, q2 = time_split_bounds(len(seq.timesteps), train_frac, val_frac)
        for ref in collect_windows([seq], train_cfg.seq_len, train_cfg.window_stride, hi=q1):
            train_refs.append(WindowRef(idx, ref.focal_id, ref.end))
        for ref in collect_windows([seq], train_cfg.seq_len, 1, lo=q1, hi=q2):
            val_refs.append(WindowRef(idx, ref.focal_id, ref.end))
    if not train_refs or not val_refs:
        print("error: dataset too short for the requested split/seq-len", file=sys.stderr)
        return 2

    train_batch = build_batch(labeled, train_refs, train_cfg.seq_len)
    scaler = fit_scaler_on_batch(train_batch)
    apply_scaler(train_batch, scaler)
    val_batch = apply_scaler(build_batch(labeled, val_refs, train_cfg.seq_len), scaler)

    result = train(train_batch, val_batch, train_cfg)
    save_checkpoint(args.out, Checkpoint(result.params, scaler, train_cfg))
    log_path = args.log or str(Path(args.out).with_suffix(".log.json"))
    write_json(log_path, {
        "history": result.history,
        "best_epoch": result.best_epoch,
        "best_val_loss": result.best_val_loss,
        "train_windows": len(train_refs),
        "val_windows": len(val_refs),
        "config": train_cfg.to_dict(),
        "scaler": scaler.to_dict(),
    })
    print(f"trained {train_cfg.epochs} epochs on {len(train_refs)} windows; "
          f"best val loss {result.best_val_loss:.4f} at epoch {result.best_epoch}")
    print(f"checkpoint: {args.out}\nlog: {log_path}")
    return 0


def _ds_config(args: argparse.Namespace, cfg: dict) -> DSConfig:
    return DSConfig(
        affinity_threshold=float(_pick(args, cfg, "ds-threshold", 0.5)),
        strategy=Symmetrization(_pick(args, cfg, "symmetrize", "average")),
    )


def cmd_detect(args: argparse.Namespace) -> int:
    cfg = _load_config(args.config)
    ckpt = load_checkpoint(args.checkpoint)
    ds_config = _ds_config(args, cfg)
    seqs = load_scene_sequences(args.data)
    detections = pipeline.detect(seqs, ckpt, ds_config)
    blob = {
        "format_version": DETECTIONS_VERSION,
        "seq_len": ckpt.train_config.seq_len,
        "ds_config": {
            "affinity_threshold": ds_config.affinity_threshold,
            "strategy": ds_config.strategy.value,
        },
        "scenes": [
            {
                "scene_id": seq.scene_id,
                "frames": [
                    {
                        "t_index": det.frame.t_index,
                        "t": det.frame.t,
                        "person_ids": list(det.frame.person_ids),
                        "affinities": det.frame.values.tolist(),
                        "partition": [sorted(g) for g in sorted(det.partition.groups, key=min)],
                    }
                    for det in dets
                ],
            }
            for seq, dets in zip(seqs, detections)
        ],
    }
    write_json(args.out, blob)
    n_frames = sum(len(d) for d in detections)
    print(f"wrote {n_frames} detected frames across {len(seqs)} scenes to {args.out}")
    return 0


def _load_detections(path: str, seqs) -> list[list[pipeline.FrameDetection]]:
    blob = json.loads(Path(path).read_text(encoding="utf-8"))
    if blob.get("format_version") != DETECTIONS_VERSION:
        raise ValueError(f"unsupported detections format_version {blob.get('format_version')!r}")
    by_id = {s["scene_id"]: s for s in blob["scenes"]}
    out = []
    for seq in seqs:
        scene = by_id.get(seq.scene_id)
        dets = []
        if scene is not None:
            for frame in scene["frames"]:
                af = pipeline.AffinityFrame(
                    t_index=int(frame["t_index"]),
                    t=float(frame["t"]),
                    person_ids=tuple(int(i) for i in frame["person_ids"]),
                    values=np.asarray(frame["affinities"], dtype=np.float64),
                )
                part = GroupPartition.from_lists(frame["partition"])
                dets.append(pipeline.FrameDetection(af, part))
        out.append(dets)
    return out


def cmd_evaluate(args: argparse.Namespace) -> int:
    cfg = _load_config(args.config)
    thr_values = args.thr if args.thr else cfg.get("thr", [2.0 / 3.0, 1.0])
    thr_values = tuple(_snap_thr(float(t)) for t in thr_values)
    seqs = load_scene_sequences(args.data)
    detections = _load_detections(args.detections, seqs)
    report = pipeline.evaluate_detections(seqs, detections, thr_values)
    out = Path(args.out)
    json_path = out if out.suffix == ".json" else out.with_suffix(".json")
    csv_path = json_path.with_suffix(".csv")
    write_json(json_path, report.to_dict())
    write_csv(csv_path, report.per_frame)
    corpus = report.corpus
    for thr in thr_values:
        key = pipeline._thr_key(thr)
        print(f"F1@{key}: {corpus[f'mean_f1@{key}']}")
    print(f"AUC: {corpus['auc']}")
    print(f"report: {json_path} / {csv_path}")
    return 0


def cmd_forecast(args: argparse.Namespace) -> int:
    cfg = _load_config(args.config)
    ckpt = load_checkpoint(args.checkpoint)
    ds_config = _ds_config(args, cfg)
    horizon = int(_pick(args, cfg, "horizon", 10))
    n_samples = int(_pick(args, cfg, "n-samples", 50))
    n_obs = int(_pick(args, cfg, "n-obs", ckpt.train_config.seq_len))
    seed = int(_pick(args, cfg, "seed", 0))
    if horizon < 1:
        print("error: forecast requires --horizon >= 1", file=sys.stderr)
        return 2
    seqs = load_scene_sequences(args.data)
    seq_len = ckpt.train_config.seq_len
    forecasts = []
    skipped = 0
    for idx, seq in enumerate(seqs):
        end = len(seq.timesteps) - 1 - horizon
        if end < seq_len - 1 + n_obs - 1:
            skipped += 1
            continue
        scene_seed = int(np.random.SeedSequence(seed, spawn_key=(idx,)).generate_state(1)[0])
        forecasts.append(pipeline.forecast_scene(
            seq, ckpt, end, horizon, n_samples, ds_config, scene_seed, n_obs
        ))
    if not forecasts:
        print("error: no scene is long enough for the requested horizon", file=sys.stderr)
        return 2
    report = pipeline.forecast_report(forecasts, horizon, n_samples)
    report["skipped_scenes"] = skipped
    write_json(args.out, report)
    for row in report["horizons"]:
        print(f"h={row['h']}: F1@1.000={row['mean_f1@1.000']} "
              f"(+-{row['std_across_samples@1.000']})")
    print(f"report: {args.out}")
    return 0


def cmd_gradcheck(args: argparse.Namespace) -> int:
    seed = args.seed if args.seed is not None else 0
    params = ModelParams.random(hidden_size=8, seed=seed)
    batch = random_small_batch(seed + 1)
    err = grad_check(params, batch)
    print(f"max relative gradient error: {err:.3e}")
    if err < 1e-5:
        return 0
    print("error: gradient check failed (>= 1e-5)", file=sys.stderr)
    return 1


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="convgroups",
        description="Conversation group detection and forecasting",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", help="JSON file with default flag values")
        p.add_argument("--seed", type=int, default=None)

    p_synth = sub.add_parser("synth", help="generate a synthetic labeled dataset")
    add_common(p_synth)
    p_synth.add_argument("--out", required=True)
    p_synth.add_argument("--n-people", type=int, default=None)
    p_synth.add_argument("--n-scenes", type=int, default=None)
    p_synth.add_argument("--steps", type=int, default=None)
    p_synth.add_argument("--event-rate", type=float, default=None)
    p_synth.add_argument("--o-space-radius", type=float, default=None)
    p_synth.add_argument("--position-noise", type=float, default=None)
    p_synth.add_argument("--orientation-noise", type=float, default=None)
    p_synth.add_argument("--group-sizes", default=None,
                         help="comma list like 2:0.5,3:0.5 (size:weight)")
    p_synth.set_defaults(func=cmd_synth)

    p_train = sub.add_parser("train", help="fit the affinity model")
    add_common(p_train)
    p_train.add_argument("--data", required=True)
    p_train.add_argument("--out", required=True, help="checkpoint path")
    p_train.add_argument("--log", default=None, help="training log path")
    p_train.add_argument("--hidden-size", type=int, default=None)
    p_train.add_argument("--seq-len", type=int, default=None)
    p_train.add_argument("--lr", type=float, default=None)
    p_train.add_argument("--epochs", type=int, default=None)
    p_train.add_argument("--batch-size", type=int, default=None)
    p_train.add_argument("--stride", type=int, default=None)
    p_train.add_argument("--train-frac", type=float, default=None)
    p_train.add_argument("--val-frac", type=float, default=None)
    p_train.set_defaults(func=cmd_train)

    p_detect = sub.add_parser("detect", help="predict partitions for scenes")
    add_common(p_detect)
    p_detect.add_argument("--data", required=True)
    p_detect.add_argument("--checkpoint", required=True)
    p_detect.add_argument("--out", required=True)
    p_detect.add_argument("--ds-threshold", type=float, default=None)
    p_detect.add_argument("--symmetrize", default=None,
                          choices=[s.value for s in Symmetrization])
    p_detect.set_defaults(func=cmd_detect)

    p_eval = sub.add_parser("evaluate", help="score detections against ground truth")
    add_common(p_eval)
    p_eval.add_argument("--data", required=True)
    p_eval.add_argument("--detections", required=True)
    p_eval.add_argument("--out", required=True)
    p_eval.add_argument("--thr", type=float, action="append", default=None,
                        help="repeatable; e.g. --thr 0.667 --thr 1.0")
    p_eval.set_defaults(func=cmd_evaluate)

    p_fc = sub.add_parser("forecast", help="forecast future partitions with uncertainty")
    add_common(p_fc)
    p_fc.add_argument("--data", required=True)
    p_fc.add_argument("--checkpoint", required=True)
    p_fc.add_argument("--out", required=True)
    p_fc.add_argument("--horizon", type=int, default=None)
    p_fc.add_argument("--n-samples", type=int, default=None)
    p_fc.add_argument("--n-obs", type=int, default=None)
    p_fc.add_argument("--ds-threshold", type=float, default=None)
    p_fc.add_argument("--symmetrize", default=None,
                      choices=[s.value for s in Symmetrization])
    p_fc.set_defaults(func=cmd_forecast)

    p_gc = sub.add_parser("gradcheck", help="verify analytic gradients")
    add_common(p_gc)
    p_gc.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (SceneFormatError, SceneValidationError, CheckpointError,
            SynthConfigError, TrainingDivergedError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: file not found: {exc.filename}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
