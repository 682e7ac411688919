"""End-to-end orchestration: detection, evaluation reports, forecasting.

Everything here is glue over the core modules; it exists so the CLI, the
experiment scripts, and the acceptance tests run the exact same code paths.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .affinity import ModelParams, forward_batch
from .checkpoint import Checkpoint
from .dominant_sets import DSConfig, Symmetrization, cluster, symmetrize_values
from .features import FeatureScaler, SequenceFeaturizer, N_CHANNELS, PAD_VALUE, pair_slots
from .forecast import EdgeSeries, ForecastResult, forecast_groups
from .metrics import GroupMatchConfig, GroupScore, auc, group_f1, scene_dynamics
from .scene import AffinityMatrix, GroupPartition, SceneSequence

DEFAULT_THRESHOLD_GRID = tuple(round(0.05 * k, 2) for k in range(1, 10))  # 0.05 .. 0.45


@dataclass
class AffinityFrame:
    """Raw model output for one scene at one timestep."""

    t_index: int
    t: float
    person_ids: tuple[int, ...]
    values: np.ndarray  # (P, P), row = focal


@dataclass
class FrameDetection:
    frame: AffinityFrame
    partition: GroupPartition


def affinity_frames(
    seq: SceneSequence,
    params: ModelParams,
    scaler: FeatureScaler,
    seq_len: int,
    ends: Optional[Sequence[int]] = None,
) -> list[AffinityFrame]:
    """Run the model at each requested window end (default: every full window)."""
    if ends is None:
        ends = range(seq_len - 1, len(seq.timesteps))
    featurizer = SequenceFeaturizer(seq, scaler)
    frames: list[AffinityFrame] = []
    for end in ends:
        present = seq.present_ids(end)
        p = len(present)
        if p == 0:
            frames.append(AffinityFrame(end, seq.timesteps[end], (), np.zeros((0, 0))))
            continue
        n_slots = seq.n - 1
        feats = np.full((p, seq_len, n_slots, N_CHANNELS), PAD_VALUE)
        mask = np.zeros((p, seq_len, n_slots), dtype=bool)
        slot_ids = []
        for row, focal in enumerate(present):
            tensor, pmask = featurizer.build(focal, end - seq_len + 1, seq_len)
            feats[row] = tensor.values
            mask[row] = pmask.values
            slot_ids.append(tensor.pair_ids)
        preds, valid = forward_batch(params, feats, mask)

        values = np.zeros((p, p))
        col_of = {pid: k for k, pid in enumerate(present)}
        for row, focal in enumerate(present):
            for slot, pid in enumerate(slot_ids[row]):
                if valid[row, slot] and pid in col_of:
                    values[row, col_of[pid]] = preds[row, slot]
        frames.append(AffinityFrame(end, seq.timesteps[end], present, values))
    return frames


def cluster_frames(frames: Sequence[AffinityFrame], ds_config: DSConfig) -> list[FrameDetection]:
    return [
        FrameDetection(f, cluster(AffinityMatrix(f.person_ids, f.values), ds_config))
        for f in frames
    ]


def detect(
    seqs: Sequence[SceneSequence],
    ckpt: Checkpoint,
    ds_config: DSConfig,
    ends_per_seq: Optional[list[Sequence[int]]] = None,
) -> list[list[FrameDetection]]:
    seq_len = ckpt.train_config.seq_len
    out = []
    for k, seq in enumerate(seqs):
        ends = None if ends_per_seq is None else ends_per_seq[k]
        frames = affinity_frames(seq, ckpt.params, ckpt.scaler, seq_len, ends)
        out.append(cluster_frames(frames, ds_config))
    return out


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------


def pair_scores_and_labels(
    seq: SceneSequence, frames: Sequence[AffinityFrame]
) -> tuple[list[float], list[int]]:
    """Directed (focal, other) affinities with same-group labels."""
    scores: list[float] = []
    labels: list[int] = []
    for frame in frames:
        part = seq.partition_at(frame.t_index)
        if part is None:
            continue
        for i, focal in enumerate(frame.person_ids):
            for j, other in enumerate(frame.person_ids):
                if i == j:
                    continue
                scores.append(float(frame.values[i, j]))
                labels.append(1 if part.same_group(focal, other) else 0)
    return scores, labels


@dataclass
class EvaluationReport:
    thr_values: tuple[float, ...]
    per_frame: list[dict] = field(default_factory=list)
    per_scene: list[dict] = field(default_factory=list)
    corpus: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "thr_values": list(self.thr_values),
            "per_scene": self.per_scene,
            "corpus": self.corpus,
        }


def _thr_key(thr: float) -> str:
    return format(thr, ".3f")


def evaluate_detections(
    seqs: Sequence[SceneSequence],
    detections: Sequence[Sequence[FrameDetection]],
    thr_values: Sequence[float] = (2.0 / 3.0, 1.0),
) -> EvaluationReport:
    """Group F1 per frame and scene, corpus AUC, and the F1-vs-dynamics table."""
    report = EvaluationReport(thr_values=tuple(thr_values))
    all_scores: list[float] = []
    all_labels: list[int] = []
    bucket_f1: dict[str, dict[int, list[float]]] = {_thr_key(t): {} for t in thr_values}
    dyn_hist: dict[int, int] = {}

    for seq, dets in zip(seqs, detections):
        if seq.gt_partitions is None:
            continue
        dynamics = scene_dynamics([p or GroupPartition(()) for p in seq.gt_partitions])
        scene_row = {
            "scene_id": seq.scene_id,
            "frames": 0,
            "f1": {_thr_key(t): [] for t in thr_values},
            "counts": {_thr_key(t): [0, 0, 0] for t in thr_values},
        }
        for det in dets:
            t_index = det.frame.t_index
            gt = seq.partition_at(t_index)
            if gt is None:
                continue
            d_t = dynamics[t_index].total
            dyn_hist[d_t] = dyn_hist.get(d_t, 0) + 1
            frame_row = {
                "scene_id": seq.scene_id,
                "t_index": t_index,
                "t": det.frame.t,
                "dynamics": d_t,
            }
            for thr in thr_values:
                score = group_f1(det.partition, gt, GroupMatchConfig(thr))
                key = _thr_key(thr)
                frame_row[f"f1@{key}"] = score.f1
                frame_row[f"tp@{key}"] = score.tp
                frame_row[f"fp@{key}"] = score.fp
                frame_row[f"fn@{key}"] = score.fn
                scene_row["f1"][key].append(score.f1)
                counts = scene_row["counts"][key]
                counts[0] += score.tp
                counts[1] += score.fp
                counts[2] += score.fn
                bucket_f1[key].setdefault(d_t, []).append(score.f1)
            scene_row["frames"] += 1
            report.per_frame.append(frame_row)
        if scene_row["frames"]:
            summary = {
                "scene_id": seq.scene_id,
                "frames": scene_row["frames"],
            }
            for thr in thr_values:
                key = _thr_key(thr)
                f1s = scene_row["f1"][key]
                tp, fp, fn = scene_row["counts"][key]
                summary[f"mean_f1@{key}"] = float(np.mean(f1s))
                summary[f"tp@{key}"] = tp
                summary[f"fp@{key}"] = fp
                summary[f"fn@{key}"] = fn
            report.per_scene.append(summary)
        frames_only = [d.frame for d in dets]
        s, l = pair_scores_and_labels(seq, frames_only)
        all_scores.extend(s)
        all_labels.extend(l)

    corpus: dict = {"frames": len(report.per_frame)}
    for thr in thr_values:
        key = _thr_key(thr)
        f1s = [row[f"f1@{key}"] for row in report.per_frame]
        corpus[f"mean_f1@{key}"] = float(np.mean(f1s)) if f1s else None
        corpus[f"std_f1@{key}"] = float(np.std(f1s)) if f1s else None
    if all_labels and 0 < sum(all_labels) < len(all_labels):
        corpus["auc"] = auc(all_scores, all_labels)
    else:
        corpus["auc"] = None
    corpus["pairs_scored"] = len(all_labels)
    corpus["dynamics_histogram"] = {str(k): dyn_hist[k] for k in sorted(dyn_hist)}
    corpus["f1_by_dynamics"] = {
        key: {str(d): float(np.mean(v)) for d, v in sorted(buckets.items())}
        for key, buckets in bucket_f1.items()
    }
    report.corpus = corpus
    return report


def tune_ds_threshold(
    seqs: Sequence[SceneSequence],
    frames_per_seq: Sequence[Sequence[AffinityFrame]],
    strategy: Symmetrization,
    grid: Sequence[float] = DEFAULT_THRESHOLD_GRID,
    thr: float = 1.0,
) -> tuple[float, dict[float, float]]:
    """Pick the stopping threshold maximizing mean F1 on labeled frames.

    Ties go to the smaller threshold; clustering reuses cached affinities so
    the sweep never re-runs the network.
    """
    table: dict[float, float] = {}
    cfg_thr = GroupMatchConfig(thr)
    for threshold in grid:
        ds_config = DSConfig(affinity_threshold=threshold, strategy=strategy)
        f1s = []
        for seq, frames in zip(seqs, frames_per_seq):
            for frame in frames:
                gt = seq.partition_at(frame.t_index)
                if gt is None:
                    continue
                part = cluster(AffinityMatrix(frame.person_ids, frame.values), ds_config)
                f1s.append(group_f1(part, gt, cfg_thr).f1)
        table[threshold] = float(np.mean(f1s)) if f1s else 0.0
    best = max(table, key=lambda k: (table[k], -k))
    return best, table


# ---------------------------------------------------------------------------
# Forecasting
# ---------------------------------------------------------------------------


@dataclass
class SceneForecast:
    scene_id: str
    end_index: int
    result: ForecastResult
    f1_samples: dict[str, np.ndarray]  # thr key -> (Z, n_samples) or empty


def edge_series_from_frames(frames: Sequence[AffinityFrame]) -> list[EdgeSeries]:
    """Averaged symmetrized per-pair series over consecutive frames.

    The persons of the final frame define the edges; a pair missing from any
    earlier frame has no complete history and raises.
    """
    if not frames:
        raise ValueError("no observation frames")
    persons = frames[-1].person_ids
    series: list[EdgeSeries] = []
    for i, a in enumerate(persons):
        for b in persons[i + 1:]:
            times = []
            values = []
            for frame in frames:
                if a not in frame.person_ids or b not in frame.person_ids:
                    raise ValueError(
                        f"missing edge series for present pair ({a}, {b}) at t={frame.t}"
                    )
                ia = frame.person_ids.index(a)
                ib = frame.person_ids.index(b)
                times.append(frame.t)
                values.append((frame.values[ia, ib] + frame.values[ib, ia]) / 2.0)
            series.append(EdgeSeries((a, b), np.asarray(times), np.asarray(values)))
    return series


def forecast_scene(
    seq: SceneSequence,
    ckpt: Checkpoint,
    end_index: int,
    horizon: int,
    n_samples: int,
    ds_config: DSConfig,
    seed: int,
    n_obs: Optional[int] = None,
    thr_values: Sequence[float] = (2.0 / 3.0, 1.0),
) -> SceneForecast:
    """Fit per-edge GPs on the trailing observations and score the samples.

    Horizon steps extend the observed label clock: step h maps to the scene's
    recorded timestep end+h when it exists (enabling evaluation), otherwise
    extrapolates at the trailing time delta.
    """
    seq_len = ckpt.train_config.seq_len
    n_obs = n_obs if n_obs is not None else seq_len
    first_end = end_index - n_obs + 1
    if first_end < seq_len - 1:
        raise ValueError(
            f"need {n_obs} observation windows ending at {end_index}; "
            f"sequence only supports ends >= {seq_len - 1}"
        )
    ends = list(range(first_end, end_index + 1))
    frames = affinity_frames(seq, ckpt.params, ckpt.scaler, seq_len, ends)
    series = edge_series_from_frames(frames)

    n_steps = len(seq.timesteps)
    dt = seq.timesteps[-1] - seq.timesteps[-2] if n_steps >= 2 else 1.0
    horizon_times = []
    for h in range(1, horizon + 1):
        idx = end_index + h
        if idx < n_steps:
            horizon_times.append(seq.timesteps[idx])
        else:
            horizon_times.append(seq.timesteps[end_index] + dt * h)
    result = forecast_groups(series, horizon_times, n_samples, ds_config, seed)

    f1_samples: dict[str, np.ndarray] = {}
    for thr in thr_values:
        key = _thr_key(thr)
        rows = []
        for h in range(1, horizon + 1):
            idx = end_index + h
            gt = seq.partition_at(idx) if idx < n_steps else None
            if gt is None:
                rows = []
                break
            cfg = GroupMatchConfig(thr)
            rows.append([
                group_f1(part, gt, cfg).f1 for part in result.partitions[h - 1]
            ])
        if rows:
            f1_samples[key] = np.asarray(rows)
    return SceneForecast(seq.scene_id, end_index, result, f1_samples)


def forecast_report(
    forecasts: Sequence[SceneForecast],
    horizon: int,
    n_samples: int,
    thr_values: Sequence[float] = (2.0 / 3.0, 1.0),
) -> dict:
    """Aggregate per-horizon F1 across scenes; both uncertainty flavors."""
    horizons = []
    for h in range(1, horizon + 1):
        row: dict = {"h": h, "n_samples": n_samples}
        for thr in thr_values:
            key = _thr_key(thr)
            per_scene_mean = []
            per_scene_std = []
            for fc in forecasts:
                if key not in fc.f1_samples:
                    continue
                samples = fc.f1_samples[key][h - 1]
                per_scene_mean.append(float(np.mean(samples)))
                per_scene_std.append(float(np.std(samples)))
            if per_scene_mean:
                row[f"mean_f1@{key}"] = float(np.mean(per_scene_mean))
                row[f"std_across_samples@{key}"] = float(np.mean(per_scene_std))
                row[f"std_across_scenes@{key}"] = float(np.std(per_scene_mean))
            else:
                row[f"mean_f1@{key}"] = None
                row[f"std_across_samples@{key}"] = None
                row[f"std_across_scenes@{key}"] = None
        horizons.append(row)
    return {
        "horizon": horizon,
        "n_samples": n_samples,
        "scenes": len(forecasts),
        "horizons": horizons,
    }
