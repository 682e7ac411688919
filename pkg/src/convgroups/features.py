"""Per-focal-person feature tensors and presence masks.

For a focal person i and every other candidate person j (ascending id, one
fixed slot per person), each timestep yields the channels listed in
``CHANNELS``. Orientation channels are expressed relative to the frame's
circular-mean body orientation (the scene zero reference) and mapped from
(-pi, pi] to [0, 1]. The pair distance channel is min-max scaled with bounds
frozen on the training corpus. Slots where the pair is unobserved (either
person absent) carry -1 in every channel and 0 in the presence mask.

See FEATURES.md for the full channel table.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from .scene import PersonState, SceneSequence, wrap_angle

CHANNELS: tuple[str, ...] = (
    "focal_head",       # focal head orientation, zero-referenced
    "focal_body",       # focal body orientation (falls back to head), zero-referenced
    "pair_distance",    # euclidean distance focal -> other, corpus min-max scaled
    "pair_bearing",     # bearing of other from focal, zero-referenced
    "other_head",       # other person's head orientation, zero-referenced
    "other_body",       # other person's body orientation, zero-referenced
)
N_CHANNELS = len(CHANNELS)
PAD_VALUE = -1.0

_DIST_CHANNEL = CHANNELS.index("pair_distance")
_ANGLE_CHANNELS = tuple(k for k in range(N_CHANNELS) if k != _DIST_CHANNEL)

_DEGENERATE_TOL = 1e-12


class DegenerateAnglesError(ValueError):
    """Circular mean of angles whose unit vectors cancel out."""


def circular_mean(angles: Sequence[float]) -> float:
    """Direction of the resultant unit-vector sum, in (-pi, pi]."""
    if len(angles) == 0:
        raise ValueError("circular_mean of an empty list")
    arr = np.asarray(angles, dtype=np.float64)
    s = float(np.mean(np.sin(arr)))
    c = float(np.mean(np.cos(arr)))
    if math.hypot(s, c) <= _DEGENERATE_TOL:
        raise DegenerateAnglesError(
            f"resultant length {math.hypot(s, c):.3e} <= {_DEGENERATE_TOL:g}"
        )
    return wrap_angle(math.atan2(s, c))


def pair_distance_bearing(
    pos_focal: tuple[float, float], pos_other: tuple[float, float]
) -> tuple[float, float]:
    """Euclidean distance and bearing angle of the other person from the focal."""
    dx = pos_other[0] - pos_focal[0]
    dy = pos_other[1] - pos_focal[1]
    return math.hypot(dx, dy), wrap_angle(math.atan2(dy, dx))


def frame_zero_reference(frame: Iterable[PersonState]) -> float:
    """Circular mean of body orientations of everyone in a frame.

    Falls back to 0.0 when the orientations cancel exactly, so feature
    building never aborts on a (measure-zero) degenerate frame.
    """
    angles = [s.effective_body_orientation for s in frame]
    if not angles:
        return 0.0
    try:
        return circular_mean(angles)
    except DegenerateAnglesError:
        return 0.0


def _norm_angle(angle: float) -> float:
    """Map an angle in (-pi, pi] onto (0, 1]."""
    return (angle + math.pi) / (2.0 * math.pi)


@dataclass(frozen=True)
class FeatureScaler:
    """Frozen min-max bounds for the distance channel.

    Angle channels are already bounded by construction and use the fixed
    (-pi, pi] -> [0, 1] map; only pair distance needs corpus statistics.
    Out-of-range values at inference time are clamped into [0, 1].
    """

    dist_min: float
    dist_max: float

    @classmethod
    def fit(cls, raw_tensors: Iterable["FeatureTensor"]) -> "FeatureScaler":
        lo = math.inf
        hi = -math.inf
        for tensor in raw_tensors:
            col = tensor.values[:, :, _DIST_CHANNEL]
            observed = col[col != PAD_VALUE]
            if observed.size:
                lo = min(lo, float(observed.min()))
                hi = max(hi, float(observed.max()))
        if not math.isfinite(lo):
            raise ValueError("cannot fit scaler: no observed pairs in corpus")
        return cls(dist_min=lo, dist_max=hi)

    def scale_distance(self, d: np.ndarray) -> np.ndarray:
        span = self.dist_max - self.dist_min
        if span <= 0.0:
            return np.full_like(d, 0.5)
        return np.clip((d - self.dist_min) / span, 0.0, 1.0)

    def to_dict(self) -> dict:
        return {"dist_min": self.dist_min, "dist_max": self.dist_max}

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureScaler":
        return cls(dist_min=float(d["dist_min"]), dist_max=float(d["dist_max"]))


@dataclass(frozen=True)
class FeatureTensor:
    """(T, n-1, N) feature values for one focal person over one window."""

    focal_id: int
    values: np.ndarray
    pair_ids: tuple[int, ...]
    channels: tuple[str, ...] = CHANNELS
    scaled: bool = True


@dataclass(frozen=True)
class PresenceMask:
    """(T, n-1) pair observability: 1 iff both focal and slot person present."""

    values: np.ndarray


def pair_slots(n: int, focal_id: int) -> tuple[int, ...]:
    """Fixed slot order: every candidate id except the focal, ascending."""
    return tuple(i for i in range(n) if i != focal_id)


class SequenceFeaturizer:
    """Caches per-frame lookups and zero references for one sequence.

    Building windows for every focal person touches each frame many times;
    the cache makes that linear in the number of frames instead.
    """

    def __init__(self, seq: SceneSequence, scaler: Optional[FeatureScaler] = None):
        self.seq = seq
        self.scaler = scaler
        self._by_id = [dict((s.person_id, s) for s in frame) for frame in seq.frames]
        self._refs = [frame_zero_reference(frame) for frame in seq.frames]

    def build(self, focal_id: int, start: int, seq_len: int) -> tuple[FeatureTensor, PresenceMask]:
        seq = self.seq
        if seq_len <= 0:
            raise ValueError("empty window")
        if start < 0 or start + seq_len > len(seq.timesteps):
            raise ValueError(
                f"window [{start}, {start + seq_len}) outside sequence "
                f"of length {len(seq.timesteps)}"
            )
        slots = pair_slots(seq.n, focal_id)
        if focal_id not in self._by_id[start + seq_len - 1]:
            raise ValueError(f"focal person {focal_id} absent at final window step")

        values = np.full((seq_len, len(slots), N_CHANNELS), PAD_VALUE, dtype=np.float64)
        mask = np.zeros((seq_len, len(slots)), dtype=bool)

        for w in range(seq_len):
            by_id = self._by_id[start + w]
            focal = by_id.get(focal_id)
            if focal is None:
                continue
            ref = self._refs[start + w]
            f_head = _norm_angle(wrap_angle(focal.head_orientation - ref))
            f_body = _norm_angle(wrap_angle(focal.effective_body_orientation - ref))
            for k, pid in enumerate(slots):
                other = by_id.get(pid)
                if other is None:
                    continue
                dist, bearing = pair_distance_bearing(focal.position, other.position)
                row = values[w, k]
                row[0] = f_head
                row[1] = f_body
                row[_DIST_CHANNEL] = dist
                row[3] = _norm_angle(wrap_angle(bearing - ref))
                row[4] = _norm_angle(wrap_angle(other.head_orientation - ref))
                row[5] = _norm_angle(wrap_angle(other.effective_body_orientation - ref))
                mask[w, k] = True

        if self.scaler is not None:
            dist = values[:, :, _DIST_CHANNEL]
            scaled = self.scaler.scale_distance(dist)
            values[:, :, _DIST_CHANNEL] = np.where(mask, scaled, PAD_VALUE)

        tensor = FeatureTensor(
            focal_id=focal_id,
            values=values,
            pair_ids=slots,
            scaled=self.scaler is not None,
        )
        return tensor, PresenceMask(values=mask)


def build_features(
    seq: SceneSequence,
    focal_id: int,
    start: int,
    seq_len: int,
    scaler: Optional[FeatureScaler] = None,
) -> tuple[FeatureTensor, PresenceMask]:
    """Assemble the feature tensor and mask for window [start, start+seq_len).

    With ``scaler=None`` the distance channel is left raw (used while fitting
    corpus bounds); otherwise all channels of observed slots land in [0, 1].
    """
    return SequenceFeaturizer(seq, scaler).build(focal_id, start, seq_len)


def pair_labels(
    seq: SceneSequence, focal_id: int, t_index: int
) -> tuple[np.ndarray, np.ndarray]:
    """Binary same-group labels and validity for every slot at one timestep.

    A slot is valid when both persons are present and the frame is labeled.
    """
    slots = pair_slots(seq.n, focal_id)
    y = np.zeros(len(slots), dtype=np.float64)
    valid = np.zeros(len(slots), dtype=bool)
    part = seq.partition_at(t_index)
    if part is None:
        return y, valid
    present = set(seq.present_ids(t_index))
    if focal_id not in present:
        return y, valid
    focal_group = part.group_of(focal_id)
    for k, pid in enumerate(slots):
        if pid in present:
            valid[k] = True
            if focal_group is not None and pid in focal_group:
                y[k] = 1.0
    return y, valid
