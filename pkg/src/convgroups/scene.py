"""Scene data types and JSON-lines interchange I/O.

A scene file is a sequence of blocks. Each block starts with a header line
``{"scene_id": ..., "units": ..., "n": ...}`` followed by one record line per
timestep: ``{"t": ..., "persons": [...], "groups": [[...], ...]}``. The
``groups`` key is optional (unlabeled data). Floats are written with 17
significant digits so that save/load round-trips bit-exactly.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

TWO_PI = 2.0 * math.pi


class SceneFormatError(ValueError):
    """Raised when a scene file cannot be parsed."""


class SceneValidationError(ValueError):
    """Raised when parsed data violates a scene invariant."""


def wrap_angle(angle: float) -> float:
    """Wrap an angle into (-pi, pi]."""
    r = (angle + math.pi) % TWO_PI - math.pi
    if r == -math.pi:
        return math.pi
    return r


def _check_angle(value: float, name: str) -> None:
    if not math.isfinite(value):
        raise SceneValidationError(f"{name} must be finite, got {value!r}")
    if not (-math.pi < value <= math.pi):
        raise SceneValidationError(
            f"{name} must lie in (-pi, pi], got {value!r}; wrap before saving"
        )


@dataclass(frozen=True)
class PersonState:
    """Position and orientation of one person at one timestep."""

    person_id: int
    position: tuple[float, float]
    head_orientation: float
    body_orientation: Optional[float] = None

    def validate(self) -> None:
        if self.person_id < 0:
            raise SceneValidationError(f"person_id must be >= 0, got {self.person_id}")
        x, y = self.position
        if not (math.isfinite(x) and math.isfinite(y)):
            raise SceneValidationError(f"position must be finite, got {self.position!r}")
        _check_angle(self.head_orientation, "head_orientation")
        if self.body_orientation is not None:
            _check_angle(self.body_orientation, "body_orientation")

    @property
    def effective_body_orientation(self) -> float:
        """Body orientation, falling back to head orientation when missing."""
        if self.body_orientation is None:
            return self.head_orientation
        return self.body_orientation


@dataclass(frozen=True)
class GroupPartition:
    """Disjoint member-id sets; singletons allowed, empty sets are not.

    Groups are stored sorted by their smallest member so that equal
    partitions compare equal regardless of construction order.
    """

    groups: tuple[frozenset[int], ...]

    def __post_init__(self):
        canonical = tuple(sorted((frozenset(g) for g in self.groups),
                                 key=lambda g: min(g) if g else -1))
        object.__setattr__(self, "groups", canonical)

    @classmethod
    def from_lists(cls, raw: Iterable[Iterable[int]]) -> "GroupPartition":
        return cls(tuple(frozenset(g) for g in raw))

    def validate(self, present_ids: Optional[set[int]] = None) -> None:
        seen: set[int] = set()
        for group in self.groups:
            if not group:
                raise SceneValidationError("partition contains an empty group")
            if seen & group:
                raise SceneValidationError(
                    f"partition groups overlap on ids {sorted(seen & group)}"
                )
            seen |= group
        if present_ids is not None and not seen <= present_ids:
            missing = sorted(seen - present_ids)
            raise SceneValidationError(
                f"partition references ids not present in frame: {missing}"
            )

    def members(self) -> frozenset[int]:
        out: set[int] = set()
        for g in self.groups:
            out |= g
        return frozenset(out)

    def group_of(self, person_id: int) -> Optional[frozenset[int]]:
        for g in self.groups:
            if person_id in g:
                return g
        return None

    def same_group(self, a: int, b: int) -> bool:
        g = self.group_of(a)
        return g is not None and b in g


@dataclass(frozen=True)
class SceneSequence:
    """One time-indexed scene: frames of person states plus optional labels.

    Frames are stored with persons sorted by id (canonical order).
    """

    scene_id: str
    timesteps: tuple[float, ...]
    n: int
    frames: tuple[tuple[PersonState, ...], ...]
    gt_partitions: Optional[tuple[Optional[GroupPartition], ...]] = None
    units: str = "unitless"

    def __post_init__(self):
        canonical = tuple(
            tuple(sorted(frame, key=lambda s: s.person_id)) for frame in self.frames
        )
        object.__setattr__(self, "frames", canonical)

    def validate(self) -> None:
        if self.n <= 0:
            raise SceneValidationError(f"n must be positive, got {self.n}")
        if len(self.frames) != len(self.timesteps):
            raise SceneValidationError("frames and timesteps length mismatch")
        for a, b in zip(self.timesteps, self.timesteps[1:]):
            if not b > a:
                raise SceneValidationError(
                    f"timesteps must be strictly increasing, got {a} then {b}"
                )
        for t_idx, frame in enumerate(self.frames):
            ids: set[int] = set()
            for state in frame:
                state.validate()
                if not 0 <= state.person_id < self.n:
                    raise SceneValidationError(
                        f"person_id {state.person_id} outside [0, {self.n}) at t index {t_idx}"
                    )
                if state.person_id in ids:
                    raise SceneValidationError(
                        f"duplicate person_id {state.person_id} at t index {t_idx}"
                    )
                ids.add(state.person_id)
        if self.gt_partitions is not None:
            if len(self.gt_partitions) != len(self.timesteps):
                raise SceneValidationError("gt_partitions and timesteps length mismatch")
            for t_idx, part in enumerate(self.gt_partitions):
                if part is None:
                    continue
                present = {s.person_id for s in self.frames[t_idx]}
                part.validate(present)

    # convenience accessors -------------------------------------------------

    def present_ids(self, t_index: int) -> tuple[int, ...]:
        return tuple(sorted(s.person_id for s in self.frames[t_index]))

    def frame_by_id(self, t_index: int) -> Mapping[int, PersonState]:
        return {s.person_id: s for s in self.frames[t_index]}

    def partition_at(self, t_index: int) -> Optional[GroupPartition]:
        if self.gt_partitions is None:
            return None
        return self.gt_partitions[t_index]


@dataclass(frozen=True)
class AffinityMatrix:
    """Square pairwise affinity matrix over the listed person ids.

    Diagonal entries are stored as 0 and carry no meaning. The matrix is not
    symmetric in general: ``values[i, j]`` is the affinity of person
    ``person_ids[j]`` as seen from focal person ``person_ids[i]``.
    """

    person_ids: tuple[int, ...]
    values: np.ndarray

    def validate(self) -> None:
        p = len(self.person_ids)
        if self.values.shape != (p, p):
            raise SceneValidationError(
                f"affinity matrix shape {self.values.shape} does not match {p} persons"
            )
        if len(set(self.person_ids)) != p:
            raise SceneValidationError("duplicate person ids in affinity matrix")
        off = ~np.eye(p, dtype=bool)
        vals = self.values[off]
        if vals.size and (not np.all(np.isfinite(vals)) or vals.min() < 0.0 or vals.max() > 1.0):
            raise SceneValidationError("off-diagonal affinities must lie in [0, 1]")
        if p and not np.all(self.values[np.eye(p, dtype=bool)] == 0.0):
            raise SceneValidationError("diagonal entries must be stored as 0")

    def index_of(self, person_id: int) -> int:
        return self.person_ids.index(person_id)


# ---------------------------------------------------------------------------
# JSON-lines serialization
# ---------------------------------------------------------------------------


def _fmt_float(v: float) -> str:
    if not math.isfinite(v):
        raise SceneValidationError(f"cannot serialize non-finite float {v!r}")
    return format(float(v), ".17g")


def _person_to_json(state: PersonState) -> str:
    parts = [
        f'"id": {state.person_id}',
        f'"x": {_fmt_float(state.position[0])}',
        f'"y": {_fmt_float(state.position[1])}',
        f'"head": {_fmt_float(state.head_orientation)}',
    ]
    if state.body_orientation is not None:
        parts.append(f'"body": {_fmt_float(state.body_orientation)}')
    return "{" + ", ".join(parts) + "}"


def _record_to_json(t: float, frame: Sequence[PersonState], part: Optional[GroupPartition]) -> str:
    persons = ", ".join(_person_to_json(s) for s in sorted(frame, key=lambda s: s.person_id))
    out = f'{{"t": {_fmt_float(t)}, "persons": [{persons}]'
    if part is not None:
        groups = ", ".join(
            "[" + ", ".join(str(i) for i in sorted(g)) + "]"
            for g in sorted(part.groups, key=lambda g: min(g))
        )
        out += f', "groups": [{groups}]'
    return out + "}"


def save_scene_sequences(seqs: Sequence[SceneSequence], path: str | Path) -> None:
    """Write sequences in the interchange format; bit-stable for fixed input."""
    lines: list[str] = []
    for seq in seqs:
        seq.validate()
        header = {"scene_id": seq.scene_id, "units": seq.units, "n": seq.n}
        lines.append(json.dumps(header, sort_keys=True))
        parts = seq.gt_partitions or (None,) * len(seq.timesteps)
        for t, frame, part in zip(seq.timesteps, seq.frames, parts):
            lines.append(_record_to_json(t, frame, part))
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def _parse_person(obj: dict, line_no: int) -> PersonState:
    try:
        body = obj.get("body")
        state = PersonState(
            person_id=int(obj["id"]),
            position=(float(obj["x"]), float(obj["y"])),
            head_orientation=float(obj["head"]),
            body_orientation=None if body is None else float(body),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise SceneFormatError(f"line {line_no}: malformed person entry: {exc}") from exc
    return state


def _finish_sequence(
    header: dict,
    records: list[tuple[float, tuple[PersonState, ...], Optional[GroupPartition]]],
    line_no: int,
) -> SceneSequence:
    any_groups = any(r[2] is not None for r in records)
    seq = SceneSequence(
        scene_id=str(header["scene_id"]),
        timesteps=tuple(r[0] for r in records),
        n=int(header["n"]),
        frames=tuple(r[1] for r in records),
        gt_partitions=tuple(r[2] for r in records) if any_groups else None,
        units=str(header.get("units", "unitless")),
    )
    try:
        seq.validate()
    except SceneValidationError as exc:
        raise SceneValidationError(f"scene '{seq.scene_id}' (ending line {line_no}): {exc}") from exc
    return seq


def load_scene_sequences(path: str | Path) -> list[SceneSequence]:
    """Parse and validate all scene sequences from an interchange file."""
    text = Path(path).read_text(encoding="utf-8")
    sequences: list[SceneSequence] = []
    header: Optional[dict] = None
    records: list[tuple[float, tuple[PersonState, ...], Optional[GroupPartition]]] = []
    last_line = 0
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        last_line = line_no
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise SceneFormatError(f"line {line_no}: invalid JSON: {exc.msg}") from exc
        if not isinstance(obj, dict):
            raise SceneFormatError(f"line {line_no}: expected a JSON object")
        if "scene_id" in obj:
            if header is not None:
                sequences.append(_finish_sequence(header, records, line_no - 1))
            if "n" not in obj:
                raise SceneFormatError(f"line {line_no}: header missing 'n'")
            header, records = obj, []
        elif "t" in obj:
            if header is None:
                raise SceneFormatError(f"line {line_no}: record before any scene header")
            persons = obj.get("persons")
            if not isinstance(persons, list):
                raise SceneFormatError(f"line {line_no}: record missing 'persons' list")
            frame = tuple(_parse_person(p, line_no) for p in persons)
            part: Optional[GroupPartition] = None
            if "groups" in obj and obj["groups"] is not None:
                try:
                    part = GroupPartition.from_lists(
                        [[int(i) for i in g] for g in obj["groups"]]
                    )
                except (TypeError, ValueError) as exc:
                    raise SceneFormatError(f"line {line_no}: malformed groups: {exc}") from exc
            records.append((float(obj["t"]), frame, part))
        else:
            raise SceneFormatError(
                f"line {line_no}: object is neither a header (scene_id) nor a record (t)"
            )
    if header is None:
        raise SceneFormatError("file contains no scene header (empty file?)")
    sequences.append(_finish_sequence(header, records, last_line))
    return sequences
