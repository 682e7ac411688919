"""Deterministic synthetic social scenes with scripted group dynamics.

People in a group stand on a circle around their group's center, facing
inward; singletons idle in their own patch of the arena. Scripted events
(joining, leaving, pairing up, dissolving, reforming a past group) change
membership, after which people walk to their new spot over several steps so
pairwise geometry, like real affinity, changes gradually rather than
instantaneously. Ground-truth partitions are recorded at every step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Optional

import numpy as np

from .scene import GroupPartition, PersonState, SceneSequence, wrap_angle

MIN_ARC_PER_PERSON = 0.45   # circle circumference each member needs, scene units


class SynthConfigError(ValueError):
    """Configuration cannot produce a physically sensible scene."""


@dataclass(frozen=True)
class SynthConfig:
    n_people: int = 8
    n_scenes: int = 20
    steps_per_scene: int = 40
    group_size_distribution: Mapping[int, float] = field(
        default_factory=lambda: {1: 0.2, 2: 0.35, 3: 0.25, 4: 0.2}
    )
    event_rate: float = 4.0          # expected membership events per 100 steps
    o_space_radius: float = 0.55
    position_noise_std: float = 0.04
    orientation_noise_std: float = 0.12
    seed: int = 0

    @property
    def circle_capacity(self) -> int:
        return max(1, int(2.0 * math.pi * self.o_space_radius / MIN_ARC_PER_PERSON))

    def validate(self) -> None:
        if min(self.n_people, self.n_scenes, self.steps_per_scene) <= 0:
            raise SynthConfigError("n_people, n_scenes, steps_per_scene must be positive")
        if self.event_rate < 0:
            raise SynthConfigError("event_rate must be >= 0")
        if self.o_space_radius <= 0 or self.position_noise_std < 0 or self.orientation_noise_std < 0:
            raise SynthConfigError("radius must be positive and noise stds non-negative")
        if not self.group_size_distribution:
            raise SynthConfigError("group_size_distribution is empty")
        for size, weight in self.group_size_distribution.items():
            if size < 1 or weight <= 0:
                raise SynthConfigError(f"bad group size entry {size}: {weight}")
            if size > self.n_people:
                raise SynthConfigError(f"group size {size} exceeds n_people {self.n_people}")
            if size > self.circle_capacity:
                raise SynthConfigError(
                    f"group size {size} does not fit on a circle of radius "
                    f"{self.o_space_radius} (capacity {self.circle_capacity})"
                )


@dataclass
class _Unit:
    """A current group or singleton, parked in one arena cell."""

    members: list[int]
    center: np.ndarray
    home: np.ndarray
    phase: float
    spin: float


class _SceneSim:
    def __init__(self, cfg: SynthConfig, scene_idx: int):
        self.cfg = cfg
        self.rng = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(scene_idx,)))
        self.cell_size = max(6.0 * cfg.o_space_radius, 2.5)
        self.grid = math.ceil(math.sqrt(cfg.n_people))
        self.max_speed = self.cell_size / 5.0
        self.max_turn = 0.5
        self.units: list[_Unit] = []
        self.pos = np.zeros((cfg.n_people, 2))
        self.heading = np.zeros(cfg.n_people)
        self.past_sets: list[frozenset[int]] = []
        self._init_units()

    # -- setup ------------------------------------------------------------

    def _cell_center(self, cell: int) -> np.ndarray:
        row, col = divmod(cell, self.grid)
        return np.array([(col + 0.5) * self.cell_size, (row + 0.5) * self.cell_size])

    def _occupied_cells(self) -> set[int]:
        out = set()
        for u in self.units:
            col = int(u.home[0] / self.cell_size)
            row = int(u.home[1] / self.cell_size)
            out.add(row * self.grid + col)
        return out

    def _free_cell(self) -> int:
        free = [c for c in range(self.grid * self.grid) if c not in self._occupied_cells()]
        if not free:
            raise SynthConfigError("arena is full; cannot place a new group")
        return int(self.rng.choice(free))

    def _sample_sizes(self) -> list[int]:
        sizes, weights = zip(*sorted(self.cfg.group_size_distribution.items()))
        weights = np.asarray(weights, dtype=np.float64)
        remaining = self.cfg.n_people
        out = []
        while remaining > 0:
            feasible = [k for k, s in enumerate(sizes) if s <= remaining]
            w = weights[feasible] / weights[feasible].sum()
            pick = sizes[int(self.rng.choice(feasible, p=w))]
            out.append(pick)
            remaining -= pick
        return out

    def _init_units(self) -> None:
        ids = list(self.rng.permutation(self.cfg.n_people))
        for size in self._sample_sizes():
            members = sorted(int(i) for i in ids[:size])
            ids = ids[size:]
            cell = self._free_cell()
            home = self._cell_center(cell)
            unit = _Unit(
                members=members,
                center=home + self.rng.normal(0, 0.1, 2),
                home=home,
                phase=float(self.rng.uniform(0, 2 * math.pi)),
                spin=float(self.rng.normal(0, 0.02)),
            )
            self.units.append(unit)
        # Start everyone at their slot so the first frames are settled.
        for unit in self.units:
            for pid, target in self._slot_targets(unit).items():
                self.pos[pid] = target + self.rng.normal(0, self.cfg.position_noise_std, 2)
                self.heading[pid] = self._slot_heading(unit, pid)

    # -- geometry ----------------------------------------------------------

    def _slot_targets(self, unit: _Unit) -> dict[int, np.ndarray]:
        members = sorted(unit.members)
        if len(members) == 1:
            return {members[0]: unit.center}
        out = {}
        for k, pid in enumerate(members):
            angle = unit.phase + 2.0 * math.pi * k / len(members)
            offset = np.array([math.cos(angle), math.sin(angle)]) * self.cfg.o_space_radius
            out[pid] = unit.center + offset
        return out

    def _slot_heading(self, unit: _Unit, pid: int) -> float:
        if len(unit.members) == 1:
            return float(self.rng.uniform(-math.pi, math.pi))
        target = self._slot_targets(unit)[pid]
        return wrap_angle(math.atan2(unit.center[1] - target[1], unit.center[0] - target[0]))

    # -- events ------------------------------------------------------------

    def _unit_of(self, pid: int) -> _Unit:
        for u in self.units:
            if pid in u.members:
                return u
        raise KeyError(pid)

    def _remove_member(self, pid: int) -> None:
        unit = self._unit_of(pid)
        if len(unit.members) >= 2:
            self.past_sets.append(frozenset(unit.members))
        unit.members.remove(pid)
        if not unit.members:
            self.units.remove(unit)

    def _new_unit(self, members: list[int]) -> None:
        cell = self._free_cell()
        home = self._cell_center(cell)
        self.units.append(_Unit(
            members=sorted(members),
            center=home + self.rng.normal(0, 0.1, 2),
            home=home,
            phase=float(self.rng.uniform(0, 2 * math.pi)),
            spin=float(self.rng.normal(0, 0.02)),
        ))

    def _try_event(self) -> None:
        groups = [u for u in self.units if len(u.members) >= 2]
        singles = [u for u in self.units if len(u.members) == 1]
        cap = self.cfg.circle_capacity
        choices = []
        if groups and (len(groups) >= 2 or singles):
            choices.append(("move", 0.35))
        if groups:
            choices.append(("split", 0.2))
            choices.append(("dissolve", 0.15))
        if len(singles) >= 2:
            choices.append(("pair", 0.2))
        current = {frozenset(u.members) for u in self.units}
        reformable = [s for s in self.past_sets if s not in current and len(s) <= cap]
        if reformable:
            choices.append(("reform", 0.1))
        if not choices:
            return
        names, weights = zip(*choices)
        weights = np.asarray(weights) / sum(weights)
        kind = names[int(self.rng.choice(len(names), p=weights))]

        if kind == "move":
            src = groups[int(self.rng.choice(len(groups)))]
            pid = int(self.rng.choice(src.members))
            targets = [u for u in self.units
                       if u is not src and len(u.members) < cap]
            if not targets:
                return
            dst = targets[int(self.rng.choice(len(targets)))]
            self._remove_member(pid)
            if len(dst.members) >= 2:
                self.past_sets.append(frozenset(dst.members))
            dst.members = sorted(dst.members + [pid])
        elif kind == "split":
            src = groups[int(self.rng.choice(len(groups)))]
            pid = int(self.rng.choice(src.members))
            self._remove_member(pid)
            self._new_unit([pid])
        elif kind == "dissolve":
            src = groups[int(self.rng.choice(len(groups)))]
            self.past_sets.append(frozenset(src.members))
            members = list(src.members)
            self.units.remove(src)
            for pid in members:
                self._new_unit([pid])
        elif kind == "pair":
            a, b = (singles[k] for k in self.rng.choice(len(singles), size=2, replace=False))
            pid_b = b.members[0]
            self.units.remove(b)
            a.members = sorted(a.members + [pid_b])
        else:  # reform
            target_set = reformable[int(self.rng.choice(len(reformable)))]
            for pid in sorted(target_set):
                self._remove_member(pid)
            self._new_unit(sorted(target_set))

    # -- per-step update ---------------------------------------------------

    def step(self, first: bool) -> None:
        cfg = self.cfg
        if not first and self.rng.uniform() < cfg.event_rate / 100.0:
            self._try_event()
        drift_limit = 0.35 * self.cell_size
        for unit in self.units:
            unit.phase = wrap_angle(unit.phase + unit.spin)
            drift = self.rng.normal(0, 0.02, 2)
            unit.center = np.clip(unit.center + drift, unit.home - drift_limit,
                                  unit.home + drift_limit)
            targets = self._slot_targets(unit)
            for pid, target in targets.items():
                delta = target - self.pos[pid]
                dist = float(np.hypot(*delta))
                if dist > 1e-9:
                    step_len = min(dist, self.max_speed)
                    self.pos[pid] = self.pos[pid] + delta / dist * step_len
                self.pos[pid] = self.pos[pid] + self.rng.normal(0, cfg.position_noise_std, 2)
                if len(unit.members) >= 2:
                    want = wrap_angle(math.atan2(unit.center[1] - self.pos[pid][1],
                                                 unit.center[0] - self.pos[pid][0]))
                else:
                    want = wrap_angle(self.heading[pid] + float(self.rng.normal(0, 0.2)))
                turn = wrap_angle(want - self.heading[pid])
                turn = max(-self.max_turn, min(self.max_turn, turn))
                self.heading[pid] = wrap_angle(self.heading[pid] + turn)

    def snapshot(self, t: float) -> tuple[tuple[PersonState, ...], GroupPartition]:
        cfg = self.cfg
        states = []
        for pid in range(cfg.n_people):
            body = wrap_angle(self.heading[pid] + float(self.rng.normal(0, cfg.orientation_noise_std * 0.5)))
            head = wrap_angle(self.heading[pid] + float(self.rng.normal(0, cfg.orientation_noise_std)))
            states.append(PersonState(
                person_id=pid,
                position=(float(self.pos[pid][0]), float(self.pos[pid][1])),
                head_orientation=head,
                body_orientation=body,
            ))
        partition = GroupPartition(tuple(frozenset(u.members) for u in self.units))
        return tuple(states), partition


def generate(config: SynthConfig) -> list[SceneSequence]:
    """Generate labeled scenes; identical config yields identical output."""
    config.validate()
    scenes = []
    for scene_idx in range(config.n_scenes):
        sim = _SceneSim(config, scene_idx)
        frames = []
        partitions = []
        for t in range(config.steps_per_scene):
            sim.step(first=(t == 0))
            frame, partition = sim.snapshot(float(t))
            frames.append(frame)
            partitions.append(partition)
        seq = SceneSequence(
            scene_id=f"synth-{scene_idx:04d}",
            timesteps=tuple(float(t) for t in range(config.steps_per_scene)),
            n=config.n_people,
            frames=tuple(frames),
            gt_partitions=tuple(partitions),
            units="meters",
        )
        seq.validate()
        scenes.append(seq)
    return scenes
