import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from convgroups.scene import (
    AffinityMatrix, GroupPartition, PersonState, SceneFormatError,
    SceneSequence, SceneValidationError, load_scene_sequences,
    save_scene_sequences, wrap_angle,
)
from convgroups.synth import SynthConfig, generate

from conftest import make_scene

import numpy as np


def write(tmp_path, text):
    p = tmp_path / "scenes.jsonl"
    p.write_text(text, encoding="utf-8")
    return p


HEADER = '{"scene_id": "a", "units": "meters", "n": 3}'


class TestLoad:
    def test_well_formed_two_people_three_steps(self, tmp_path):
        lines = [HEADER]
        for t in range(3):
            lines.append(
                '{"t": %d, "persons": [{"id": 0, "x": 0.0, "y": 0.0, "head": 0.1},'
                ' {"id": 1, "x": 1.0, "y": 0.5, "head": -0.2, "body": 0.3}]}' % t
            )
        seqs = load_scene_sequences(write(tmp_path, "\n".join(lines)))
        assert len(seqs) == 1
        seq = seqs[0]
        assert seq.scene_id == "a" and seq.n == 3
        assert all(len(frame) == 2 for frame in seq.frames)
        assert seq.frames[0][1].body_orientation == 0.3
        assert seq.frames[0][0].body_orientation is None
        assert seq.gt_partitions is None

    def test_duplicate_person_id_rejected(self, tmp_path):
        text = HEADER + '\n{"t": 0, "persons": [{"id": 1, "x": 0, "y": 0, "head": 0},' \
                        ' {"id": 1, "x": 1, "y": 1, "head": 0}]}'
        with pytest.raises(SceneValidationError, match="duplicate person_id 1"):
            load_scene_sequences(write(tmp_path, text))

    def test_empty_file(self, tmp_path):
        with pytest.raises(SceneFormatError, match="empty"):
            load_scene_sequences(write(tmp_path, ""))

    def test_parse_error_carries_line_number(self, tmp_path):
        text = HEADER + "\n{not json}"
        with pytest.raises(SceneFormatError, match="line 2"):
            load_scene_sequences(write(tmp_path, text))

    def test_record_before_header(self, tmp_path):
        with pytest.raises(SceneFormatError, match="before any scene header"):
            load_scene_sequences(write(tmp_path, '{"t": 0, "persons": []}'))

    def test_non_increasing_timesteps(self, tmp_path):
        text = HEADER + '\n{"t": 1, "persons": []}\n{"t": 1, "persons": []}'
        with pytest.raises(SceneValidationError, match="strictly increasing"):
            load_scene_sequences(write(tmp_path, text))

    def test_angle_outside_range_rejected_not_wrapped(self, tmp_path):
        text = HEADER + '\n{"t": 0, "persons": [{"id": 0, "x": 0, "y": 0, "head": 4.0}]}'
        with pytest.raises(SceneValidationError, match="head_orientation"):
            load_scene_sequences(write(tmp_path, text))

    def test_groups_must_reference_present_ids(self, tmp_path):
        text = HEADER + '\n{"t": 0, "persons": [{"id": 0, "x": 0, "y": 0, "head": 0}],' \
                        ' "groups": [[0, 2]]}'
        with pytest.raises(SceneValidationError, match="not present"):
            load_scene_sequences(write(tmp_path, text))

    def test_person_id_outside_n(self, tmp_path):
        text = HEADER + '\n{"t": 0, "persons": [{"id": 7, "x": 0, "y": 0, "head": 0}]}'
        with pytest.raises(SceneValidationError, match="outside"):
            load_scene_sequences(write(tmp_path, text))

    def test_two_scenes_in_one_file(self, tmp_path):
        text = (HEADER + '\n{"t": 0, "persons": []}\n'
                + '{"scene_id": "b", "units": "meters", "n": 1}\n{"t": 0, "persons": []}')
        seqs = load_scene_sequences(write(tmp_path, text))
        assert [s.scene_id for s in seqs] == ["a", "b"]


class TestSave:
    def test_empty_list(self, tmp_path):
        p = tmp_path / "empty.jsonl"
        save_scene_sequences([], p)
        assert p.read_text() == ""

    def test_one_person_scene(self, tmp_path):
        seq = make_scene(n=1, steps=3)
        p = tmp_path / "one.jsonl"
        save_scene_sequences([seq], p)
        lines = p.read_text().strip().split("\n")
        assert len(lines) == 4  # header + 3 records
        assert load_scene_sequences(p) == [seq]

    def test_roundtrip_synthetic_corpus(self, tmp_path):
        scenes = generate(SynthConfig(n_people=5, n_scenes=3, steps_per_scene=12, seed=7))
        p = tmp_path / "synth.jsonl"
        save_scene_sequences(scenes, p)
        assert load_scene_sequences(p) == scenes

    def test_save_is_bit_stable(self, tmp_path):
        scenes = generate(SynthConfig(n_people=4, n_scenes=2, steps_per_scene=8, seed=1))
        p1, p2 = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        save_scene_sequences(scenes, p1)
        save_scene_sequences(scenes, p2)
        assert p1.read_bytes() == p2.read_bytes()


angles = st.floats(min_value=-math.pi, max_value=math.pi, exclude_min=True,
                   allow_nan=False, allow_infinity=False)
coords = st.floats(min_value=-100, max_value=100, allow_nan=False, allow_infinity=False)


@st.composite
def random_scene(draw):
    n = draw(st.integers(min_value=1, max_value=4))
    steps = draw(st.integers(min_value=1, max_value=4))
    frames = []
    partitions = []
    for t in range(steps):
        present = sorted(draw(st.sets(st.integers(0, n - 1), min_size=0, max_size=n)))
        frame = tuple(
            PersonState(
                pid,
                (draw(coords), draw(coords)),
                head_orientation=draw(angles),
                body_orientation=draw(st.one_of(st.none(), angles)),
            )
            for pid in present
        )
        frames.append(frame)
        # split the present ids into a partition deterministically
        groups, current = [], []
        for pid in present:
            current.append(pid)
            if draw(st.booleans()):
                groups.append(current)
                current = []
        if current:
            groups.append(current)
        partitions.append(GroupPartition.from_lists(groups) if groups else None)
    return SceneSequence(
        scene_id=draw(st.text(min_size=1, max_size=8)),
        timesteps=tuple(float(t) for t in range(steps)),
        n=n,
        frames=tuple(frames),
        gt_partitions=tuple(partitions) if any(p is not None for p in partitions) else None,
    )


@given(random_scene())
@settings(max_examples=40, deadline=None)
def test_roundtrip_property(tmp_path_factory, seq):
    seq.validate()
    p = tmp_path_factory.mktemp("rt") / "x.jsonl"
    save_scene_sequences([seq], p)
    assert load_scene_sequences(p) == [seq]


def test_wrap_angle_range():
    for a in np.linspace(-10, 10, 101):
        w = wrap_angle(float(a))
        assert -math.pi < w <= math.pi
    assert wrap_angle(math.pi) == math.pi
    assert wrap_angle(-math.pi) == math.pi
    assert wrap_angle(3 * math.pi) == pytest.approx(math.pi)


class TestAffinityMatrix:
    def test_validate_range(self):
        m = AffinityMatrix((1, 2), np.array([[0.0, 1.5], [0.2, 0.0]]))
        with pytest.raises(SceneValidationError, match=r"\[0, 1\]"):
            m.validate()

    def test_validate_diagonal(self):
        m = AffinityMatrix((1, 2), np.array([[0.3, 0.5], [0.2, 0.0]]))
        with pytest.raises(SceneValidationError, match="diagonal"):
            m.validate()

    def test_ok(self):
        AffinityMatrix((1, 2), np.array([[0.0, 0.5], [0.2, 0.0]])).validate()


class TestGroupPartition:
    def test_overlap_rejected(self):
        part = GroupPartition.from_lists([[1, 2], [2, 3]])
        with pytest.raises(SceneValidationError, match="overlap"):
            part.validate()

    def test_empty_group_rejected(self):
        with pytest.raises(SceneValidationError, match="empty"):
            GroupPartition((frozenset(),)).validate()

    def test_canonical_order(self):
        a = GroupPartition.from_lists([[4, 5], [1, 2]])
        b = GroupPartition.from_lists([[2, 1], [5, 4]])
        assert a == b
