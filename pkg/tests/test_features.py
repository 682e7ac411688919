import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from convgroups.features import (
    CHANNELS, DegenerateAnglesError, FeatureScaler, PAD_VALUE,
    build_features, circular_mean, frame_zero_reference,
    pair_distance_bearing, pair_labels, pair_slots,
)
from convgroups.scene import PersonState, wrap_angle

from conftest import make_scene

DIST = CHANNELS.index("pair_distance")
ANGLE_CHANNELS = [k for k, name in enumerate(CHANNELS) if k != DIST]
ORIENTATION_CHANNELS = [k for k, name in enumerate(CHANNELS)
                        if "head" in name or "body" in name]


class TestCircularMean:
    def test_quarter_symmetry(self):
        assert circular_mean([0.0, math.pi / 2]) == pytest.approx(math.pi / 4)

    def test_wraparound(self):
        # Two angles straddling the pi boundary average to pi, not 0.
        assert circular_mean([math.pi - 0.01, -math.pi + 0.01]) == pytest.approx(math.pi)

    def test_degenerate_opposed(self):
        with pytest.raises(DegenerateAnglesError):
            circular_mean([0.0, math.pi])

    def test_empty(self):
        with pytest.raises(ValueError):
            circular_mean([])

    def test_matches_two_pass_oracle(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            angles = rng.uniform(-math.pi, math.pi, size=rng.integers(1, 30))
            # independent oracle: explicit two-pass summation
            s = sum(math.sin(a) for a in angles) / len(angles)
            c = sum(math.cos(a) for a in angles) / len(angles)
            if math.hypot(s, c) <= 1e-12:
                continue
            expected = math.atan2(s, c)
            assert circular_mean(list(angles)) == pytest.approx(expected, abs=1e-12)


def test_bearings_of_facing_pair_differ_by_pi():
    d, b_ij = pair_distance_bearing((0.0, 0.0), (2.0, 0.0))
    d2, b_ji = pair_distance_bearing((2.0, 0.0), (0.0, 0.0))
    assert d == d2 == pytest.approx(2.0)
    assert abs(wrap_angle(b_ij - b_ji)) == pytest.approx(math.pi)


def test_minmax_scaling_definition():
    scaler = FeatureScaler(dist_min=2.0, dist_max=6.0)
    out = scaler.scale_distance(np.array([2.0, 4.0, 6.0]))
    assert np.allclose(out, [0.0, 0.5, 1.0])
    # out-of-range values clamp
    assert np.allclose(scaler.scale_distance(np.array([0.0, 9.0])), [0.0, 1.0])


def test_degenerate_scaler_maps_to_half():
    scaler = FeatureScaler(dist_min=3.0, dist_max=3.0)
    assert np.allclose(scaler.scale_distance(np.array([3.0, 5.0])), [0.5, 0.5])


class TestBuildFeatures:
    def test_absent_person_is_padded_and_masked(self):
        positions = [
            {0: (0, 0), 1: (1, 0), 2: (2, 0)},
            {0: (0, 0), 2: (2, 0)},            # person 1 missing at t=1
            {0: (0, 0), 1: (1, 0), 2: (2, 0)},
        ]
        seq = make_scene(n=3, steps=3, positions=positions)
        tensor, mask = build_features(seq, 0, 0, 3, FeatureScaler(0.0, 2.0))
        slot_of_1 = tensor.pair_ids.index(1)
        assert not mask.values[1, slot_of_1]
        assert np.all(tensor.values[1, slot_of_1] == PAD_VALUE)
        assert mask.values[0, slot_of_1] and mask.values[2, slot_of_1]

    def test_mask_feature_consistency(self):
        positions = [
            {0: (0, 0), 2: (2, 1)},
            {0: (0, 0), 1: (1, 0), 2: (2, 0)},
        ]
        seq = make_scene(n=3, steps=2, positions=positions)
        tensor, mask = build_features(seq, 0, 0, 2, FeatureScaler(0.0, 3.0))
        pad = np.all(tensor.values == PAD_VALUE, axis=2)
        assert np.array_equal(pad, ~mask.values)
        observed = tensor.values[mask.values]
        assert observed.min() >= 0.0 and observed.max() <= 1.0

    def test_focal_absent_at_final_step_raises(self):
        positions = [{0: (0, 0), 1: (1, 0)}, {1: (1, 0)}]
        seq = make_scene(n=2, steps=2, positions=positions)
        with pytest.raises(ValueError, match="absent at final"):
            build_features(seq, 0, 0, 2, FeatureScaler(0.0, 1.0))

    def test_empty_window_raises(self):
        seq = make_scene(n=2, steps=2)
        with pytest.raises(ValueError, match="empty window"):
            build_features(seq, 0, 0, 0, FeatureScaler(0.0, 1.0))

    def test_focal_absent_midwindow_masks_all_pairs(self):
        positions = [
            {0: (0, 0), 1: (1, 0)},
            {1: (1, 0)},                # focal missing
            {0: (0, 0), 1: (1, 0)},
        ]
        seq = make_scene(n=2, steps=3, positions=positions)
        tensor, mask = build_features(seq, 0, 0, 3, FeatureScaler(0.0, 1.0))
        assert not mask.values[1].any()
        assert np.all(tensor.values[1] == PAD_VALUE)

    def test_slot_order_fixed_ascending(self):
        seq = make_scene(n=5, steps=1)
        tensor, _ = build_features(seq, 2, 0, 1, FeatureScaler(0.0, 4.0))
        assert tensor.pair_ids == (0, 1, 3, 4)
        assert pair_slots(5, 0) == (1, 2, 3, 4)


def _angle_list(draw, n):
    angles = st.floats(min_value=-math.pi, max_value=math.pi, exclude_min=True,
                       allow_nan=False)
    return [draw(angles) for _ in range(n)]


@st.composite
def oriented_scene(draw):
    n = draw(st.integers(min_value=2, max_value=5))
    steps = draw(st.integers(min_value=1, max_value=3))
    headings = []
    positions = []
    for t in range(steps):
        headings.append({pid: a for pid, a in enumerate(_angle_list(draw, n))})
        positions.append({
            pid: (draw(st.floats(-5, 5, allow_nan=False)),
                  draw(st.floats(-5, 5, allow_nan=False)))
            for pid in range(n)
        })
    return make_scene(n=n, steps=steps, positions=positions, headings=headings)


def _rotated(seq, delta):
    """Rotate every orientation (not positions) by delta."""
    frames = []
    for frame in seq.frames:
        frames.append(tuple(
            PersonState(s.person_id, s.position,
                        wrap_angle(s.head_orientation + delta),
                        wrap_angle(s.body_orientation + delta))
            for s in frame
        ))
    return make_scene(
        n=seq.n, steps=len(seq.timesteps),
        positions=[{s.person_id: s.position for s in f} for f in frames],
        headings=[{s.person_id: s.head_orientation for s in f} for f in frames],
    )


@given(oriented_scene(), st.floats(-3.0, 3.0, allow_nan=False))
@settings(max_examples=30, deadline=None)
def test_rotation_equivariance_of_zero_reference(seq, delta):
    """Rotating all orientations shifts the reference equally, so
    zero-referenced orientation channels stay put."""
    scaler = FeatureScaler(0.0, 10.0)
    # keep clear of the wrap boundary where a 1e-15 reference wobble flips 2*pi
    for t, frame in enumerate(seq.frames):
        ref = frame_zero_reference(frame)
        for s in frame:
            for a in (s.head_orientation, s.body_orientation):
                assume(abs(abs(wrap_angle(a - ref)) - math.pi) > 1e-6)
        sines = sum(math.sin(s.body_orientation) for s in frame)
        cosines = sum(math.cos(s.body_orientation) for s in frame)
        assume(math.hypot(sines, cosines) / len(frame) > 1e-3)
        rot = [wrap_angle(s.body_orientation + delta) for s in frame]
        sines_r = sum(math.sin(a) for a in rot)
        cosines_r = sum(math.cos(a) for a in rot)
        assume(math.hypot(sines_r, cosines_r) / len(frame) > 1e-3)

    rotated = _rotated(seq, delta)
    for focal in range(seq.n):
        base, mask = build_features(seq, focal, 0, len(seq.timesteps), scaler)
        rot, _ = build_features(rotated, focal, 0, len(seq.timesteps), scaler)
        for ch in ORIENTATION_CHANNELS:
            np.testing.assert_allclose(
                rot.values[:, :, ch][mask.values],
                base.values[:, :, ch][mask.values],
                atol=1e-9,
            )


@given(oriented_scene(),
       st.floats(-50, 50, allow_nan=False), st.floats(-50, 50, allow_nan=False))
@settings(max_examples=30, deadline=None)
def test_translation_invariance(seq, dx, dy):
    scaler = FeatureScaler(0.0, 10.0)
    moved = make_scene(
        n=seq.n, steps=len(seq.timesteps),
        positions=[{s.person_id: (s.position[0] + dx, s.position[1] + dy) for s in f}
                   for f in seq.frames],
        headings=[{s.person_id: s.head_orientation for s in f} for f in seq.frames],
    )
    for focal in range(seq.n):
        base, mask = build_features(seq, focal, 0, len(seq.timesteps), scaler)
        shifted, _ = build_features(moved, focal, 0, len(seq.timesteps), scaler)
        for ch in (DIST, CHANNELS.index("pair_bearing")):
            np.testing.assert_allclose(
                shifted.values[:, :, ch][mask.values],
                base.values[:, :, ch][mask.values],
                atol=1e-9,
            )


def test_pair_labels():
    seq = make_scene(n=4, steps=1, partitions=[[[0, 1], [2], [3]]])
    y, valid = pair_labels(seq, 0, 0)
    assert list(y) == [1.0, 0.0, 0.0]  # slots are persons 1, 2, 3
    assert valid.all()
