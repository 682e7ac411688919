import math

import numpy as np
import pytest

from convgroups.checkpoint import Checkpoint
from convgroups.features import FeatureScaler
from convgroups.scene import GroupPartition, PersonState, SceneSequence
from convgroups.synth import SynthConfig, generate
from convgroups.training import (
    TrainConfig, apply_scaler, build_batch, collect_windows,
    fit_scaler_on_batch, time_split_bounds, train,
)


def make_scene(scene_id="s", n=3, steps=4, positions=None, headings=None,
               partitions=None, units="meters"):
    """Small hand-rolled scene; everyone present unless positions say otherwise.

    positions[t][pid] = (x, y) or None for absent.
    """
    frames = []
    for t in range(steps):
        frame = []
        for pid in range(n):
            pos = (float(pid), 0.0)
            if positions is not None:
                pos = positions[t].get(pid)
                if pos is None:
                    continue
            heading = 0.0 if headings is None else headings[t].get(pid, 0.0)
            frame.append(PersonState(pid, (float(pos[0]), float(pos[1])),
                                     head_orientation=heading,
                                     body_orientation=heading))
        frames.append(tuple(frame))
    parts = None
    if partitions is not None:
        parts = tuple(
            GroupPartition.from_lists(p) if p is not None else None for p in partitions
        )
    return SceneSequence(
        scene_id=scene_id,
        timesteps=tuple(float(t) for t in range(steps)),
        n=n,
        frames=tuple(frames),
        gt_partitions=parts,
        units=units,
    )


@pytest.fixture(scope="session")
def tiny_corpus():
    cfg = SynthConfig(n_people=5, n_scenes=6, steps_per_scene=24,
                      group_size_distribution={1: 0.2, 2: 0.5, 3: 0.3},
                      event_rate=5.0, seed=11)
    return generate(cfg)


@pytest.fixture(scope="session")
def tiny_checkpoint(tiny_corpus):
    """A quickly trained model for pipeline/CLI plumbing tests."""
    cfg = TrainConfig(hidden_size=12, seq_len=6, learning_rate=5e-3,
                      epochs=4, batch_size=16, seed=5)
    refs_train, refs_val = [], []
    from convgroups.training import WindowRef
    for idx, seq in enumerate(tiny_corpus):
        q1, q2 = time_split_bounds(len(seq.timesteps), 0.7, 0.15)
        for r in collect_windows([seq], cfg.seq_len, 1, hi=q1):
            refs_train.append(WindowRef(idx, r.focal_id, r.end))
        for r in collect_windows([seq], cfg.seq_len, 1, lo=q1, hi=q2):
            refs_val.append(WindowRef(idx, r.focal_id, r.end))
    train_batch = build_batch(tiny_corpus, refs_train, cfg.seq_len)
    scaler = fit_scaler_on_batch(train_batch)
    apply_scaler(train_batch, scaler)
    val_batch = apply_scaler(build_batch(tiny_corpus, refs_val, cfg.seq_len), scaler)
    result = train(train_batch, val_batch, cfg)
    return Checkpoint(result.params, scaler, cfg)
