"""Group-level F1, pairwise ROC AUC, and the scene-dynamics event count."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.stats import rankdata

from .scene import GroupPartition

TWO_THIRDS = 2.0 / 3.0


@dataclass(frozen=True)
class GroupMatchConfig:
    """Tolerance for counting a detected group as correct.

    thr is the fraction of a ground-truth group's members that must be
    recovered; 1.0 additionally demands exact set equality.
    """

    thr: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.thr <= 1.0:
            raise ValueError(f"thr must lie in (0, 1], got {self.thr}")


@dataclass(frozen=True)
class GroupScore:
    precision: float
    recall: float
    f1: float
    tp: int
    fp: int
    fn: int


def _real_groups(partition: GroupPartition) -> list[frozenset[int]]:
    """Groups of two or more people; singletons do not count as groups."""
    groups = [g for g in partition.groups if len(g) >= 2]
    partition.validate()
    return groups


def _matches(detected: frozenset[int], gt: frozenset[int], thr: float) -> bool:
    needed = math.ceil(thr * len(gt))
    if len(detected & gt) < needed:
        return False
    if thr >= 1.0:
        return detected == gt
    return True


def group_f1(detected: GroupPartition, gt: GroupPartition,
             cfg: Optional[GroupMatchConfig] = None) -> GroupScore:
    """Greedy one-to-one matching of detected groups to ground-truth groups.

    Candidate pairs are ranked by intersection size (largest first, ties by
    smallest member id), and each side is consumed at most once.
    """
    cfg = cfg or GroupMatchConfig()
    det = _real_groups(detected)
    ref = _real_groups(gt)

    candidates = []
    for di, d in enumerate(det):
        for gi, g in enumerate(ref):
            if _matches(d, g, cfg.thr):
                candidates.append((-len(d & g), min(d), min(g), di, gi))
    candidates.sort()

    used_det: set[int] = set()
    used_gt: set[int] = set()
    tp = 0
    for _, _, _, di, gi in candidates:
        if di in used_det or gi in used_gt:
            continue
        used_det.add(di)
        used_gt.add(gi)
        tp += 1

    fp = len(det) - tp
    fn = len(ref) - tp
    precision = tp / len(det) if det else (1.0 if not ref else 0.0)
    recall = tp / len(ref) if ref else (1.0 if not det else 0.0)
    f1 = 1.0 if not det and not ref else 2.0 * tp / (2.0 * tp + fp + fn)
    return GroupScore(precision, recall, f1, tp, fp, fn)


def auc(scores: Sequence[float], labels: Sequence[int]) -> float:
    """ROC AUC as the Mann-Whitney statistic with tie correction."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValueError("scores and labels must be 1-d and the same length")
    pos = labels == 1
    neg = labels == 0
    if not np.array_equal(pos | neg, np.ones_like(pos)):
        raise ValueError("labels must be binary 0/1")
    n_pos = int(pos.sum())
    n_neg = int(neg.sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC undefined: need at least one positive and one negative label")
    ranks = rankdata(scores)
    u = float(ranks[pos].sum()) - n_pos * (n_pos + 1) / 2.0
    return u / (n_pos * n_neg)


@dataclass(frozen=True)
class DynamicsScore:
    """Counts of group formation / break / reformation events at one timestep."""

    formations: int
    breaks: int
    reformations: int

    @property
    def total(self) -> int:
        return self.formations + self.breaks + self.reformations


def scene_dynamics(partitions: Sequence[GroupPartition]) -> list[DynamicsScore]:
    """Per-timestep event counts over a time-ordered partition sequence.

    A group's identity is its exact member set. A formation is a set never
    seen before; a break is a set that does not survive to the next step; a
    reformation is a set returning after an absence of at least one step.
    The first timestep has no history and scores zero.
    """
    current: list[set[frozenset[int]]] = [
        {g for g in p.groups if len(g) >= 2} for p in partitions
    ]
    scores: list[DynamicsScore] = []
    seen: set[frozenset[int]] = set()
    for t, groups in enumerate(current):
        if t == 0:
            scores.append(DynamicsScore(0, 0, 0))
            seen |= groups
            continue
        prev = current[t - 1]
        formations = sum(1 for g in groups if g not in prev and g not in seen)
        reformations = sum(1 for g in groups if g not in prev and g in seen)
        breaks = sum(1 for g in prev if g not in groups)
        scores.append(DynamicsScore(formations, breaks, reformations))
        seen |= groups
    return scores
