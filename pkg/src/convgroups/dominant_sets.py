"""Group extraction from affinity matrices via iterative Dominant Sets.

Each extraction runs discrete replicator dynamics on the probability simplex
from the uniform point; the support of the converged state is the next
cluster. Peeling repeats on the remaining people until the extracted set's
internal mutual affinity (the quadratic form at the converged state) drops
below the configured threshold, at which point everyone left over becomes a
singleton.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np

from .scene import AffinityMatrix, GroupPartition


class Symmetrization(str, Enum):
    RAW = "raw"
    AVERAGE = "average"
    MINIMUM = "minimum"
    MAXIMUM = "maximum"


@dataclass(frozen=True)
class DSConfig:
    affinity_threshold: float = 0.5
    max_iterations: int = 10_000
    convergence_tol: float = 1e-6
    strategy: Symmetrization = Symmetrization.AVERAGE
    support_cutoff: float = 1e-4

    def validate(self) -> None:
        if self.convergence_tol <= 0:
            raise ValueError("convergence_tol must be > 0")
        if self.max_iterations <= 0:
            raise ValueError("max_iterations must be > 0")
        if not 0.0 <= self.affinity_threshold <= 1.0:
            raise ValueError("affinity_threshold must lie in [0, 1]")


def symmetrize_values(values: np.ndarray, strategy: Symmetrization | str) -> np.ndarray:
    """Combine the two directed affinities of each pair into one edge weight."""
    strategy = Symmetrization(strategy)
    if strategy is Symmetrization.RAW:
        return values.copy()
    if strategy is Symmetrization.AVERAGE:
        return (values + values.T) / 2.0
    if strategy is Symmetrization.MINIMUM:
        return np.minimum(values, values.T)
    return np.maximum(values, values.T)


def symmetrize(matrix: AffinityMatrix, strategy: Symmetrization | str) -> AffinityMatrix:
    return AffinityMatrix(matrix.person_ids, symmetrize_values(matrix.values, strategy))


@dataclass
class ExtractionResult:
    members: list[int]           # indices into the working matrix
    weights: np.ndarray          # converged simplex state
    cohesion: float              # x'Ax at the converged state
    degenerate: bool             # all-zero payoff, dynamics never moved
    iterations: int


def extract_dominant_set(values: np.ndarray, config: Optional[DSConfig] = None) -> ExtractionResult:
    """Replicator dynamics from the uniform simplex point.

    ``values`` must be non-negative with zero diagonal. The update is
    x <- x * (Ax) / (x'Ax); for an asymmetric matrix the quadratic form
    equals that of its symmetric part, so the raw strategy runs unchanged.
    """
    config = config or DSConfig()
    config.validate()
    p = values.shape[0]
    if p == 0 or values.shape != (p, p):
        raise ValueError(f"need a square non-empty matrix, got shape {values.shape}")
    if np.any(values < 0):
        raise ValueError("affinities must be non-negative")

    x = np.full(p, 1.0 / p)
    if p == 1:
        return ExtractionResult([0], x, 0.0, False, 0)

    iterations = 0
    for iterations in range(1, config.max_iterations + 1):
        ax = values @ x
        payoff = float(x @ ax)
        if payoff <= 0.0:
            # Nothing connects the remaining nodes; dynamics are stuck at
            # the uniform point, report the full set as degenerate.
            return ExtractionResult(list(range(p)), x, 0.0, True, iterations - 1)
        x_next = x * ax / payoff
        if float(np.abs(x_next - x).sum()) < config.convergence_tol:
            x = x_next
            break
        x = x_next

    members = [int(k) for k in np.flatnonzero(x > config.support_cutoff)]
    if not members:
        # Mass concentrated below the cutoff everywhere is only possible for
        # pathological inputs; keep the argmax for a well-defined answer.
        members = [int(np.argmax(x))]
    cohesion = float(x @ values @ x)
    return ExtractionResult(members, x, cohesion, False, iterations)


def cluster(matrix: AffinityMatrix, config: Optional[DSConfig] = None) -> GroupPartition:
    """Peel dominant sets until cohesion falls below the stopping threshold."""
    config = config or DSConfig()
    config.validate()
    matrix.validate()
    working = symmetrize_values(matrix.values, config.strategy)
    ids = list(matrix.person_ids)
    remaining = list(range(len(ids)))
    groups: list[frozenset[int]] = []

    while remaining:
        if len(remaining) == 1:
            groups.append(frozenset({ids[remaining[0]]}))
            break
        sub = working[np.ix_(remaining, remaining)]
        result = extract_dominant_set(sub, config)
        if result.degenerate or result.cohesion < config.affinity_threshold:
            # Stopping rule: what remains is not a cohesive group.
            groups.extend(frozenset({ids[k]}) for k in remaining)
            break
        members = sorted(remaining[k] for k in result.members)
        groups.append(frozenset(ids[k] for k in members))
        remaining = [k for k in remaining if k not in set(members)]

    return GroupPartition(tuple(groups))
