"""Stage partitioning: perception layers and generation iterations.

Perception layers are split into contiguous ranges minimizing the maximum
stage cost (exact dynamic program). Generation iterations are split by
exponential stage weights e^(i*alpha) normalized and rounded cumulatively;
alpha = 0 recovers the uniform partition and larger alpha pushes iterations
toward later (fresher-context) stages.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass

from .errors import InvalidStageCount, TooManyStages

_ROUNDING_FAULT_ENV = "FRAMEPIPE_ROUNDING_FAULT"


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def _rounder():
    # fault-injection hook used by the verify suite to show the goldens
    # actually depend on the rounding rule
    if os.environ.get(_ROUNDING_FAULT_ENV) == "truncate":
        return lambda x: int(math.floor(x))
    return round_half_up


@dataclass(frozen=True)
class StagePlan:
    """Partition of perception layers and generation iterations onto stages."""

    perception_stages: tuple[tuple[int, int], ...]  # half-open [start, stop) layer ranges
    generation_stages: tuple[int, ...]              # iterations per stage, sums to n
    alpha: float = 0.0

    @property
    def pp_perception(self) -> int:
        return len(self.perception_stages)

    @property
    def pp_generation(self) -> int:
        return len(self.generation_stages)

    def to_dict(self) -> dict:
        return {
            "perception_stages": [list(r) for r in self.perception_stages],
            "generation_stages": list(self.generation_stages),
            "alpha": self.alpha,
        }


def split_perception(costs, stages: int) -> list[tuple[int, int]]:
    """Contiguous partition of layers minimizing the maximum stage cost.

    Exact DP over the (layers x stages) table; layer counts are small
    (tens), so O(L^2 * S) is plenty.
    """
    costs = [float(c) for c in costs]
    n = len(costs)
    if stages < 1:
        raise TooManyStages("need at least one stage")
    if stages > n:
        raise TooManyStages(f"{stages} stages for {n} layers")
    if any(c <= 0 for c in costs):
        raise ValueError("layer costs must be strictly positive")

    prefix = [0.0] * (n + 1)
    for i, c in enumerate(costs):
        prefix[i + 1] = prefix[i] + c

    def span(i: int, j: int) -> float:
        return prefix[j] - prefix[i]

    INF = float("inf")
    best = [[INF] * (stages + 1) for _ in range(n + 1)]
    cut = [[0] * (stages + 1) for _ in range(n + 1)]
    best[0][0] = 0.0
    for s in range(1, stages + 1):
        for i in range(s, n + 1):
            for j in range(s - 1, i):
                cand = max(best[j][s - 1], span(j, i))
                if cand < best[i][s]:
                    best[i][s] = cand
                    cut[i][s] = j

    ranges = []
    i = n
    for s in range(stages, 0, -1):
        j = cut[i][s]
        ranges.append((j, i))
        i = j
    ranges.reverse()
    return ranges


def split_generation(n: int, stages: int, alpha: float = 0.0) -> list[int]:
    """Iteration counts per stage under weights e^(i*alpha), i = 1..stages.

    Boundaries are placed at round-half-up cumulative weight fractions with
    the final boundary forced to n, so the counts always sum to n.
    """
    if stages < 1 or n < 1:
        raise InvalidStageCount(f"need n >= 1 and stages >= 1, got n={n}, stages={stages}")
    if alpha == 0.0 and n < stages:
        raise InvalidStageCount(f"uniform split needs n >= stages, got n={n}, stages={stages}")
    rnd = _rounder()
    weights = [math.exp((i + 1) * alpha) for i in range(stages)]
    total = math.fsum(weights)
    counts: list[int] = []
    prev = 0
    cum = 0.0
    for i in range(stages):
        cum += weights[i]
        boundary = n if i == stages - 1 else rnd(n * (cum / total))
        boundary = min(max(boundary, prev), n)
        counts.append(boundary - prev)
        prev = boundary
    return counts


def plan_stages(layer_costs, pp_perception: int, n_iterations: int,
                pp_generation: int, alpha: float = 0.0) -> StagePlan:
    return StagePlan(
        perception_stages=tuple(split_perception(layer_costs, pp_perception)),
        generation_stages=tuple(split_generation(n_iterations, pp_generation, alpha)),
        alpha=alpha,
    )
