"""Hierarchical pipeline configuration search.

Stage one sweeps the (pp_perception, pp_generation) grid bounded by L_max,
measures virtual-time throughput for every point, filters by the
throughput requirement, and ranks the feasible points by tracking accuracy
on seeded rollouts. Stage two fine-tunes the partition skewness alpha for
the chosen point, keeping only values that still meet the requirement.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Optional

import numpy as np

from .context import ContextKind
from .errors import ConfigInvalid, NoFeasibleConfig
from .executor import PipelineConfig, run_pipelined
from .metrics import summarize
from .policy import Policy


@dataclass(frozen=True)
class TuneRequest:
    throughput_requirement: float
    l_max: int = 6
    alpha_grid: tuple[float, ...] = (0.0, 0.25, 0.5, 1.0)
    seeds: tuple[int, ...] = tuple(range(20))
    throughput_frames: int = 64
    accuracy_frames: int = 300

    def __post_init__(self):
        if self.l_max < 2:
            raise ConfigInvalid("l_max must be at least 2")
        if self.throughput_requirement <= 0:
            raise ConfigInvalid("throughput requirement must be positive")
        if not self.alpha_grid:
            raise ConfigInvalid("alpha grid must be non-empty")


@dataclass
class GridPoint:
    pp_perception: int
    pp_generation: int
    alpha: float
    throughput: float
    feasible: bool
    mean_error: Optional[float] = None
    success_rate: Optional[float] = None

    @property
    def l_total(self) -> int:
        return self.pp_perception + self.pp_generation

    def to_dict(self) -> dict:
        return {
            "pp_perception": self.pp_perception, "pp_generation": self.pp_generation,
            "alpha": self.alpha, "l": self.l_total, "throughput": self.throughput,
            "feasible": self.feasible, "mean_error": self.mean_error,
            "success_rate": self.success_rate,
        }


@dataclass
class TuneResult:
    request: TuneRequest
    evaluated: list[GridPoint]
    ranked: list[GridPoint]
    chosen: Optional[GridPoint]
    alpha_applied: bool = False
    alpha_note: str = ""

    def to_dict(self) -> dict:
        return {
            "throughput_requirement": self.request.throughput_requirement,
            "l_max": self.request.l_max,
            "seeds": list(self.request.seeds),
            "evaluated": [p.to_dict() for p in self.evaluated],
            "ranked": [p.to_dict() for p in self.ranked],
            "chosen": self.chosen.to_dict() if self.chosen else None,
            "alpha_applied": self.alpha_applied,
            "alpha_note": self.alpha_note,
        }


def _measure_throughput(policy: Policy, base: PipelineConfig, pp_p: int, pp_g: int,
                        alpha: float, frames: int) -> float:
    cfg = replace(base, pp_perception=pp_p, pp_generation=pp_g, alpha=alpha,
                  frame_interval=None)
    result = run_pipelined(cfg, policy, None, frames)
    return summarize(result.trace).throughput


def _measure_accuracy(policy: Policy, base: PipelineConfig, pp_p: int, pp_g: int,
                      alpha: float, env_factory: Callable[[int], object],
                      seeds, frames: int) -> tuple[float, float]:
    errors, successes = [], []
    cfg = replace(base, pp_perception=pp_p, pp_generation=pp_g, alpha=alpha)
    for seed in seeds:
        env = env_factory(seed)
        metrics = summarize(run_pipelined(cfg, policy, env, frames).trace)
        errors.append(metrics.mean_error)
        successes.append(bool(metrics.success))
    return float(np.mean(errors)), float(np.mean(successes))


def _rank_key(point: GridPoint):
    # accuracy first (smaller error), then throughput, then smaller L
    return (point.mean_error, -point.throughput, point.l_total)


def grid_search(policy: Policy, env_factory: Callable[[int], object],
                request: TuneRequest,
                base_config: Optional[PipelineConfig] = None) -> TuneResult:
    """Exhaustive sweep of pipeline degrees with accuracy ranking.

    Raises NoFeasibleConfig (carrying the evaluation log and the
    best-throughput infeasible point) when nothing meets the requirement.
    """
    base = base_config or PipelineConfig()
    n_layers = len(policy.perception.layers)
    n_iter = policy.generation.n_iterations
    evaluated: list[GridPoint] = []
    for pp_p in range(1, request.l_max):
        if pp_p > n_layers:
            continue
        for pp_g in range(1, request.l_max - pp_p + 1):
            if pp_g > n_iter:
                continue
            throughput = _measure_throughput(policy, base, pp_p, pp_g, base.alpha,
                                             request.throughput_frames)
            evaluated.append(GridPoint(pp_p, pp_g, base.alpha, throughput,
                                       feasible=throughput >= request.throughput_requirement))
    evaluated.sort(key=lambda p: (p.pp_perception, p.pp_generation))

    feasible = [p for p in evaluated if p.feasible]
    if not feasible:
        best = max(evaluated, key=lambda p: p.throughput) if evaluated else None
        result = TuneResult(request=request, evaluated=evaluated, ranked=[], chosen=best)
        raise NoFeasibleConfig(
            f"no configuration reaches throughput {request.throughput_requirement}"
            + (f"; best infeasible: pp=({best.pp_perception},{best.pp_generation})"
               f" at {best.throughput}" if best else ""),
            result=result)

    for point in feasible:
        point.mean_error, point.success_rate = _measure_accuracy(
            policy, base, point.pp_perception, point.pp_generation, point.alpha,
            env_factory, request.seeds, request.accuracy_frames)
    ranked = sorted(feasible, key=_rank_key)
    return TuneResult(request=request, evaluated=evaluated, ranked=ranked,
                      chosen=ranked[0])


def finetune_alpha(policy: Policy, env_factory: Callable[[int], object],
                   chosen: GridPoint, request: TuneRequest,
                   base_config: Optional[PipelineConfig] = None) -> TuneResult:
    """Pick the accuracy-best skewness that still meets the requirement.

    Merged autoregressive generation collapses every stage into one prefill
    per frame, so the partition skew cannot change anything; the base point
    comes back unchanged with a not-applicable note.
    """
    base = base_config or PipelineConfig()
    merged = base.resolve_merge(policy.kind)
    if policy.kind == ContextKind.AUTOREGRESSIVE and merged:
        return TuneResult(request=request, evaluated=[chosen], ranked=[chosen],
                          chosen=chosen, alpha_applied=False,
                          alpha_note="not applicable: merged autoregressive generation")
    evaluated: list[GridPoint] = []
    for alpha in request.alpha_grid:
        if alpha == 0.0 and policy.generation.n_iterations < chosen.pp_generation:
            continue
        throughput = _measure_throughput(policy, base, chosen.pp_perception,
                                         chosen.pp_generation, alpha,
                                         request.throughput_frames)
        point = GridPoint(chosen.pp_perception, chosen.pp_generation, alpha,
                          throughput,
                          feasible=throughput >= request.throughput_requirement)
        if point.feasible:
            point.mean_error, point.success_rate = _measure_accuracy(
                policy, base, point.pp_perception, point.pp_generation, alpha,
                env_factory, request.seeds, request.accuracy_frames)
        evaluated.append(point)
    feasible = [p for p in evaluated if p.feasible]
    if not feasible:
        return TuneResult(request=request, evaluated=evaluated, ranked=[],
                          chosen=chosen, alpha_applied=False,
                          alpha_note="no feasible alpha; keeping base")
    ranked = sorted(feasible, key=_rank_key)
    return TuneResult(request=request, evaluated=evaluated, ranked=ranked,
                      chosen=ranked[0], alpha_applied=True,
                      alpha_note=f"alpha={ranked[0].alpha}")
