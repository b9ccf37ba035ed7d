"""Wall-clock engine: real threads, real time, used for jitter measurement.

The quantitative contracts live in the virtual-time engine; this module
exists to measure interference effects that only appear on a real host,
chiefly the regularity of the inter-action interval. Pipelined execution
runs each stage of a frame as an independent task, joins them (the frame
barrier: no stage of frame t+1 starts before every stage of frame t
completes), and paces delivery with absolute deadlines. Parallel execution
lets W workers burn the same per-request work concurrently and deliver
whenever they finish, so contention lands directly in the intervals.

Stage "work" is a busy loop scaled from the policy's cost units by
`seconds_per_unit`. Emission timestamps are monotonic-clock seconds.
"""

from __future__ import annotations

import threading
import time
from concurrent.futures import ThreadPoolExecutor, wait

from .executor import PipelineConfig, TRACE_SCHEMA
from .partition import plan_stages
from .policy import Policy


def _spin(seconds: float) -> None:
    deadline = time.perf_counter() + seconds
    while time.perf_counter() < deadline:
        pass


def _sleep_until(deadline: float) -> None:
    remaining = deadline - time.perf_counter()
    if remaining > 0:
        time.sleep(remaining)


def _wall_header(mode: str, interval: float, duration: int, config: dict) -> dict:
    return {"type": "header", "schema": TRACE_SCHEMA, "mode": mode,
            "engine": "wallclock", "frame_interval": interval,
            "duration": duration, "config": config, "success_threshold": None}


def _emission(ts: float, jct: float) -> dict:
    return {"request": -1, "time": ts, "emission_frame": -1, "land_frame": -1,
            "jct": jct, "action": [], "staleness_min": 0.0, "staleness_mean": 0.0,
            "staleness_max": 0.0, "staleness_final": 0.0}


def run_pipelined_wallclock(cfg: PipelineConfig, policy: Policy, duration: int,
                            seconds_per_unit: float = 1e-4,
                            interval_seconds: float | None = None) -> list[dict]:
    """Deadline-paced pipelined frames; returns a trace for `summarize`."""
    cfg.validate(policy)
    plan = plan_stages(policy.perception.layer_costs, cfg.pp_perception,
                       policy.generation.n_iterations, cfg.pp_generation, cfg.alpha)
    perc_costs = [sum(policy.perception.layer_costs[a:b]) for a, b in plan.perception_stages]
    gen_costs = [n * policy.generation.step_cost for n in plan.generation_stages]
    stage_seconds = [c * seconds_per_unit for c in perc_costs + gen_costs]
    if interval_seconds is None:
        interval_seconds = 1.5 * sum(stage_seconds)
    fill = cfg.pp_perception + cfg.pp_generation - 1
    trace = [_wall_header("pipe", interval_seconds, duration,
                          {"pipeline": cfg.to_dict(), "seconds_per_unit": seconds_per_unit})]
    with ThreadPoolExecutor(max_workers=len(stage_seconds)) as pool:
        t0 = time.perf_counter()
        for t in range(duration):
            futures = [pool.submit(_spin, s) for s in stage_seconds]
            wait(futures)  # frame barrier
            _sleep_until(t0 + (t + 1) * interval_seconds)
            ts = time.perf_counter()
            frame = {"type": "frame", "frame": t, "start": ts - interval_seconds,
                     "end": ts, "emissions": [], "dropped_observations": 0}
            if t >= fill:
                frame["emissions"].append(_emission(ts, interval_seconds * (fill + 1)))
            trace.append(frame)
    return trace


def run_parallel_wallclock(policy: Policy, workers: int, duration: int,
                           seconds_per_unit: float = 1e-4,
                           interval_seconds: float | None = None) -> list[dict]:
    """W contending workers; one dispatch per frame boundary to an idle worker."""
    request_seconds = policy.sequential_cost * seconds_per_unit
    if interval_seconds is None:
        interval_seconds = 1.5 * request_seconds / workers
    trace = [_wall_header("par", interval_seconds, duration,
                          {"workers": workers, "seconds_per_unit": seconds_per_unit})]
    emissions: list[tuple[float, float]] = []
    lock = threading.Lock()
    outstanding = threading.Semaphore(workers)

    def job(dispatch_ts: float) -> None:
        _spin(request_seconds)
        ts = time.perf_counter()
        with lock:
            emissions.append((ts, ts - dispatch_ts))
        outstanding.release()

    with ThreadPoolExecutor(max_workers=workers) as pool:
        t0 = time.perf_counter()
        for t in range(duration):
            _sleep_until(t0 + t * interval_seconds)
            if outstanding.acquire(blocking=False):
                pool.submit(job, time.perf_counter())
        # drain
        for _ in range(workers):
            outstanding.acquire()
    emissions.sort()
    for t in range(duration):
        lo = t0 + t * interval_seconds
        hi = lo + interval_seconds
        frame = {"type": "frame", "frame": t, "start": lo, "end": hi,
                 "emissions": [_emission(ts, jct) for ts, jct in emissions
                               if lo <= ts < hi or (t == duration - 1 and ts >= hi)],
                 "dropped_observations": 0}
        trace.append(frame)
    return trace
