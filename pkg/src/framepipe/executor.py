"""Deterministic virtual-time execution of the four scheduling modes.

The engine advances a frame clock. One observation is ingested per frame;
an action emitted at the end of frame E is applied to the environment at
the start of frame E+1. In pipelined mode a request born at frame b runs
its perception stages in frames b .. b+pp_p-1 (publishing the public
context labeled with the frame that completed it) and its pp_g generation
stages in consecutive frames starting at b + pp_p - 1 - fetch_offset.
Every generation stage in frame t reads the context of frame
t + fetch_offset: offset 0 serializes the frame's perception publish
before the fetch (and the degenerate (1,1) pipeline reproduces sequential
execution exactly), while negative offsets let perception and generation
overlap, giving the L = pp_p + pp_g frame request span at offset -1.

All virtual-time arithmetic is exact for integer-valued cost units, which
is what the quantitative contracts (throughput law, fill time, staleness
accounting, jitter zero) rely on. Wall-clock execution lives in
`wallclock`.

Trace format (schema 1, one JSON object per line when exported):
  {"type": "header", "schema": 1, "mode", "engine", "frame_interval",
   "duration", "config", "success_threshold"}
  {"type": "frame", "frame", "start", "end", "perception": [...],
   "generation": [...], "publishes": [versions], "prefill_calls",
   "decode_calls", "generation_cost", "emissions": [...], "env_error",
   "dropped_observations"}
Emission entries carry {"request", "time", "emission_frame", "land_frame",
"jct", "action", "staleness_min", "staleness_mean", "staleness_max",
"staleness_final"}.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .context import ContextKind, ContextStore
from .errors import ConfigInvalid, DeadlockDetected, NotYetPublished
from .partition import StagePlan, plan_stages
from .policy import ActionOutput, Observation, Policy

TRACE_SCHEMA = 1


@dataclass(frozen=True)
class PipelineConfig:
    """Full pipelined search point: degrees, offset, skew, frame policy."""

    pp_perception: int = 1
    pp_generation: int = 1
    fetch_offset: Optional[int] = None      # None: 0 for conditioning, -1 for autoregressive
    alpha: float = 0.0
    frame_interval: Optional[float] = None  # None: as fast as possible
    merge_autoregressive: Optional[bool] = None  # None: merge iff autoregressive
    store_capacity: int = 2
    read_policy: str = "snapshot"           # "snapshot" (frame start) | "live"
    overrun_policy: str = "stretch"         # "stretch" | "drop"

    def resolve_offset(self, kind: ContextKind) -> int:
        if self.fetch_offset is not None:
            return self.fetch_offset
        return -1 if kind == ContextKind.AUTOREGRESSIVE else 0

    def resolve_merge(self, kind: ContextKind) -> bool:
        if self.merge_autoregressive is not None:
            return self.merge_autoregressive and kind == ContextKind.AUTOREGRESSIVE
        return kind == ContextKind.AUTOREGRESSIVE

    def validate(self, policy: Policy) -> None:
        if self.pp_perception < 1 or self.pp_generation < 1:
            raise ConfigInvalid("pipeline degrees must be positive")
        if self.pp_perception + self.pp_generation < 2:
            raise ConfigInvalid("pipelined mode needs at least two stages")
        offset = self.resolve_offset(policy.kind)
        if offset > 0:
            raise ConfigInvalid("fetch_offset must be <= 0")
        if -offset >= self.store_capacity:
            raise ConfigInvalid(
                f"|fetch_offset| = {-offset} must be below store capacity {self.store_capacity}")
        if self.pp_perception > len(policy.perception.layers):
            raise ConfigInvalid("more perception stages than layers")
        if self.read_policy not in ("snapshot", "live"):
            raise ConfigInvalid(f"unknown read policy {self.read_policy!r}")
        if self.overrun_policy not in ("stretch", "drop"):
            raise ConfigInvalid(f"unknown overrun policy {self.overrun_policy!r}")
        if self.frame_interval is not None and self.frame_interval <= 0:
            raise ConfigInvalid("frame interval must be positive")

    def to_dict(self) -> dict:
        return {
            "pp_perception": self.pp_perception,
            "pp_generation": self.pp_generation,
            "fetch_offset": self.fetch_offset,
            "alpha": self.alpha,
            "frame_interval": self.frame_interval,
            "merge_autoregressive": self.merge_autoregressive,
            "store_capacity": self.store_capacity,
            "read_policy": self.read_policy,
            "overrun_policy": self.overrun_policy,
        }


@dataclass
class RequestRecord:
    observation_id: int
    birth_frame: int
    birth_time: float
    completion_frame: int = -1
    completion_time: float = -1.0
    jct: float = -1.0
    context_versions: list[int] = field(default_factory=list)


@dataclass
class RunResult:
    actions: list[ActionOutput]
    trace: list[dict]
    requests: list[RequestRecord]

    @property
    def header(self) -> dict:
        return self.trace[0]


def _header(mode: str, frame_interval: float, duration: int, config: dict,
            env) -> dict:
    return {
        "type": "header",
        "schema": TRACE_SCHEMA,
        "mode": mode,
        "engine": "virtual",
        "frame_interval": frame_interval,
        "duration": duration,
        "config": config,
        "success_threshold": getattr(env, "success_threshold", None),
    }


def _synthetic_observation(frame: int) -> Observation:
    return Observation(frame=frame, vector=np.zeros(4))


class _EnvPort:
    """Boundary protocol shared by every mode: land, seal error, observe.

    Actions are displacement commands; when several land at one boundary
    (emission cadences that beat against the frame interval), only the most
    recently emitted one is executed and the rest are superseded, the way a
    setpoint actuator discards stale queued commands.
    """

    def __init__(self, env, policy: Policy):
        self.env = env
        self.policy = policy
        self.pending: list[tuple[int, float, ActionOutput]] = []  # (land_frame, time, action)
        self.superseded_total = 0
        self.last_superseded = 0

    def schedule(self, land_frame: int, time: float, action: ActionOutput) -> None:
        self.pending.append((land_frame, time, action))

    def boundary(self, frame: int) -> Optional[Observation]:
        """Apply the newest landing for this boundary, then observe."""
        due = [p for p in self.pending if p[0] == frame]
        self.last_superseded = 0
        if due:
            self.pending = [p for p in self.pending if p[0] != frame]
            newest = max(due, key=lambda p: p[1])
            self.last_superseded = len(due) - 1
            self.superseded_total += self.last_superseded
            if self.env is not None:
                self.env.apply_action(self.policy.generation.decode_action(newest[2]))
        if self.env is None:
            return _synthetic_observation(frame)
        return self.env.observe(frame)

    def seal(self) -> Optional[float]:
        if self.env is None:
            return None
        self.env.advance_frame()
        return self.env.last_error


# ---------------------------------------------------------------------------
# pipelined mode
# ---------------------------------------------------------------------------

@dataclass
class _InFlight:
    record: RequestRecord
    obs: Observation
    latent: np.ndarray
    gen_state: object = None
    ages: list[float] = field(default_factory=list)


def run_pipelined(cfg: PipelineConfig, policy: Policy, env, duration: int) -> RunResult:
    """Frame-clocked pipeline of pp_perception + pp_generation stages.

    A request born at frame b runs perception stages in frames
    b .. b+pp_p-1. Its first generation stage runs in the earliest frame
    whose offset fetch resolves to the request's own published context,
    frame b + pp_p - 1 - offset, so at offset 0 the final perception stage
    and the first generation stage share a frame (executed in sequence,
    which the frame duration accounts for) and the degenerate (1,1)
    pipeline reproduces sequential execution exactly. At offset -1 a
    request spans the full L = pp_p + pp_g frames and perception overlaps
    generation.
    """
    cfg.validate(policy)
    offset = cfg.resolve_offset(policy.kind)
    merge = cfg.resolve_merge(policy.kind)
    plan: StagePlan = plan_stages(policy.perception.layer_costs, cfg.pp_perception,
                                  policy.generation.n_iterations, cfg.pp_generation,
                                  cfg.alpha)
    pp_p, pp_g = cfg.pp_perception, cfg.pp_generation
    gen_shift = pp_p - 1 - offset   # frame delay from birth to first generation stage
    span_frames = gen_shift + pp_g  # frames from birth to emission, inclusive
    gen = policy.generation

    perc_stage_costs = [sum(policy.perception.layer_costs[a:b]) for a, b in plan.perception_stages]

    def gen_stage_cost(iterations: int) -> float:
        if policy.kind == ContextKind.AUTOREGRESSIVE:
            return gen.prefill_cost + max(iterations - 1, 0) * gen.decode_cost
        return iterations * gen.step_cost

    store = ContextStore(cfg.store_capacity)
    port = _EnvPort(env, policy)
    inflight: dict[int, _InFlight] = {}
    first_publish_frame = pp_p - 1
    interval = cfg.frame_interval
    trace: list[dict] = [_header("pipe", interval, duration,
                                 {"pipeline": cfg.to_dict(), "plan": plan.to_dict(),
                                  "fetch_offset": offset, "merged": merge}, env)]
    actions: list[ActionOutput] = []
    records: list[RequestRecord] = []
    now = 0.0
    skip_ingest = 0
    for t in range(duration):
        frame = {"type": "frame", "frame": t, "start": now, "perception": [],
                 "generation": [], "publishes": [], "emissions": [],
                 "prefill_calls": 0, "decode_calls": 0, "generation_cost": 0.0,
                 "dropped_observations": 0}

        obs = port.boundary(t)
        frame["superseded_actions"] = port.last_superseded
        if skip_ingest > 0:
            skip_ingest -= 1
            frame["dropped_observations"] += 1
        else:
            rec = RequestRecord(observation_id=obs.id, birth_frame=t, birth_time=now)
            inflight[t] = _InFlight(record=rec, obs=obs, latent=policy.perception.start(obs),
                                    gen_state=gen.initial_state(seed=t))
            records.append(rec)

        # snapshot reads happen before this frame's publish; offset 0 must wait
        snapshot: dict[int, tuple[int, object]] = {}
        if offset <= -1 and cfg.read_policy == "snapshot":
            try:
                snapshot[t + offset] = store.fetch_entry(t, offset)
            except NotYetPublished:
                pass

        other_perc_costs: list[float] = []
        publish_cost = 0.0
        published_this_frame = False

        # perception stages
        for s in range(1, pp_p + 1):
            b = t - s + 1
            item = inflight.get(b)
            if item is None:
                continue
            lo, hi = plan.perception_stages[s - 1]
            item.latent = policy.perception.apply_layers(item.latent, lo, hi)
            entry = {"request": b, "stage": s, "cost": perc_stage_costs[s - 1],
                     "published_version": None}
            if s == pp_p:
                ctx = policy.perception.finalize(item.latent, item.obs)
                version = store.publish(ctx, frame=t)
                entry["published_version"] = version
                frame["publishes"].append(version)
                publish_cost = perc_stage_costs[s - 1]
                published_this_frame = True
            else:
                other_perc_costs.append(perc_stage_costs[s - 1])
            frame["perception"].append(entry)

        # generation stages: stage j serves the request born gen_shift+j-1 frames ago
        gen_stages = []
        for j in range(1, pp_g + 1):
            b = t - gen_shift - (j - 1)
            item = inflight.get(b)
            if item is None or item.gen_state is None:
                continue
            gen_stages.append((j, b, item))

        fetched: Optional[tuple[int, object]] = None
        if gen_stages:
            target = t + offset
            if target in snapshot:
                fetched = snapshot[target]
            else:
                try:
                    fetched = store.fetch_entry(t, offset)
                except NotYetPublished:
                    if target < first_publish_frame:
                        raise DeadlockDetected(
                            f"frame {t}: context for frame {target} can never exist")
                    # publisher skipped (frame-drop recovery): read the newest
                    _, version, ctx = store.latest_entry()
                    fetched = (version, ctx)

        gen_costs_this_frame: list[float] = []
        if gen_stages:
            version, ctx = fetched
            if merge and policy.kind == ContextKind.AUTOREGRESSIVE:
                frame["prefill_calls"] += 1
                frame["generation_cost"] += gen.prefill_cost
                gen_costs_this_frame.append(gen.prefill_cost)
            for j, b, item in gen_stages:
                iterations = plan.generation_stages[j - 1]
                emission_frame = b + span_frames - 1
                age = float(emission_frame - ctx.produced_frame)
                for _ in range(iterations):
                    item.gen_state = gen.step(item.gen_state, ctx)
                item.ages.extend([age] * iterations)
                item.record.context_versions.append(version)
                if not merge or policy.kind != ContextKind.AUTOREGRESSIVE:
                    cost = gen_stage_cost(iterations)
                    gen_costs_this_frame.append(cost)
                    frame["generation_cost"] += cost
                    if policy.kind == ContextKind.AUTOREGRESSIVE:
                        frame["prefill_calls"] += 1
                        frame["decode_calls"] += max(iterations - 1, 0)
                frame["generation"].append({
                    "request": b, "stage": j, "iterations": iterations,
                    "context_version": version, "context_frame": ctx.produced_frame,
                    "context_age_at_emission": age,
                })
            if policy.kind == ContextKind.AUTOREGRESSIVE:
                # publish the freshest token prefix back into the shared context
                newest = max(gen_stages, key=lambda g: len(g[2].gen_state.tokens))
                store.update_action_tokens(t, newest[2].gen_state.tokens)

        # frame cost: at offset 0 the publish gates every generation fetch, so
        # the publishing stage and the widest generation stage run in sequence
        if offset == 0 and gen_costs_this_frame and published_this_frame:
            chain = publish_cost + max(gen_costs_this_frame)
            max_cost = max(other_perc_costs + [chain])
        else:
            parallel = other_perc_costs + gen_costs_this_frame
            if published_this_frame:
                parallel.append(publish_cost)
            max_cost = max(parallel) if parallel else 0.0

        if interval is None:
            dur = max_cost
        elif max_cost <= interval:
            dur = interval
        elif cfg.overrun_policy == "stretch":
            dur = max_cost
            frame["overrun"] = True
        else:
            q = math.ceil(max_cost / interval)
            dur = q * interval
            skip_ingest += q - 1
            frame["overrun"] = True
        now += dur
        frame["end"] = now

        # emission: the request that just finished its last generation stage
        b_done = t - span_frames + 1
        item = inflight.get(b_done)
        if item is not None:
            action = gen.finish(item.gen_state, emitted_frame=t,
                                staleness_profile=tuple(item.ages))
            actions.append(action)
            item.record.completion_frame = t + 1
            item.record.completion_time = now
            item.record.jct = now - item.record.birth_time
            port.schedule(t + 1, now, action)
            ages = item.ages
            frame["emissions"].append({
                "request": b_done, "time": now, "emission_frame": t,
                "land_frame": t + 1, "jct": item.record.jct,
                "action": list(action.values),
                "staleness_min": min(ages), "staleness_mean": float(np.mean(ages)),
                "staleness_max": max(ages), "staleness_final": ages[-1],
            })
            del inflight[b_done]

        frame["env_error"] = port.seal()
        trace.append(frame)
    return RunResult(actions=actions, trace=trace, requests=records)


# ---------------------------------------------------------------------------
# sequential mode
# ---------------------------------------------------------------------------

def run_sequential(policy: Policy, env, duration: int,
                   frame_interval: Optional[float] = None) -> RunResult:
    """One request at a time; observations arriving mid-request are dropped."""
    gen = policy.generation
    request_cost = policy.sequential_cost
    interval = frame_interval if frame_interval is not None else request_cost
    frames_per_request = max(1, math.ceil(request_cost / interval - 1e-12))
    trace = [_header("seq", interval, duration,
                     {"request_cost": request_cost}, env)]
    port = _EnvPort(env, policy)
    actions: list[ActionOutput] = []
    records: list[RequestRecord] = []
    busy_until_frame = 0
    for t in range(duration):
        now = t * interval
        frame = {"type": "frame", "frame": t, "start": now, "end": now + interval,
                 "perception": [], "generation": [], "publishes": [], "emissions": [],
                 "prefill_calls": 0, "decode_calls": 0, "generation_cost": 0.0,
                 "dropped_observations": 0}
        obs = port.boundary(t)
        frame["superseded_actions"] = port.last_superseded
        if t >= busy_until_frame:
            rec = RequestRecord(observation_id=obs.id, birth_frame=t, birth_time=now)
            ctx = policy.perception.perceive(obs)
            state = gen.initial_state(seed=t)
            for _ in range(gen.n_iterations):
                state = gen.step(state, ctx)
            completion_time = now + request_cost
            emission_frame = t + frames_per_request - 1
            age = float(emission_frame - ctx.produced_frame)
            action = gen.finish(state, emitted_frame=emission_frame,
                                staleness_profile=(age,) * gen.n_iterations)
            land = t + frames_per_request
            rec.completion_frame = land
            rec.completion_time = completion_time
            rec.jct = request_cost
            rec.context_versions.append(1)
            records.append(rec)
            actions.append(action)
            port.schedule(land, completion_time, action)
            busy_until_frame = land
            if policy.kind == ContextKind.AUTOREGRESSIVE:
                frame["prefill_calls"] = 1
                frame["decode_calls"] = gen.n_iterations - 1
            frame["generation_cost"] = gen.total_cost
            frame["emissions"].append({
                "request": t, "time": completion_time, "emission_frame": emission_frame,
                "land_frame": land, "jct": request_cost, "action": list(action.values),
                "staleness_min": age, "staleness_mean": age,
                "staleness_max": age, "staleness_final": age,
            })
        else:
            frame["dropped_observations"] = 1
        frame["env_error"] = port.seal()
        trace.append(frame)
    return RunResult(actions=actions, trace=trace, requests=records)


# ---------------------------------------------------------------------------
# parallel mode (processor-sharing worker pool)
# ---------------------------------------------------------------------------

@dataclass
class _ParJob:
    worker: int
    obs: Observation
    dispatch_frame: int
    dispatch_time: float
    remaining: float


def run_parallel(policy: Policy, env, workers: int, duration: int,
                 frame_interval: Optional[float] = None,
                 capacity: float = 1.0) -> RunResult:
    """W private requests sharing one compute capacity (processor sharing).

    Each request computes on the observation captured at its dispatch; with
    w concurrent requests every one of them progresses at capacity/w. A
    worker that finishes regrabs the freshest observation immediately
    (just-in-fit input), so a saturated pool sits at exactly
    W * request_cost / capacity per job.
    """
    if workers < 1:
        raise ConfigInvalid("need at least one worker")
    gen = policy.generation
    request_cost = policy.sequential_cost
    interval = frame_interval if frame_interval is not None else request_cost
    trace = [_header("par", interval, duration,
                     {"workers": workers, "capacity": capacity,
                      "request_cost": request_cost}, env)]
    port = _EnvPort(env, policy)
    actions: list[ActionOutput] = []
    records: list[RequestRecord] = []
    jobs: list[_ParJob] = []
    free_workers = list(range(workers))

    def complete(job: _ParJob, time: float, frame: dict) -> None:
        ctx = policy.perception.perceive(job.obs)
        state = gen.initial_state(seed=job.dispatch_frame)
        for _ in range(gen.n_iterations):
            state = gen.step(state, ctx)
        land = int(math.ceil(time / interval - 1e-12))
        emission_frame = land - 1
        age = float(emission_frame - ctx.produced_frame)
        action = gen.finish(state, emitted_frame=emission_frame,
                            staleness_profile=(age,) * gen.n_iterations)
        rec = RequestRecord(observation_id=job.obs.id, birth_frame=job.dispatch_frame,
                            birth_time=job.dispatch_time, completion_frame=land,
                            completion_time=time, jct=time - job.dispatch_time)
        rec.context_versions.append(1)
        records.append(rec)
        actions.append(action)
        port.schedule(land, time, action)
        frame["emissions"].append({
            "request": job.dispatch_frame, "time": time, "emission_frame": emission_frame,
            "land_frame": land, "jct": rec.jct, "action": list(action.values),
            "staleness_min": age, "staleness_mean": age,
            "staleness_max": age, "staleness_final": age,
        })

    for t in range(duration):
        now = float(t) * interval
        end = now + interval
        frame = {"type": "frame", "frame": t, "start": now, "end": end,
                 "perception": [], "generation": [], "publishes": [], "emissions": [],
                 "prefill_calls": 0, "decode_calls": 0, "generation_cost": 0.0,
                 "dropped_observations": 0}
        obs = port.boundary(t)
        frame["superseded_actions"] = port.last_superseded
        obs_consumed = False
        if free_workers:
            worker = free_workers.pop(0)
            jobs.append(_ParJob(worker=worker, obs=obs, dispatch_frame=t,
                                dispatch_time=now, remaining=request_cost))
            obs_consumed = True
        # advance the processor-sharing pool across this frame interval
        clock = now
        while jobs and clock < end - 1e-12:
            w = len(jobs)
            rate = capacity / w
            nxt = min(jobs, key=lambda j: j.remaining)
            t_done = clock + nxt.remaining / rate
            if t_done <= end + 1e-12:
                elapsed = t_done - clock
                for j in jobs:
                    j.remaining -= elapsed * rate
                clock = t_done
                finished = [j for j in jobs if j.remaining <= 1e-9]
                for j in finished:
                    jobs.remove(j)
                    complete(j, t_done, frame)
                    if t_done >= end - 1e-9:
                        # boundary-exact completion: the next frame's fresh
                        # observation is about to appear, dispatch there
                        free_workers.append(j.worker)
                    else:
                        # just-in-fit: regrab the current frame's observation
                        # without waiting for a boundary
                        jobs.append(_ParJob(worker=j.worker, obs=obs, dispatch_frame=t,
                                            dispatch_time=t_done, remaining=request_cost))
                        obs_consumed = True
            else:
                elapsed = end - clock
                for j in jobs:
                    j.remaining -= elapsed * rate
                clock = end
        if not obs_consumed:
            frame["dropped_observations"] = 1
        frame["env_error"] = port.seal()
        trace.append(frame)
    return RunResult(actions=actions, trace=trace, requests=records)


# ---------------------------------------------------------------------------
# decoupled mode
# ---------------------------------------------------------------------------

def run_decoupled(policy: Policy, env, duration: int,
                  frame_interval: Optional[float] = None) -> RunResult:
    """Perception loops on its own stream; generation grabs the latest output.

    The two workers free-run in virtual time. Each perception cycle grabs
    the freshest boundary observation at its start and publishes at its
    end. Each generation cycle fetches the newest published context, but
    only starts once a context derived from a not-yet-consumed observation
    exists (re-running on identical sensor data would reproduce the same
    action). Perception outputs no generation cycle ever reads are counted
    as redundant computation.
    """
    gen = policy.generation
    perc_cost = policy.perception.total_cost
    gen_cost = gen.total_cost
    interval = frame_interval if frame_interval is not None else policy.sequential_cost
    trace = [_header("dec", interval, duration,
                     {"perception_cost": perc_cost, "generation_cost": gen_cost}, env)]
    port = _EnvPort(env, policy)
    store = ContextStore(2)
    actions: list[ActionOutput] = []
    records: list[RequestRecord] = []
    consumed_versions: set[int] = set()
    latest_obs: Optional[Observation] = None
    eps = 1e-9

    perc_start = 0.0                 # current perception cycle start
    perc_obs: Optional[Observation] = None
    gen_free = 0.0                   # time the generation worker becomes free
    gen_job: Optional[tuple] = None  # (finish, start, version, ctx, state)
    last_obs_consumed = -1
    fresh_pub_time: Optional[float] = None  # when unseen-observation data appeared

    for t in range(duration):
        now = float(t) * interval
        end = now + interval
        frame = {"type": "frame", "frame": t, "start": now, "end": end,
                 "perception": [], "generation": [], "publishes": [],
                 "prefill_calls": 0, "decode_calls": 0, "generation_cost": 0.0,
                 "dropped_observations": 0, "emissions": []}
        latest_obs = port.boundary(t)
        frame["superseded_actions"] = port.last_superseded
        if perc_obs is None:
            perc_obs = latest_obs

        while True:
            pub_time = perc_start + perc_cost
            gen_start = None
            if gen_job is None and fresh_pub_time is not None:
                gen_start = max(gen_free, fresh_pub_time)
            gen_done = gen_job[0] if gen_job is not None else None

            # starts strictly inside the frame; completions may touch the
            # boundary so their landing beats the next boundary's applies
            events = []
            if pub_time < end - eps:
                events.append(("publish", pub_time))
            if gen_start is not None and gen_start < end - eps:
                events.append(("gen_start", gen_start))
            if gen_done is not None and gen_done <= end + eps:
                events.append(("gen_done", gen_done))
            if not events:
                break
            # at ties, publishes land before a generation fetch at the same instant
            order = {"publish": 0, "gen_start": 1, "gen_done": 2}
            name, time = min(events, key=lambda e: (e[1], order[e[0]]))

            if name == "publish":
                ctx = policy.perception.perceive(perc_obs)
                version = store.publish(ctx, frame=t)
                frame["publishes"].append(version)
                frame["perception"].append({"start": perc_start, "end": time,
                                            "obs": perc_obs.id, "version": version})
                if fresh_pub_time is None and ctx.source_observation_id > last_obs_consumed:
                    fresh_pub_time = time
                perc_start = time
                perc_obs = latest_obs
            elif name == "gen_start":
                _, version, ctx = store.latest_entry()
                state = gen.initial_state(seed=int(round(time)))
                for _ in range(gen.n_iterations):
                    state = gen.step(state, ctx)
                consumed_versions.add(version)
                last_obs_consumed = ctx.source_observation_id
                fresh_pub_time = None
                gen_job = (time + gen_cost, time, version, ctx, state)
                gen_free = time + gen_cost
                if policy.kind == ContextKind.AUTOREGRESSIVE:
                    frame["prefill_calls"] += 1
                    frame["decode_calls"] += gen.n_iterations - 1
                frame["generation_cost"] += gen_cost
            else:  # gen_done
                finish, started, version, ctx, state = gen_job
                land = int(math.ceil(finish / interval - 1e-12))
                emission_frame = land - 1
                age = float(emission_frame - ctx.produced_frame)
                action = gen.finish(state, emitted_frame=emission_frame,
                                    staleness_profile=(age,) * gen.n_iterations)
                actions.append(action)
                rec = RequestRecord(observation_id=ctx.source_observation_id,
                                    birth_frame=int(started // interval),
                                    birth_time=started, completion_frame=land,
                                    completion_time=finish, jct=finish - started)
                rec.context_versions.append(version)
                records.append(rec)
                port.schedule(land, finish, action)
                frame["emissions"].append({
                    "request": rec.observation_id, "time": finish,
                    "emission_frame": emission_frame, "land_frame": land,
                    "jct": rec.jct, "action": list(action.values),
                    "staleness_min": age, "staleness_mean": age,
                    "staleness_max": age, "staleness_final": age,
                })
                gen_job = None
        frame["published_total"] = store.publish_count
        frame["consumed_total"] = len(consumed_versions)
        frame["env_error"] = port.seal()
        trace.append(frame)
    return RunResult(actions=actions, trace=trace, requests=records)
