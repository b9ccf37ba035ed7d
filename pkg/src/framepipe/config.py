"""Experiment configuration: schema, validation, defaults, and builders.

A single JSON document (versioned by schema_version) holds the policy,
environment, run, pipeline, and tuner sections. Values resolve with
precedence command-line overrides > file > packaged defaults, unknown keys
are rejected by name, and every artifact directory embeds the fully
resolved document so any virtual-time run can be reproduced byte for byte.

The packaged defaults are the calibrated tracking setup used by the
acceptance orderings: a 15-degree-per-frame circle observed with 0.02
positional noise, an agent step budget of 0.8, and a policy whose serial
request costs two frame intervals (perception 28 + generation 100 of 128
total against a 64-unit frame), so the sequential baseline emits every
second frame while the pipeline emits every frame. The pipeline section
pins fetch_offset -1, the freshness-recovery configuration; leaving it
null instead selects the kind defaults (0 for conditioning policies, -1
for autoregressive ones).
"""

from __future__ import annotations

import copy
import json
import math
from typing import Any, Callable, Optional

from .envsim import CirclePath, RandomWalkPath, TrackingEnv
from .errors import ConfigInvalid
from .executor import (PipelineConfig, RunResult, run_decoupled, run_parallel,
                       run_pipelined, run_sequential)
from .metrics import RolloutMetrics, summarize
from .policy import Policy, make_autoregressive_policy, make_conditioning_policy
from .tuner import TuneRequest

CONFIG_SCHEMA_VERSION = 1

DEFAULT_CONFIG: dict = {
    "schema_version": CONFIG_SCHEMA_VERSION,
    "policy": {
        "kind": "conditioning",
        "perception_costs": [14.0, 14.0],
        "n_iterations": 100,
        "step_cost": 1.0,
        "eta": 0.08,
        "max_action": 0.8,
        "noise_init": False,
        "l_a": 7,
        "prefill_cost": 10.0,
        "decode_cost": 1.0,
        "vision_len": 96,
        "language_len": 32,
        "latent_width": 64,
    },
    "env": {
        "path": "circle",
        "radius": 1.0,
        "omega_deg": 15.0,
        "walk_sigma": 0.05,
        "noise_sigma": 0.02,
        "max_step": 0.8,
        "success_threshold": 0.75,
        "episode_frames": 300,
        "agent_start": [0.0, 0.0],
    },
    "run": {
        "mode": "pipe",
        "engine": "virtual",
        "duration_frames": 300,
        "seed": 0,
        "frame_interval": 64.0,
        "workers": 3,
        "capacity": 1.0,
        "use_env": True,
    },
    "pipeline": {
        "pp_perception": 1,
        "pp_generation": 2,
        "fetch_offset": -1,
        "alpha": 0.0,
        "merge_autoregressive": None,
        "store_capacity": 2,
        "read_policy": "snapshot",
        "overrun_policy": "stretch",
    },
    "tune": {
        "throughput_requirement": 0.015625,
        "l_max": 6,
        "alpha_grid": [0.0, 0.25, 0.5, 1.0],
        "n_seeds": 20,
        "accuracy_frames": 300,
    },
}


def _is_number(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _number_list(v) -> bool:
    return isinstance(v, list) and all(_is_number(x) for x in v)


_VALIDATORS: dict[str, dict[str, Callable[[Any], bool]]] = {
    "policy": {
        "kind": lambda v: v in ("conditioning", "autoregressive"),
        "perception_costs": lambda v: _number_list(v) and v and all(x > 0 for x in v),
        "n_iterations": lambda v: isinstance(v, int) and v >= 1,
        "step_cost": lambda v: _is_number(v) and v > 0,
        "eta": lambda v: _is_number(v) and 0 < v < 1,
        "max_action": lambda v: _is_number(v) and v > 0,
        "noise_init": lambda v: isinstance(v, bool),
        "l_a": lambda v: isinstance(v, int) and v >= 7,
        "prefill_cost": lambda v: _is_number(v) and v > 0,
        "decode_cost": lambda v: _is_number(v) and v > 0,
        "vision_len": lambda v: isinstance(v, int) and v >= 1,
        "language_len": lambda v: isinstance(v, int) and v >= 1,
        "latent_width": lambda v: isinstance(v, int) and v >= 2,
    },
    "env": {
        "path": lambda v: v in ("circle", "random_walk"),
        "radius": lambda v: _is_number(v) and v > 0,
        "omega_deg": lambda v: _is_number(v),
        "walk_sigma": lambda v: _is_number(v) and v >= 0,
        "noise_sigma": lambda v: _is_number(v) and v >= 0,
        "max_step": lambda v: _is_number(v) and v > 0,
        "success_threshold": lambda v: _is_number(v) and v > 0,
        "episode_frames": lambda v: isinstance(v, int) and v >= 1,
        "agent_start": lambda v: _number_list(v) and len(v) == 2,
    },
    "run": {
        "mode": lambda v: v in ("seq", "dec", "par", "pipe"),
        "engine": lambda v: v in ("virtual", "wallclock"),
        "duration_frames": lambda v: isinstance(v, int) and v >= 1,
        "seed": lambda v: isinstance(v, int),
        "frame_interval": lambda v: v is None or (_is_number(v) and v > 0),
        "workers": lambda v: isinstance(v, int) and v >= 1,
        "capacity": lambda v: _is_number(v) and v > 0,
        "use_env": lambda v: isinstance(v, bool),
    },
    "pipeline": {
        "pp_perception": lambda v: isinstance(v, int) and v >= 1,
        "pp_generation": lambda v: isinstance(v, int) and v >= 1,
        "fetch_offset": lambda v: v is None or (isinstance(v, int) and v <= 0),
        "alpha": lambda v: _is_number(v),
        "merge_autoregressive": lambda v: v is None or isinstance(v, bool),
        "store_capacity": lambda v: isinstance(v, int) and v >= 2,
        "read_policy": lambda v: v in ("snapshot", "live"),
        "overrun_policy": lambda v: v in ("stretch", "drop"),
    },
    "tune": {
        "throughput_requirement": lambda v: _is_number(v) and v > 0,
        "l_max": lambda v: isinstance(v, int) and v >= 2,
        "alpha_grid": lambda v: _number_list(v) and len(v) >= 1,
        "n_seeds": lambda v: isinstance(v, int) and v >= 1,
        "accuracy_frames": lambda v: isinstance(v, int) and v >= 1,
    },
}


def validate_config(data: dict) -> None:
    """Reject unknown keys and out-of-range values, naming the offender."""
    if not isinstance(data, dict):
        raise ConfigInvalid("configuration root must be an object")
    version = data.get("schema_version", CONFIG_SCHEMA_VERSION)
    if version != CONFIG_SCHEMA_VERSION:
        raise ConfigInvalid(f"schema_version: unsupported value {version!r}")
    for section, content in data.items():
        if section == "schema_version":
            continue
        if section not in _VALIDATORS:
            raise ConfigInvalid(f"unknown configuration section: {section!r}")
        if not isinstance(content, dict):
            raise ConfigInvalid(f"{section}: must be an object")
        for key, value in content.items():
            check = _VALIDATORS[section].get(key)
            if check is None:
                raise ConfigInvalid(f"unknown configuration key: {section}.{key}")
            if not check(value):
                raise ConfigInvalid(f"invalid value for {section}.{key}: {value!r}")


def _deep_merge(base: dict, override: dict) -> dict:
    merged = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _deep_merge(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def resolve_config(file_data: Optional[dict] = None,
                   overrides: Optional[dict] = None) -> dict:
    """defaults <- file <- overrides, validated at every layer."""
    resolved = copy.deepcopy(DEFAULT_CONFIG)
    for layer in (file_data, overrides):
        if layer:
            validate_config(layer)
            resolved = _deep_merge(resolved, layer)
    validate_config(resolved)
    cross_validate(resolved)
    return resolved


def cross_validate(cfg: dict) -> None:
    run, env, pipe, pol = cfg["run"], cfg["env"], cfg["pipeline"], cfg["policy"]
    if run["use_env"] and run["duration_frames"] > env["episode_frames"]:
        raise ConfigInvalid("run.duration_frames: exceeds env.episode_frames")
    if pipe["pp_perception"] > len(pol["perception_costs"]):
        raise ConfigInvalid("pipeline.pp_perception: more stages than perception layers")
    n = pol["l_a"] if pol["kind"] == "autoregressive" else pol["n_iterations"]
    if pipe["alpha"] == 0.0 and pipe["pp_generation"] > n:
        raise ConfigInvalid("pipeline.pp_generation: more stages than iterations at alpha=0")
    offset = pipe["fetch_offset"]
    if offset is not None and -offset >= pipe["store_capacity"]:
        raise ConfigInvalid("pipeline.fetch_offset: |offset| must be below store_capacity")


def parse_override(expr: str) -> dict:
    """`section.key=value` with the value parsed as JSON when possible."""
    if "=" not in expr:
        raise ConfigInvalid(f"override {expr!r} must look like section.key=value")
    path, raw = expr.split("=", 1)
    keys = path.strip().split(".")
    if not all(keys):
        raise ConfigInvalid(f"override {expr!r} has an empty key component")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    node: dict = {}
    cursor = node
    for key in keys[:-1]:
        cursor[key] = {}
        cursor = cursor[key]
    cursor[keys[-1]] = value
    return node


# -- object builders -----------------------------------------------------------


def build_policy(cfg: dict) -> Policy:
    pol = cfg["policy"]
    if pol["kind"] == "conditioning":
        return make_conditioning_policy(
            layer_costs=tuple(pol["perception_costs"]),
            n_iterations=pol["n_iterations"], step_cost=pol["step_cost"],
            eta=pol["eta"], max_action=pol["max_action"],
            noise_init=pol["noise_init"])
    return make_autoregressive_policy(
        layer_costs=tuple(pol["perception_costs"]), l_a=pol["l_a"],
        prefill_cost=pol["prefill_cost"], decode_cost=pol["decode_cost"],
        max_action=pol["max_action"], vision_len=pol["vision_len"],
        language_len=pol["language_len"], latent_width=pol["latent_width"])


def build_env(cfg: dict, seed: Optional[int] = None) -> TrackingEnv:
    env = cfg["env"]
    seed = cfg["run"]["seed"] if seed is None else seed
    if env["path"] == "circle":
        path = CirclePath(radius=env["radius"], omega=math.radians(env["omega_deg"]))
    else:
        path = RandomWalkPath(step_sigma=env["walk_sigma"], seed=seed)
    return TrackingEnv(path=path, noise_sigma=env["noise_sigma"],
                       max_step=env["max_step"],
                       success_threshold=env["success_threshold"],
                       episode_frames=env["episode_frames"], seed=seed,
                       agent_start=tuple(env["agent_start"]))


def build_pipeline_config(cfg: dict) -> PipelineConfig:
    pipe = cfg["pipeline"]
    return PipelineConfig(
        pp_perception=pipe["pp_perception"], pp_generation=pipe["pp_generation"],
        fetch_offset=pipe["fetch_offset"], alpha=pipe["alpha"],
        frame_interval=cfg["run"]["frame_interval"],
        merge_autoregressive=pipe["merge_autoregressive"],
        store_capacity=pipe["store_capacity"], read_policy=pipe["read_policy"],
        overrun_policy=pipe["overrun_policy"])


def build_tune_request(cfg: dict) -> TuneRequest:
    tune = cfg["tune"]
    return TuneRequest(
        throughput_requirement=tune["throughput_requirement"],
        l_max=tune["l_max"], alpha_grid=tuple(tune["alpha_grid"]),
        seeds=tuple(range(tune["n_seeds"])),
        accuracy_frames=tune["accuracy_frames"])


def run_experiment(cfg: dict) -> tuple[RunResult, RolloutMetrics, Optional[TrackingEnv]]:
    """Dispatch the configured mode on the virtual-time engine."""
    run = cfg["run"]
    if run["engine"] != "virtual":
        raise ConfigInvalid("run.engine: run_experiment drives the virtual engine; "
                            "use the wallclock module directly for wall-clock runs")
    policy = build_policy(cfg)
    env = build_env(cfg) if run["use_env"] else None
    duration = run["duration_frames"]
    interval = run["frame_interval"]
    mode = run["mode"]
    if mode == "pipe":
        result = run_pipelined(build_pipeline_config(cfg), policy, env, duration)
    elif mode == "seq":
        result = run_sequential(policy, env, duration, frame_interval=interval)
    elif mode == "par":
        result = run_parallel(policy, env, run["workers"], duration,
                              frame_interval=interval, capacity=run["capacity"])
    else:
        result = run_decoupled(policy, env, duration, frame_interval=interval)
    metrics = summarize(result.trace)
    metrics.config = {"experiment": cfg, "trace_config": metrics.config}
    return result, metrics, env
