"""Acceptance gate: one test per shipping criterion, each printing a verdict.

Run with `pytest tests/test_acceptance.py -v -s` to see the PASS lines.
All virtual-time assertions are exact; seeded-simulation assertions use the
calibrated tracking configuration (15 deg/frame circle, 0.02 observation
noise, 0.8 step budget, serial request = 2 frame intervals) with the seed
set 0..19.
"""

import json
import math
import time

import numpy as np
import pytest

from framepipe.cli import main
from framepipe.envsim import CirclePath, TrackingEnv, run_uniform_staleness
from framepipe.executor import (PipelineConfig, run_parallel, run_pipelined,
                                run_sequential)
from framepipe.metrics import summarize
from framepipe.partition import split_generation
from framepipe.policy import make_autoregressive_policy, make_conditioning_policy
from framepipe.transformer import CausalTransformer, TransformerConfig
from framepipe.wallclock import run_parallel_wallclock, run_pipelined_wallclock

SEEDS = tuple(range(20))


def calibrated_policy():
    return make_conditioning_policy(layer_costs=(14.0, 14.0), n_iterations=100,
                                    step_cost=1.0, eta=0.08, max_action=0.8)


def calibrated_env(seed, omega_deg=15.0, sigma=0.02):
    return TrackingEnv(path=CirclePath(radius=1.0, omega=math.radians(omega_deg)),
                       noise_sigma=sigma, max_step=0.8, episode_frames=300, seed=seed)


def report(name, detail):
    print(f"ACCEPTANCE {name}: PASS  [{detail}]")


def test_criterion_1_partition_goldens():
    start = time.perf_counter()
    full_uniform = split_generation(100, 4, 0.0)
    skew_half = split_generation(100, 4, 0.5)
    skew_one = split_generation(100, 5, 1.0)
    uniform_five = split_generation(100, 5, 0.0)
    elapsed = time.perf_counter() - start

    assert full_uniform == [25, 25, 25, 25]
    assert skew_half[-1] == 46
    assert skew_one[-1] == 64
    assert uniform_five == [20, 20, 20, 20, 20]
    assert elapsed < 1e-3
    report("1 partition goldens",
           f"[25x4], last(0.5)=46, last(1.0)=64, uniform 20/100, {elapsed * 1e6:.0f}us")


def test_criterion_2_prefill_merge_equivalence():
    start = time.perf_counter()
    rng = np.random.default_rng(20240911)
    worst = 0.0
    trials = 100
    models = {seed: CausalTransformer(TransformerConfig(seed=seed)) for seed in range(5)}
    for _ in range(trials):
        model = models[int(rng.integers(0, 5))]
        n = int(rng.integers(2, 40))
        tokens = rng.integers(0, model.config.vocab_size, n)
        cut = int(rng.integers(1, n))
        merged, _ = model.prefill(tokens)
        separate, _ = model.prefill(tokens[:cut])
        rel = np.abs(merged[:cut] - separate) / (np.abs(separate) + 1e-12)
        worst = max(worst, float(rel.max()))
    assert worst <= 1e-5

    # causal isolation holds exactly: perturbing a later token leaves every
    # earlier hidden state bit-identical
    model = models[0]
    tokens = rng.integers(0, model.config.vocab_size, 24)
    base, _ = model.prefill(tokens)
    mutated = tokens.copy()
    mutated[17] = (mutated[17] + 5) % model.config.vocab_size
    changed, _ = model.prefill(mutated)
    assert np.array_equal(base[:17], changed[:17])

    elapsed = time.perf_counter() - start
    assert elapsed < 30.0
    report("2 prefill-merge equivalence",
           f"{trials} triples, worst rel err {worst:.2e} <= 1e-5, isolation exact, "
           f"{elapsed:.1f}s")


def test_criterion_3_throughput_law():
    policy = make_conditioning_policy(layer_costs=(1.0, 1.0), n_iterations=4,
                                      step_cost=1.0)
    seq = summarize(run_sequential(policy, None, 60).trace)
    checks = []
    for pp_p, pp_g in ((2, 4), (1, 2)):
        cfg = PipelineConfig(pp_perception=pp_p, pp_generation=pp_g, fetch_offset=-1)
        m = summarize(run_pipelined(cfg, policy, None, 60).trace)
        l_total = pp_p + pp_g
        speedup = seq.mean_interval / m.mean_interval
        assert speedup == float(l_total)
        assert m.pipeline_fill_frames == l_total - 1
        checks.append(f"({pp_p},{pp_g}): {speedup:g}x fill {m.pipeline_fill_frames}")
    # a second policy shape exercising L = 6 with a single perception stage
    policy_b = make_conditioning_policy(layer_costs=(1.0,), n_iterations=5, step_cost=1.0)
    seq_b = summarize(run_sequential(policy_b, None, 60).trace)
    cfg = PipelineConfig(pp_perception=1, pp_generation=5, fetch_offset=-1)
    m = summarize(run_pipelined(cfg, policy_b, None, 60).trace)
    assert seq_b.mean_interval / m.mean_interval == 6.0
    assert m.pipeline_fill_frames == 5
    checks.append("(1,5): 6x fill 5")
    report("3 throughput law", "; ".join(checks))


def test_criterion_4_staleness_accounting():
    policy = calibrated_policy()
    # exact final-stage ages per fetch offset
    for offset, expected in ((-1, 1.0), (0, 0.0)):
        cfg = PipelineConfig(pp_perception=1, pp_generation=2, fetch_offset=offset,
                             frame_interval=64.0)
        m = summarize(run_pipelined(cfg, policy, None, 120).trace)
        assert set(m.staleness_final) == {expected}
    # calibrated shared-capacity inflation: W = 2 doubles the serial JCT
    seq = summarize(run_sequential(policy, None, 300, frame_interval=64.0).trace)
    par = summarize(run_parallel(policy, None, 2, 300, frame_interval=64.0).trace)
    ratio = par.jct_mean / seq.jct_mean
    assert abs(ratio - 2.0) <= 0.05
    # context age tracks W x the serial JCT measured in frames (emission-time
    # age sits exactly one frame below the landing span)
    serial_frames = seq.jct_mean / 64.0
    for w, metrics in ((2, par),
                       (3, summarize(run_parallel(policy, None, 3, 300,
                                                  frame_interval=64.0).trace))):
        steady_ages = metrics.staleness_final[3 * w:]
        assert steady_ages
        assert all(w * serial_frames - 1 <= age <= w * serial_frames
                   for age in steady_ages)
    report("4 staleness accounting",
           f"final age 1 at offset -1, 0 at offset 0; JCT ratio W=2: {ratio:.4f}; "
           f"pool ages track W x serial JCT")


def test_criterion_5_accuracy_orderings():
    start = time.perf_counter()
    policy = calibrated_policy()
    seq_err, pipe_err, par_err = [], [], []
    for seed in SEEDS:
        seq_err.append(summarize(
            run_sequential(policy, calibrated_env(seed), 300, frame_interval=64.0)
            .trace).mean_error)
        cfg = PipelineConfig(pp_perception=1, pp_generation=2, fetch_offset=-1,
                             frame_interval=64.0)
        pipe_err.append(summarize(
            run_pipelined(cfg, policy, calibrated_env(seed), 300).trace).mean_error)
        par_err.append(summarize(
            run_parallel(policy, calibrated_env(seed), 3, 300, frame_interval=64.0)
            .trace).mean_error)
    seq_m, pipe_m, par_m = map(np.mean, (seq_err, pipe_err, par_err))
    assert pipe_m <= 1.10 * seq_m
    assert par_m >= 1.50 * seq_m

    # staleness monotonicity on the noiseless circle, uniform age 0..5
    errors = []
    for age in range(6):
        env = calibrated_env(0, sigma=0.0)
        errors.append(run_uniform_staleness(env, policy, age)["mean_error"])
    assert all(errors[k] >= errors[k - 1] for k in range(1, 6))
    assert all(errors[k] > errors[k - 1] for k in range(1, 6))
    elapsed = time.perf_counter() - start
    assert elapsed < 60.0
    report("5 accuracy orderings",
           f"pipe/seq {pipe_m / seq_m:.3f} <= 1.10; par/seq {par_m / seq_m:.2f} >= 1.50; "
           f"ages {', '.join(f'{e:.3f}' for e in errors)}; {elapsed:.1f}s")


def test_criterion_6_skewness_tradeoff():
    policy = make_conditioning_policy(layer_costs=(128.0, 128.0), n_iterations=100,
                                      step_cost=1.0, max_action=0.8)

    def fast_env(seed):
        return TrackingEnv(path=CirclePath(radius=1.0, omega=math.radians(24.0)),
                           noise_sigma=0.02, max_step=0.8, episode_frames=300, seed=seed)

    results = {}
    for alpha in (0.0, 1.0):
        cfg = PipelineConfig(pp_perception=1, pp_generation=5, fetch_offset=0,
                             alpha=alpha)
        throughput = summarize(run_pipelined(cfg, policy, None, 40).trace).throughput
        errors = [summarize(run_pipelined(cfg, policy, fast_env(s), 300).trace).mean_error
                  for s in SEEDS]
        results[alpha] = (throughput, float(np.mean(errors)))
    thr_ratio = results[1.0][0] / results[0.0][0]
    assert results[1.0][1] < results[0.0][1]          # accuracy(alpha=1) better
    assert thr_ratio >= 0.85
    report("6 skewness trade-off",
           f"error {results[1.0][1]:.4f} < {results[0.0][1]:.4f}; "
           f"throughput ratio {thr_ratio:.4f} >= 0.85")


def test_criterion_7_jitter_ordering():
    # virtual-time FixedInterval jitter is exactly zero
    policy = calibrated_policy()
    cfg = PipelineConfig(pp_perception=1, pp_generation=2, fetch_offset=-1,
                         frame_interval=64.0)
    virtual = summarize(run_pipelined(cfg, policy, None, 120).trace)
    assert virtual.jitter == 0.0

    # wall clock, same host and workload: paced pipeline vs four contending
    # workers
    wall_policy = make_conditioning_policy(layer_costs=(10.0, 10.0), n_iterations=4,
                                           step_cost=5.0)
    wcfg = PipelineConfig(pp_perception=2, pp_generation=2, fetch_offset=-1)
    pipe = summarize(run_pipelined_wallclock(wcfg, wall_policy, duration=80,
                                             seconds_per_unit=3e-4,
                                             interval_seconds=0.025))
    par = summarize(run_parallel_wallclock(wall_policy, workers=4, duration=80,
                                           seconds_per_unit=3e-4,
                                           interval_seconds=0.006))
    assert pipe.jitter < par.jitter
    report("7 jitter ordering",
           f"virtual jitter 0 exactly; wallclock pipe {pipe.jitter:.3f} < "
           f"par(W=4) {par.jitter:.3f}")


def test_criterion_8_merged_generation_cost_saving():
    pp_g = 4
    intervals = {}
    for l_a in (7, 14, 28):
        policy = make_autoregressive_policy(layer_costs=(14.0, 14.0), l_a=l_a,
                                            prefill_cost=10.0, decode_cost=1.0)
        merged_cfg = PipelineConfig(pp_perception=1, pp_generation=pp_g,
                                    fetch_offset=-1, merge_autoregressive=True)
        trace = run_pipelined(merged_cfg, policy, None, 40).trace
        steady = [f for f in trace[1:] if len(f["generation"]) == pp_g]
        assert steady and all(f["prefill_calls"] == 1 for f in steady)
        intervals[l_a] = summarize(trace).mean_interval

        unmerged_cfg = PipelineConfig(pp_perception=1, pp_generation=pp_g,
                                      fetch_offset=-1, merge_autoregressive=False)
        untrace = run_pipelined(unmerged_cfg, policy, None, 40).trace
        unsteady = [f for f in untrace[1:] if len(f["generation"]) == pp_g]
        assert unsteady and all(f["prefill_calls"] == pp_g for f in unsteady)
    assert intervals[7] == intervals[14] == intervals[28]

    seq_interval = {}
    for l_a in (7, 14, 28):
        policy = make_autoregressive_policy(layer_costs=(14.0, 14.0), l_a=l_a,
                                            prefill_cost=10.0, decode_cost=1.0)
        seq_interval[l_a] = summarize(run_sequential(policy, None, 30).trace).mean_interval
    # sequential request time is affine in the response length (decode cost 1)
    assert seq_interval[14] - seq_interval[7] == 7.0
    assert seq_interval[28] - seq_interval[14] == 14.0
    report("8 merged-generation cost saving",
           f"1 vs {pp_g} prefills per frame; merged interval {intervals[7]:g} "
           f"invariant over l_a in (7,14,28); sequential degrades linearly")


def test_criterion_9_determinism_and_reproducibility(tmp_path, capsys):
    first = tmp_path / "first"
    second = tmp_path / "second"
    assert main(["run", "--out", str(first), "--set", "run.duration_frames=150"]) == 0
    assert main(["run", "--out", str(second), "--config",
                 str(first / "config.resolved.json")]) == 0
    identical = []
    for name in ("metrics.json", "trace.jsonl", "summary.txt", "episode.csv",
                 "config.resolved.json"):
        assert (first / name).read_bytes() == (second / name).read_bytes()
        identical.append(name)
    assert main(["verify"]) == 0
    capsys.readouterr()
    report("9 determinism & reproducibility",
           f"byte-identical rerun of {', '.join(identical)}; verify exit 0")
