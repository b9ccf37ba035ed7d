"""Aggregation and comparison of run traces.

`summarize` is a pure function of the trace: repeated calls produce
byte-identical output. Jitter is defined as the coefficient of variation
(population standard deviation over mean) of inter-emission intervals; that
definition is echoed in every serialized header. Comparison tables report
ratios against a designated baseline: speedup > 1 means higher throughput
than the baseline, accuracy_ratio > 1 means lower tracking error (so the
conventional "102.7% of baseline accuracy" renders as 1.027).
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .errors import BaselineMissing, EmptyTrace, FramepipeError

METRICS_SCHEMA = 1
JITTER_DEFINITION = "stddev(intervals)/mean(intervals), population stddev"


@dataclass
class RolloutMetrics:
    schema: int
    mode: str
    engine: str
    frames: int
    emission_count: int
    emission_times: list[float]
    intervals: list[float]
    mean_interval: float
    throughput: float
    jitter: float
    jct: list[float]
    jct_mean: float
    staleness_final: list[float]
    staleness_mean: float
    staleness_max: float
    pipeline_fill_frames: Optional[int]
    redundancy_ratio: Optional[float]
    unread_fraction: Optional[float]
    dropped_observations: int
    success: Optional[bool]
    mean_error: Optional[float]
    config: dict = field(default_factory=dict)
    jitter_definition: str = JITTER_DEFINITION

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self, **kwargs) -> str:
        kwargs.setdefault("sort_keys", True)
        kwargs.setdefault("indent", 2)
        return json.dumps(self.to_dict(), **kwargs)

    @classmethod
    def from_dict(cls, data: dict) -> "RolloutMetrics":
        return cls(**{k: data[k] for k in cls.__dataclass_fields__ if k in data})


def summarize(trace: list[dict]) -> RolloutMetrics:
    """Deterministic aggregation of a completed run trace."""
    if not trace or trace[0].get("type") != "header":
        raise EmptyTrace("trace must start with a header record")
    header = trace[0]
    frames = [rec for rec in trace[1:] if rec.get("type") == "frame"]
    if not frames:
        raise EmptyTrace("trace holds no completed frames")

    emissions = [e for rec in frames for e in rec.get("emissions", ())]
    times = [e["time"] for e in emissions]
    intervals = list(np.diff(times)) if len(times) >= 2 else []
    if intervals:
        mean_interval = float(np.mean(intervals))
        throughput = 1.0 / mean_interval if mean_interval > 0 else 0.0
        jitter = float(np.std(intervals) / mean_interval) if mean_interval > 0 else 0.0
    else:
        total = frames[-1]["end"] - frames[0]["start"]
        mean_interval = float(total) if times else 0.0
        throughput = (len(times) / total) if total > 0 else 0.0
        jitter = 0.0

    jct = [e["jct"] for e in emissions]
    finals = [e["staleness_final"] for e in emissions]
    means = [e["staleness_mean"] for e in emissions]
    maxes = [e["staleness_max"] for e in emissions]

    fill = None
    if emissions and header.get("mode") == "pipe":
        fill = int(emissions[0]["emission_frame"])

    redundancy = None
    unread_fraction = None
    if header.get("mode") == "dec":
        published = frames[-1].get("published_total", 0)
        consumed = frames[-1].get("consumed_total", 0)
        if consumed:
            redundancy = float(published - consumed) / consumed
        if published:
            unread_fraction = float(published - consumed) / published

    errors = [rec["env_error"] for rec in frames if rec.get("env_error") is not None]
    mean_error = float(np.mean(errors)) if errors else None
    threshold = header.get("success_threshold")
    success = (mean_error <= threshold) if (mean_error is not None and threshold is not None) else None

    return RolloutMetrics(
        schema=METRICS_SCHEMA,
        mode=header["mode"],
        engine=header["engine"],
        frames=len(frames),
        emission_count=len(emissions),
        emission_times=[float(t) for t in times],
        intervals=[float(x) for x in intervals],
        mean_interval=mean_interval,
        throughput=throughput,
        jitter=jitter,
        jct=[float(x) for x in jct],
        jct_mean=float(np.mean(jct)) if jct else 0.0,
        staleness_final=[float(x) for x in finals],
        staleness_mean=float(np.mean(means)) if means else 0.0,
        staleness_max=float(max(maxes)) if maxes else 0.0,
        pipeline_fill_frames=fill,
        redundancy_ratio=redundancy,
        unread_fraction=unread_fraction,
        dropped_observations=int(sum(rec.get("dropped_observations", 0) for rec in frames)),
        success=success,
        mean_error=mean_error,
        config=header.get("config", {}),
    )


COMPARISON_COLUMNS = [
    "name", "mode", "throughput", "speedup", "jitter", "jct_mean",
    "mean_error", "accuracy_ratio", "success", "is_baseline",
]


@dataclass
class ComparisonTable:
    schema: int
    baseline: str
    rows: list[dict]
    jitter_definition: str = JITTER_DEFINITION

    def to_json(self) -> str:
        return json.dumps({"schema": self.schema, "baseline": self.baseline,
                           "jitter_definition": self.jitter_definition,
                           "columns": COMPARISON_COLUMNS, "rows": self.rows},
                          sort_keys=True, indent=2)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(["schema_version"] + COMPARISON_COLUMNS)
        for row in self.rows:
            writer.writerow([self.schema] + [row.get(col) for col in COMPARISON_COLUMNS])
        return buf.getvalue()

    def to_text(self) -> str:
        def fmt(value):
            if isinstance(value, float):
                return f"{value:.6g}"
            return str(value)
        header = COMPARISON_COLUMNS
        cells = [[fmt(row.get(c)) for c in header] for row in self.rows]
        widths = [max(len(h), *(len(r[i]) for r in cells)) for i, h in enumerate(header)]
        lines = ["  ".join(h.ljust(w) for h, w in zip(header, widths))]
        for r in cells:
            lines.append("  ".join(v.ljust(w) for v, w in zip(r, widths)))
        return "\n".join(lines)


def compare(runs: list[RolloutMetrics], names: Optional[list[str]] = None,
            baseline: int = 0) -> ComparisonTable:
    """Ratios of every run against the baseline run.

    Speedup uses mean emission intervals directly (interval_base /
    interval_run) so exact-integer virtual-time runs produce exact ratios;
    accuracy_ratio is baseline_error / run_error.
    """
    if not runs:
        raise BaselineMissing("no runs to compare")
    if not (0 <= baseline < len(runs)):
        raise BaselineMissing(f"baseline index {baseline} outside 0..{len(runs) - 1}")
    names = names or [f"run{i}" for i in range(len(runs))]
    engines = {run.engine for run in runs}
    if len(engines) > 1:
        raise FramepipeError(
            f"cannot compare runs from different engines: {sorted(engines)}")
    base = runs[baseline]
    rows = []
    for name, run in zip(names, runs):
        if run.mean_interval > 0 and base.mean_interval > 0:
            speedup = base.mean_interval / run.mean_interval
        else:
            speedup = (run.throughput / base.throughput) if base.throughput else None
        if base.mean_error is not None and run.mean_error is not None and run.mean_error > 0:
            accuracy_ratio = base.mean_error / run.mean_error
        else:
            accuracy_ratio = None
        rows.append({
            "name": name, "mode": run.mode, "throughput": run.throughput,
            "speedup": speedup, "jitter": run.jitter, "jct_mean": run.jct_mean,
            "mean_error": run.mean_error, "accuracy_ratio": accuracy_ratio,
            "success": run.success, "is_baseline": run is base,
        })
    return ComparisonTable(schema=METRICS_SCHEMA, baseline=names[baseline], rows=rows)


def write_trace_jsonl(trace: list[dict], path) -> None:
    with open(path, "w") as fh:
        for record in trace:
            fh.write(json.dumps(record, sort_keys=True) + "\n")


def read_metrics(path) -> RolloutMetrics:
    with open(path) as fh:
        return RolloutMetrics.from_dict(json.load(fh))
