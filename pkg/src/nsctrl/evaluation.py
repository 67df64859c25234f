"""Batch experiment driver, metrics, aggregation, and report files.

Metrics follow the benchmark's conventions: success rate is computed over all
episodes of a batch; average steps only over the successful ones (zero-step
successes included). A batch with no successes has an explicitly undefined
average-steps value, which propagates through the comparison metrics instead
of masquerading as zero.

Standard deviations are sample (n-1) throughout; single-element groups report
a std of 0 with a degenerate flag.

Report files contain no wall-clock data, so oracle- and noisy-backend runs
are byte-reproducible; live-backend runs are labeled as live in the summary.
"""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from .controller import TrainedModel
from .env import RELATIONS, TaskRelation, WorkspaceConfig
from .policies import EpisodeRecord, PolicyKind, derive_episode_seeds, run_episode
from .reasoner import ReasonerBackendConfig, make_backend, template_hash


@dataclass(frozen=True)
class BatchSpec:
    policy: PolicyKind
    backend: ReasonerBackendConfig
    task: TaskRelation
    episodes: int
    batch_seed: int
    workspace: WorkspaceConfig

    def __post_init__(self):
        if self.episodes < 1:
            raise ValueError("episodes must be >= 1")

    @property
    def model_label(self) -> str:
        if self.policy is PolicyKind.DL_ONLY:
            return "none"
        if self.backend.backend == "live":
            return self.backend.model
        return self.backend.backend


def run_batch(
    spec: BatchSpec,
    model: TrainedModel | None,
    workers: int = 1,
) -> list[EpisodeRecord]:
    """Run the batch's episodes with derived per-episode seeds.

    Deterministic for a fixed batch_seed and non-live backends, regardless of
    worker count: each episode owns its seeds and results are collected by
    index. A live backend is shared (its own semaphore limits in-flight
    requests); simulated backends are constructed per episode.
    """
    live_backend = None
    if spec.policy is not PolicyKind.DL_ONLY and spec.backend.backend == "live":
        live_backend = make_backend(spec.backend)

    def one(index: int) -> EpisodeRecord:
        env_seed, backend_seed = derive_episode_seeds(spec.batch_seed, index)
        backend = None
        if spec.policy is not PolicyKind.DL_ONLY:
            backend = live_backend or make_backend(spec.backend, seed=backend_seed)
        record = run_episode(
            spec.policy,
            backend,
            model,
            spec.task,
            spec.workspace,
            env_seed,
            label_cache=spec.backend.label_cache,
        )
        record.policy = spec.policy.value
        record.model = spec.model_label
        return record

    if workers <= 1:
        return [one(i) for i in range(spec.episodes)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(one, range(spec.episodes)))


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------

def sample_mean_std(values: list[float]) -> tuple[float, float, bool]:
    """Unweighted mean and sample (n-1) std; n=1 reports std 0, flagged."""
    if not values:
        raise ValueError("cannot aggregate an empty group")
    n = len(values)
    mean = sum(values) / n
    if n == 1:
        return mean, 0.0, True
    var = sum((v - mean) ** 2 for v in values) / (n - 1)
    return mean, math.sqrt(var), False


@dataclass
class MetricsSummary:
    policy: str
    model: str
    task: str
    episodes: int
    successes: int
    success_rate: float
    avg_steps: float | None
    sr_std: float
    steps_std: float
    parse_failures: int = 0
    backend_errors: int = 0

    def to_dict(self) -> dict:
        return {
            "policy": self.policy,
            "model": self.model,
            "task": self.task,
            "episodes": self.episodes,
            "successes": self.successes,
            "success_rate": self.success_rate,
            "avg_steps": self.avg_steps,
            "sr_std": self.sr_std,
            "steps_std": self.steps_std,
            "parse_failures": self.parse_failures,
            "backend_errors": self.backend_errors,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "MetricsSummary":
        return cls(**doc)


def summarize(records: list[EpisodeRecord]) -> MetricsSummary:
    """Success rate over all episodes; average steps over successes only."""
    if not records:
        raise ValueError("cannot summarize an empty record list")
    tasks = {r.task for r in records}
    if len(tasks) != 1:
        raise ValueError(f"records mix tasks: {sorted(t.value for t in tasks)}")
    n = len(records)
    indicators = [1.0 if r.success else 0.0 for r in records]
    successes = int(sum(indicators))
    success_steps = [float(r.steps) for r in records if r.success]
    _, sr_std, _ = sample_mean_std(indicators)
    if success_steps:
        avg_steps, steps_std, _ = sample_mean_std(success_steps)
    else:
        avg_steps, steps_std = None, 0.0
    return MetricsSummary(
        policy=records[0].policy,
        model=records[0].model,
        task=records[0].task.value,
        episodes=n,
        successes=successes,
        success_rate=successes / n,
        avg_steps=avg_steps,
        sr_std=sr_std,
        steps_std=steps_std,
        parse_failures=sum(r.parse_failures for r in records),
        backend_errors=sum(1 for r in records if r.error is not None),
    )


@dataclass
class ImprovementRow:
    """Baseline-vs-hybrid comparison for one task (Table 2 shape)."""

    task: str
    delta_sr: float
    step_reduction: float | None  # percent
    speedup: float | None         # ratio baseline/hybrid
    undefined_reason: str | None = None

    def to_dict(self) -> dict:
        return {
            "task": self.task,
            "delta_sr": self.delta_sr,
            "step_reduction": self.step_reduction,
            "speedup": self.speedup,
            "undefined_reason": self.undefined_reason,
        }


def relative_improvement(
    base: MetricsSummary, hybrid: MetricsSummary
) -> ImprovementRow:
    """Delta success rate, percent step reduction, and speedup ratio.

    Undefined average steps (no successes) or a zero denominator leave the
    affected components as None with a reason, never a fake zero.
    """
    if base.task != hybrid.task:
        raise ValueError(f"task mismatch: {base.task!r} vs {hybrid.task!r}")
    delta_sr = hybrid.success_rate - base.success_rate
    reason = None
    if base.avg_steps is None or hybrid.avg_steps is None:
        return ImprovementRow(
            base.task, delta_sr, None, None, "avg_steps undefined (no successes)"
        )
    speedup = None
    reduction = None
    if hybrid.avg_steps > 0.0:
        speedup = base.avg_steps / hybrid.avg_steps
    else:
        reason = "hybrid avg_steps is 0 (all successes at step 0)"
    if base.avg_steps > 0.0:
        reduction = (base.avg_steps - hybrid.avg_steps) / base.avg_steps * 100.0
    else:
        reason = "baseline avg_steps is 0 (all successes at step 0)"
    return ImprovementRow(base.task, delta_sr, reduction, speedup, reason)


def ablation_deltas(
    hybrid: MetricsSummary, dl_only: MetricsSummary, llm_only: MetricsSummary
) -> tuple[float, float]:
    """Success-rate contribution of the symbolic and neural components."""
    tasks = {hybrid.task, dl_only.task, llm_only.task}
    if len(tasks) != 1:
        raise ValueError(f"summaries mix tasks: {sorted(tasks)}")
    delta_symbolic = hybrid.success_rate - dl_only.success_rate
    delta_neural = hybrid.success_rate - llm_only.success_rate
    return delta_symbolic, delta_neural


@dataclass
class AggregateRow:
    """Mean +/- sample std of improvement metrics over one task's rows."""

    task: str
    rows: int
    delta_sr_mean: float
    delta_sr_std: float
    step_reduction_mean: float | None
    step_reduction_std: float | None
    speedup_mean: float | None
    speedup_std: float | None
    degenerate_std: bool

    def to_dict(self) -> dict:
        return {
            "task": self.task,
            "rows": self.rows,
            "delta_sr_mean": self.delta_sr_mean,
            "delta_sr_std": self.delta_sr_std,
            "step_reduction_mean": self.step_reduction_mean,
            "step_reduction_std": self.step_reduction_std,
            "speedup_mean": self.speedup_mean,
            "speedup_std": self.speedup_std,
            "degenerate_std": self.degenerate_std,
        }


def aggregate_across(rows: list[ImprovementRow]) -> list[AggregateRow]:
    """Group improvement rows by task (canonical order), mean +/- sample std.

    Permutation-invariant: group members are folded with plain sums. Rows
    with undefined components are excluded from that component's aggregate.
    """
    out = []
    for task in RELATIONS:
        group = [r for r in rows if r.task == task.value]
        if not group:
            continue
        dsr_mean, dsr_std, degenerate = sample_mean_std([r.delta_sr for r in group])
        reductions = [r.step_reduction for r in group if r.step_reduction is not None]
        speedups = [r.speedup for r in group if r.speedup is not None]
        red_mean = red_std = spd_mean = spd_std = None
        if reductions:
            red_mean, red_std, _ = sample_mean_std(reductions)
        if speedups:
            spd_mean, spd_std, _ = sample_mean_std(speedups)
        out.append(
            AggregateRow(
                task=task.value,
                rows=len(group),
                delta_sr_mean=dsr_mean,
                delta_sr_std=dsr_std,
                step_reduction_mean=red_mean,
                step_reduction_std=red_std,
                speedup_mean=spd_mean,
                speedup_std=spd_std,
                degenerate_std=degenerate,
            )
        )
    return out


# ---------------------------------------------------------------------------
# Report files
# ---------------------------------------------------------------------------

@dataclass
class BatchResult:
    spec: BatchSpec
    records: list[EpisodeRecord]
    summary: MetricsSummary = field(init=False)

    def __post_init__(self):
        self.summary = summarize(self.records)


EPISODE_HEADER = ["episode", "task", "policy", "model", "success", "steps", "parse_failures"]
TRACE_HEADER = ["episode", "step", "d", "d_norm"]


def _batch_stem(summary: MetricsSummary) -> str:
    return f"{summary.policy}_{summary.model}_{summary.task}"


def write_report(
    batches: list[BatchResult],
    out_dir: str | Path,
    experiment_id: str,
    improvements: list[ImprovementRow] | None = None,
    aggregates: list[AggregateRow] | None = None,
) -> Path:
    """Emit per-episode CSVs, per-step trace CSVs, and a JSON summary.

    Returns the experiment directory. JSON keys are sorted so identical runs
    diff cleanly.
    """
    exp_dir = Path(out_dir) / experiment_id
    exp_dir.mkdir(parents=True, exist_ok=True)
    live = any(b.spec.backend.backend == "live" for b in batches)

    for batch in batches:
        stem = _batch_stem(batch.summary)
        with open(exp_dir / f"{stem}.csv", "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(EPISODE_HEADER)
            for i, rec in enumerate(batch.records):
                writer.writerow(
                    [
                        i,
                        rec.task.value,
                        rec.policy,
                        rec.model,
                        int(rec.success),
                        rec.steps,
                        rec.parse_failures,
                    ]
                )
        with open(
            exp_dir / f"{stem}_trace.csv", "w", newline="", encoding="utf-8"
        ) as fh:
            writer = csv.writer(fh)
            writer.writerow(TRACE_HEADER)
            for i, rec in enumerate(batch.records):
                for step, (d, dn) in enumerate(
                    zip(rec.distance_trace, rec.normalized_trace)
                ):
                    writer.writerow([i, step, repr(d), repr(dn)])

    doc = {
        "experiment_id": experiment_id,
        "live_backend": live,
        "prompt_hashes": {
            "symbolic": template_hash("symbolic"),
            "coordinate": template_hash("coordinate"),
        },
        "rows": [b.summary.to_dict() for b in batches],
    }
    if improvements is not None:
        doc["improvements"] = [r.to_dict() for r in improvements]
    if aggregates is not None:
        doc["aggregates"] = [r.to_dict() for r in aggregates]
    with open(exp_dir / "summary.json", "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, indent=1)
        fh.write("\n")
    return exp_dir


def load_summary(path: str | Path) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)
