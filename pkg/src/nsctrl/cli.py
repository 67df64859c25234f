"""Command-line entry point: dataset generation, training, evaluation, comparison.

Exit codes are a stable scripting contract:
  0  success
  2  configuration error (also used by argparse for bad usage)
  3  numeric failure (training loss became non-finite)
  4  live reasoner endpoint unreachable
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from .config import (
    ConfigError,
    ExperimentConfig,
    load_config,
    parse_policy_list,
    parse_task_list,
)
from .controller import TrainedModel, load_model, save_model
from .env import RELATIONS, WorkspaceConfig
from .evaluation import (
    AggregateRow,
    BatchResult,
    BatchSpec,
    ImprovementRow,
    MetricsSummary,
    aggregate_across,
    load_summary,
    relative_improvement,
    run_batch,
    sample_mean_std,
    write_report,
)
from .policies import PolicyKind
from .reasoner import (
    BackendError,
    LiveBackend,
    QueryContext,
    ReasonerBackendConfig,
)
from .env import EnvState, TaskRelation
from .training import (
    TrainingDiverged,
    generate_dataset,
    read_dataset_csv,
    train,
    write_dataset_csv,
    write_loss_curve,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_BACKEND = 4


def _print_effective_config(cfg: ExperimentConfig) -> None:
    for line in cfg.dump_lines():
        print(f"# config {line}")


def _apply_common_overrides(cfg: ExperimentConfig, args) -> ExperimentConfig:
    if getattr(args, "out", None):
        cfg = replace(cfg, out_dir=args.out)
    return cfg


def _apply_eval_overrides(cfg: ExperimentConfig, args) -> ExperimentConfig:
    reasoner = cfg.reasoner
    if args.backend:
        reasoner = replace(reasoner, backend=args.backend)
    if args.error_rate is not None:
        reasoner = replace(reasoner, error_rate=args.error_rate)
    if args.endpoint:
        reasoner = replace(reasoner, endpoint=args.endpoint)
    cfg = replace(cfg, reasoner=reasoner)
    if args.policy:
        cfg = replace(cfg, policies=parse_policy_list(args.policy))
    if args.task:
        cfg = replace(cfg, tasks=parse_task_list(args.task))
    if args.model:
        cfg = replace(cfg, models=tuple(m.strip() for m in args.model.split(",")))
    if args.episodes is not None:
        cfg = replace(cfg, episodes=args.episodes)
    if args.seed is not None:
        cfg = replace(cfg, batch_seed=args.seed)
    if args.workers is not None:
        cfg = replace(cfg, workers=args.workers)
    return cfg


def cmd_gen_data(args) -> int:
    cfg = load_config(args.config)
    cfg = _apply_common_overrides(cfg, args)
    if args.seed is not None:
        cfg = replace(cfg, training=replace(cfg.training, seed=args.seed))
    _print_effective_config(cfg)
    samples = generate_dataset(cfg.training, cfg.workspace)
    Path(cfg.out_dir).mkdir(parents=True, exist_ok=True)
    write_dataset_csv(samples, cfg.dataset_path)
    print(f"wrote {len(samples)} samples (seed {cfg.training.seed}) to {cfg.dataset_path}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    cfg = _apply_common_overrides(cfg, args)
    if args.seed is not None:
        cfg = replace(cfg, training=replace(cfg.training, seed=args.seed))
    _print_effective_config(cfg)
    samples = None
    if cfg.train_from_dataset_file:
        if not cfg.dataset_path.exists():
            raise ConfigError(f"dataset file not found: {cfg.dataset_path}")
        samples = read_dataset_csv(cfg.dataset_path)
    result = train(cfg.training, cfg.workspace, samples=samples)
    Path(cfg.out_dir).mkdir(parents=True, exist_ok=True)
    save_model(result.model, cfg.model_path)
    write_loss_curve(result.epoch_losses, cfg.loss_curve_path)
    print(f"model written to {cfg.model_path}")
    print(f"final epoch loss: {result.epoch_losses[-1]!r}")
    return EXIT_OK


def _preflight_live(reasoner_cfg: ReasonerBackendConfig, ws: WorkspaceConfig) -> None:
    backend = LiveBackend(reasoner_cfg)
    probe_state = EnvState(0.0, 0.0, 0.0, 0.0)
    ctx = QueryContext(TaskRelation.RIGHT_OF, probe_state, ws, "symbolic")
    backend.query("ping", ctx)


def cmd_eval(args) -> int:
    cfg = load_config(args.config)
    cfg = _apply_common_overrides(cfg, args)
    cfg = _apply_eval_overrides(cfg, args)
    _print_effective_config(cfg)

    model: TrainedModel | None = None
    needs_model = any(p is not PolicyKind.LLM_ONLY for p in cfg.policies)
    if needs_model:
        model_path = Path(args.model_file) if args.model_file else cfg.model_path
        if not model_path.exists():
            raise ConfigError(
                f"trained model not found: {model_path} (run 'nsctrl train' first)"
            )
        model = load_model(model_path)
        if model.delta_max != cfg.workspace.max_step:
            print(
                f"warning: model was trained with max_step {model.delta_max}, "
                f"workspace uses {cfg.workspace.max_step}",
                file=sys.stderr,
            )

    if cfg.reasoner.backend == "live" and any(
        p is not PolicyKind.DL_ONLY for p in cfg.policies
    ):
        try:
            _preflight_live(cfg.reasoner, cfg.workspace)
        except BackendError as exc:
            print(
                f"live endpoint unreachable: {cfg.reasoner.endpoint} ({exc})",
                file=sys.stderr,
            )
            return EXIT_BACKEND

    batches: list[BatchResult] = []
    for policy in cfg.policies:
        if policy is PolicyKind.DL_ONLY or cfg.reasoner.backend != "live":
            model_names = [cfg.reasoner.model]
        else:
            model_names = list(cfg.models)
        for model_name in model_names:
            reasoner_cfg = replace(cfg.reasoner, model=model_name)
            for task in cfg.tasks:
                spec = BatchSpec(
                    policy=policy,
                    backend=reasoner_cfg,
                    task=task,
                    episodes=cfg.episodes,
                    batch_seed=cfg.batch_seed,
                    workspace=cfg.workspace,
                )
                records = run_batch(spec, model, workers=cfg.workers)
                batches.append(BatchResult(spec=spec, records=records))

    exp_dir = write_report(batches, cfg.out_dir, cfg.experiment_id)
    print(f"report written to {exp_dir}")
    print(f"{'model':<10} {'policy':<9} {'task':<9} {'n':>4} {'SR':>6} {'AS':>8}")
    for batch in batches:
        s = batch.summary
        avg = f"{s.avg_steps:.2f}" if s.avg_steps is not None else "undef"
        print(
            f"{s.model:<10} {s.policy:<9} {s.task:<9} {s.episodes:>4} "
            f"{s.success_rate:>6.2f} {avg:>8}"
        )
    return EXIT_OK


def _rows_from_summary(doc: dict) -> list[MetricsSummary]:
    return [MetricsSummary.from_dict(row) for row in doc.get("rows", [])]


def _pick_policy(rows: list[MetricsSummary], wanted: str, run_label: str) -> str:
    present = sorted({r.policy for r in rows})
    if wanted in present:
        return wanted
    if len(present) == 1:
        return present[0]
    raise ConfigError(
        f"{run_label} has no {wanted!r} rows; present policies: {present} "
        "(use --base-policy/--hybrid-policy)"
    )


def cmd_compare(args) -> int:
    doc_a = load_summary(Path(args.run_a) / "summary.json")
    doc_b = load_summary(Path(args.run_b) / "summary.json")
    rows_a = _rows_from_summary(doc_a)
    rows_b = _rows_from_summary(doc_b)
    base_policy = args.base_policy or _pick_policy(rows_a, "llm_only", "run A")
    hybrid_policy = args.hybrid_policy or _pick_policy(rows_b, "llm_dl", "run B")

    base_rows = [r for r in rows_a if r.policy == base_policy]
    hybrid_rows = [r for r in rows_b if r.policy == hybrid_policy]
    improvements: list[ImprovementRow] = []
    for base in base_rows:
        for hybrid in hybrid_rows:
            if base.task == hybrid.task and base.model == hybrid.model:
                row = relative_improvement(base, hybrid)
                row.model = base.model
                improvements.append(row)
    if not improvements:
        base_tasks = sorted({r.task for r in base_rows})
        hybrid_tasks = sorted({r.task for r in hybrid_rows})
        raise ConfigError(
            f"no comparable (model, task) rows: run A {base_policy} tasks "
            f"{base_tasks} vs run B {hybrid_policy} tasks {hybrid_tasks}"
        )

    aggregates = aggregate_across(improvements)
    ablation = _ablation_section(rows_a + rows_b)

    out_dir = Path(args.out or "compare")
    out_dir.mkdir(parents=True, exist_ok=True)
    doc = {
        "base_run": str(args.run_a),
        "hybrid_run": str(args.run_b),
        "base_policy": base_policy,
        "hybrid_policy": hybrid_policy,
        "rows": [r.to_dict() | {"model": r.model} for r in improvements],
        "aggregates": [a.to_dict() for a in aggregates],
    }
    if ablation is not None:
        doc["ablation"] = ablation
    else:
        print("notice: ablation section omitted (needs llm_dl, dl_only and llm_only rows)")
    import json

    with open(out_dir / "compare.json", "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, indent=1)
        fh.write("\n")
    _write_compare_csv(improvements, aggregates, out_dir / "compare.csv")
    print(f"comparison written to {out_dir}")
    for agg in aggregates:
        red = (
            f"{agg.step_reduction_mean:.1f}%"
            if agg.step_reduction_mean is not None
            else "undef"
        )
        spd = f"{agg.speedup_mean:.2f}x" if agg.speedup_mean is not None else "undef"
        print(
            f"{agg.task:<9} dSR {agg.delta_sr_mean:+.3f} "
            f"step reduction {red} speedup {spd}"
        )
    return EXIT_OK


def _ablation_section(rows: list[MetricsSummary]) -> dict | None:
    """Per-task and aggregate success-rate deltas; None if a policy is missing."""
    needed = {"llm_dl", "dl_only", "llm_only"}
    if needed - {r.policy for r in rows}:
        return None
    per_task = []
    for task in RELATIONS:
        hybrid = [r.success_rate for r in rows if r.policy == "llm_dl" and r.task == task.value]
        dl = [r.success_rate for r in rows if r.policy == "dl_only" and r.task == task.value]
        llm = [r.success_rate for r in rows if r.policy == "llm_only" and r.task == task.value]
        if not (hybrid and dl and llm):
            continue
        hybrid_sr = sample_mean_std(hybrid)[0]
        per_task.append(
            {
                "task": task.value,
                "delta_symbolic": hybrid_sr - sample_mean_std(dl)[0],
                "delta_neural": hybrid_sr - sample_mean_std(llm)[0],
            }
        )
    if not per_task:
        return None
    return {
        "per_task": per_task,
        "aggregate": {
            "delta_symbolic": sample_mean_std(
                [t["delta_symbolic"] for t in per_task]
            )[0],
            "delta_neural": sample_mean_std([t["delta_neural"] for t in per_task])[0],
        },
    }


def _write_compare_csv(
    improvements: list[ImprovementRow],
    aggregates: list[AggregateRow],
    path: Path,
) -> None:
    import csv

    def fmt(v):
        return "" if v is None else repr(v)

    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["kind", "task", "model", "delta_sr", "step_reduction", "speedup"])
        for row in improvements:
            writer.writerow(
                ["row", row.task, row.model, repr(row.delta_sr),
                 fmt(row.step_reduction), fmt(row.speedup)]
            )
        for agg in aggregates:
            writer.writerow(
                ["aggregate", agg.task, "", repr(agg.delta_sr_mean),
                 fmt(agg.step_reduction_mean), fmt(agg.speedup_mean)]
            )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nsctrl",
        description="Planar spatial-relation control benchmark",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="experiment config file (INI blocks)")
        p.add_argument("--out", help="output directory override")
        p.add_argument("--seed", type=int, help="seed override")

    p_gen = sub.add_parser("gen-data", help="generate the training dataset CSV")
    common(p_gen)
    p_gen.set_defaults(func=cmd_gen_data)

    p_train = sub.add_parser("train", help="train the delta controller")
    common(p_train)
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", help="run the evaluation matrix")
    common(p_eval)
    p_eval.add_argument("--policy", help="comma-separated policies to evaluate")
    p_eval.add_argument("--model", help="comma-separated model names (live backend)")
    p_eval.add_argument("--task", help="comma-separated tasks")
    p_eval.add_argument("--episodes", type=int, help="episodes per batch")
    p_eval.add_argument("--backend", choices=["oracle", "noisy", "live"],
                        help="reasoner backend")
    p_eval.add_argument("--error-rate", type=float, dest="error_rate",
                        help="noisy backend wrong-label probability")
    p_eval.add_argument("--endpoint", help="live backend URL")
    p_eval.add_argument("--workers", type=int, help="concurrent episode workers")
    p_eval.add_argument("--model-file", dest="model_file",
                        help="trained model file (default: <out>/model.json)")
    p_eval.set_defaults(func=cmd_eval)

    p_cmp = sub.add_parser("compare", help="compare two evaluation runs")
    p_cmp.add_argument("run_a", help="baseline run directory (holds summary.json)")
    p_cmp.add_argument("run_b", help="hybrid run directory (holds summary.json)")
    p_cmp.add_argument("--out", help="output directory (default: compare)")
    p_cmp.add_argument("--base-policy", dest="base_policy")
    p_cmp.add_argument("--hybrid-policy", dest="hybrid_policy")
    p_cmp.set_defaults(func=cmd_compare)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TrainingDiverged as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except BackendError as exc:
        print(f"backend failure: {exc}", file=sys.stderr)
        return EXIT_BACKEND


if __name__ == "__main__":
    raise SystemExit(main())
