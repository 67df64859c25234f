"""Control policies and the closed-loop episode runner.

Three paradigms share one loop:

* llm_only -- a reasoner backend predicts absolute target coordinates; the
  displacement is the full, unclamped jump to the prediction (then the
  workspace clips the resulting position).
* dl_only  -- the trained delta controller conditioned on the ground-truth
  task label; no reasoner involved.
* llm_dl   -- a reasoner backend predicts the task label, which conditions
  the same delta controller.

The goal predicate is checked before the first action, so an episode that
starts satisfied succeeds with zero steps and never touches a backend.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .controller import TrainedModel
from .env import (
    Action,
    EnvState,
    TaskRelation,
    WorkspaceConfig,
    apply_action,
    distance_to_goal,
    normalized_distance,
    sample_initial_state,
)
from .reasoner import (
    BackendError,
    ParseFailure,
    PromptContext,
    QueryContext,
    build_coordinate_prompt,
    build_symbolic_prompt,
    instruction_for,
    parse_coordinate_response,
    parse_symbolic_response,
    serialize_state,
)


class PolicyKind(enum.Enum):
    LLM_ONLY = "llm_only"
    DL_ONLY = "dl_only"
    LLM_DL = "llm_dl"

    @classmethod
    def from_name(cls, name: str) -> "PolicyKind":
        for kind in cls:
            if kind.value == name:
                return kind
        raise ValueError(f"unknown policy: {name!r}")


@dataclass
class EpisodeRecord:
    """Per-episode trace and outcome."""

    task: TaskRelation
    initial_state: EnvState
    final_state: EnvState
    success: bool
    steps: int
    distance_trace: list[float]
    normalized_trace: list[float]
    reasoner_latencies: list[float]
    parse_failures: int
    policy: str = ""
    model: str = ""
    error: str | None = None

    def __post_init__(self):
        if self.steps != len(self.distance_trace) - 1:
            raise ValueError("steps must equal len(distance_trace) - 1")
        if self.success != (self.distance_trace[-1] == 0.0):
            raise ValueError("success flag inconsistent with final distance")


@dataclass
class StepOutcome:
    """Action plus the bookkeeping the episode loop records."""

    action: Action
    latency_ms: float | None = None
    parse_failed: bool = False
    label: int | None = None


def llm_only_step(
    backend, state: EnvState, task: TaskRelation, ws: WorkspaceConfig, task_nl: str
) -> StepOutcome:
    """Full jump to the backend's coordinate prediction (no step-size clamp)."""
    ctx = PromptContext(task_nl=task_nl, state_text=serialize_state(state))
    prompt = build_coordinate_prompt(ctx, ws)
    outcome = backend.query(prompt, QueryContext(task, state, ws, "coordinate"))
    try:
        x_hat, y_hat = parse_coordinate_response(outcome.text, ws)
    except ParseFailure:
        return StepOutcome(Action(0.0, 0.0), outcome.latency_ms, parse_failed=True)
    action = Action(x_hat - state.target_x, y_hat - state.target_y)
    return StepOutcome(action, outcome.latency_ms)


def dl_only_step(
    model: TrainedModel, state: EnvState, task: TaskRelation, ws: WorkspaceConfig
) -> Action:
    """Bounded controller action conditioned on the true task label."""
    return model.act(state, task, ws)


def hybrid_step(
    backend,
    model: TrainedModel,
    state: EnvState,
    task: TaskRelation,
    ws: WorkspaceConfig,
    task_nl: str,
    last_label: int | None = None,
) -> StepOutcome:
    """Backend-predicted label conditions the bounded controller.

    On an unparseable response the last successfully parsed label of the
    episode is reused; with no label yet, the zero action is returned.
    """
    ctx = PromptContext(task_nl=task_nl, state_text=serialize_state(state))
    prompt = build_symbolic_prompt(ctx)
    outcome = backend.query(prompt, QueryContext(task, state, ws, "symbolic"))
    try:
        label = parse_symbolic_response(outcome.text)
        parse_failed = False
    except ParseFailure:
        label = last_label
        parse_failed = True
        if label is None:
            return StepOutcome(
                Action(0.0, 0.0), outcome.latency_ms, parse_failed=True
            )
    action = model.act(state, TaskRelation.from_index(label), ws)
    return StepOutcome(action, outcome.latency_ms, parse_failed, label)


def run_episode(
    policy: PolicyKind,
    backend,
    model: TrainedModel | None,
    task: TaskRelation,
    ws: WorkspaceConfig,
    seed: int,
    task_nl: str | None = None,
    eps: float = 1e-6,
    label_cache: bool = False,
) -> EpisodeRecord:
    """Closed-loop episode: reason (if applicable), act, step, until done.

    Backend failures mark the episode failed with a diagnostic tag; they
    never raise out of the episode.
    """
    if policy is not PolicyKind.LLM_ONLY and model is None:
        raise ValueError(f"policy {policy.value} requires a trained model")
    if policy is not PolicyKind.DL_ONLY and backend is None:
        raise ValueError(f"policy {policy.value} requires a reasoner backend")
    if task_nl is None:
        task_nl = instruction_for(task)

    state = sample_initial_state(seed, ws)
    initial_state = state
    d0 = distance_to_goal(state, task, ws)
    trace = [d0]
    latencies: list[float] = []
    parse_failures = 0
    last_label: int | None = None
    error: str | None = None

    t = 0
    while t < ws.horizon and trace[-1] > 0.0:
        try:
            if policy is PolicyKind.DL_ONLY:
                action = dl_only_step(model, state, task, ws)
            elif policy is PolicyKind.LLM_ONLY:
                out = llm_only_step(backend, state, task, ws, task_nl)
                action = out.action
                latencies.append(out.latency_ms)
                parse_failures += out.parse_failed
            else:
                if label_cache and last_label is not None:
                    action = model.act(state, TaskRelation.from_index(last_label), ws)
                else:
                    out = hybrid_step(
                        backend, model, state, task, ws, task_nl, last_label
                    )
                    action = out.action
                    latencies.append(out.latency_ms)
                    parse_failures += out.parse_failed
                    if out.label is not None:
                        last_label = out.label
        except BackendError as exc:
            error = f"{type(exc).__name__}: {exc}"
            break
        state = apply_action(state, action, ws)
        trace.append(distance_to_goal(state, task, ws))
        t += 1

    return EpisodeRecord(
        task=task,
        initial_state=initial_state,
        final_state=state,
        success=trace[-1] == 0.0,
        steps=t,
        distance_trace=trace,
        normalized_trace=[normalized_distance(d, d0, eps) for d in trace],
        reasoner_latencies=latencies,
        parse_failures=parse_failures,
        error=error,
    )


def derive_episode_seeds(batch_seed: int, index: int) -> tuple[int, int]:
    """Per-episode (environment, backend) seeds hashed from (batch_seed, index).

    Uses numpy's SeedSequence entropy mixing, so the derivation is documented
    and stable across platforms. Episodes are independent of execution order.
    """
    words = np.random.SeedSequence((batch_seed, index)).generate_state(2, np.uint64)
    return int(words[0]), int(words[1])
