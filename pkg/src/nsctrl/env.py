"""Planar two-marker environment: workspace, spatial-relation tasks, dynamics.

The world is a square workspace holding a movable target marker (red) and a
fixed reference marker (blue). A task asks for one of four spatial relations
between them, satisfied with a pixel margin. Screen convention: y grows
downward, so "above" means smaller y.

All functions here are pure; RNG state is owned by the caller per episode.
The seeded generator is PCG64 (numpy's default_rng), whose bit stream is
stable across platforms for a fixed seed.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np


class TaskRelation(enum.Enum):
    """The four canonical spatial relations, in canonical index order."""

    RIGHT_OF = "right_of"
    LEFT_OF = "left_of"
    ABOVE = "above"
    BELOW = "below"

    @property
    def index(self) -> int:
        return _RELATION_ORDER.index(self)

    @classmethod
    def from_index(cls, idx: int) -> "TaskRelation":
        if not 0 <= idx < len(_RELATION_ORDER):
            raise ValueError(f"relation index out of range: {idx}")
        return _RELATION_ORDER[idx]

    @classmethod
    def from_name(cls, name: str) -> "TaskRelation":
        for rel in _RELATION_ORDER:
            if rel.value == name:
                return rel
        raise ValueError(f"unknown relation name: {name!r}")


_RELATION_ORDER = (
    TaskRelation.RIGHT_OF,
    TaskRelation.LEFT_OF,
    TaskRelation.ABOVE,
    TaskRelation.BELOW,
)

RELATIONS = _RELATION_ORDER


@dataclass(frozen=True)
class WorkspaceConfig:
    """Workspace geometry and episode budget.

    side: maximum coordinate value (the workspace is [0, side]^2)
    margin: satisfaction tolerance in pixels
    max_step: per-axis bound on controller displacements
    horizon: maximum number of control steps per episode
    """

    side: float = 800.0
    margin: float = 50.0
    max_step: float = 40.0
    horizon: int = 60

    def __post_init__(self):
        if not self.side > 0:
            raise ValueError(f"side must be positive, got {self.side}")
        if not 0 < self.margin < self.side:
            raise ValueError(f"margin must be in (0, side), got {self.margin}")
        if not 0 < self.max_step <= self.side:
            raise ValueError(f"max_step must be in (0, side], got {self.max_step}")
        # horizon 0 is tolerated as a degenerate value so the episode loop's
        # empty-budget behavior stays testable; config loading requires >= 1.
        if self.horizon < 0:
            raise ValueError(f"horizon must be non-negative, got {self.horizon}")


@dataclass(frozen=True)
class EnvState:
    """Positions of the target (red) and reference (blue) markers."""

    target_x: float
    target_y: float
    ref_x: float
    ref_y: float

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.target_x, self.target_y, self.ref_x, self.ref_y)


@dataclass(frozen=True)
class Action:
    """Incremental displacement of the target marker, in pixels."""

    dx: float
    dy: float


def sample_initial_state(rng_seed: int, ws: WorkspaceConfig) -> EnvState:
    """Draw all four marker coordinates independently, uniform over [0, side].

    Deterministic for a fixed seed (PCG64 stream).
    """
    rng = np.random.default_rng(rng_seed)
    coords = rng.uniform(0.0, ws.side, 4)
    return EnvState(
        target_x=float(coords[0]),
        target_y=float(coords[1]),
        ref_x=float(coords[2]),
        ref_y=float(coords[3]),
    )


def is_satisfied(state: EnvState, task: TaskRelation, ws: WorkspaceConfig) -> bool:
    """Margin-tolerant satisfaction predicate. Boundaries are inclusive.

    Kept textually parallel to distance_to_goal (same sub-expression grouping)
    so the pair stays exactly consistent in floating point.
    """
    m = ws.margin
    if task is TaskRelation.RIGHT_OF:
        return state.target_x >= state.ref_x + m
    if task is TaskRelation.LEFT_OF:
        return state.target_x <= state.ref_x - m
    if task is TaskRelation.ABOVE:
        return state.target_y <= state.ref_y - m
    return state.target_y >= state.ref_y + m


def apply_action(state: EnvState, action: Action, ws: WorkspaceConfig) -> EnvState:
    """Move the target marker, clipping to the workspace. Reference is fixed."""
    return EnvState(
        target_x=_clip(state.target_x + action.dx, 0.0, ws.side),
        target_y=_clip(state.target_y + action.dy, 0.0, ws.side),
        ref_x=state.ref_x,
        ref_y=state.ref_y,
    )


def distance_to_goal(state: EnvState, task: TaskRelation, ws: WorkspaceConfig) -> float:
    """Hinge distance to the satisfaction half-plane; 0 exactly at satisfaction."""
    m = ws.margin
    if task is TaskRelation.RIGHT_OF:
        return max(0.0, (state.ref_x + m) - state.target_x)
    if task is TaskRelation.LEFT_OF:
        return max(0.0, state.target_x - (state.ref_x - m))
    if task is TaskRelation.ABOVE:
        return max(0.0, state.target_y - (state.ref_y - m))
    return max(0.0, (state.ref_y + m) - state.target_y)


def normalized_distance(d_t: float, d_0: float, eps: float = 1e-6) -> float:
    """Distance at step t divided by (initial distance + eps)."""
    if d_t < 0 or d_0 < 0:
        raise ValueError("distances must be non-negative")
    if eps <= 0:
        raise ValueError("eps must be positive")
    return d_t / (d_0 + eps)


def _clip(v: float, lo: float, hi: float) -> float:
    return min(max(v, lo), hi)
