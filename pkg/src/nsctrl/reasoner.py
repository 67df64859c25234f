"""Symbolic reasoning layer: prompts, response parsing, reasoner backends.

Three interchangeable backends answer the same queries:

* live  -- HTTP POST to a locally hosted language-model server
* oracle -- always emits the ground-truth answer (perfect reasoner)
* noisy -- seeded corruption of the oracle (wrong labels / noisy coordinates)

Symbolic queries expect a JSON object {"relation": <0-3>}; coordinate queries
(used by the coordinate-prediction baseline) expect {"x": ..., "y": ...}.
Parsing is lenient about surrounding prose but strict about the schema: the
first well-formed JSON object found in the text decides the outcome.

Prompt templates are versioned resource files; their SHA-256 hashes are
reported so runs pin the exact wording they used.
"""

from __future__ import annotations

import hashlib
import json
import math
import string
import threading
import time
from dataclasses import dataclass
from importlib import resources

import numpy as np
import requests

from .env import EnvState, TaskRelation, WorkspaceConfig, is_satisfied

PROMPT_VERSION = "v1"


class ParseFailure(ValueError):
    """The reasoner's raw text did not contain a usable answer."""


class BackendError(RuntimeError):
    """Base class for reasoner backend failures."""


class BackendUnavailable(BackendError):
    """The backend could not be reached (after retries)."""


class BackendTimeout(BackendError):
    """The backend did not answer within the configured timeout."""


# ---------------------------------------------------------------------------
# State serialization and prompts
# ---------------------------------------------------------------------------

def _round_half_up(v: float) -> int:
    # round() would go to even; the canonical serialization rounds half up
    return int(math.floor(v + 0.5))


def serialize_state(state: EnvState) -> str:
    """Canonical one-line state rendering with half-up integer rounding."""
    return (
        f"red=({_round_half_up(state.target_x)},{_round_half_up(state.target_y)}) "
        f"blue=({_round_half_up(state.ref_x)},{_round_half_up(state.ref_y)})"
    )


INSTRUCTIONS = {
    TaskRelation.RIGHT_OF: "Move the red marker so it ends up right of the blue marker.",
    TaskRelation.LEFT_OF: "Move the red marker so it ends up left of the blue marker.",
    TaskRelation.ABOVE: "Move the red marker so it ends up above the blue marker.",
    TaskRelation.BELOW: "Move the red marker so it ends up below the blue marker.",
}


def instruction_for(task: TaskRelation) -> str:
    return INSTRUCTIONS[task]


@dataclass(frozen=True)
class PromptContext:
    task_nl: str
    state_text: str


_TEMPLATE_CACHE: dict[str, str] = {}


def _template(kind: str) -> str:
    if kind not in _TEMPLATE_CACHE:
        name = f"prompt_{kind}_{PROMPT_VERSION}.txt"
        _TEMPLATE_CACHE[kind] = (
            resources.files("nsctrl.resources").joinpath(name).read_text("utf-8")
        )
    return _TEMPLATE_CACHE[kind]


def template_hash(kind: str) -> str:
    """SHA-256 of the raw template resource, for pinning prompts in reports."""
    return hashlib.sha256(_template(kind).encode("utf-8")).hexdigest()


def build_symbolic_prompt(ctx: PromptContext) -> str:
    if not ctx.task_nl:
        raise ValueError("instruction must be non-empty")
    return string.Template(_template("symbolic")).substitute(
        instruction=ctx.task_nl, state=ctx.state_text
    )


def build_coordinate_prompt(ctx: PromptContext, ws: WorkspaceConfig) -> str:
    if not ctx.task_nl:
        raise ValueError("instruction must be non-empty")
    return string.Template(_template("coordinate")).substitute(
        instruction=ctx.task_nl, state=ctx.state_text, side=f"{ws.side:g}"
    )


# ---------------------------------------------------------------------------
# Response parsing
# ---------------------------------------------------------------------------

def _first_json_object(text: str) -> dict | None:
    decoder = json.JSONDecoder()
    pos = text.find("{")
    while pos != -1:
        try:
            obj, _ = decoder.raw_decode(text, pos)
        except (ValueError, RecursionError):
            pos = text.find("{", pos + 1)
            continue
        return obj if isinstance(obj, dict) else None
    return None


_NAME_TO_INDEX = {rel.value: rel.index for rel in TaskRelation}


def parse_symbolic_response(raw: str) -> int:
    """Extract a relation label 0-3 from the first JSON object in the text.

    Accepts {"relation": <int 0-3>} or {"relation": "<canonical name>"}.
    Anything else raises ParseFailure.
    """
    obj = _first_json_object(raw)
    if obj is None:
        raise ParseFailure("no JSON object in response")
    if "relation" not in obj:
        raise ParseFailure("JSON object has no 'relation' field")
    value = obj["relation"]
    if isinstance(value, bool):
        raise ParseFailure(f"relation must be an integer or name, got {value!r}")
    if isinstance(value, int):
        if 0 <= value <= 3:
            return value
        raise ParseFailure(f"relation index out of range: {value}")
    if isinstance(value, str) and value in _NAME_TO_INDEX:
        return _NAME_TO_INDEX[value]
    raise ParseFailure(f"unrecognized relation value: {value!r}")


def parse_coordinate_response(raw: str, ws: WorkspaceConfig) -> tuple[float, float]:
    """Extract absolute target coordinates, clipped to the workspace."""
    obj = _first_json_object(raw)
    if obj is None:
        raise ParseFailure("no JSON object in response")
    values = []
    for key in ("x", "y"):
        if key not in obj:
            raise ParseFailure(f"JSON object has no {key!r} field")
        v = obj[key]
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ParseFailure(f"{key!r} must be a number, got {v!r}")
        v = float(v)
        if not math.isfinite(v):
            raise ParseFailure(f"{key!r} must be finite, got {v!r}")
        values.append(min(max(v, 0.0), ws.side))
    return values[0], values[1]


# ---------------------------------------------------------------------------
# Backends
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ReasonerBackendConfig:
    backend: str = "oracle"             # oracle | noisy | live
    endpoint: str = "http://127.0.0.1:11434"
    path: str = "/api/generate"
    dialect: str = "generate"           # generate | chat
    model: str = "mistral"
    timeout_ms: int = 30_000
    max_retries: int = 2
    error_rate: float = 0.15            # noisy backend: wrong-label probability
    coord_noise_std: float = 150.0      # noisy backend: coordinate noise (px)
    hallucination_rate: float = 0.15    # noisy backend: uniform-random coordinate rate
    seed: int = 0
    max_inflight: int = 4
    response_path: str = ""             # dotted override into the response JSON
    label_cache: bool = False

    def __post_init__(self):
        if self.backend not in ("oracle", "noisy", "live"):
            raise ValueError(f"unknown backend: {self.backend!r}")
        if self.dialect not in ("generate", "chat"):
            raise ValueError(f"unknown dialect: {self.dialect!r}")
        if not 0.0 <= self.error_rate <= 1.0:
            raise ValueError("error_rate must be in [0, 1]")
        if not 0.0 <= self.hallucination_rate <= 1.0:
            raise ValueError("hallucination_rate must be in [0, 1]")
        if self.coord_noise_std < 0.0:
            raise ValueError("coord_noise_std must be >= 0")
        if self.timeout_ms <= 0:
            raise ValueError("timeout_ms must be > 0")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")
        if self.max_inflight < 1:
            raise ValueError("max_inflight must be >= 1")


@dataclass(frozen=True)
class QueryContext:
    """Episode ground truth handed to simulated backends.

    The live backend only sees the prompt; oracle and noisy backends use the
    true task and state to construct their answers.
    """

    task: TaskRelation
    state: EnvState
    ws: WorkspaceConfig
    kind: str  # "symbolic" | "coordinate"


@dataclass(frozen=True)
class QueryOutcome:
    text: str
    latency_ms: float


def ideal_goal_point(
    state: EnvState, task: TaskRelation, ws: WorkspaceConfig
) -> tuple[float, float]:
    """Nearest point satisfying the task; the current position if satisfied.

    Not workspace-clipped: parsing clips, mirroring how an out-of-range
    model prediction would be handled.
    """
    if is_satisfied(state, task, ws):
        return state.target_x, state.target_y
    m = ws.margin
    if task is TaskRelation.RIGHT_OF:
        return state.ref_x + m, state.target_y
    if task is TaskRelation.LEFT_OF:
        return state.ref_x - m, state.target_y
    if task is TaskRelation.ABOVE:
        return state.target_x, state.ref_y - m
    return state.target_x, state.ref_y + m


def _symbolic_json(label: int) -> str:
    return json.dumps({"relation": label})


def _coordinate_json(x: float, y: float) -> str:
    return json.dumps({"x": x, "y": y})


class OracleBackend:
    """Perfect reasoner: emits the ground truth in the expected JSON form."""

    def query(self, prompt: str, ctx: QueryContext) -> QueryOutcome:
        start = time.perf_counter()
        if ctx.kind == "symbolic":
            text = _symbolic_json(ctx.task.index)
        else:
            x, y = ideal_goal_point(ctx.state, ctx.task, ctx.ws)
            text = _coordinate_json(x, y)
        return QueryOutcome(text, (time.perf_counter() - start) * 1000.0)


class NoisyBackend:
    """Seeded corruption of the oracle.

    Symbolic queries: correct label with probability 1 - error_rate, else a
    uniformly random wrong label. Coordinate queries: with probability
    hallucination_rate a uniform random workspace point, otherwise the ideal
    goal point plus independent Gaussian noise per axis.
    """

    def __init__(self, cfg: ReasonerBackendConfig, seed: int | None = None):
        self.cfg = cfg
        self._rng = np.random.default_rng(cfg.seed if seed is None else seed)

    def query(self, prompt: str, ctx: QueryContext) -> QueryOutcome:
        start = time.perf_counter()
        if ctx.kind == "symbolic":
            correct = ctx.task.index
            if self._rng.random() < self.cfg.error_rate:
                label = int((correct + 1 + self._rng.integers(0, 3)) % 4)
            else:
                label = correct
            text = _symbolic_json(label)
        else:
            if self._rng.random() < self.cfg.hallucination_rate:
                x, y = self._rng.uniform(0.0, ctx.ws.side, 2)
            else:
                ix, iy = ideal_goal_point(ctx.state, ctx.task, ctx.ws)
                noise = self._rng.normal(0.0, self.cfg.coord_noise_std, 2)
                x, y = ix + noise[0], iy + noise[1]
            text = _coordinate_json(float(x), float(y))
        return QueryOutcome(text, (time.perf_counter() - start) * 1000.0)


_DEFAULT_RESPONSE_PATHS = {
    "generate": "response",
    "chat": "choices.0.message.content",
}


def _build_request_body(cfg: ReasonerBackendConfig, prompt: str) -> dict:
    if cfg.dialect == "generate":
        return {"model": cfg.model, "prompt": prompt, "stream": False, "format": "json"}
    return {
        "model": cfg.model,
        "messages": [{"role": "user", "content": prompt}],
        "stream": False,
    }


def _extract_by_path(doc, path: str) -> str:
    node = doc
    for part in path.split("."):
        if isinstance(node, list):
            node = node[int(part)]
        elif isinstance(node, dict):
            node = node[part]
        else:
            raise KeyError(part)
    if not isinstance(node, str):
        raise KeyError(path)
    return node


class LiveBackend:
    """HTTP client for a locally hosted language-model server.

    The request/response shape is selected by a dialect adapter; the endpoint,
    path, and response field path are all config-overridable so other local
    server APIs can be mapped without code changes. Concurrent use is bounded
    by a semaphore so episode workers cannot overload the model server.
    """

    def __init__(self, cfg: ReasonerBackendConfig, session: requests.Session | None = None):
        self.cfg = cfg
        self.url = cfg.endpoint.rstrip("/") + cfg.path
        self.response_path = cfg.response_path or _DEFAULT_RESPONSE_PATHS[cfg.dialect]
        self._session = session or requests.Session()
        self._gate = threading.Semaphore(cfg.max_inflight)

    def query(self, prompt: str, ctx: QueryContext) -> QueryOutcome:
        body = _build_request_body(self.cfg, prompt)
        timeout_s = self.cfg.timeout_ms / 1000.0
        start = time.perf_counter()
        last_error: Exception | None = None
        with self._gate:
            for attempt in range(self.cfg.max_retries + 1):
                if attempt > 0:
                    time.sleep(0.05 * attempt)
                try:
                    resp = self._session.post(self.url, json=body, timeout=timeout_s)
                except requests.Timeout as exc:
                    last_error = BackendTimeout(
                        f"no answer from {self.url} within {self.cfg.timeout_ms} ms"
                    )
                    last_error.__cause__ = exc
                    continue
                except requests.RequestException as exc:
                    last_error = BackendUnavailable(f"cannot reach {self.url}: {exc}")
                    continue
                if resp.status_code != 200:
                    last_error = BackendUnavailable(
                        f"{self.url} answered HTTP {resp.status_code}"
                    )
                    continue
                try:
                    text = _extract_by_path(resp.json(), self.response_path)
                except (ValueError, KeyError, IndexError) as exc:
                    raise BackendUnavailable(
                        f"{self.url} answered with an unexpected body "
                        f"(missing {self.response_path!r}): {exc}"
                    ) from exc
                latency = (time.perf_counter() - start) * 1000.0
                return QueryOutcome(text, latency)
        raise last_error if last_error is not None else BackendUnavailable(self.url)


def make_backend(cfg: ReasonerBackendConfig, seed: int | None = None):
    """Build a backend instance; the seed only matters for the noisy backend."""
    if cfg.backend == "oracle":
        return OracleBackend()
    if cfg.backend == "noisy":
        return NoisyBackend(cfg, seed=seed)
    return LiveBackend(cfg)
