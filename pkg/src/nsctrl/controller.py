"""Neural delta controller: input encoding, MLP forward pass, bounded output.

The network maps [normalized state, task encoding] to a raw 2-vector; the
action is max_step * tanh(raw), so displacements never exceed the per-axis
step bound. Hidden layers are ReLU, the final layer is affine.

Model files are JSON with a format_version; floats are written with Python's
shortest-round-trip repr, so save/load round-trips are bit-exact.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .env import Action, EnvState, TaskRelation, WorkspaceConfig

MODEL_FORMAT_VERSION = 1

ENCODING_MODES = ("scalar", "one_hot")


def encoding_dim(mode: str) -> int:
    """Input dimension for an encoding mode: 4 state features + task features."""
    if mode == "scalar":
        return 5
    if mode == "one_hot":
        return 8
    raise ValueError(f"unknown encoding mode: {mode!r}")


def encode_task(task: TaskRelation, mode: str) -> np.ndarray:
    if mode == "scalar":
        return np.array([task.index / 3.0])
    if mode == "one_hot":
        oh = np.zeros(4)
        oh[task.index] = 1.0
        return oh
    raise ValueError(f"unknown encoding mode: {mode!r}")


def encode_input(
    state: EnvState, task: TaskRelation, ws: WorkspaceConfig, mode: str = "one_hot"
) -> np.ndarray:
    """Concatenate side-normalized marker coordinates with the task encoding."""
    c = ws.side
    feats = np.array(
        [state.target_x / c, state.target_y / c, state.ref_x / c, state.ref_y / c]
    )
    return np.concatenate([feats, encode_task(task, mode)])


@dataclass
class MlpParams:
    """Per-layer weights (rows = units, cols = inputs) and biases."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @property
    def layer_sizes(self) -> list[int]:
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]

    def copy(self) -> "MlpParams":
        return MlpParams(
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
        )

    def validate(self) -> None:
        if len(self.weights) != len(self.biases):
            raise ValueError("weights and biases length mismatch")
        if not self.weights:
            raise ValueError("network needs at least one layer")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.ndim != 1 or w.shape[0] != b.shape[0]:
                raise ValueError(f"layer {i}: inconsistent shapes {w.shape}, {b.shape}")
            if i > 0 and w.shape[1] != self.weights[i - 1].shape[0]:
                raise ValueError(
                    f"layer {i} expects {w.shape[1]} inputs, previous layer "
                    f"outputs {self.weights[i - 1].shape[0]}"
                )
        if self.weights[-1].shape[0] != 2:
            raise ValueError("output layer must have 2 units")


def init_params(layer_sizes: list[int], seed: int) -> MlpParams:
    """Seeded uniform init, scaled by 1/sqrt(fan_in). Biases start at zero."""
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, (fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    params = MlpParams(weights=weights, biases=biases)
    params.validate()
    return params


def forward_batch(params: MlpParams, inputs: np.ndarray) -> np.ndarray:
    """Raw (pre-tanh) network output for a (batch, d) input matrix."""
    if inputs.shape[1] != params.weights[0].shape[1]:
        raise ValueError(
            f"input dim {inputs.shape[1]} does not match first layer "
            f"({params.weights[0].shape[1]} inputs)"
        )
    a = inputs
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = a @ w.T + b
        a = np.maximum(z, 0.0) if i < last else z
    return a


def forward(params: MlpParams, u: np.ndarray) -> np.ndarray:
    """Raw network output (length-2 vector) for a single encoded input."""
    u = np.asarray(u, dtype=float)
    if u.ndim != 1:
        raise ValueError("forward expects a 1-D input vector")
    return forward_batch(params, u[None, :])[0]


def bounded_action(raw: np.ndarray, delta_max: float) -> Action:
    """Squash a raw output pair through tanh and scale by the step bound."""
    return Action(
        dx=float(delta_max * np.tanh(raw[0])),
        dy=float(delta_max * np.tanh(raw[1])),
    )


@dataclass
class TrainedModel:
    """A controller together with the encoding and step bound it was trained for."""

    params: MlpParams
    encoding: str
    delta_max: float

    def act(self, state: EnvState, task: TaskRelation, ws: WorkspaceConfig) -> Action:
        u = encode_input(state, task, ws, self.encoding)
        return bounded_action(forward(self.params, u), self.delta_max)


def save_model(model: TrainedModel, path: str | Path) -> None:
    model.params.validate()
    doc = {
        "format_version": MODEL_FORMAT_VERSION,
        "layer_sizes": model.params.layer_sizes,
        "encoding": model.encoding,
        "delta_max": model.delta_max,
        "layers": [
            {"weights": w.flatten().tolist(), "biases": b.tolist()}
            for w, b in zip(model.params.weights, model.params.biases)
        ],
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True, indent=1), encoding="utf-8")


def load_model(path: str | Path) -> TrainedModel:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    version = doc.get("format_version")
    if version != MODEL_FORMAT_VERSION:
        raise ValueError(f"unsupported model format_version: {version}")
    sizes = doc["layer_sizes"]
    weights, biases = [], []
    for (fan_in, fan_out), layer in zip(zip(sizes[:-1], sizes[1:]), doc["layers"]):
        weights.append(np.array(layer["weights"], dtype=float).reshape(fan_out, fan_in))
        biases.append(np.array(layer["biases"], dtype=float))
    params = MlpParams(weights=weights, biases=biases)
    params.validate()
    return TrainedModel(
        params=params, encoding=doc["encoding"], delta_max=float(doc["delta_max"])
    )
