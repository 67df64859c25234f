"""Supervised training of the delta controller on synthetic geometry.

Samples are (state, task, target displacement) tuples with states and tasks
uniform over their spaces. The target moves the target marker straight toward
the goal boundary along one axis, scaled by alpha, then clamped per-component
to [-max_step, max_step] so the tanh-bounded network can actually regress it.
Already-satisfied states are kept with a (0, 0) target so the controller
learns to hold position.

Loss is mean squared error in pixels between the bounded network action and
the clamped target, plus an optional penalty on the squared action norm.
Gradients are exact analytic backprop (tanh output stage included); the
optimizer is Adam with bias correction. No autodiff framework is used.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .controller import (
    MlpParams,
    TrainedModel,
    encode_input,
    encoding_dim,
    init_params,
)
from .env import (
    EnvState,
    TaskRelation,
    WorkspaceConfig,
    is_satisfied,
)


class TrainingDiverged(RuntimeError):
    """Raised when the training loss stops being finite."""


@dataclass(frozen=True)
class TrainConfig:
    sample_count: int = 50_000
    step_scale: float = 1.0          # alpha in (0, 1]
    reg_coefficient: float = 0.0     # lambda >= 0
    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    epochs: int = 20
    batch_size: int = 256
    seed: int = 0
    hidden_sizes: tuple[int, ...] = (64, 64)
    encoding: str = "one_hot"

    def __post_init__(self):
        if self.sample_count < 1:
            raise ValueError("sample_count must be >= 1")
        if not 0.0 < self.step_scale <= 1.0:
            raise ValueError("step_scale must be in (0, 1]")
        if self.reg_coefficient < 0.0:
            raise ValueError("reg_coefficient must be >= 0")
        if self.learning_rate <= 0.0:
            raise ValueError("learning_rate must be > 0")
        if not 0.0 < self.adam_beta1 < 1.0 or not 0.0 < self.adam_beta2 < 1.0:
            raise ValueError("adam betas must be in (0, 1)")
        if self.adam_eps <= 0.0:
            raise ValueError("adam_eps must be > 0")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")


@dataclass(frozen=True)
class TrainingSample:
    state: EnvState
    task: TaskRelation
    target_dx: float
    target_dy: float


def target_displacement(
    state: EnvState,
    task: TaskRelation,
    ws: WorkspaceConfig,
    alpha: float,
    clamp: bool = True,
) -> tuple[float, float]:
    """Axis-aligned displacement toward the goal boundary, scaled by alpha.

    Zero for already-satisfied states. With clamp=True each component is
    limited to [-max_step, max_step]; clamp=False gives the raw geometric
    value (used by replay-style checks).
    """
    if not 0.0 < alpha <= 1.0:
        raise ValueError("alpha must be in (0, 1]")
    m = ws.margin
    dx, dy = 0.0, 0.0
    if task is TaskRelation.RIGHT_OF:
        dx = alpha * max(0.0, (state.ref_x + m) - state.target_x)
    elif task is TaskRelation.LEFT_OF:
        dx = -alpha * max(0.0, state.target_x - (state.ref_x - m))
    elif task is TaskRelation.ABOVE:
        dy = -alpha * max(0.0, state.target_y - (state.ref_y - m))
    else:
        dy = alpha * max(0.0, (state.ref_y + m) - state.target_y)
    if clamp:
        dx = min(max(dx, -ws.max_step), ws.max_step)
        dy = min(max(dy, -ws.max_step), ws.max_step)
    return dx, dy


def generate_dataset(cfg: TrainConfig, ws: WorkspaceConfig) -> list[TrainingSample]:
    """Uniform states and tasks with clamped straight-to-goal targets."""
    rng = np.random.default_rng(cfg.seed)
    coords = rng.uniform(0.0, ws.side, (cfg.sample_count, 4))
    task_idx = rng.integers(0, 4, cfg.sample_count)
    samples = []
    for (tx, ty, rx, ry), ti in zip(coords, task_idx):
        state = EnvState(float(tx), float(ty), float(rx), float(ry))
        task = TaskRelation.from_index(int(ti))
        dx, dy = target_displacement(state, task, ws, cfg.step_scale)
        samples.append(TrainingSample(state, task, dx, dy))
    return samples


DATASET_HEADER = ["x_r", "y_r", "x_b", "y_b", "task_index", "dx_target", "dy_target"]


def write_dataset_csv(samples: list[TrainingSample], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(DATASET_HEADER)
        for s in samples:
            writer.writerow(
                [
                    repr(s.state.target_x),
                    repr(s.state.target_y),
                    repr(s.state.ref_x),
                    repr(s.state.ref_y),
                    s.task.index,
                    repr(s.target_dx),
                    repr(s.target_dy),
                ]
            )


def read_dataset_csv(path: str | Path) -> list[TrainingSample]:
    samples = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != DATASET_HEADER:
            raise ValueError(f"unexpected dataset header: {header}")
        for row in reader:
            state = EnvState(float(row[0]), float(row[1]), float(row[2]), float(row[3]))
            samples.append(
                TrainingSample(
                    state,
                    TaskRelation.from_index(int(row[4])),
                    float(row[5]),
                    float(row[6]),
                )
            )
    return samples


def encode_samples(
    samples: list[TrainingSample], ws: WorkspaceConfig, mode: str
) -> tuple[np.ndarray, np.ndarray]:
    """Stack encoded inputs and pixel targets into training matrices."""
    inputs = np.empty((len(samples), encoding_dim(mode)))
    targets = np.empty((len(samples), 2))
    for i, s in enumerate(samples):
        inputs[i] = encode_input(s.state, s.task, ws, mode)
        targets[i] = (s.target_dx, s.target_dy)
    return inputs, targets


def _forward_cached(params: MlpParams, inputs: np.ndarray):
    """Forward pass keeping pre-activations for backprop."""
    pre, acts = [], [inputs]
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = acts[-1] @ w.T + b
        pre.append(z)
        acts.append(np.maximum(z, 0.0) if i < last else z)
    return pre, acts


def _loss_and_grads(
    params: MlpParams,
    inputs: np.ndarray,
    targets: np.ndarray,
    lam: float,
    delta_max: float,
    want_grads: bool,
):
    batch = inputs.shape[0]
    if batch == 0:
        raise ValueError("batch must be non-empty")
    pre, acts = _forward_cached(params, inputs)
    th = np.tanh(pre[-1])
    out = delta_max * th
    resid = out - targets
    loss = float((resid**2).sum(axis=1).mean())
    if lam > 0.0:
        loss += lam * float((out**2).sum(axis=1).mean())
    if not want_grads:
        return loss, None, None

    d_out = (2.0 / batch) * (resid + lam * out)
    delta = d_out * delta_max * (1.0 - th**2)
    grad_w = [np.empty(0)] * len(params.weights)
    grad_b = [np.empty(0)] * len(params.biases)
    for layer in reversed(range(len(params.weights))):
        grad_w[layer] = delta.T @ acts[layer]
        grad_b[layer] = delta.sum(axis=0)
        if layer > 0:
            delta = (delta @ params.weights[layer]) * (pre[layer - 1] > 0.0)
    return loss, grad_w, grad_b


def loss(
    params: MlpParams,
    inputs: np.ndarray,
    targets: np.ndarray,
    lam: float,
    delta_max: float,
) -> float:
    """Pixel-scale MSE of the bounded action, plus lam * mean squared norm."""
    value, _, _ = _loss_and_grads(params, inputs, targets, lam, delta_max, False)
    return value


def gradients(
    params: MlpParams,
    inputs: np.ndarray,
    targets: np.ndarray,
    lam: float,
    delta_max: float,
) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Exact analytic gradients of loss() w.r.t. every weight and bias."""
    _, grad_w, grad_b = _loss_and_grads(params, inputs, targets, lam, delta_max, True)
    return grad_w, grad_b


@dataclass
class AdamState:
    m_w: list[np.ndarray]
    v_w: list[np.ndarray]
    m_b: list[np.ndarray]
    v_b: list[np.ndarray]
    step: int = 0

    @classmethod
    def zeros_like(cls, params: MlpParams) -> "AdamState":
        return cls(
            m_w=[np.zeros_like(w) for w in params.weights],
            v_w=[np.zeros_like(w) for w in params.weights],
            m_b=[np.zeros_like(b) for b in params.biases],
            v_b=[np.zeros_like(b) for b in params.biases],
        )


def adam_step(
    params: MlpParams,
    grad_w: list[np.ndarray],
    grad_b: list[np.ndarray],
    state: AdamState,
    cfg: TrainConfig,
) -> tuple[MlpParams, AdamState]:
    """One Adam update with bias-corrected moment estimates."""
    if len(grad_w) != len(params.weights) or len(grad_b) != len(params.biases):
        raise ValueError("gradient shape set does not match parameters")
    for g, w in zip(grad_w, params.weights):
        if g.shape != w.shape:
            raise ValueError(f"weight gradient shape {g.shape} != {w.shape}")
    for g, b in zip(grad_b, params.biases):
        if g.shape != b.shape:
            raise ValueError(f"bias gradient shape {g.shape} != {b.shape}")

    b1, b2, eps, lr = cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps, cfg.learning_rate
    k = state.step + 1
    corr1 = 1.0 - b1**k
    corr2 = 1.0 - b2**k

    def update(value, g, m, v):
        m_new = b1 * m + (1.0 - b1) * g
        v_new = b2 * v + (1.0 - b2) * g**2
        step = lr * (m_new / corr1) / (np.sqrt(v_new / corr2) + eps)
        return value - step, m_new, v_new

    new_w, new_mw, new_vw = [], [], []
    for w, g, m, v in zip(params.weights, grad_w, state.m_w, state.v_w):
        nw, nm, nv = update(w, g, m, v)
        new_w.append(nw)
        new_mw.append(nm)
        new_vw.append(nv)
    new_b, new_mb, new_vb = [], [], []
    for b, g, m, v in zip(params.biases, grad_b, state.m_b, state.v_b):
        nb, nm, nv = update(b, g, m, v)
        new_b.append(nb)
        new_mb.append(nm)
        new_vb.append(nv)
    return (
        MlpParams(weights=new_w, biases=new_b),
        AdamState(m_w=new_mw, v_w=new_vw, m_b=new_mb, v_b=new_vb, step=k),
    )


@dataclass
class TrainResult:
    model: TrainedModel
    epoch_losses: list[float] = field(default_factory=list)


def train(
    cfg: TrainConfig,
    ws: WorkspaceConfig,
    samples: list[TrainingSample] | None = None,
) -> TrainResult:
    """Full training run: deterministic for a fixed config.

    Uses three independent seeded streams (dataset, init, shuffling) derived
    from cfg.seed so changing the architecture does not perturb the data.
    Raises TrainingDiverged if any epoch loss is non-finite.
    """
    if samples is None:
        samples = generate_dataset(cfg, ws)
    inputs, targets = encode_samples(samples, ws, cfg.encoding)

    init_seed, shuffle_seed = np.random.SeedSequence(cfg.seed).spawn(2)
    sizes = [encoding_dim(cfg.encoding), *cfg.hidden_sizes, 2]
    params = init_params(sizes, np.random.default_rng(init_seed).integers(2**32))
    state = AdamState.zeros_like(params)
    shuffle_rng = np.random.default_rng(shuffle_seed)

    n = inputs.shape[0]
    epoch_losses: list[float] = []
    for epoch in range(cfg.epochs):
        order = shuffle_rng.permutation(n)
        total, seen = 0.0, 0
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            value, grad_w, grad_b = _loss_and_grads(
                params,
                inputs[idx],
                targets[idx],
                cfg.reg_coefficient,
                ws.max_step,
                True,
            )
            params, state = adam_step(params, grad_w, grad_b, state, cfg)
            total += value * len(idx)
            seen += len(idx)
        epoch_loss = total / seen
        if not np.isfinite(epoch_loss):
            raise TrainingDiverged(
                f"non-finite loss {epoch_loss} at epoch {epoch + 1}"
            )
        epoch_losses.append(epoch_loss)

    model = TrainedModel(params=params, encoding=cfg.encoding, delta_max=ws.max_step)
    return TrainResult(model=model, epoch_losses=epoch_losses)


def write_loss_curve(losses: list[float], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "loss"])
        for i, value in enumerate(losses, start=1):
            writer.writerow([i, repr(value)])
