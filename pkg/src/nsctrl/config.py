"""Experiment configuration: defaults, config file, environment, CLI flags.

The config file is INI-style: one block per subsystem, plain key = value
lines. Precedence, lowest to highest: built-in defaults, config file,
environment variables (NSCTRL_ENDPOINT), command-line flags. Every command
prints the effective configuration at startup so reports are self-describing.
"""

from __future__ import annotations

import configparser
import os
import re
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .env import RELATIONS, TaskRelation, WorkspaceConfig
from .policies import PolicyKind
from .reasoner import ReasonerBackendConfig
from .training import TrainConfig

ENDPOINT_ENV_VAR = "NSCTRL_ENDPOINT"


class ConfigError(ValueError):
    """Invalid or malformed experiment configuration."""


_ID_RE = re.compile(r"^[A-Za-z0-9._-]+$")


@dataclass(frozen=True)
class ExperimentConfig:
    workspace: WorkspaceConfig = field(default_factory=WorkspaceConfig)
    training: TrainConfig = field(default_factory=TrainConfig)
    reasoner: ReasonerBackendConfig = field(default_factory=ReasonerBackendConfig)
    episodes: int = 20
    batch_seed: int = 0
    tasks: tuple[TaskRelation, ...] = tuple(RELATIONS)
    policies: tuple[PolicyKind, ...] = (PolicyKind.DL_ONLY,)
    models: tuple[str, ...] = ("mistral",)
    out_dir: str = "runs"
    experiment_id: str = "exp"
    workers: int = 1
    train_from_dataset_file: bool = False

    def __post_init__(self):
        if self.episodes < 1:
            raise ConfigError("evaluation.episodes must be >= 1")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if self.workspace.horizon < 1:
            raise ConfigError("workspace.horizon must be >= 1")
        if not _ID_RE.match(self.experiment_id):
            raise ConfigError(
                f"experiment_id must be filesystem-safe, got {self.experiment_id!r}"
            )
        if not self.tasks:
            raise ConfigError("evaluation.tasks must not be empty")
        if not self.policies:
            raise ConfigError("evaluation.policies must not be empty")

    # paths derived from the output directory
    @property
    def dataset_path(self) -> Path:
        return Path(self.out_dir) / "dataset.csv"

    @property
    def model_path(self) -> Path:
        return Path(self.out_dir) / "model.json"

    @property
    def loss_curve_path(self) -> Path:
        return Path(self.out_dir) / "loss_curve.csv"

    def dump_lines(self) -> list[str]:
        """Effective configuration as sorted 'block.key = value' lines."""
        lines = []
        for block_name, obj in (
            ("workspace", self.workspace),
            ("training", self.training),
            ("reasoner", self.reasoner),
        ):
            for f in fields(obj):
                lines.append(f"{block_name}.{f.name} = {getattr(obj, f.name)}")
        lines += [
            f"evaluation.episodes = {self.episodes}",
            f"evaluation.batch_seed = {self.batch_seed}",
            "evaluation.tasks = " + ",".join(t.value for t in self.tasks),
            "evaluation.policies = " + ",".join(p.value for p in self.policies),
            "evaluation.models = " + ",".join(self.models),
            f"output.dir = {self.out_dir}",
            f"output.experiment_id = {self.experiment_id}",
            f"output.workers = {self.workers}",
            f"training.from_dataset_file = {self.train_from_dataset_file}",
        ]
        return sorted(lines)


def _parse_bool(raw: str, key: str) -> bool:
    low = raw.strip().lower()
    if low in ("true", "yes", "1", "on"):
        return True
    if low in ("false", "no", "0", "off"):
        return False
    raise ConfigError(f"{key}: expected a boolean, got {raw!r}")


def _typed(raw: str, kind, key: str):
    try:
        if kind is bool:
            return _parse_bool(raw, key)
        return kind(raw)
    except ValueError as exc:
        raise ConfigError(f"{key}: {exc}") from exc


_WORKSPACE_KEYS = {"side": float, "margin": float, "max_step": float, "horizon": int}
_TRAINING_KEYS = {
    "samples": ("sample_count", int),
    "alpha": ("step_scale", float),
    "lambda": ("reg_coefficient", float),
    "learning_rate": ("learning_rate", float),
    "beta1": ("adam_beta1", float),
    "beta2": ("adam_beta2", float),
    "adam_eps": ("adam_eps", float),
    "epochs": ("epochs", int),
    "batch_size": ("batch_size", int),
    "seed": ("seed", int),
    "encoding": ("encoding", str),
}
_REASONER_KEYS = {
    "backend": str,
    "endpoint": str,
    "path": str,
    "dialect": str,
    "model": str,
    "timeout_ms": int,
    "max_retries": int,
    "error_rate": float,
    "coord_noise_std": float,
    "hallucination_rate": float,
    "seed": int,
    "max_inflight": int,
    "response_path": str,
    "label_cache": bool,
}


def load_config(path: str | Path | None) -> ExperimentConfig:
    """Defaults, overridden by the config file (if given), then environment."""
    cfg = ExperimentConfig()
    if path is not None:
        cfg = _apply_file(cfg, Path(path))
    endpoint = os.environ.get(ENDPOINT_ENV_VAR)
    if endpoint:
        cfg = replace(cfg, reasoner=replace(cfg.reasoner, endpoint=endpoint))
    return cfg


def _apply_file(cfg: ExperimentConfig, path: Path) -> ExperimentConfig:
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        parser.read(path, encoding="utf-8")
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc

    known_sections = {"workspace", "training", "reasoner", "evaluation", "output"}
    unknown = set(parser.sections()) - known_sections
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")

    try:
        ws = _workspace_from(parser, cfg.workspace)
        training = _training_from(parser, cfg.training)
        reasoner = _reasoner_from(parser, cfg.reasoner)
        cfg = replace(cfg, workspace=ws, training=training, reasoner=reasoner)
        cfg = _evaluation_from(parser, cfg)
        cfg = _output_from(parser, cfg)
    except (ValueError, KeyError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc
    return cfg


def _check_keys(parser, section: str, allowed) -> None:
    if not parser.has_section(section):
        return
    unknown = set(parser.options(section)) - set(allowed)
    if unknown:
        raise ConfigError(f"[{section}] has unknown keys: {sorted(unknown)}")


def _workspace_from(parser, base: WorkspaceConfig) -> WorkspaceConfig:
    _check_keys(parser, "workspace", _WORKSPACE_KEYS)
    if not parser.has_section("workspace"):
        return base
    kwargs = {}
    for key, kind in _WORKSPACE_KEYS.items():
        if parser.has_option("workspace", key):
            kwargs[key] = _typed(parser.get("workspace", key), kind, f"workspace.{key}")
    return replace(base, **kwargs)


def _training_from(parser, base: TrainConfig) -> TrainConfig:
    allowed = set(_TRAINING_KEYS) | {"hidden"}
    _check_keys(parser, "training", allowed)
    if not parser.has_section("training"):
        return base
    kwargs = {}
    for key, (attr, kind) in _TRAINING_KEYS.items():
        if parser.has_option("training", key):
            kwargs[attr] = _typed(parser.get("training", key), kind, f"training.{key}")
    if parser.has_option("training", "hidden"):
        raw = parser.get("training", "hidden")
        try:
            kwargs["hidden_sizes"] = tuple(
                int(part) for part in raw.split(",") if part.strip()
            )
        except ValueError as exc:
            raise ConfigError(f"training.hidden: {exc}") from exc
    return replace(base, **kwargs)


def _reasoner_from(parser, base: ReasonerBackendConfig) -> ReasonerBackendConfig:
    _check_keys(parser, "reasoner", _REASONER_KEYS)
    if not parser.has_section("reasoner"):
        return base
    kwargs = {}
    for key, kind in _REASONER_KEYS.items():
        if parser.has_option("reasoner", key):
            kwargs[key] = _typed(parser.get("reasoner", key), kind, f"reasoner.{key}")
    return replace(base, **kwargs)


def _evaluation_from(parser, cfg: ExperimentConfig) -> ExperimentConfig:
    allowed = {"episodes", "batch_seed", "tasks", "policies", "models"}
    _check_keys(parser, "evaluation", allowed)
    if not parser.has_section("evaluation"):
        return cfg
    kwargs = {}
    if parser.has_option("evaluation", "episodes"):
        kwargs["episodes"] = _typed(
            parser.get("evaluation", "episodes"), int, "evaluation.episodes"
        )
    if parser.has_option("evaluation", "batch_seed"):
        kwargs["batch_seed"] = _typed(
            parser.get("evaluation", "batch_seed"), int, "evaluation.batch_seed"
        )
    if parser.has_option("evaluation", "tasks"):
        kwargs["tasks"] = parse_task_list(parser.get("evaluation", "tasks"))
    if parser.has_option("evaluation", "policies"):
        kwargs["policies"] = parse_policy_list(parser.get("evaluation", "policies"))
    if parser.has_option("evaluation", "models"):
        kwargs["models"] = tuple(
            part.strip()
            for part in parser.get("evaluation", "models").split(",")
            if part.strip()
        )
    return replace(cfg, **kwargs)


def _output_from(parser, cfg: ExperimentConfig) -> ExperimentConfig:
    allowed = {"dir", "experiment_id", "workers", "train_from_dataset_file"}
    _check_keys(parser, "output", allowed)
    if not parser.has_section("output"):
        return cfg
    kwargs = {}
    if parser.has_option("output", "dir"):
        kwargs["out_dir"] = parser.get("output", "dir")
    if parser.has_option("output", "experiment_id"):
        kwargs["experiment_id"] = parser.get("output", "experiment_id")
    if parser.has_option("output", "workers"):
        kwargs["workers"] = _typed(parser.get("output", "workers"), int, "output.workers")
    if parser.has_option("output", "train_from_dataset_file"):
        kwargs["train_from_dataset_file"] = _typed(
            parser.get("output", "train_from_dataset_file"),
            bool,
            "output.train_from_dataset_file",
        )
    return replace(cfg, **kwargs)


def parse_task_list(raw: str) -> tuple[TaskRelation, ...]:
    tasks = []
    for part in raw.split(","):
        part = part.strip()
        if not part:
            continue
        try:
            tasks.append(TaskRelation.from_name(part))
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
    if not tasks:
        raise ConfigError("task list is empty")
    return tuple(tasks)


def parse_policy_list(raw: str) -> tuple[PolicyKind, ...]:
    policies = []
    for part in raw.split(","):
        part = part.strip()
        if not part:
            continue
        try:
            policies.append(PolicyKind.from_name(part))
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
    if not policies:
        raise ConfigError("policy list is empty")
    return tuple(policies)
