"""Planar spatial-relation control benchmark.

A bounded neural delta controller trained on synthetic geometry, pluggable
symbolic reasoner backends (oracle, noisy, live local language-model server),
a closed-loop episode runner, and an evaluation harness with success-rate /
average-steps metrics and comparison reports.
"""

from .controller import TrainedModel, bounded_action, encode_input, forward, load_model, save_model
from .env import (
    Action,
    EnvState,
    RELATIONS,
    TaskRelation,
    WorkspaceConfig,
    apply_action,
    distance_to_goal,
    is_satisfied,
    normalized_distance,
    sample_initial_state,
)
from .evaluation import (
    BatchResult,
    BatchSpec,
    ImprovementRow,
    MetricsSummary,
    ablation_deltas,
    aggregate_across,
    relative_improvement,
    run_batch,
    summarize,
    write_report,
)
from .policies import EpisodeRecord, PolicyKind, run_episode
from .reasoner import (
    BackendError,
    BackendTimeout,
    BackendUnavailable,
    ParseFailure,
    ReasonerBackendConfig,
    build_coordinate_prompt,
    build_symbolic_prompt,
    make_backend,
    parse_coordinate_response,
    parse_symbolic_response,
    serialize_state,
)
from .training import TrainConfig, TrainingSample, generate_dataset, target_displacement, train

__version__ = "0.1.0"
