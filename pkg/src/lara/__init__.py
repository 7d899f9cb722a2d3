"""Budget-constrained relevance assessment.

Build test collections by spending a fixed human-judgment budget where it
matters: an LLM grades every (topic, document) pair with a probability
vector, a calibrator learns the mapping from those vectors to true
relevance as judgments arrive, and the pair with the smallest calibrated
margin is always judged next.  Classic baselines (pooling, move-to-front,
bandit adjudication, active-learning classifiers) share the same step
interface, and an evaluation engine measures how faithfully the resulting
collections rank retrieval systems.
"""

from .calibration import (
    Calibrator,
    GradeCalibration,
    IdentityCalibrator,
    IsotonicCalibrator,
    LogisticCalibrator,
    calibration_curve,
    fit_calibrator,
    load_calibrator,
    margin,
    optimal_inspection_oracle,
)
from .engine import (
    ExperimentConfig,
    StrategySpec,
    SweepReport,
    SweepRow,
    emit_report,
    load_experiment_config,
    run_session,
    run_sweep,
    score_collection,
)
from .errors import LaraError
from .llm import (
    CompletionClient,
    DecodingConfig,
    PromptTemplate,
    batch_annotate,
    normalize_probabilities,
    render_prompt,
)
from .metrics import (
    average_precision,
    compare_rankings,
    kendall_tau_b,
    max_drop,
    ndcg,
    overlap,
    score_systems,
)
from .service import LaraService, build_app
from .simulation import OracleAnnotator, SynthConfig, distort, generate_collection
from .strategies import (
    FinalLabels,
    JudgmentPool,
    Strategy,
    binarize,
    make_strategy,
    plan_groups,
    run_strategy,
)
from .trec_io import (
    Collection,
    Manifest,
    load_collection,
    parse_qrels,
    parse_run,
    read_probs,
    write_collection,
    write_qrels,
)

__version__ = "0.1.0"

__all__ = [
    "Calibrator",
    "Collection",
    "CompletionClient",
    "DecodingConfig",
    "ExperimentConfig",
    "FinalLabels",
    "GradeCalibration",
    "IdentityCalibrator",
    "IsotonicCalibrator",
    "JudgmentPool",
    "LaraError",
    "LaraService",
    "LogisticCalibrator",
    "Manifest",
    "OracleAnnotator",
    "PromptTemplate",
    "Strategy",
    "StrategySpec",
    "SweepReport",
    "SweepRow",
    "SynthConfig",
    "average_precision",
    "batch_annotate",
    "binarize",
    "build_app",
    "calibration_curve",
    "compare_rankings",
    "distort",
    "emit_report",
    "fit_calibrator",
    "generate_collection",
    "kendall_tau_b",
    "load_calibrator",
    "load_collection",
    "load_experiment_config",
    "make_strategy",
    "margin",
    "max_drop",
    "ndcg",
    "normalize_probabilities",
    "optimal_inspection_oracle",
    "overlap",
    "parse_qrels",
    "parse_run",
    "plan_groups",
    "read_probs",
    "render_prompt",
    "run_session",
    "run_strategy",
    "run_sweep",
    "score_collection",
    "score_systems",
    "write_collection",
    "write_qrels",
]
