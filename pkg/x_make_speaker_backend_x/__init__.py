"""Public interface for the speaker verification back-end."""

from __future__ import annotations

from x_make_speaker_backend_x.calibration import (
    CalibrationError,
    CalibrationModel,
    CalibrationTrialSpec,
    FusionModel,
    build_calibration_trials,
    fit,
    fit_fusion,
    fuse,
    load_model,
    save_model,
)
from x_make_speaker_backend_x.calibration import apply as apply_calibration
from x_make_speaker_backend_x.core_io import (
    Cohort,
    Embedding,
    EmbeddingStore,
    FormatError,
    FrameCorpus,
    Label,
    ScoreSet,
    Trial,
    TrialList,
    load_embeddings,
    load_scores,
    load_trials,
    save_embeddings,
    save_scores,
    save_trials,
)
from x_make_speaker_backend_x.json_contracts import validate_payload, validate_schema
from x_make_speaker_backend_x.ledger import config_hash
from x_make_speaker_backend_x.metrics import (
    DcfParams,
    MetricRow,
    act_dcf,
    cllr,
    eer,
    evaluate_scores,
    min_dcf,
)
from x_make_speaker_backend_x.pipeline import (
    TOOL_VERSION,
    EvaluationReport,
    PipelineConfig,
    load_pipeline_config,
    render_report_text,
    run_pipeline,
    version_and_provenance,
)
from x_make_speaker_backend_x.quality import (
    CombineMode,
    QmfConfig,
    QmfKind,
    QualityVector,
    assemble_quality_matrix,
    assemble_quality_vector,
)
from x_make_speaker_backend_x.run_reports import write_run_report
from x_make_speaker_backend_x.scoring import (
    Scorer,
    SnormConfig,
    adaptive_snorm,
    build_cohort,
    cosine_score,
    score_trials,
)
from x_make_speaker_backend_x.simulator import (
    SimConfig,
    generate_trialset,
    write_simulation,
)
from x_make_speaker_backend_x.x_cls_make_speaker_backend_x import (
    XClsMakeSpeakerBackendX,
)
from x_make_speaker_backend_x.x_logging_utils_x import (
    get_logger,
    log_debug,
    log_error,
    log_info,
    set_log_level,
)

__version__ = TOOL_VERSION

__all__ = [
    "CalibrationError",
    "CalibrationModel",
    "CalibrationTrialSpec",
    "Cohort",
    "CombineMode",
    "DcfParams",
    "Embedding",
    "EmbeddingStore",
    "EvaluationReport",
    "FormatError",
    "FrameCorpus",
    "FusionModel",
    "Label",
    "MetricRow",
    "PipelineConfig",
    "QmfConfig",
    "QmfKind",
    "QualityVector",
    "ScoreSet",
    "Scorer",
    "SimConfig",
    "SnormConfig",
    "Trial",
    "TrialList",
    "XClsMakeSpeakerBackendX",
    "__version__",
    "act_dcf",
    "adaptive_snorm",
    "apply_calibration",
    "assemble_quality_matrix",
    "assemble_quality_vector",
    "build_calibration_trials",
    "build_cohort",
    "cllr",
    "config_hash",
    "cosine_score",
    "eer",
    "evaluate_scores",
    "fit",
    "fit_fusion",
    "fuse",
    "generate_trialset",
    "get_logger",
    "load_embeddings",
    "load_model",
    "load_pipeline_config",
    "load_scores",
    "load_trials",
    "log_debug",
    "log_error",
    "log_info",
    "min_dcf",
    "render_report_text",
    "run_pipeline",
    "save_embeddings",
    "save_model",
    "save_scores",
    "save_trials",
    "set_log_level",
    "score_trials",
    "validate_payload",
    "validate_schema",
    "version_and_provenance",
    "write_run_report",
]
