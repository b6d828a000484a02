"""End-to-end back-end run: score, s-norm, QMFs, calibration, evaluation."""

from __future__ import annotations

import json
from collections.abc import Callable, Mapping
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, TypeVar, cast

from jsonschema.exceptions import ValidationError

from .calibration import (
    DEFAULT_PRIOR,
    CalibrationModel,
    CalibrationTrialSpec,
    build_calibration_trials,
    fit,
)
from .core_io import ScoreSet, load_embeddings, load_trials
from .json_contracts import PIPELINE_CONFIG_SCHEMA, validate_payload
from .ledger import config_hash
from .metrics import DcfParams, MetricRow, evaluate_scores
from .quality import QmfConfig, QmfKind, assemble_quality_matrix
from .scoring import Scorer, SnormConfig, adaptive_snorm, build_cohort, score_trials
from .x_logging_utils_x import log_info

if TYPE_CHECKING:
    from .core_io import Cohort, EmbeddingStore, FloatArray, TrialList

TOOL_NAME = "x_make_speaker_backend_x"
TOOL_VERSION = "0.1.0"
STAGES: tuple[str, ...] = ("load", "score", "snorm", "qmf", "calibrate", "evaluate")
DEFAULT_DCF: tuple[DcfParams, ...] = (
    DcfParams(p_target=0.01),
    DcfParams(p_target=0.05),
)

_T = TypeVar("_T")


class PipelineConfigError(ValueError):
    """Raised for a missing or malformed pipeline configuration."""


class PipelineStageError(RuntimeError):
    """Raised when a pipeline stage fails; names the stage and chains the cause."""

    def __init__(self, stage: str, cause: BaseException) -> None:
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass(frozen=True, slots=True)
class PipelineConfig:
    embeddings: Path
    trials: Path
    cohort_embeddings: Path
    scorer: Scorer = Scorer.COSINE
    snorm: SnormConfig = field(default_factory=SnormConfig)
    qmf: QmfConfig = field(
        default_factory=lambda: QmfConfig(enabled=(QmfKind.DURATION,))
    )
    dcf: tuple[DcfParams, ...] = DEFAULT_DCF
    calibration_trials_per_type: int = 1000
    prior: float = DEFAULT_PRIOR
    seed: int = 7
    report_json: Path | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "scorer", Scorer(self.scorer))
        object.__setattr__(self, "dcf", tuple(self.dcf))
        if not self.dcf:
            msg = "at least one DCF operating point is required"
            raise PipelineConfigError(msg)
        if not 0.0 < self.prior < 1.0:
            msg = f"prior must lie in (0, 1), got {self.prior}"
            raise PipelineConfigError(msg)

    def to_payload(self) -> dict[str, object]:
        return {
            "embeddings": str(self.embeddings),
            "trials": str(self.trials),
            "cohort_embeddings": str(self.cohort_embeddings),
            "scorer": self.scorer.value,
            "snorm": self.snorm.to_payload(),
            "qmf": self.qmf.to_payload(),
            "dcf": [params.to_payload() for params in self.dcf],
            "calibration_trials_per_type": self.calibration_trials_per_type,
            "prior": self.prior,
            "seed": self.seed,
            "report_json": str(self.report_json) if self.report_json else None,
        }

    @classmethod
    def from_payload(
        cls, payload: Mapping[str, object], *, base_dir: Path | None = None
    ) -> PipelineConfig:
        """Validate *payload*; relative paths resolve against *base_dir*."""

        try:
            validate_payload(dict(payload), PIPELINE_CONFIG_SCHEMA)
        except ValidationError as exc:
            location = "/".join(str(part) for part in exc.absolute_path) or "<root>"
            msg = f"invalid pipeline config at {location}: {exc.message}"
            raise PipelineConfigError(msg) from exc

        def _resolve(value: object) -> Path:
            path = Path(str(value))
            return path if base_dir is None or path.is_absolute() else base_dir / path

        report = payload.get("report_json")
        dcf_payload = cast("list[Mapping[str, object]] | None", payload.get("dcf"))
        try:
            return cls(
                embeddings=_resolve(payload["embeddings"]),
                trials=_resolve(payload["trials"]),
                cohort_embeddings=_resolve(payload["cohort_embeddings"]),
                scorer=Scorer(str(payload.get("scorer", Scorer.COSINE.value))),
                snorm=SnormConfig.from_payload(
                    cast("dict[str, object]", payload.get("snorm", {}))
                ),
                qmf=(
                    QmfConfig.from_payload(cast("Mapping[str, object]", payload["qmf"]))
                    if "qmf" in payload
                    else QmfConfig(enabled=(QmfKind.DURATION,))
                ),
                dcf=(
                    tuple(DcfParams.from_payload(item) for item in dcf_payload)
                    if dcf_payload
                    else DEFAULT_DCF
                ),
                calibration_trials_per_type=int(
                    cast("int", payload.get("calibration_trials_per_type", 1000))
                ),
                prior=float(cast("float", payload.get("prior", DEFAULT_PRIOR))),
                seed=int(cast("int", payload.get("seed", 7))),
                report_json=None if report is None else _resolve(report),
            )
        except ValueError as exc:
            msg = f"invalid pipeline config: {exc}"
            raise PipelineConfigError(msg) from exc


def load_pipeline_config(path: Path | str) -> PipelineConfig:
    source = Path(path)
    try:
        payload = json.loads(source.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        msg = f"cannot read pipeline config {source}: {exc}"
        raise PipelineConfigError(msg) from exc
    if not isinstance(payload, dict):
        msg = f"pipeline config {source} must be a JSON object"
        raise PipelineConfigError(msg)
    return PipelineConfig.from_payload(payload, base_dir=source.parent)


@dataclass(frozen=True, slots=True)
class ProvenanceHeader:
    tool: str
    version: str
    config_hash: str
    seeds: Mapping[str, int]

    def to_payload(self) -> dict[str, object]:
        return {
            "tool": self.tool,
            "version": self.version,
            "config_hash": self.config_hash,
            "seeds": dict(self.seeds),
        }


def version_and_provenance(
    config: Mapping[str, object] | PipelineConfig | None = None,
    *,
    seeds: Mapping[str, int] | None = None,
) -> ProvenanceHeader:
    """Tool version, SHA-256 of the canonical config JSON and the seeds used."""

    if isinstance(config, PipelineConfig):
        payload: Mapping[str, object] = config.to_payload()
        resolved_seeds = dict(seeds or {"seed": config.seed})
    else:
        payload = dict(config or {})
        resolved_seeds = dict(seeds or {})
    return ProvenanceHeader(
        tool=TOOL_NAME,
        version=TOOL_VERSION,
        config_hash=config_hash(dict(payload)),
        seeds=resolved_seeds,
    )


@dataclass(frozen=True, slots=True)
class EvaluationReport:
    header: ProvenanceHeader
    rows: tuple[MetricRow, ...]
    calibration: CalibrationModel
    n_trials: int
    n_calibration_trials: int

    def row(self, name: str) -> MetricRow:
        for row in self.rows:
            if row.name == name:
                return row
        msg = f"no report row named {name!r}"
        raise KeyError(msg)

    def to_payload(self) -> dict[str, object]:
        return {
            "header": self.header.to_payload(),
            "trials": self.n_trials,
            "calibration_trials": self.n_calibration_trials,
            "calibration": self.calibration.to_payload(),
            "rows": [row.to_payload() for row in self.rows],
        }


def render_report_text(report: EvaluationReport) -> str:
    """Aligned plain-text table, metrics with four decimals, EER in percent."""

    params = report.rows[0].params if report.rows else ()
    headers = [
        "stage",
        "EER(%)",
        *(p.label() for p in params),
        *(f"actDCF(p={p.p_target:g})" for p in params),
        "Cllr",
    ]
    table: list[list[str]] = [headers]
    for row in report.rows:
        act = (
            [f"{value:.4f}" for value in row.act_dcf]
            if row.act_dcf is not None
            else ["-"] * len(params)
        )
        table.append(
            [
                row.name,
                f"{100.0 * row.eer:.4f}",
                *(f"{value:.4f}" for value in row.min_dcf),
                *act,
                f"{row.cllr:.4f}" if row.cllr is not None else "-",
            ]
        )
    widths = [
        max(len(line[column]) for line in table) for column in range(len(headers))
    ]
    header = report.header
    seeds = " ".join(f"{key}={value}" for key, value in sorted(header.seeds.items()))
    lines = [
        f"# {header.tool} {header.version}",
        f"# config {header.config_hash}",
        f"# seeds {seeds}",
    ]
    for line in table:
        cells = [line[0].ljust(widths[0])]
        cells.extend(
            cell.rjust(width)
            for cell, width in zip(line[1:], widths[1:], strict=True)
        )
        lines.append("  ".join(cells).rstrip())
    return "\n".join(lines) + "\n"


def _stage(name: str, action: Callable[[], _T]) -> _T:
    log_info("stage", name, "started")
    try:
        result = action()
    except Exception as exc:
        raise PipelineStageError(name, exc) from exc
    log_info("stage", name, "finished")
    return result


@dataclass(frozen=True, slots=True)
class _Inputs:
    store: EmbeddingStore
    trials: TrialList
    training: EmbeddingStore


def _load(cfg: PipelineConfig) -> _Inputs:
    for path in (cfg.embeddings, cfg.trials, cfg.cohort_embeddings):
        if not path.is_file():
            msg = f"input file {path} does not exist"
            raise PipelineConfigError(msg)
    trials = load_trials(cfg.trials)
    if not trials.is_labeled:
        msg = "evaluation needs a labeled trial list"
        raise PipelineConfigError(msg)
    return _Inputs(
        store=load_embeddings(cfg.embeddings),
        trials=trials,
        training=load_embeddings(cfg.cohort_embeddings),
    )


def run_pipeline(cfg: PipelineConfig, *, workers: int = 1) -> EvaluationReport:
    """Run every stage in order; any failure raises ``PipelineStageError``."""

    inputs = _stage("load", lambda: _load(cfg))

    def _score() -> tuple[TrialList, FloatArray, FloatArray]:
        trial_spec = CalibrationTrialSpec(
            trials_per_type=cfg.calibration_trials_per_type
        )
        calibration_trials = build_calibration_trials(
            inputs.training, trial_spec, cfg.seed
        )
        raw_eval = score_trials(inputs.trials, inputs.store, cfg.scorer).raw
        raw_cal = score_trials(calibration_trials, inputs.training, cfg.scorer).raw
        return calibration_trials, raw_eval, raw_cal

    calibration_trials, raw_eval, raw_cal = _stage("score", _score)

    def _snorm() -> tuple[Cohort, FloatArray, FloatArray]:
        cohort = build_cohort(inputs.training)
        norm_eval = adaptive_snorm(
            inputs.trials,
            ScoreSet(raw_eval),
            inputs.store,
            cohort,
            cfg.snorm,
            scorer=cfg.scorer,
            workers=workers,
        ).normalized
        norm_cal = adaptive_snorm(
            calibration_trials,
            ScoreSet(raw_cal),
            inputs.training,
            cohort,
            cfg.snorm,
            scorer=cfg.scorer,
            workers=workers,
        ).normalized
        return cohort, cast("FloatArray", norm_eval), cast("FloatArray", norm_cal)

    cohort, norm_eval, norm_cal = _stage("snorm", _snorm)

    def _qmf() -> tuple[FloatArray | None, FloatArray | None]:
        if not cfg.qmf.enabled:
            return None, None
        q_eval = assemble_quality_matrix(inputs.trials, inputs.store, cohort, cfg.qmf)
        q_cal = assemble_quality_matrix(
            calibration_trials, inputs.training, cohort, cfg.qmf
        )
        return q_eval, q_cal

    q_eval, q_cal = _stage("qmf", _qmf)

    def _calibrate() -> tuple[CalibrationModel, FloatArray]:
        model = fit(
            norm_cal,
            q_cal,
            calibration_trials.labels_array(),
            cfg.prior,
            qmf_config=cfg.qmf if cfg.qmf.enabled else None,
        )
        return model, model.apply_batch(norm_eval, q_eval)

    model, llr_eval = _stage("calibrate", _calibrate)

    def _evaluate() -> tuple[MetricRow, ...]:
        labels = inputs.trials.labels_array()
        return (
            evaluate_scores(raw_eval, labels, cfg.dcf, name="raw"),
            evaluate_scores(norm_eval, labels, cfg.dcf, name="normalized"),
            evaluate_scores(llr_eval, labels, cfg.dcf, use_llr=True, name="calibrated"),
        )

    rows = _stage("evaluate", _evaluate)
    return EvaluationReport(
        header=version_and_provenance(cfg),
        rows=rows,
        calibration=model,
        n_trials=len(inputs.trials),
        n_calibration_trials=len(calibration_trials),
    )


__all__ = [
    "DEFAULT_DCF",
    "STAGES",
    "TOOL_NAME",
    "TOOL_VERSION",
    "EvaluationReport",
    "PipelineConfig",
    "PipelineConfigError",
    "PipelineStageError",
    "ProvenanceHeader",
    "load_pipeline_config",
    "render_report_text",
    "run_pipeline",
    "version_and_provenance",
]
