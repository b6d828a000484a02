"""Quality measure functions (QMFs) and their symmetric per-trial combination."""

from __future__ import annotations

from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field
from enum import StrEnum
from typing import TYPE_CHECKING

import numpy as np

from .core_io import (
    Cohort,
    Embedding,
    EmbeddingStore,
    FormatError,
    Trial,
    TrialList,
    ensure_aligned,
    format_float,
    iter_records,
    write_lines,
)
from .scoring import CohortSizeError, top_cohort_indices
from .x_logging_utils_x import log_debug

if TYPE_CHECKING:
    from pathlib import Path

    from .core_io import FloatArray, ScoreSet

DEFAULT_IMPOSTER_TOP_N = 100
_LOG_FLOOR = 1e-12


class QualityConfigError(ValueError):
    """Raised for an unusable QMF configuration."""


class MissingMetadataError(ValueError):
    """Raised when an utterance lacks metadata an enabled QMF needs."""


class QmfKind(StrEnum):
    DURATION = "duration"
    SPEECH_DURATION = "speech_duration"
    MAGNITUDE = "magnitude"
    IMPOSTER_MEAN = "imposter_mean"


CANONICAL_ORDER: tuple[QmfKind, ...] = (
    QmfKind.DURATION,
    QmfKind.SPEECH_DURATION,
    QmfKind.MAGNITUDE,
    QmfKind.IMPOSTER_MEAN,
)
_LOG_CAPABLE = frozenset({QmfKind.DURATION, QmfKind.SPEECH_DURATION, QmfKind.MAGNITUDE})


class CombineMode(StrEnum):
    MIN_MAX = "min_max"
    MEAN = "mean"
    MIN = "min"


def _canonical(kinds: Iterable[QmfKind | str]) -> tuple[QmfKind, ...]:
    wanted = {QmfKind(kind) for kind in kinds}
    return tuple(kind for kind in CANONICAL_ORDER if kind in wanted)


@dataclass(frozen=True, slots=True)
class QmfConfig:
    """Which QMFs feed the calibration, and how both trial sides are merged."""

    enabled: tuple[QmfKind, ...] = ()
    duration_clip_frames: int | None = None
    combine: CombineMode = CombineMode.MIN_MAX
    imposter_top_n: int = DEFAULT_IMPOSTER_TOP_N
    log_transform: tuple[QmfKind, ...] = field(default_factory=tuple)

    def __post_init__(self) -> None:
        object.__setattr__(self, "enabled", _canonical(self.enabled))
        object.__setattr__(self, "log_transform", _canonical(self.log_transform))
        object.__setattr__(self, "combine", CombineMode(self.combine))
        if self.duration_clip_frames is not None and self.duration_clip_frames < 1:
            msg = "duration_clip_frames must be a positive integer"
            raise QualityConfigError(msg)
        if self.imposter_top_n < 1:
            msg = "imposter_top_n must be a positive integer"
            raise QualityConfigError(msg)
        unsupported = set(self.log_transform) - _LOG_CAPABLE
        if unsupported:
            names = ", ".join(sorted(kind.value for kind in unsupported))
            msg = f"log transform is only defined for non-negative QMFs, not {names}"
            raise QualityConfigError(msg)

    @property
    def features_per_qmf(self) -> int:
        return 2 if self.combine is CombineMode.MIN_MAX else 1

    @property
    def feature_count(self) -> int:
        return len(self.enabled) * self.features_per_qmf

    def feature_names(self) -> list[str]:
        if self.combine is CombineMode.MIN_MAX:
            suffixes: tuple[str, ...] = ("min", "max")
        else:
            suffixes = (self.combine.value,)
        return [
            f"{kind.value}_{suffix}" for kind in self.enabled for suffix in suffixes
        ]

    def require_enabled(self) -> None:
        if not self.enabled:
            msg = "quality-aware calibration requested but no QMF is enabled"
            raise QualityConfigError(msg)

    def to_payload(self) -> dict[str, object]:
        return {
            "enabled": [kind.value for kind in self.enabled],
            "duration_clip_frames": self.duration_clip_frames,
            "combine": self.combine.value,
            "imposter_top_n": self.imposter_top_n,
            "log_transform": [kind.value for kind in self.log_transform],
        }

    @classmethod
    def from_payload(cls, payload: Mapping[str, object]) -> QmfConfig:
        enabled = payload.get("enabled", [])
        log_transform = payload.get("log_transform", [])
        clip = payload.get("duration_clip_frames")
        return cls(
            enabled=tuple(QmfKind(str(kind)) for kind in _as_list(enabled)),
            duration_clip_frames=None if clip is None else int(str(clip)),
            combine=CombineMode(str(payload.get("combine", CombineMode.MIN_MAX.value))),
            imposter_top_n=int(
                str(payload.get("imposter_top_n", DEFAULT_IMPOSTER_TOP_N))
            ),
            log_transform=tuple(QmfKind(str(kind)) for kind in _as_list(log_transform)),
        )


def _as_list(value: object) -> list[object]:
    if isinstance(value, (list, tuple)):
        return list(value)
    msg = f"expected a list, got {type(value).__name__}"
    raise QualityConfigError(msg)


@dataclass(frozen=True, slots=True)
class QualityVector:
    """The q of the calibration map, ordered by enabled QMF then min/max."""

    values: tuple[float, ...]

    def __len__(self) -> int:
        return len(self.values)

    def as_array(self) -> FloatArray:
        return np.array(self.values, dtype=np.float64)


# Per-utterance measures -------------------------------------------------------


def _clip(count: int, clip: int | None) -> float:
    return float(min(count, clip) if clip is not None else count)


def duration_qmf(utterance: Embedding, clip: int | None = None) -> float:
    return _clip(utterance.n_frames, clip)


def speech_duration_qmf(utterance: Embedding, clip: int | None = None) -> float:
    if utterance.n_speech_frames is None:
        msg = (
            f"utterance {utterance.utt_id!r} has no speech-frame count; run "
            "energy_vad via fill_speech_frames or ingest VAD metadata first"
        )
        raise MissingMetadataError(msg)
    return _clip(utterance.n_speech_frames, clip)


def energy_vad(frame_energies: Iterable[float], threshold_db_below_max: float) -> int:
    """Count frames whose energy lies within the threshold of the loudest frame."""

    energies = np.asarray(list(frame_energies), dtype=np.float64)
    if energies.size == 0:
        msg = "energy_vad needs at least one frame"
        raise ValueError(msg)
    if np.any(energies < 0.0) or not np.all(np.isfinite(energies)):
        msg = "frame energies must be finite and non-negative"
        raise ValueError(msg)
    if threshold_db_below_max <= 0.0:
        msg = "threshold_db_below_max must be positive"
        raise ValueError(msg)
    peak = float(energies.max())
    if peak == 0.0:
        return 0
    with np.errstate(divide="ignore"):
        relative_db = 10.0 * np.log10(energies / peak)
    return int(np.count_nonzero(relative_db >= -threshold_db_below_max))


def magnitude_qmf(utterance: Embedding) -> float:
    return float(np.linalg.norm(utterance.vector))


def _imposter_means(vectors: FloatArray, cohort: Cohort, top_n: int) -> FloatArray:
    if cohort.size == 0:
        msg = "imposter cohort is empty"
        raise CohortSizeError(msg)
    if top_n > cohort.size:
        msg = f"cohort of {cohort.size} speakers cannot supply top {top_n}"
        raise CohortSizeError(msg)
    ordered = cohort.sorted()
    inner = np.atleast_2d(vectors) @ ordered.means.T
    selected = top_cohort_indices(inner, top_n)
    return np.take_along_axis(inner, selected, axis=1).mean(axis=1)


def imposter_mean_qmf(utterance: Embedding, cohort: Cohort, top_n: int) -> float:
    """Mean inner product with the *top_n* cohort entries ranked by inner product.

    Uses the raw vector, so the embedding magnitude is retained.
    """

    return float(_imposter_means(utterance.vector, cohort, top_n)[0])


# Trial-level combination ----------------------------------------------------


def symmetric_combine(
    q_enroll: float, q_test: float, mode: CombineMode | str = CombineMode.MIN_MAX
) -> tuple[float, ...]:
    resolved = CombineMode(mode)
    low, high = (q_enroll, q_test) if q_enroll <= q_test else (q_test, q_enroll)
    if resolved is CombineMode.MIN_MAX:
        return (float(low), float(high))
    if resolved is CombineMode.MEAN:
        return (float((low + high) / 2.0),)
    return (float(low),)


def _transform(kind: QmfKind, value: float, cfg: QmfConfig) -> float:
    if kind in cfg.log_transform:
        return float(np.log(max(value, _LOG_FLOOR)))
    return value


def _utterance_measure(
    kind: QmfKind, utterance: Embedding, cohort: Cohort | None, cfg: QmfConfig
) -> float:
    if kind is QmfKind.DURATION:
        value = duration_qmf(utterance, cfg.duration_clip_frames)
    elif kind is QmfKind.SPEECH_DURATION:
        value = speech_duration_qmf(utterance, cfg.duration_clip_frames)
    elif kind is QmfKind.MAGNITUDE:
        value = magnitude_qmf(utterance)
    else:
        if cohort is None:
            msg = "the imposter_mean QMF needs a cohort"
            raise QualityConfigError(msg)
        value = imposter_mean_qmf(utterance, cohort, cfg.imposter_top_n)
    return _transform(kind, value, cfg)


def assemble_quality_vector(
    trial: Trial,
    store: EmbeddingStore,
    cohort: Cohort | None,
    cfg: QmfConfig,
) -> QualityVector:
    cfg.require_enabled()
    enroll = store.get(trial.enroll_id)
    test = store.get(trial.test_id)
    values: list[float] = []
    for kind in cfg.enabled:
        values.extend(
            symmetric_combine(
                _utterance_measure(kind, enroll, cohort, cfg),
                _utterance_measure(kind, test, cohort, cfg),
                cfg.combine,
            )
        )
    return QualityVector(tuple(values))


def utterance_measures(
    utt_ids: list[str],
    store: EmbeddingStore,
    cohort: Cohort | None,
    cfg: QmfConfig,
) -> dict[QmfKind, FloatArray]:
    """Every enabled measure for every listed utterance, imposter means batched."""

    utterances = [store.get(utt_id) for utt_id in utt_ids]
    measures: dict[QmfKind, FloatArray] = {}
    for kind in cfg.enabled:
        if kind is QmfKind.IMPOSTER_MEAN:
            if cohort is None:
                msg = "the imposter_mean QMF needs a cohort"
                raise QualityConfigError(msg)
            vectors = (
                np.stack([u.vector for u in utterances])
                if utterances
                else np.zeros((0, store.dim))
            )
            values = (
                _imposter_means(vectors, cohort, cfg.imposter_top_n)
                if utterances
                else np.zeros(0)
            )
        else:
            values = np.array(
                [_utterance_measure(kind, u, cohort, cfg) for u in utterances],
                dtype=np.float64,
            )
        measures[kind] = values
    return measures


def assemble_quality_matrix(
    trials: TrialList,
    store: EmbeddingStore,
    cohort: Cohort | None,
    cfg: QmfConfig,
) -> FloatArray:
    """Stack the quality vectors of every trial into an (n, K) matrix."""

    cfg.require_enabled()
    utt_ids = trials.utterance_ids()
    for position, trial in enumerate(trials):
        store.index_of(trial.enroll_id, trial_index=position)
        store.index_of(trial.test_id, trial_index=position)
    position_of = {utt_id: row for row, utt_id in enumerate(utt_ids)}
    measures = utterance_measures(utt_ids, store, cohort, cfg)
    enroll_rows = np.array([position_of[t.enroll_id] for t in trials], dtype=np.intp)
    test_rows = np.array([position_of[t.test_id] for t in trials], dtype=np.intp)
    columns: list[FloatArray] = []
    for kind in cfg.enabled:
        values = measures[kind]
        left, right = values[enroll_rows], values[test_rows]
        low, high = np.minimum(left, right), np.maximum(left, right)
        if cfg.combine is CombineMode.MIN_MAX:
            columns.extend([low, high])
        elif cfg.combine is CombineMode.MEAN:
            columns.append((low + high) / 2.0)
        else:
            columns.append(low)
    log_debug(
        "assembled", cfg.feature_count, "quality features for", len(trials), "trials"
    )
    if not columns or not len(trials):
        return np.zeros((len(trials), cfg.feature_count), dtype=np.float64)
    return np.column_stack(columns)


# Files ----------------------------------------------------------------------


def load_frame_energies(path: Path | str) -> dict[str, FloatArray]:
    """Parse ``utt_id e1 ... eT`` lines."""

    energies: dict[str, FloatArray] = {}
    for line_number, tokens in iter_records(path):
        if len(tokens) < 2:
            raise FormatError(path, line_number, "expected at least one energy")
        try:
            energies[tokens[0]] = np.array(
                [float(token) for token in tokens[1:]], dtype=np.float64
            )
        except ValueError as exc:
            raise FormatError(path, line_number, str(exc)) from exc
    return energies


def fill_speech_frames(
    store: EmbeddingStore,
    energies: Mapping[str, Iterable[float]],
    threshold_db_below_max: float,
) -> EmbeddingStore:
    """Run the energy VAD per utterance and record the speech-frame counts."""

    counts: dict[str, int] = {}
    for utt_id, frame_energies in energies.items():
        if utt_id not in store:
            continue
        speech = energy_vad(frame_energies, threshold_db_below_max)
        counts[utt_id] = min(speech, store.get(utt_id).n_frames)
    return store.with_speech_frames(counts)


def save_quality(matrix: FloatArray, trials: TrialList, path: Path | str) -> None:
    """Write ``enroll_id test_id q1 ... qK`` lines."""

    if matrix.shape[0] != len(trials):
        msg = f"{matrix.shape[0]} quality rows for {len(trials)} trials"
        raise ValueError(msg)
    write_lines(
        path,
        [
            " ".join([trial.enroll_id, trial.test_id, *(format_float(v) for v in row)])
            for trial, row in zip(trials, matrix, strict=True)
        ],
    )


def load_quality(path: Path | str) -> tuple[TrialList, FloatArray]:
    pairs: list[Trial] = []
    rows: list[list[float]] = []
    for line_number, tokens in iter_records(path):
        if len(tokens) < 2:
            raise FormatError(path, line_number, "expected enroll and test ids")
        try:
            row = [float(token) for token in tokens[2:]]
        except ValueError as exc:
            raise FormatError(path, line_number, str(exc)) from exc
        if rows and len(row) != len(rows[0]):
            raise FormatError(path, line_number, "inconsistent feature count")
        pairs.append(Trial(tokens[0], tokens[1]))
        rows.append(row)
    width = len(rows[0]) if rows else 0
    matrix = np.array(rows, dtype=np.float64).reshape(len(rows), width)
    return TrialList(tuple(pairs)), matrix


def check_quality_alignment(
    scores: ScoreSet, quality: FloatArray, trials: TrialList
) -> None:
    ensure_aligned(scores, trials)
    if quality.shape[0] != len(trials):
        msg = f"{quality.shape[0]} quality rows for {len(trials)} trials"
        raise ValueError(msg)


__all__ = [
    "CANONICAL_ORDER",
    "DEFAULT_IMPOSTER_TOP_N",
    "CombineMode",
    "MissingMetadataError",
    "QmfConfig",
    "QmfKind",
    "QualityConfigError",
    "QualityVector",
    "assemble_quality_matrix",
    "assemble_quality_vector",
    "check_quality_alignment",
    "duration_qmf",
    "energy_vad",
    "fill_speech_frames",
    "imposter_mean_qmf",
    "load_frame_energies",
    "load_quality",
    "magnitude_qmf",
    "save_quality",
    "speech_duration_qmf",
    "symmetric_combine",
    "utterance_measures",
]
