"""Trial scoring and adaptive s-normalization against an imposter cohort."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import StrEnum
from typing import TYPE_CHECKING

import numpy as np

from .core_io import Cohort, Embedding, EmbeddingStore, ScoreSet, TrialList
from .x_logging_utils_x import log_debug, log_info

if TYPE_CHECKING:
    from .core_io import FloatArray

DEFAULT_COHORT_TOP_N = 100
_CHUNK_ROWS = 1024


class ZeroNormError(ValueError):
    """Raised when a vector with zero length must be normalized."""


class DegenerateCohortError(ValueError):
    """Raised when the selected cohort scores have zero spread."""


class CohortSizeError(ValueError):
    """Raised when the cohort cannot supply the requested top-N entries."""


class Scorer(StrEnum):
    COSINE = "cosine"
    INNER_PRODUCT = "inner"

    @classmethod
    def _missing_(cls, value: object) -> Scorer | None:
        if isinstance(value, str) and value.strip().lower() == "inner_product":
            return cls.INNER_PRODUCT
        return None


@dataclass(frozen=True, slots=True)
class SnormConfig:
    """Adaptive s-norm settings: cohort size and the similarity used to rank it."""

    cohort_top_n: int = DEFAULT_COHORT_TOP_N
    similarity: Scorer = Scorer.COSINE

    def __post_init__(self) -> None:
        object.__setattr__(self, "similarity", Scorer(self.similarity))
        if self.cohort_top_n < 2:
            msg = f"cohort_top_n must be at least 2, got {self.cohort_top_n}"
            raise ValueError(msg)

    def to_payload(self) -> dict[str, object]:
        return {"cohort_top_n": self.cohort_top_n, "similarity": self.similarity.value}

    @classmethod
    def from_payload(cls, payload: dict[str, object]) -> SnormConfig:
        top_n = payload.get("cohort_top_n", DEFAULT_COHORT_TOP_N)
        similarity = payload.get("similarity", Scorer.COSINE.value)
        return cls(cohort_top_n=int(str(top_n)), similarity=Scorer(str(similarity)))


def _as_vector(value: Embedding | FloatArray) -> FloatArray:
    if isinstance(value, Embedding):
        return value.vector
    return np.asarray(value, dtype=np.float64)


def _unit_rows(matrix: FloatArray) -> FloatArray:
    norms = np.linalg.norm(matrix, axis=-1, keepdims=True)
    if np.any(norms == 0.0):
        msg = "cannot length-normalize a zero vector"
        raise ZeroNormError(msg)
    return matrix / norms


def cosine_score(enroll: Embedding | FloatArray, test: Embedding | FloatArray) -> float:
    e = _as_vector(enroll)
    t = _as_vector(test)
    norm_e = float(np.linalg.norm(e))
    norm_t = float(np.linalg.norm(t))
    if norm_e == 0.0 or norm_t == 0.0:
        msg = "cosine score of a zero-norm vector is undefined"
        raise ZeroNormError(msg)
    value = float(np.dot(e, t)) / (norm_e * norm_t)
    return min(1.0, max(-1.0, value))


def inner_product_score(
    enroll: Embedding | FloatArray, test: Embedding | FloatArray
) -> float:
    return float(np.dot(_as_vector(enroll), _as_vector(test)))


def build_cohort(store: EmbeddingStore) -> Cohort:
    """Average length-normalized utterances per speaker, then re-normalize."""

    groups = store.by_speaker()
    speaker_ids = tuple(groups)
    means = np.zeros((len(speaker_ids), store.dim), dtype=np.float64)
    for row, speaker in enumerate(speaker_ids):
        indices = [store.index_of(utt_id) for utt_id in groups[speaker]]
        unit = _unit_rows(store.matrix[indices])
        mean = unit.mean(axis=0)
        norm = float(np.linalg.norm(mean))
        if norm == 0.0:
            msg = f"speaker {speaker!r} has a zero mean direction"
            raise ZeroNormError(msg)
        means[row] = mean / norm
    log_info("built cohort of", len(speaker_ids), "speakers")
    return Cohort(speaker_ids, means)


def _trial_indices(
    trials: TrialList, store: EmbeddingStore
) -> tuple[np.ndarray, np.ndarray]:
    enroll = np.empty(len(trials), dtype=np.intp)
    test = np.empty(len(trials), dtype=np.intp)
    for position, trial in enumerate(trials):
        enroll[position] = store.index_of(trial.enroll_id, trial_index=position)
        test[position] = store.index_of(trial.test_id, trial_index=position)
    return enroll, test


def pairwise_scores(
    enroll: FloatArray, test: FloatArray, scorer: Scorer
) -> FloatArray:
    """Row-aligned scores between two matrices of equal shape."""

    if scorer is Scorer.COSINE:
        enroll = _unit_rows(enroll)
        test = _unit_rows(test)
        return np.clip(np.einsum("ij,ij->i", enroll, test), -1.0, 1.0)
    return np.einsum("ij,ij->i", enroll, test)


def score_trials(
    trials: TrialList,
    store: EmbeddingStore,
    scorer: Scorer | str = Scorer.COSINE,
) -> ScoreSet:
    """One raw score per trial, in trial order."""

    resolved = Scorer(scorer)
    if not len(trials):
        return ScoreSet.empty()
    enroll, test = _trial_indices(trials, store)
    matrix = store.matrix
    raw = pairwise_scores(matrix[enroll], matrix[test], resolved)
    log_debug("scored", len(trials), "trials with", resolved.value)
    return ScoreSet(raw)


def cohort_scores(
    vectors: FloatArray, cohort: Cohort, scorer: Scorer
) -> FloatArray:
    """Score matrix between every vector and every cohort mean."""

    if scorer is Scorer.COSINE:
        vectors = _unit_rows(vectors)
        return np.clip(vectors @ cohort.means.T, -1.0, 1.0)
    return vectors @ cohort.means.T


def top_cohort_indices(rank_scores: FloatArray, top_n: int) -> np.ndarray:
    """Indices of the *top_n* highest entries per row.

    Columns must be in lexicographic speaker order; the stable sort then breaks
    ties by speaker id.
    """

    order = np.argsort(-rank_scores, axis=1, kind="stable")
    return order[:, :top_n]


def _check_cohort(cohort: Cohort, top_n: int) -> None:
    if cohort.size == 0:
        msg = "imposter cohort is empty"
        raise CohortSizeError(msg)
    if top_n > cohort.size:
        msg = f"cohort of {cohort.size} speakers cannot supply top {top_n}"
        raise CohortSizeError(msg)


def _chunk_statistics(
    vectors: FloatArray, cohort: Cohort, cfg: SnormConfig, scorer: Scorer
) -> tuple[FloatArray, FloatArray]:
    ranking = cohort_scores(vectors, cohort, cfg.similarity)
    selected = top_cohort_indices(ranking, cfg.cohort_top_n)
    scores = (
        ranking if cfg.similarity is scorer else cohort_scores(vectors, cohort, scorer)
    )
    picked = np.take_along_axis(scores, selected, axis=1)
    return picked.mean(axis=1), picked.std(axis=1)


def cohort_statistics(
    vectors: FloatArray,
    cohort: Cohort,
    cfg: SnormConfig,
    scorer: Scorer | str = Scorer.COSINE,
    *,
    workers: int = 1,
) -> tuple[FloatArray, FloatArray]:
    """Mean and population std of each vector's top-N cohort scores."""

    resolved = Scorer(scorer)
    ordered = cohort.sorted()
    _check_cohort(ordered, cfg.cohort_top_n)
    vectors = np.atleast_2d(np.asarray(vectors, dtype=np.float64))
    chunks = [
        vectors[start : start + _CHUNK_ROWS]
        for start in range(0, vectors.shape[0], _CHUNK_ROWS)
    ]
    if not chunks:
        empty = np.zeros(0, dtype=np.float64)
        return empty, empty.copy()
    if workers > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(
                pool.map(
                    lambda chunk: _chunk_statistics(chunk, ordered, cfg, resolved),
                    chunks,
                )
            )
    else:
        parts = [_chunk_statistics(chunk, ordered, cfg, resolved) for chunk in chunks]
    means = np.concatenate([part[0] for part in parts])
    stds = np.concatenate([part[1] for part in parts])
    return means, stds


def adaptive_snorm(  # noqa: PLR0913 - keyword options keep the call sites explicit
    trials: TrialList,
    raw: ScoreSet,
    store: EmbeddingStore,
    cohort: Cohort,
    cfg: SnormConfig | None = None,
    *,
    scorer: Scorer | str = Scorer.COSINE,
    workers: int = 1,
) -> ScoreSet:
    """Symmetric adaptive s-norm: ½[(s − μ_e)/σ_e + (s − μ_t)/σ_t].

    *scorer* must be the scorer that produced ``raw``; statistics are computed
    once per distinct utterance and reused across trials.
    """

    config = cfg or SnormConfig()
    if len(raw) != len(trials):
        msg = f"{len(raw)} scores for {len(trials)} trials"
        raise ValueError(msg)
    if not len(trials):
        return raw.with_normalized(np.zeros(0, dtype=np.float64))
    enroll, test = _trial_indices(trials, store)
    used = np.unique(np.concatenate([enroll, test]))
    means, stds = cohort_statistics(
        store.matrix[used], cohort, config, scorer, workers=workers
    )
    if np.any(stds == 0.0):
        degenerate = store.ids[int(used[int(np.argmax(stds == 0.0))])]
        msg = f"cohort scores of {degenerate!r} have zero standard deviation"
        raise DegenerateCohortError(msg)
    lookup = np.full(len(store), -1, dtype=np.intp)
    lookup[used] = np.arange(used.size)
    mu_e, sigma_e = means[lookup[enroll]], stds[lookup[enroll]]
    mu_t, sigma_t = means[lookup[test]], stds[lookup[test]]
    s = raw.raw
    normalized = 0.5 * ((s - mu_e) / sigma_e + (s - mu_t) / sigma_t)
    log_info(
        "adaptive s-norm over",
        len(trials),
        "trials, top",
        config.cohort_top_n,
        "of",
        cohort.size,
        "cohort speakers",
    )
    return raw.with_normalized(normalized)


__all__ = [
    "DEFAULT_COHORT_TOP_N",
    "CohortSizeError",
    "DegenerateCohortError",
    "Scorer",
    "SnormConfig",
    "ZeroNormError",
    "adaptive_snorm",
    "build_cohort",
    "cohort_scores",
    "cohort_statistics",
    "cosine_score",
    "inner_product_score",
    "pairwise_scores",
    "score_trials",
    "top_cohort_indices",
]
