"""Domain types and deterministic text formats shared by every pipeline stage.

All formats are whitespace separated with one record per line. Floats are
written with ``repr`` so every value round-trips bit-exactly; ``-`` marks an
absent optional field.
"""

from __future__ import annotations

from collections.abc import Iterable, Iterator, Mapping, Sequence
from dataclasses import dataclass, field
from enum import StrEnum
from pathlib import Path

import numpy as np
import numpy.typing as npt

FloatArray = npt.NDArray[np.float64]
ABSENT = "-"
_NORM_TOLERANCE = 1e-6


class FormatError(ValueError):
    """Raised when a record does not follow its file format."""

    def __init__(self, path: Path | str, line_number: int, detail: str) -> None:
        super().__init__(f"{path}:{line_number}: {detail}")
        self.path = str(path)
        self.line_number = line_number
        self.detail = detail


class DimensionError(ValueError):
    """Raised when vectors that must share a dimension do not."""


class DuplicateIdError(ValueError):
    """Raised when an identifier appears twice where it must be unique."""


class NonFiniteValueError(ValueError):
    """Raised when a vector or score contains NaN or infinity."""


class MixedLabelsError(ValueError):
    """Raised when a trial list mixes labeled and unlabeled trials."""


class UnknownIdError(ValueError):
    """Raised when a trial refers to an utterance missing from the store."""

    def __init__(self, utt_id: str, trial_index: int | None = None) -> None:
        where = f" (trial {trial_index})" if trial_index is not None else ""
        super().__init__(f"unknown utterance id {utt_id!r}{where}")
        self.utt_id = utt_id
        self.trial_index = trial_index


def format_float(value: float) -> str:
    return repr(float(value))


def _frozen_array(values: object, *, ndim: int, what: str) -> FloatArray:
    array = np.array(values, dtype=np.float64)
    if array.ndim != ndim:
        msg = f"{what} must be {ndim}-dimensional, got shape {array.shape}"
        raise DimensionError(msg)
    if not np.all(np.isfinite(array)):
        msg = f"{what} contains non-finite values"
        raise NonFiniteValueError(msg)
    array.setflags(write=False)
    return array


def _parse_optional_int(token: str) -> int | None:
    return None if token == ABSENT else int(token)


def _parse_optional_str(token: str) -> str | None:
    return None if token == ABSENT else token


def iter_records(path: Path | str) -> Iterator[tuple[int, list[str]]]:
    with Path(path).open(encoding="utf-8") as handle:
        for line_number, line in enumerate(handle, start=1):
            tokens = line.split()
            if tokens:
                yield line_number, tokens


# Embeddings -----------------------------------------------------------------


@dataclass(frozen=True, slots=True, eq=False, kw_only=True)
class Embedding:
    """Utterance embedding with the frame metadata used by quality measures.

    One frame is 10 ms of audio.
    """

    utt_id: str
    speaker_id: str | None = None
    vector: FloatArray
    n_frames: int
    n_speech_frames: int | None = None

    def __post_init__(self) -> None:
        object.__setattr__(
            self,
            "vector",
            _frozen_array(self.vector, ndim=1, what=f"embedding {self.utt_id!r}"),
        )
        if self.n_frames < 0:
            msg = f"embedding {self.utt_id!r}: n_frames must be non-negative"
            raise ValueError(msg)
        if self.n_speech_frames is not None and not (
            0 <= self.n_speech_frames <= self.n_frames
        ):
            msg = (
                f"embedding {self.utt_id!r}: n_speech_frames "
                f"{self.n_speech_frames} outside [0, {self.n_frames}]"
            )
            raise ValueError(msg)

    @property
    def dim(self) -> int:
        return int(self.vector.shape[0])

    def same_as(self, other: Embedding) -> bool:
        return (
            self.utt_id == other.utt_id
            and self.speaker_id == other.speaker_id
            and self.n_frames == other.n_frames
            and self.n_speech_frames == other.n_speech_frames
            and np.array_equal(self.vector, other.vector)
        )


class EmbeddingStore:
    """Immutable, ordered collection of embeddings of one dimension."""

    __slots__ = ("_embeddings", "_index", "_matrix")

    def __init__(self, embeddings: Iterable[Embedding] = ()) -> None:
        items = tuple(embeddings)
        index: dict[str, int] = {}
        for position, embedding in enumerate(items):
            if embedding.utt_id in index:
                msg = f"duplicate utterance id {embedding.utt_id!r}"
                raise DuplicateIdError(msg)
            index[embedding.utt_id] = position
        dims = {embedding.dim for embedding in items}
        if len(dims) > 1:
            msg = f"embeddings have inconsistent dimensions {sorted(dims)}"
            raise DimensionError(msg)
        dim = dims.pop() if dims else 0
        matrix = (
            np.stack([embedding.vector for embedding in items])
            if items
            else np.zeros((0, dim), dtype=np.float64)
        )
        matrix.setflags(write=False)
        self._embeddings = items
        self._index = index
        self._matrix = matrix

    @classmethod
    def from_embeddings(cls, embeddings: Iterable[Embedding]) -> EmbeddingStore:
        return cls(embeddings)

    def __len__(self) -> int:
        return len(self._embeddings)

    def __iter__(self) -> Iterator[Embedding]:
        return iter(self._embeddings)

    def __contains__(self, utt_id: object) -> bool:
        return utt_id in self._index

    @property
    def dim(self) -> int:
        return int(self._matrix.shape[1])

    @property
    def matrix(self) -> FloatArray:
        return self._matrix

    @property
    def ids(self) -> tuple[str, ...]:
        return tuple(embedding.utt_id for embedding in self._embeddings)

    def get(self, utt_id: str) -> Embedding:
        return self._embeddings[self.index_of(utt_id)]

    def index_of(self, utt_id: str, *, trial_index: int | None = None) -> int:
        try:
            return self._index[utt_id]
        except KeyError as exc:
            raise UnknownIdError(utt_id, trial_index) from exc

    def by_speaker(self) -> dict[str, list[str]]:
        """Group utterance ids by speaker, speakers in lexicographic order."""

        groups: dict[str, list[str]] = {}
        for embedding in self._embeddings:
            if embedding.speaker_id is None:
                msg = f"embedding {embedding.utt_id!r} has no speaker_id"
                raise ValueError(msg)
            groups.setdefault(embedding.speaker_id, []).append(embedding.utt_id)
        return {speaker: groups[speaker] for speaker in sorted(groups)}

    def speakers(self) -> tuple[str, ...]:
        return tuple(self.by_speaker())

    def with_speech_frames(self, speech_frames: Mapping[str, int]) -> EmbeddingStore:
        """Return a copy whose speech-frame counts come from *speech_frames*."""

        updated: list[Embedding] = []
        for embedding in self._embeddings:
            count = speech_frames.get(embedding.utt_id, embedding.n_speech_frames)
            updated.append(
                Embedding(
                    utt_id=embedding.utt_id,
                    speaker_id=embedding.speaker_id,
                    vector=embedding.vector,
                    n_frames=embedding.n_frames,
                    n_speech_frames=count,
                )
            )
        return EmbeddingStore(updated)


def load_embeddings(path: Path | str) -> EmbeddingStore:
    """Parse ``utt_id speaker_id n_frames n_speech_frames d v1 ... vd`` lines."""

    embeddings: list[Embedding] = []
    seen: set[str] = set()
    dim: int | None = None
    for line_number, tokens in iter_records(path):
        if len(tokens) < 5:
            raise FormatError(path, line_number, "expected at least 5 fields")
        utt_id, speaker_token, frames_token, speech_token, dim_token = tokens[:5]
        try:
            record_dim = int(dim_token)
            n_frames = int(frames_token)
            n_speech = _parse_optional_int(speech_token)
            values = [float(token) for token in tokens[5:]]
        except ValueError as exc:
            raise FormatError(path, line_number, str(exc)) from exc
        if record_dim != len(values):
            detail = f"declared dimension {record_dim} but found {len(values)} values"
            raise FormatError(path, line_number, detail)
        if dim is not None and record_dim != dim:
            msg = f"{path}:{line_number}: dimension {record_dim} differs from {dim}"
            raise DimensionError(msg)
        if utt_id in seen:
            msg = f"{path}:{line_number}: duplicate utterance id {utt_id!r}"
            raise DuplicateIdError(msg)
        if not all(np.isfinite(values)):
            msg = f"{path}:{line_number}: non-finite value in {utt_id!r}"
            raise NonFiniteValueError(msg)
        try:
            embedding = Embedding(
                utt_id=utt_id,
                speaker_id=_parse_optional_str(speaker_token),
                vector=np.array(values, dtype=np.float64),
                n_frames=n_frames,
                n_speech_frames=n_speech,
            )
        except ValueError as exc:
            raise FormatError(path, line_number, str(exc)) from exc
        dim = record_dim
        seen.add(utt_id)
        embeddings.append(embedding)
    return EmbeddingStore(embeddings)


def save_embeddings(store: EmbeddingStore, path: Path | str) -> None:
    lines = []
    for embedding in store:
        fields = [
            embedding.utt_id,
            embedding.speaker_id if embedding.speaker_id is not None else ABSENT,
            str(embedding.n_frames),
            (
                str(embedding.n_speech_frames)
                if embedding.n_speech_frames is not None
                else ABSENT
            ),
            str(embedding.dim),
            *(format_float(value) for value in embedding.vector),
        ]
        lines.append(" ".join(fields))
    write_lines(path, lines)


def write_lines(path: Path | str, lines: Sequence[str]) -> None:
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    text = "\n".join(lines)
    target.write_text(text + "\n" if lines else "", encoding="utf-8")


# Trials ---------------------------------------------------------------------


class Label(StrEnum):
    TARGET = "target"
    NONTARGET = "nontarget"


@dataclass(frozen=True, slots=True)
class Trial:
    enroll_id: str
    test_id: str
    label: Label | None = None

    def swapped(self) -> Trial:
        return Trial(self.test_id, self.enroll_id, self.label)


@dataclass(frozen=True, slots=True)
class TrialList:
    """Enroll/test pairs, labeled either everywhere or nowhere.

    Ids are resolved against a store only when scoring.
    """

    trials: tuple[Trial, ...] = field(default_factory=tuple)

    def __post_init__(self) -> None:
        object.__setattr__(self, "trials", tuple(self.trials))
        labeled = {trial.label is not None for trial in self.trials}
        if len(labeled) > 1:
            msg = "trial list mixes labeled and unlabeled trials"
            raise MixedLabelsError(msg)

    @classmethod
    def from_pairs(
        cls,
        pairs: Iterable[tuple[str, str]],
        labels: Iterable[bool] | None = None,
    ) -> TrialList:
        pair_list = list(pairs)
        if labels is None:
            return cls(tuple(Trial(e, t) for e, t in pair_list))
        label_list = list(labels)
        if len(label_list) != len(pair_list):
            msg = "labels must align with pairs"
            raise ValueError(msg)
        return cls(
            tuple(
                Trial(e, t, Label.TARGET if is_target else Label.NONTARGET)
                for (e, t), is_target in zip(pair_list, label_list, strict=True)
            )
        )

    def __len__(self) -> int:
        return len(self.trials)

    def __iter__(self) -> Iterator[Trial]:
        return iter(self.trials)

    def __getitem__(self, index: int) -> Trial:
        return self.trials[index]

    @property
    def is_labeled(self) -> bool:
        return bool(self.trials) and self.trials[0].label is not None

    def labels_array(self) -> npt.NDArray[np.bool_]:
        """Boolean target mask aligned with the trials."""

        if self.trials and not self.is_labeled:
            msg = "trial list has no labels"
            raise ValueError(msg)
        return np.array(
            [trial.label is Label.TARGET for trial in self.trials], dtype=bool
        )

    def swapped(self) -> TrialList:
        return TrialList(tuple(trial.swapped() for trial in self.trials))

    def utterance_ids(self) -> list[str]:
        """Distinct ids referenced by the trials, in first-seen order."""

        return list(
            dict.fromkeys(
                utt for trial in self.trials for utt in (trial.enroll_id, trial.test_id)
            )
        )


def load_trials(path: Path | str) -> TrialList:
    """Parse ``enroll_id test_id [target|nontarget]`` lines."""

    trials: list[Trial] = []
    labeled: bool | None = None
    for line_number, tokens in iter_records(path):
        if len(tokens) not in (2, 3):
            raise FormatError(path, line_number, "expected 2 or 3 fields")
        has_label = len(tokens) == 3
        if labeled is None:
            labeled = has_label
        elif labeled != has_label:
            msg = f"{path}:{line_number}: mixed labeled and unlabeled trials"
            raise MixedLabelsError(msg)
        label: Label | None = None
        if has_label:
            try:
                label = Label(tokens[2])
            except ValueError as exc:
                detail = f"unknown label token {tokens[2]!r}"
                raise FormatError(path, line_number, detail) from exc
        trials.append(Trial(tokens[0], tokens[1], label))
    return TrialList(tuple(trials))


def save_trials(trials: TrialList, path: Path | str) -> None:
    lines = []
    for trial in trials:
        fields = [trial.enroll_id, trial.test_id]
        if trial.label is not None:
            fields.append(trial.label.value)
        lines.append(" ".join(fields))
    write_lines(path, lines)


# Scores ---------------------------------------------------------------------


@dataclass(frozen=True, slots=True, eq=False)
class ScoreSet:
    """Raw, normalized and calibrated scores, index-aligned with a trial list."""

    raw: FloatArray
    normalized: FloatArray | None = None
    llr: FloatArray | None = None

    def __post_init__(self) -> None:
        raw = _frozen_array(self.raw, ndim=1, what="raw scores")
        object.__setattr__(self, "raw", raw)
        for name in ("normalized", "llr"):
            column = getattr(self, name)
            if column is None:
                continue
            array = _frozen_array(column, ndim=1, what=f"{name} scores")
            if array.shape != raw.shape:
                msg = f"{name} scores have {array.shape[0]} entries, raw {raw.shape[0]}"
                raise DimensionError(msg)
            object.__setattr__(self, name, array)

    @classmethod
    def empty(cls) -> ScoreSet:
        return cls(np.zeros(0, dtype=np.float64))

    def __len__(self) -> int:
        return int(self.raw.shape[0])

    def with_normalized(self, normalized: FloatArray) -> ScoreSet:
        return ScoreSet(self.raw, normalized, self.llr)

    def with_llr(self, llr: FloatArray) -> ScoreSet:
        return ScoreSet(self.raw, self.normalized, llr)

    def best(self) -> FloatArray:
        """The most processed column present: llr, then normalized, then raw."""

        if self.llr is not None:
            return self.llr
        if self.normalized is not None:
            return self.normalized
        return self.raw

    def same_as(self, other: ScoreSet) -> bool:
        def _equal(left: FloatArray | None, right: FloatArray | None) -> bool:
            if left is None or right is None:
                return left is None and right is None
            return np.array_equal(left, right)

        return (
            _equal(self.raw, other.raw)
            and _equal(self.normalized, other.normalized)
            and _equal(self.llr, other.llr)
        )


def ensure_aligned(scores: ScoreSet, trials: TrialList) -> None:
    if len(scores) != len(trials):
        msg = f"{len(scores)} scores for {len(trials)} trials"
        raise DimensionError(msg)


def save_scores(scores: ScoreSet, trials: TrialList, path: Path | str) -> None:
    """Write ``enroll_id test_id raw [normalized] [llr]`` lines."""

    ensure_aligned(scores, trials)
    columns: list[FloatArray | None] = [scores.normalized, scores.llr]
    while columns and columns[-1] is None:
        columns.pop()
    lines = []
    for position, trial in enumerate(trials):
        fields = [trial.enroll_id, trial.test_id, format_float(scores.raw[position])]
        for column in columns:
            fields.append(
                ABSENT if column is None else format_float(column[position])
            )
        lines.append(" ".join(fields))
    write_lines(path, lines)


def load_scores(path: Path | str) -> tuple[TrialList, ScoreSet]:
    pairs: list[Trial] = []
    raw: list[float] = []
    optional: list[list[float | None]] = [[], []]
    for line_number, tokens in iter_records(path):
        if not 3 <= len(tokens) <= 5:
            raise FormatError(path, line_number, "expected 3 to 5 fields")
        pairs.append(Trial(tokens[0], tokens[1]))
        try:
            raw.append(float(tokens[2]))
            for column, position in zip(optional, (3, 4), strict=True):
                token = tokens[position] if position < len(tokens) else ABSENT
                column.append(None if token == ABSENT else float(token))
        except ValueError as exc:
            raise FormatError(path, line_number, str(exc)) from exc
    resolved: list[FloatArray | None] = []
    for name, column in zip(("normalized", "llr"), optional, strict=True):
        present = [value is not None for value in column]
        if any(present) and not all(present):
            msg = f"{path}: {name} column is only partially present"
            raise ValueError(msg)
        resolved.append(
            np.array(column, dtype=np.float64) if column and all(present) else None
        )
    scores = ScoreSet(np.array(raw, dtype=np.float64), resolved[0], resolved[1])
    return TrialList(tuple(pairs)), scores


# Cohort ---------------------------------------------------------------------


@dataclass(frozen=True, slots=True, eq=False)
class Cohort:
    """Unit-norm mean embedding per training speaker."""

    speaker_ids: tuple[str, ...]
    means: FloatArray

    def __post_init__(self) -> None:
        ids = tuple(self.speaker_ids)
        if len(set(ids)) != len(ids):
            msg = "cohort speaker ids must be unique"
            raise DuplicateIdError(msg)
        means = np.asarray(self.means, dtype=np.float64)
        if means.size == 0 and means.ndim != 2:
            means = means.reshape(0, 0)
        means = _frozen_array(means, ndim=2, what="cohort means")
        if means.shape[0] != len(ids):
            msg = f"{len(ids)} speaker ids for {means.shape[0]} means"
            raise DimensionError(msg)
        norms = np.linalg.norm(means, axis=1)
        if np.any(np.abs(norms - 1.0) > _NORM_TOLERANCE):
            msg = "cohort means must have unit L2 norm"
            raise ValueError(msg)
        object.__setattr__(self, "speaker_ids", ids)
        object.__setattr__(self, "means", means)

    @property
    def size(self) -> int:
        return len(self.speaker_ids)

    @property
    def dim(self) -> int:
        return int(self.means.shape[1])

    def sorted(self) -> Cohort:
        """Return the cohort with entries in lexicographic speaker order."""

        order = sorted(range(self.size), key=self.speaker_ids.__getitem__)
        return Cohort(tuple(self.speaker_ids[i] for i in order), self.means[order])


def save_cohort(cohort: Cohort, path: Path | str) -> None:
    lines = [
        " ".join(
            [speaker, str(cohort.dim), *(format_float(value) for value in mean)]
        )
        for speaker, mean in zip(cohort.speaker_ids, cohort.means, strict=True)
    ]
    write_lines(path, lines)


def load_cohort(path: Path | str) -> Cohort:
    """Parse ``speaker_id d v1 ... vd`` lines."""

    speakers: list[str] = []
    rows: list[list[float]] = []
    for line_number, tokens in iter_records(path):
        try:
            dim = int(tokens[1])
            values = [float(token) for token in tokens[2:]]
        except (IndexError, ValueError) as exc:
            raise FormatError(path, line_number, str(exc)) from exc
        if dim != len(values) or (rows and dim != len(rows[0])):
            raise FormatError(path, line_number, "inconsistent cohort dimension")
        speakers.append(tokens[0])
        rows.append(values)
    if not rows:
        return Cohort((), np.zeros((0, 0), dtype=np.float64))
    return Cohort(tuple(speakers), np.array(rows, dtype=np.float64))


# Frame features -------------------------------------------------------------


@dataclass(frozen=True, slots=True, eq=False)
class FrameUtterance:
    utt_id: str
    speaker_id: str
    frames: FloatArray

    def __post_init__(self) -> None:
        object.__setattr__(
            self,
            "frames",
            _frozen_array(self.frames, ndim=2, what=f"frames of {self.utt_id!r}"),
        )

    @property
    def n_frames(self) -> int:
        return int(self.frames.shape[0])


class FrameCorpus:
    """Frame-level features per utterance, used by toy extractor training."""

    __slots__ = ("_index", "_utterances")

    def __init__(self, utterances: Iterable[FrameUtterance]) -> None:
        items = tuple(utterances)
        index: dict[str, int] = {}
        for position, utterance in enumerate(items):
            if utterance.utt_id in index:
                msg = f"duplicate utterance id {utterance.utt_id!r}"
                raise DuplicateIdError(msg)
            index[utterance.utt_id] = position
        dims = {utterance.frames.shape[1] for utterance in items}
        if len(dims) > 1:
            msg = f"frame features have inconsistent dimensions {sorted(dims)}"
            raise DimensionError(msg)
        self._utterances = items
        self._index = index

    def __len__(self) -> int:
        return len(self._utterances)

    def __iter__(self) -> Iterator[FrameUtterance]:
        return iter(self._utterances)

    @property
    def feature_dim(self) -> int:
        return int(self._utterances[0].frames.shape[1]) if self._utterances else 0

    def get(self, utt_id: str) -> FrameUtterance:
        try:
            return self._utterances[self._index[utt_id]]
        except KeyError as exc:
            raise UnknownIdError(utt_id) from exc

    def by_speaker(self) -> dict[str, list[str]]:
        groups: dict[str, list[str]] = {}
        for utterance in self._utterances:
            groups.setdefault(utterance.speaker_id, []).append(utterance.utt_id)
        return {speaker: groups[speaker] for speaker in sorted(groups)}

    def subset(self, speakers: Iterable[str]) -> FrameCorpus:
        wanted = set(speakers)
        return FrameCorpus(u for u in self._utterances if u.speaker_id in wanted)


def save_frame_corpus(corpus: FrameCorpus, path: Path | str) -> None:
    """Write ``utt_id speaker_id T F v1 ... v(T*F)`` lines (row-major frames)."""

    lines = []
    for utterance in corpus:
        n_frames, dim = utterance.frames.shape
        values = (format_float(value) for value in utterance.frames.ravel())
        lines.append(
            " ".join(
                [
                    utterance.utt_id,
                    utterance.speaker_id,
                    str(n_frames),
                    str(dim),
                    *values,
                ]
            )
        )
    write_lines(path, lines)


def load_frame_corpus(path: Path | str) -> FrameCorpus:
    utterances: list[FrameUtterance] = []
    for line_number, tokens in iter_records(path):
        try:
            n_frames, dim = int(tokens[2]), int(tokens[3])
            values = np.array([float(token) for token in tokens[4:]], dtype=np.float64)
        except (IndexError, ValueError) as exc:
            raise FormatError(path, line_number, str(exc)) from exc
        if values.size != n_frames * dim:
            detail = f"expected {n_frames * dim} values, found {values.size}"
            raise FormatError(path, line_number, detail)
        utterances.append(
            FrameUtterance(tokens[0], tokens[1], values.reshape(n_frames, dim))
        )
    return FrameCorpus(utterances)


__all__ = [
    "ABSENT",
    "Cohort",
    "DimensionError",
    "DuplicateIdError",
    "Embedding",
    "EmbeddingStore",
    "FloatArray",
    "FormatError",
    "FrameCorpus",
    "FrameUtterance",
    "Label",
    "MixedLabelsError",
    "NonFiniteValueError",
    "ScoreSet",
    "Trial",
    "TrialList",
    "UnknownIdError",
    "ensure_aligned",
    "format_float",
    "iter_records",
    "load_cohort",
    "load_embeddings",
    "load_frame_corpus",
    "load_scores",
    "load_trials",
    "save_cohort",
    "save_embeddings",
    "save_frame_corpus",
    "save_scores",
    "save_trials",
    "write_lines",
]
