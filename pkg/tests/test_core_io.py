# ruff: noqa: S101

from __future__ import annotations

from typing import TYPE_CHECKING

import numpy as np
import pytest

from x_make_speaker_backend_x.core_io import (
    Cohort,
    DimensionError,
    DuplicateIdError,
    Embedding,
    EmbeddingStore,
    FormatError,
    FrameCorpus,
    FrameUtterance,
    Label,
    MixedLabelsError,
    NonFiniteValueError,
    ScoreSet,
    TrialList,
    UnknownIdError,
    load_cohort,
    load_embeddings,
    load_frame_corpus,
    load_scores,
    load_trials,
    save_cohort,
    save_embeddings,
    save_frame_corpus,
    save_scores,
    save_trials,
)

if TYPE_CHECKING:  # pragma: no cover - type hints only
    from pathlib import Path


def _store() -> EmbeddingStore:
    return EmbeddingStore(
        [
            Embedding(
                utt_id="a1",
                speaker_id="alice",
                vector=np.array([0.1, 1.0 / 3.0, -2.5]),
                n_frames=300,
                n_speech_frames=250,
            ),
            Embedding(
                utt_id="b1",
                speaker_id=None,
                vector=np.array([1e-300, 0.0, 7.0]),
                n_frames=0,
            ),
        ]
    )


def test_embeddings_round_trip_bit_exact(tmp_path: Path) -> None:
    path = tmp_path / "emb.txt"
    store = _store()
    save_embeddings(store, path)
    loaded = load_embeddings(path)

    assert loaded.ids == ("a1", "b1")
    for original, reread in zip(store, loaded, strict=True):
        assert original.same_as(reread)
    assert loaded.get("b1").speaker_id is None
    assert loaded.get("b1").n_speech_frames is None
    save_embeddings(loaded, tmp_path / "again.txt")
    assert (tmp_path / "again.txt").read_bytes() == path.read_bytes()


def test_load_embeddings_rejects_dimension_mismatch(tmp_path: Path) -> None:
    path = tmp_path / "emb.txt"
    path.write_text(
        "a spk 10 - 2 1.0 2.0\nb spk 10 - 3 1.0 2.0 3.0\n", encoding="utf-8"
    )
    with pytest.raises(DimensionError):
        load_embeddings(path)


def test_load_embeddings_rejects_declared_dimension_mismatch(tmp_path: Path) -> None:
    path = tmp_path / "emb.txt"
    path.write_text("a spk 10 - 3 1.0 2.0\n", encoding="utf-8")
    with pytest.raises(FormatError) as excinfo:
        load_embeddings(path)
    assert excinfo.value.line_number == 1


def test_load_embeddings_rejects_duplicates_and_nan(tmp_path: Path) -> None:
    dup = tmp_path / "dup.txt"
    dup.write_text("a spk 10 - 1 1.0\na spk 10 - 1 2.0\n", encoding="utf-8")
    with pytest.raises(DuplicateIdError):
        load_embeddings(dup)

    nan = tmp_path / "nan.txt"
    nan.write_text("a spk 10 - 2 1.0 nan\n", encoding="utf-8")
    with pytest.raises(NonFiniteValueError):
        load_embeddings(nan)


def test_speech_frames_cannot_exceed_total() -> None:
    with pytest.raises(ValueError, match="n_speech_frames"):
        Embedding(utt_id="x", vector=np.ones(2), n_frames=10, n_speech_frames=11)


def test_store_groups_speakers_lexicographically() -> None:
    store = EmbeddingStore(
        [
            Embedding(utt_id="z1", speaker_id="zed", vector=np.ones(2), n_frames=1),
            Embedding(utt_id="a1", speaker_id="amy", vector=np.ones(2), n_frames=1),
            Embedding(utt_id="z2", speaker_id="zed", vector=np.ones(2), n_frames=1),
        ]
    )
    assert store.by_speaker() == {"amy": ["a1"], "zed": ["z1", "z2"]}
    with pytest.raises(UnknownIdError):
        store.get("missing")


def test_trials_round_trip_and_labels(tmp_path: Path) -> None:
    trials = TrialList.from_pairs([("a", "b"), ("a", "c")], [True, False])
    path = tmp_path / "trials.txt"
    save_trials(trials, path)
    assert path.read_text(encoding="utf-8") == "a b target\na c nontarget\n"

    loaded = load_trials(path)
    assert loaded == trials
    assert loaded.labels_array().tolist() == [True, False]
    assert loaded[0].label is Label.TARGET


def test_trials_reject_mixed_labels(tmp_path: Path) -> None:
    path = tmp_path / "trials.txt"
    path.write_text("a b target\na c\n", encoding="utf-8")
    with pytest.raises(MixedLabelsError):
        load_trials(path)


def test_trials_reject_unknown_label(tmp_path: Path) -> None:
    path = tmp_path / "trials.txt"
    path.write_text("a b maybe\n", encoding="utf-8")
    with pytest.raises(FormatError, match="maybe"):
        load_trials(path)


def test_unlabeled_trials_have_no_label_array() -> None:
    trials = TrialList.from_pairs([("a", "b")])
    assert not trials.is_labeled
    with pytest.raises(ValueError, match="no labels"):
        trials.labels_array()


def test_scores_round_trip_optional_columns(tmp_path: Path) -> None:
    trials = TrialList.from_pairs([("a", "b"), ("c", "d")])
    scores = ScoreSet(np.array([0.5, -1.0 / 7.0]), llr=np.array([2.0, -3.0]))
    path = tmp_path / "scores.txt"
    save_scores(scores, trials, path)
    assert path.read_text(encoding="utf-8").splitlines()[0] == "a b 0.5 - 2.0"

    loaded_trials, loaded = load_scores(path)
    assert [(t.enroll_id, t.test_id) for t in loaded_trials] == [("a", "b"), ("c", "d")]
    assert loaded.same_as(scores)
    assert loaded.normalized is None
    assert np.array_equal(loaded.best(), scores.llr)


def test_scores_raw_only_has_three_columns(tmp_path: Path) -> None:
    trials = TrialList.from_pairs([("a", "b")])
    path = tmp_path / "scores.txt"
    save_scores(ScoreSet(np.array([0.25])), trials, path)
    assert path.read_text(encoding="utf-8") == "a b 0.25\n"


def test_scores_reject_partial_optional_column(tmp_path: Path) -> None:
    path = tmp_path / "scores.txt"
    path.write_text("a b 0.1 0.2\nc d 0.3\n", encoding="utf-8")
    with pytest.raises(ValueError, match="partially present"):
        load_scores(path)


def test_score_set_rejects_misaligned_columns() -> None:
    with pytest.raises(DimensionError):
        ScoreSet(np.zeros(3), normalized=np.zeros(2))
    with pytest.raises(NonFiniteValueError):
        ScoreSet(np.array([np.inf]))


def test_cohort_round_trip_and_validation(tmp_path: Path) -> None:
    means = np.array([[1.0, 0.0], [0.6, 0.8]])
    cohort = Cohort(("s2", "s1"), means)
    path = tmp_path / "cohort.txt"
    save_cohort(cohort, path)
    loaded = load_cohort(path)
    assert loaded.speaker_ids == ("s2", "s1")
    assert np.array_equal(loaded.means, means)
    assert cohort.sorted().speaker_ids == ("s1", "s2")

    with pytest.raises(ValueError, match="unit L2 norm"):
        Cohort(("s",), np.array([[2.0, 0.0]]))
    with pytest.raises(DuplicateIdError):
        Cohort(("s", "s"), means)


def test_randomized_thousand_record_files_round_trip(tmp_path: Path) -> None:
    rng = np.random.default_rng(1000)
    n = 1000
    frames = rng.integers(0, 3000, size=n)
    store = EmbeddingStore(
        Embedding(
            utt_id=f"utt{i:04d}",
            speaker_id=f"spk{i % 97:03d}" if i % 5 else None,
            vector=rng.standard_normal(12) * 10.0 ** rng.integers(-8, 8),
            n_frames=int(frames[i]),
            n_speech_frames=int(rng.integers(0, frames[i] + 1)) if i % 3 else None,
        )
        for i in range(n)
    )
    save_embeddings(store, tmp_path / "emb.txt")
    loaded = load_embeddings(tmp_path / "emb.txt")
    assert loaded.ids == store.ids
    assert np.array_equal(loaded.matrix, store.matrix)
    assert all(
        reread.same_as(original) for original, reread in zip(store, loaded, strict=True)
    )

    picks = rng.integers(0, n, size=(n, 2)).tolist()
    pairs = [(f"utt{a:04d}", f"utt{b:04d}") for a, b in picks]
    trials = TrialList.from_pairs(pairs, (rng.uniform(size=n) < 0.5).tolist())
    save_trials(trials, tmp_path / "trials.txt")
    assert load_trials(tmp_path / "trials.txt") == trials

    scores = ScoreSet(
        rng.standard_normal(n), rng.standard_normal(n), rng.standard_normal(n) * 50.0
    )
    save_scores(scores, trials, tmp_path / "scores.txt")
    _, loaded_scores = load_scores(tmp_path / "scores.txt")
    assert loaded_scores.same_as(scores)

    means = rng.standard_normal((n, 7))
    cohort = Cohort(
        tuple(f"train{k:04d}" for k in range(n)),
        means / np.linalg.norm(means, axis=1, keepdims=True),
    )
    save_cohort(cohort, tmp_path / "cohort.txt")
    loaded_cohort = load_cohort(tmp_path / "cohort.txt")
    assert loaded_cohort.speaker_ids == cohort.speaker_ids
    assert np.array_equal(loaded_cohort.means, cohort.means)


def test_frame_corpus_round_trip(tmp_path: Path) -> None:
    rng = np.random.default_rng(0)
    corpus = FrameCorpus(
        [
            FrameUtterance("u1", "spkB", rng.standard_normal((4, 3))),
            FrameUtterance("u2", "spkA", rng.standard_normal((2, 3))),
        ]
    )
    path = tmp_path / "frames.txt"
    save_frame_corpus(corpus, path)
    loaded = load_frame_corpus(path)

    assert loaded.feature_dim == 3
    assert loaded.by_speaker() == {"spkA": ["u2"], "spkB": ["u1"]}
    assert np.array_equal(loaded.get("u1").frames, corpus.get("u1").frames)
    assert len(loaded.subset(["spkA"])) == 1


def test_frame_corpus_rejects_short_record(tmp_path: Path) -> None:
    path = tmp_path / "frames.txt"
    path.write_text("u1 spk 2 2 1.0 2.0 3.0\n", encoding="utf-8")
    with pytest.raises(FormatError, match="expected 4 values"):
        load_frame_corpus(path)
