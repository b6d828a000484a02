# ruff: noqa: S101

from __future__ import annotations

import json
from typing import TYPE_CHECKING

import numpy as np
import pytest
from jsonschema.exceptions import ValidationError

from x_make_speaker_backend_x.calibration import (
    TRIAL_TYPES,
    CalibrationError,
    CalibrationModel,
    CalibrationTrialSpec,
    FusionWeightError,
    InsufficientDataError,
    apply,
    build_calibration_trials,
    calibration_objective,
    fit,
    fit_fusion,
    fuse,
    load_model,
    logit,
    save_model,
)
from x_make_speaker_backend_x.core_io import Embedding, EmbeddingStore
from x_make_speaker_backend_x.metrics import cllr, eer, min_dcf
from x_make_speaker_backend_x.quality import QmfConfig, QmfKind, QualityVector

from . import typed_fixture

if TYPE_CHECKING:  # pragma: no cover - type hints only
    from pathlib import Path


def _gaussian_scores(
    n_per_class: int, seed: int, mean: float = 1.0
) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(seed)
    targets = rng.normal(mean, 1.0, n_per_class)
    nontargets = rng.normal(-mean, 1.0, n_per_class)
    scores = np.concatenate([targets, nontargets])
    labels = np.concatenate([np.ones(n_per_class, bool), np.zeros(n_per_class, bool)])
    return scores, labels


def test_logit_rejects_degenerate_prior() -> None:
    assert logit(0.5) == 0.0
    with pytest.raises(ValueError, match="prior"):
        logit(1.0)


def test_fit_recovers_true_llr_map() -> None:
    # For N(1, 1) vs N(-1, 1) the log-likelihood ratio is exactly 2s.
    scores, labels = _gaussian_scores(200_000, seed=5)
    model = fit(scores, None, labels, prior=0.05)
    assert model.w_s == pytest.approx(2.0, abs=0.05)
    assert model.b == pytest.approx(0.0, abs=0.05)
    assert model.w_q == ()
    assert model.effective_prior == 0.05


def test_fit_recovers_quality_weight() -> None:
    rng = np.random.default_rng(8)
    n = 100_000
    scores = rng.normal(0.0, 1.5, n)
    quality = rng.uniform(0.0, 1.0, (n, 1))
    llr = 2.0 * scores + 1.5 * quality[:, 0] - 0.5
    labels = rng.uniform(size=n) < 1.0 / (1.0 + np.exp(-llr))
    model = fit(scores, quality, labels, prior=0.5)
    assert model.w_s == pytest.approx(2.0, abs=0.1)
    assert model.w_q[0] == pytest.approx(1.5, abs=0.1)


def test_fit_is_deterministic_and_optimal() -> None:
    scores, labels = _gaussian_scores(2_000, seed=1)
    quality = np.abs(scores)[:, None]
    first = fit(scores, quality, labels)
    second = fit(scores, quality, labels)
    assert first.parameters().tolist() == second.parameters().tolist()

    best = calibration_objective(first, scores, quality, labels)
    for delta in (np.array([0.05, 0.0, 0.0]), np.array([0.0, -0.05, 0.02])):
        theta = first.parameters() + delta
        perturbed = CalibrationModel(w_s=theta[0], w_q=(theta[1],), b=theta[2])
        assert best <= calibration_objective(perturbed, scores, quality, labels)


def test_score_only_calibration_preserves_ranking_metrics() -> None:
    scores, labels = _gaussian_scores(1_500, seed=3, mean=0.7)
    model = fit(scores, None, labels)
    assert model.w_s > 0.0
    llr = model.apply_batch(scores)
    assert eer(llr, labels) == eer(scores, labels)
    assert min_dcf(llr, labels) == min_dcf(scores, labels)


def test_fit_with_constant_quality_column_still_converges() -> None:
    scores, labels = _gaussian_scores(1_000, seed=4)
    quality = np.full((scores.size, 1), 3.0)
    model = fit(scores, quality, labels)
    llr = model.apply_batch(scores, quality)
    plain = fit(scores, None, labels).apply_batch(scores)
    assert np.allclose(llr, plain, atol=1e-5)


@pytest.mark.parametrize("seed", range(20))
def test_fit_never_does_worse_than_identity(seed: int) -> None:
    scores, labels = _gaussian_scores(500, seed=40 + seed, mean=0.3)
    model = fit(scores, None, labels, prior=0.5)
    assert cllr(model.apply_batch(scores), labels) <= cllr(scores, labels) + 1e-9


def test_fit_requires_both_classes() -> None:
    with pytest.raises(CalibrationError, match="both target and nontarget"):
        fit(np.array([0.1, 0.2, 0.3]), None, [True, True, True])


def test_fit_checks_qmf_layout() -> None:
    scores, labels = _gaussian_scores(100, seed=2)
    cfg = QmfConfig(enabled=(QmfKind.DURATION,))
    with pytest.raises(ValueError, match="QMF layout"):
        fit(scores, np.ones((scores.size, 1)), labels, qmf_config=cfg)


def test_fit_separable_data_with_l2_penalty() -> None:
    scores = np.array([-2.0, -1.0, 1.0, 2.0])
    labels = [False, False, True, True]
    model = fit(scores, None, labels, prior=0.5, l2=0.1)
    assert model.w_s > 0.0
    assert np.isfinite(model.b)


def test_apply_is_exact_affine_map() -> None:
    cfg = QmfConfig(enabled=(QmfKind.DURATION,))
    model = CalibrationModel(w_s=1.5, w_q=(0.25, -0.5), b=-1.0, qmf_config=cfg)
    q = QualityVector((2.0, 4.0))
    assert apply(model, 2.0, q) == 1.5 * 2.0 + 0.25 * 2.0 - 0.5 * 4.0 - 1.0
    assert model.apply_batch(np.array([2.0]), np.array([[2.0, 4.0]]))[0] == apply(
        model, 2.0, q
    )
    with pytest.raises(ValueError, match="quality vector"):
        apply(model, 1.0, (1.0,))
    assert apply(CalibrationModel.identity(), 0.75) == 0.75


def test_model_layout_must_match_qmf_config() -> None:
    with pytest.raises(ValueError, match="QMF layout"):
        CalibrationModel(
            w_s=1.0,
            w_q=(1.0,),
            b=0.0,
            qmf_config=QmfConfig(enabled=("duration",)),
        )


def test_model_round_trip(tmp_path: Path) -> None:
    cfg = QmfConfig(
        enabled=(QmfKind.DURATION, QmfKind.MAGNITUDE), duration_clip_frames=2000
    )
    model = CalibrationModel(
        w_s=1.0 / 3.0,
        w_q=(0.1, 0.2, -0.3, 0.4),
        b=-2.5,
        qmf_config=cfg,
        effective_prior=0.01,
    )
    path = tmp_path / "model.json"
    save_model(model, path)
    payload = json.loads(path.read_text(encoding="utf-8"))
    assert payload["feature_names"] == [
        "duration_min",
        "duration_max",
        "magnitude_min",
        "magnitude_max",
    ]
    assert load_model(path) == model


def test_load_model_rejects_bad_payload(tmp_path: Path) -> None:
    path = tmp_path / "model.json"
    path.write_text(json.dumps({"w_s": "one", "w_q": [], "b": 0.0}), encoding="utf-8")
    with pytest.raises(ValidationError):
        load_model(path)


# Calibration trial sets ------------------------------------------------------


@typed_fixture(scope="module")
def duration_store() -> EmbeddingStore:
    rng = np.random.default_rng(21)
    embeddings = []
    for speaker in range(20):
        for utt in range(12):
            frames = 300 + 10 * utt if utt < 6 else 900 + 50 * utt
            embeddings.append(
                Embedding(
                    utt_id=f"s{speaker:02d}_u{utt:02d}",
                    speaker_id=f"s{speaker:02d}",
                    vector=rng.standard_normal(4),
                    n_frames=frames,
                )
            )
    return EmbeddingStore(embeddings)


def test_calibration_trials_are_stratified_and_balanced(
    duration_store: EmbeddingStore,
) -> None:
    trial_spec = CalibrationTrialSpec(trials_per_type=120)
    trials = build_calibration_trials(duration_store, trial_spec, seed=9)
    assert len(trials) == 3 * 120
    labels = trials.labels_array()

    seen: set[tuple[str, str]] = set()
    for block, (_, enroll_kind, test_kind) in enumerate(TRIAL_TYPES):
        rows = range(block * 120, (block + 1) * 120)
        assert int(labels[list(rows)].sum()) == 60
        for row in rows:
            trial = trials[row]
            enroll = duration_store.get(trial.enroll_id)
            test = duration_store.get(trial.test_id)
            for embedding, kind in ((enroll, enroll_kind), (test, test_kind)):
                seconds = embedding.n_frames / 100
                check = trial_spec.is_short if kind == "short" else trial_spec.is_long
                assert check(seconds)
            if labels[row]:
                assert enroll.speaker_id == test.speaker_id
                assert enroll.utt_id != test.utt_id
            else:
                assert enroll.speaker_id != test.speaker_id
            pair = (trial.enroll_id, trial.test_id)
            assert pair not in seen
            assert pair[::-1] not in seen
            seen.add(pair)


def test_calibration_trials_are_seeded(duration_store: EmbeddingStore) -> None:
    trial_spec = CalibrationTrialSpec(trials_per_type=40)
    first = build_calibration_trials(duration_store, trial_spec, seed=1)
    again = build_calibration_trials(duration_store, trial_spec, seed=1)
    other = build_calibration_trials(duration_store, trial_spec, seed=2)
    assert first == again
    assert first != other


def test_calibration_trials_need_long_utterances() -> None:
    store = EmbeddingStore(
        Embedding(
            utt_id=f"u{i}", speaker_id=f"s{i % 3}", vector=np.ones(2), n_frames=300
        )
        for i in range(9)
    )
    with pytest.raises(InsufficientDataError, match="long"):
        build_calibration_trials(
            store, CalibrationTrialSpec(trials_per_type=10), seed=0
        )


def test_calibration_trial_spec_validation() -> None:
    with pytest.raises(ValueError, match="balanced"):
        CalibrationTrialSpec(balanced=False)
    with pytest.raises(ValueError, match="non-overlapping"):
        CalibrationTrialSpec(short_range_s=(2.0, 8.0), long_range_s=(6.0, 20.0))
    with pytest.raises(ValueError, match="even count"):
        CalibrationTrialSpec(trials_per_type=31)


# Fusion ----------------------------------------------------------------------


def test_fuse_weighted_average() -> None:
    assert fuse([1.0, 3.0], [0.25, 0.75]) == pytest.approx(2.5)
    matrix = np.array([[1.0, 3.0], [-2.0, 2.0]])
    assert np.allclose(fuse(matrix, [0.5, 0.5]), [2.0, 0.0])


def test_fuse_one_hot_returns_system_exactly() -> None:
    matrix = np.array([[0.1, 1.0 / 3.0], [0.7, -5.0]])
    fused = fuse(matrix, [0.0, 1.0])
    assert np.array_equal(fused, matrix[:, 1])
    assert fuse([4.2], [1.0]) == 4.2


def test_fuse_rejects_bad_weights() -> None:
    with pytest.raises(FusionWeightError, match="sum to 1"):
        fuse([1.0, 2.0], [0.5, 0.6])
    with pytest.raises(FusionWeightError, match="non-negative"):
        fuse([1.0, 2.0], [1.5, -0.5])
    with pytest.raises(FusionWeightError, match="systems"):
        fuse([1.0, 2.0, 3.0], [0.5, 0.5])


def test_fit_fusion_prefers_informative_system() -> None:
    scores, labels = _gaussian_scores(5_000, seed=6)
    noise = np.random.default_rng(7).normal(0.0, 1.0, scores.size)
    model = fit_fusion(np.column_stack([scores, noise]), labels, prior=0.5)
    assert model.weights[0] == pytest.approx(2.0, abs=0.2)
    assert abs(model.weights[1]) < 0.2
    fused = model.apply(np.column_stack([scores, noise]))
    assert fused.shape == scores.shape
