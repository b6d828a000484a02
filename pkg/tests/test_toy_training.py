# ruff: noqa: S101

from __future__ import annotations

import json
import math
from typing import TYPE_CHECKING

import numpy as np
import pytest
from jsonschema.exceptions import ValidationError

from x_make_speaker_backend_x.core_io import FrameCorpus
from x_make_speaker_backend_x.ledger import read_training_log
from x_make_speaker_backend_x.margin_train import (
    AamHead,
    AblationKind,
    DivergenceError,
    HpmConfig,
    SamplerKind,
    TrainPlan,
    load_toy_model,
    load_train_plan,
    save_toy_model,
    train_toy,
)
from x_make_speaker_backend_x.margin_train import toy as toy_module
from x_make_speaker_backend_x.metrics import eer
from x_make_speaker_backend_x.simulator import (
    Population,
    SimConfig,
    generate_frame_corpus,
)

from . import typed_fixture

if TYPE_CHECKING:  # pragma: no cover - type hints only
    from pathlib import Path

    from x_make_speaker_backend_x.core_io import EmbeddingStore


_CLEAN = SimConfig(frame_channel_std=0.0, frame_session_std=0.0)


@typed_fixture(scope="module")
def corpus() -> FrameCorpus:
    return generate_frame_corpus(_CLEAN, n_speakers=8, utterances_per_speaker=6)


def _small_plan() -> TrainPlan:
    return TrainPlan.default(crop_frames=20, cycle_len=20, cycles=1, batch_size=16)


def _pairwise_eer(store: EmbeddingStore) -> float:
    vectors = store.matrix
    unit = vectors / np.linalg.norm(vectors, axis=1, keepdims=True)
    sim = unit @ unit.T
    speakers = np.array([embedding.speaker_id for embedding in store])
    upper = np.triu_indices(len(speakers), k=1)
    labels = speakers[upper[0]] == speakers[upper[1]]
    return eer(sim[upper], labels)


def test_default_plan_follows_the_fine_tuning_recipe() -> None:
    plan = TrainPlan.default()
    first, second = plan.stages
    assert (first.margin, second.margin) == (0.2, 0.5)
    assert second.crop_frames == 3 * first.crop_frames
    assert second.schedule.lr_max == pytest.approx(first.schedule.lr_max / 100)
    assert second.schedule.cycle_len == first.schedule.cycle_len // 2
    assert second.cycles == 1
    assert first.sampler is SamplerKind.RANDOM
    assert second.sampler is SamplerKind.HPM
    assert second.hpm == HpmConfig(S=4, U=1, I=8)
    assert second.batch_size == 32
    assert first.augment
    assert not second.augment


def test_ablations_undo_one_change_each() -> None:
    plan = TrainPlan.default()
    first, second = plan.stages
    assert plan.ablate(AblationKind.NO_MARGIN_INCREASE).stages[1].margin == first.margin
    assert (
        plan.ablate("no_duration_increase").stages[1].crop_frames == first.crop_frames
    )
    assert (
        plan.ablate("no_lr_decrease").stages[1].schedule.lr_max
        == first.schedule.lr_max
    )
    no_hpm = plan.ablate("no_hard_sampling").stages[1]
    assert no_hpm.sampler is SamplerKind.RANDOM
    assert no_hpm.hpm is None
    frozen = plan.ablate("frozen_extractor").stages[1]
    assert frozen.frozen_extractor
    assert frozen.margin == second.margin
    with pytest.raises(ValueError, match="fine-tuning stage"):
        TrainPlan((first,)).ablate("frozen_extractor")


def test_plan_payload_round_trip(tmp_path: Path) -> None:
    plan = TrainPlan.default(hpm=HpmConfig(S=2, U=2, I=4))
    path = tmp_path / "plan.json"
    path.write_text(json.dumps(plan.to_payload()), encoding="utf-8")
    assert load_train_plan(path) == plan


def test_plan_file_is_schema_checked(tmp_path: Path) -> None:
    payload = TrainPlan.default().to_payload()
    payload[0]["cycle_len"] = 1
    path = tmp_path / "plan.json"
    path.write_text(json.dumps(payload), encoding="utf-8")
    with pytest.raises(ValidationError):
        load_train_plan(path)


def test_first_stage_reduces_the_loss(corpus: FrameCorpus) -> None:
    plan = TrainPlan.default(crop_frames=20, cycle_len=200, cycles=1, batch_size=16)
    model = train_toy(TrainPlan(plan.stages[:1]), corpus, seed=5)
    losses = [entry.loss for entry in model.history]
    assert len(losses) == 200
    assert all(math.isfinite(loss) for loss in losses)
    assert np.mean(losses[-50:]) < np.mean(losses[:50])
    assert model.stages_completed == 1


def test_stagewise_training_matches_single_call(corpus: FrameCorpus) -> None:
    plan = _small_plan()
    full = train_toy(plan, corpus, seed=3)
    first = train_toy(TrainPlan(plan.stages[:1]), corpus, seed=3)
    resumed = train_toy(TrainPlan(plan.stages[1:]), corpus, seed=3, initial=first)
    assert np.array_equal(full.extractor.weights, resumed.extractor.weights)
    assert np.array_equal(full.head.prototypes, resumed.head.prototypes)
    assert full.history == resumed.history
    assert full.plan == resumed.plan
    assert resumed.stages_completed == 2
    assert resumed.head.margin == 0.5


def test_training_log_has_one_line_per_iteration(
    corpus: FrameCorpus, tmp_path: Path
) -> None:
    log_path = tmp_path / "train.log"
    model = train_toy(_small_plan(), corpus, seed=1, log_path=log_path)
    entries = read_training_log(log_path)
    assert len(entries) == 20 + 10
    assert entries == model.history
    assert [entry.iteration for entry in entries] == list(range(30))
    headers = [
        line
        for line in log_path.read_text(encoding="utf-8").splitlines()
        if line.startswith("#")
    ]
    assert [line.split()[:3] for line in headers] == [
        ["#", "stage", "0"],
        ["#", "stage", "1"],
    ]


def test_frozen_extractor_only_moves_the_head(corpus: FrameCorpus) -> None:
    plan = _small_plan().ablate(AblationKind.FROZEN_EXTRACTOR)
    first = train_toy(TrainPlan(plan.stages[:1]), corpus, seed=2)
    tuned = train_toy(TrainPlan(plan.stages[1:]), corpus, seed=2, initial=first)
    assert np.array_equal(tuned.extractor.weights, first.extractor.weights)
    assert np.array_equal(tuned.extractor.bias, first.extractor.bias)
    assert not np.array_equal(tuned.head.prototypes, first.head.prototypes)


def test_non_finite_loss_raises_divergence(
    corpus: FrameCorpus, monkeypatch: pytest.MonkeyPatch
) -> None:
    def _nan_loss(
        embeddings: np.ndarray, labels: np.ndarray, head: object
    ) -> tuple[float, np.ndarray, np.ndarray]:
        del labels
        grad_w = np.zeros_like(getattr(head, "prototypes"))  # noqa: B009
        return math.nan, np.zeros_like(embeddings), grad_w

    monkeypatch.setattr(toy_module, "aam_loss_and_grad", _nan_loss)
    with pytest.raises(DivergenceError) as excinfo:
        train_toy(_small_plan(), corpus, seed=0)
    assert excinfo.value.stage == 0
    assert excinfo.value.iteration == 0


def test_divergence_keeps_the_logged_iterations(
    corpus: FrameCorpus, monkeypatch: pytest.MonkeyPatch, tmp_path: Path
) -> None:
    real_loss = toy_module.aam_loss_and_grad
    calls = {"count": 0}

    def _nan_on_fifteenth_call(
        embeddings: np.ndarray, labels: np.ndarray, head: AamHead
    ) -> tuple[float, np.ndarray, np.ndarray]:
        calls["count"] += 1
        loss, grad_x, grad_w = real_loss(embeddings, labels, head)
        if calls["count"] == 15:
            return math.nan, grad_x, grad_w
        return loss, grad_x, grad_w

    monkeypatch.setattr(toy_module, "aam_loss_and_grad", _nan_on_fifteenth_call)
    log_path = tmp_path / "train.log"
    with pytest.raises(DivergenceError) as excinfo:
        train_toy(_small_plan(), corpus, seed=0, log_path=log_path)
    assert excinfo.value.iteration == 14
    entries = read_training_log(log_path)
    assert [entry.iteration for entry in entries] == list(range(14))
    lines = log_path.read_text(encoding="utf-8").splitlines()
    assert lines[0].startswith("# stage 0 ")
    assert len(lines) == 15


def test_initial_model_must_share_speakers(corpus: FrameCorpus) -> None:
    plan = _small_plan()
    first = train_toy(TrainPlan(plan.stages[:1]), corpus, seed=4)
    others = corpus.subset(
        speaker for speaker in corpus.by_speaker() if speaker != "frm0000"
    )
    with pytest.raises(ValueError, match="different speaker set"):
        train_toy(TrainPlan(plan.stages[1:]), others, seed=4, initial=first)


def test_model_save_and_load(corpus: FrameCorpus, tmp_path: Path) -> None:
    model = train_toy(TrainPlan(_small_plan().stages[:1]), corpus, seed=6)
    save_toy_model(model, tmp_path / "model")
    loaded = load_toy_model(tmp_path / "model")
    assert np.array_equal(loaded.extractor.weights, model.extractor.weights)
    assert np.array_equal(loaded.extractor.bias, model.extractor.bias)
    assert np.array_equal(loaded.head.prototypes, model.head.prototypes)
    assert loaded.head.margin == model.head.margin
    assert loaded.speakers == model.speakers
    assert loaded.plan == model.plan
    assert loaded.stages_completed == 1


def test_saved_model_resumes_like_a_single_call(
    corpus: FrameCorpus, tmp_path: Path
) -> None:
    plan = _small_plan()
    full = train_toy(plan, corpus, seed=9)
    first = train_toy(TrainPlan(plan.stages[:1]), corpus, seed=9)
    save_toy_model(first, tmp_path / "stage0")
    loaded = load_toy_model(tmp_path / "stage0")
    assert loaded.history == first.history
    resumed = train_toy(TrainPlan(plan.stages[1:]), corpus, seed=9, initial=loaded)
    assert resumed.history == full.history
    assert resumed.history[-1].iteration == 29
    assert np.array_equal(resumed.extractor.weights, full.extractor.weights)


def test_trained_extractor_separates_held_out_speakers(corpus: FrameCorpus) -> None:
    model = train_toy(_small_plan(), corpus, seed=8)
    held_out = generate_frame_corpus(
        _CLEAN,
        n_speakers=6,
        utterances_per_speaker=4,
        population=Population.HELD_OUT_FRAMES,
        prefix="held",
    )
    store = model.extractor.extract(held_out)
    assert len(store) == 24
    assert store.matrix.shape == (24, 16)
    assert _pairwise_eer(store) < 0.2


def test_fine_tuning_beats_stage_one_and_the_lr_ablation() -> None:
    cfg = SimConfig()
    train = generate_frame_corpus(cfg, n_speakers=16, utterances_per_speaker=8)
    held_out = generate_frame_corpus(
        cfg,
        n_speakers=32,
        utterances_per_speaker=6,
        population=Population.HELD_OUT_FRAMES,
        prefix="held",
    )
    plan = TrainPlan.default(crop_frames=20, lr_max=5e-2, cycle_len=200, cycles=2)
    ablated = plan.ablate(AblationKind.NO_LR_DECREASE)
    stage_one: list[float] = []
    fine_tuned: list[float] = []
    no_lr_decrease: list[float] = []
    for seed in (1, 2, 3):
        first = train_toy(TrainPlan(plan.stages[:1]), train, seed=seed)
        tuned = train_toy(TrainPlan(plan.stages[1:]), train, seed=seed, initial=first)
        unstable = train_toy(
            TrainPlan(ablated.stages[1:]), train, seed=seed, initial=first
        )
        stage_one.append(_pairwise_eer(first.extractor.extract(held_out)))
        fine_tuned.append(_pairwise_eer(tuned.extractor.extract(held_out)))
        no_lr_decrease.append(_pairwise_eer(unstable.extractor.extract(held_out)))
    assert float(np.mean(stage_one)) > 0.0
    assert float(np.mean(fine_tuned)) <= float(np.mean(stage_one))
    assert float(np.mean(no_lr_decrease)) > float(np.mean(fine_tuned))
