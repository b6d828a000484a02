# ruff: noqa: S101

from __future__ import annotations

import numpy as np
import pytest

from x_make_speaker_backend_x.margin_train import (
    AamHead,
    HardPrototypeSampler,
    HpmConfig,
    HpmConfigError,
    hpm_pass,
    most_similar,
    random_pass,
    similarity_matrix,
)

from . import typed_fixture


@typed_fixture()
def pool() -> dict[str, list[str]]:
    return {
        f"spk{k}": [f"spk{k}_u{j}" for j in range(3)]
        for k in (5, 0, 3, 1, 4, 2, 7, 6)
    }


@typed_fixture()
def head() -> AamHead:
    return AamHead(np.random.default_rng(4).standard_normal((8, 6)))


def _speaker_of(utt_id: str) -> str:
    return utt_id.split("_")[0]


def test_hpm_config_batch_size_must_be_product() -> None:
    assert HpmConfig(S=4, U=2, I=16).n == 128
    assert HpmConfig(S=4, U=2, I=16, batch_size=128).batch_size == 128
    with pytest.raises(HpmConfigError, match="differs"):
        HpmConfig(S=4, U=2, I=16, batch_size=100)
    with pytest.raises(HpmConfigError, match="positive"):
        HpmConfig(S=0, U=1, I=1)


def test_most_similar_puts_self_first_and_breaks_ties_by_id() -> None:
    sim = np.array(
        [
            [1.0, 0.5, 0.5, 0.9],
            [0.5, 1.0, 0.1, 0.2],
            [0.5, 0.1, 1.0, 0.3],
            [0.9, 0.2, 0.3, 1.0],
        ]
    )
    neighbours = most_similar(sim, ["a", "c", "b", "d"], 3)
    assert neighbours[0] == [0, 3, 2]
    assert neighbours[1] == [1, 0, 3]
    assert all(row[0] == index for index, row in enumerate(neighbours))


def test_hpm_pass_covers_every_seed_once(
    head: AamHead, pool: dict[str, list[str]]
) -> None:
    cfg = HpmConfig(S=2, U=2, I=3)
    batches = hpm_pass(head, pool, cfg, seed=11)
    speakers = sorted(pool)
    neighbours = most_similar(similarity_matrix(head), speakers, cfg.I)
    assert len(batches) == 4
    seeds = []
    for batch in batches:
        assert len(batch) == cfg.n
        for group_start in range(0, cfg.n, cfg.U * cfg.I):
            group = batch[group_start : group_start + cfg.U * cfg.I]
            group_speakers = [_speaker_of(utt) for utt in group[:: cfg.U]]
            seed_index = speakers.index(group_speakers[0])
            assert group_speakers == [speakers[i] for i in neighbours[seed_index]]
            for member in range(cfg.I):
                picks = group[member * cfg.U : (member + 1) * cfg.U]
                assert len(set(picks)) == cfg.U
                assert {_speaker_of(utt) for utt in picks} == {group_speakers[member]}
            seeds.append(group_speakers[0])
    assert sorted(seeds) == speakers


def test_hpm_pass_is_seeded(head: AamHead, pool: dict[str, list[str]]) -> None:
    cfg = HpmConfig(S=4, U=1, I=2)
    first = hpm_pass(head, pool, cfg, seed=(1, 2))
    assert first == hpm_pass(head, pool, cfg, seed=(1, 2))
    assert first != hpm_pass(head, pool, cfg, seed=(1, 3))


def test_hpm_pass_rejects_unsatisfiable_configs(
    head: AamHead, pool: dict[str, list[str]]
) -> None:
    with pytest.raises(HpmConfigError, match="seed groups"):
        hpm_pass(head, pool, HpmConfig(S=3, U=1, I=2), seed=0)
    with pytest.raises(HpmConfigError, match="exceeds"):
        hpm_pass(head, pool, HpmConfig(S=2, U=1, I=9), seed=0)
    with pytest.raises(HpmConfigError, match="utterances, HPM needs 4"):
        hpm_pass(head, pool, HpmConfig(S=2, U=4, I=2), seed=0)
    small_head = AamHead(np.eye(4))
    with pytest.raises(HpmConfigError, match="prototypes"):
        hpm_pass(small_head, pool, HpmConfig(S=2, U=1, I=2), seed=0)


def test_sampler_refreshes_similarity_between_passes(
    head: AamHead, pool: dict[str, list[str]]
) -> None:
    sampler = HardPrototypeSampler(pool, HpmConfig(S=4, U=1, I=3), seed=(7,))
    assert sampler.stale
    first = sampler.next_pass(head)
    assert sampler.passes == 1
    assert sampler.stale
    before = sampler.similarity
    assert before is not None
    assert np.array_equal(before, similarity_matrix(head))

    head.prototypes = head.prototypes[::-1].copy()
    second = sampler.next_pass(head)
    after = sampler.similarity
    assert after is not None
    assert np.array_equal(after, similarity_matrix(head))
    assert not np.array_equal(before, after)
    assert len(first) == len(second) == 2


def test_random_pass_visits_every_utterance_once(pool: dict[str, list[str]]) -> None:
    batches = random_pass(pool, 5, seed=3)
    flat = [utt for batch in batches for utt in batch]
    assert sorted(flat) == sorted(utt for utts in pool.values() for utt in utts)
    assert [len(batch) for batch in batches] == [5, 5, 5, 5, 4]
    assert batches == random_pass(pool, 5, seed=3)


@pytest.mark.parametrize("seed", range(10))
def test_full_size_batches_seed_every_speaker_once(seed: int) -> None:
    utterances = {f"s{k:02d}": [f"s{k:02d}_a", f"s{k:02d}_b"] for k in range(32)}
    head = AamHead(np.random.default_rng(seed).standard_normal((32, 8)))
    cfg = HpmConfig(S=16, U=1, I=8)
    batches = hpm_pass(head, utterances, cfg, seed=seed)
    assert [len(batch) for batch in batches] == [128, 128]
    seeds = [_speaker_of(batch[i]) for batch in batches for i in range(0, 128, 8)]
    assert sorted(seeds) == sorted(utterances)
