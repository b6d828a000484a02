"""Hard prototype mining and plain random batch sampling.

Class index ``k`` of an AAM head always belongs to the ``k``-th speaker in
lexicographic order of the utterance mapping.
"""

from __future__ import annotations

from collections.abc import Mapping, Sequence
from dataclasses import dataclass

import numpy as np

from ..x_logging_utils_x import log_debug
from .aam import AamHead, similarity_matrix

Batch = list[str]


class HpmConfigError(ValueError):
    """Raised when an HPM configuration cannot be satisfied by the data."""


@dataclass(frozen=True, slots=True)
class HpmConfig:
    """S seed speakers per batch, U utterances from each of I similar speakers."""

    S: int  # noqa: N815
    U: int  # noqa: N815
    I: int  # noqa: E741, N815
    batch_size: int | None = None

    def __post_init__(self) -> None:
        for name in ("S", "U", "I"):
            if getattr(self, name) < 1:
                msg = f"HPM parameter {name} must be positive"
                raise HpmConfigError(msg)
        product = self.S * self.U * self.I
        if self.batch_size is None:
            object.__setattr__(self, "batch_size", product)
        elif self.batch_size != product:
            msg = f"S*U*I = {product} differs from batch size {self.batch_size}"
            raise HpmConfigError(msg)

    @property
    def n(self) -> int:
        return self.S * self.U * self.I

    def to_payload(self) -> dict[str, int]:
        return {"S": self.S, "U": self.U, "I": self.I}


def most_similar(
    sim: np.ndarray, speakers: Sequence[str], count: int
) -> list[list[int]]:
    """For each speaker, itself followed by its ``count - 1`` nearest prototypes.

    Ties beyond self are broken by speaker id.
    """

    n = len(speakers)
    neighbours: list[list[int]] = []
    for row in range(n):
        others = sorted(
            (j for j in range(n) if j != row),
            key=lambda j: (-float(sim[row, j]), speakers[j]),
        )
        neighbours.append([row, *others[: count - 1]])
    return neighbours


def _check_pool(
    utterances_by_speaker: Mapping[str, Sequence[str]], minimum: int
) -> list[str]:
    speakers = sorted(utterances_by_speaker)
    for speaker in speakers:
        if len(utterances_by_speaker[speaker]) < minimum:
            msg = (
                f"speaker {speaker!r} has {len(utterances_by_speaker[speaker])} "
                f"utterances, HPM needs {minimum}"
            )
            raise HpmConfigError(msg)
    return speakers


def hpm_pass(
    head: AamHead,
    utterances_by_speaker: Mapping[str, Sequence[str]],
    cfg: HpmConfig,
    seed: int | Sequence[int],
    *,
    similarity: np.ndarray | None = None,
) -> list[Batch]:
    """One pass over all speakers as seeds, ``cfg.S`` seeds per batch.

    The speaker count must be a multiple of ``cfg.S`` so every seed appears
    exactly once and every batch has ``S*U*I`` utterances.
    """

    speakers = _check_pool(utterances_by_speaker, cfg.U)
    n = len(speakers)
    if n != head.n_classes:
        msg = f"{n} speakers for a head with {head.n_classes} prototypes"
        raise HpmConfigError(msg)
    if cfg.I > n:
        msg = f"I={cfg.I} exceeds the {n} training speakers"
        raise HpmConfigError(msg)
    if n % cfg.S:
        msg = f"{n} speakers cannot be split into seed groups of S={cfg.S}"
        raise HpmConfigError(msg)
    sim = similarity if similarity is not None else similarity_matrix(head)
    neighbours = most_similar(sim, speakers, cfg.I)
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    batches: list[Batch] = []
    for start in range(0, n, cfg.S):
        batch: Batch = []
        for seed_index in order[start : start + cfg.S]:
            for similar in neighbours[int(seed_index)]:
                pool = utterances_by_speaker[speakers[similar]]
                picks = rng.choice(len(pool), size=cfg.U, replace=False)
                batch.extend(pool[int(pick)] for pick in picks)
        batches.append(batch)
    log_debug("hpm pass with", len(batches), "batches of", cfg.n)
    return batches


def random_pass(
    utterances_by_speaker: Mapping[str, Sequence[str]],
    batch_size: int,
    seed: int | Sequence[int],
) -> list[Batch]:
    """Shuffle every utterance once and cut into batches; the last may be short."""

    if batch_size < 1:
        msg = "batch_size must be positive"
        raise ValueError(msg)
    pool = [
        utt
        for speaker in sorted(utterances_by_speaker)
        for utt in utterances_by_speaker[speaker]
    ]
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(pool))
    shuffled = [pool[int(i)] for i in order]
    return [shuffled[i : i + batch_size] for i in range(0, len(shuffled), batch_size)]


class HardPrototypeSampler:
    """Yields HPM passes, refreshing the similarity matrix between passes only."""

    __slots__ = ("_cfg", "_passes", "_seed", "_similarity", "_utterances", "stale")

    def __init__(
        self,
        utterances_by_speaker: Mapping[str, Sequence[str]],
        cfg: HpmConfig,
        seed: Sequence[int],
    ) -> None:
        self._utterances = {
            speaker: list(utterances_by_speaker[speaker])
            for speaker in sorted(utterances_by_speaker)
        }
        self._cfg = cfg
        self._seed = tuple(seed)
        self._passes = 0
        self._similarity: np.ndarray | None = None
        self.stale = True

    @property
    def passes(self) -> int:
        return self._passes

    @property
    def similarity(self) -> np.ndarray | None:
        return self._similarity

    def next_pass(self, head: AamHead) -> list[Batch]:
        if self.stale or self._similarity is None:
            self._similarity = similarity_matrix(head)
            self.stale = False
        batches = hpm_pass(
            head,
            self._utterances,
            self._cfg,
            (*self._seed, self._passes),
            similarity=self._similarity,
        )
        self._passes += 1
        self.stale = True
        return batches


__all__ = [
    "Batch",
    "HardPrototypeSampler",
    "HpmConfig",
    "HpmConfigError",
    "hpm_pass",
    "most_similar",
    "random_pass",
]
