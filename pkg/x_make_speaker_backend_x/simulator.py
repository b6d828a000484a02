"""Synthetic speaker populations with duration-dependent embedding noise.

Embedding noise has per-coordinate std ``noise_base / duration_s**exponent``
times a per-utterance degradation factor, so duration and embedding magnitude
both carry quality information. Frame utterances add a channel offset from a
shared low-rank subspace plus an isotropic session offset. Every utterance draws
from its own random stream derived from ``(seed, population, speaker, utterance)``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from enum import IntEnum
from pathlib import Path
from typing import TYPE_CHECKING

import numpy as np

from .calibration import CalibrationTrialSpec, build_calibration_trials
from .core_io import (
    Embedding,
    EmbeddingStore,
    FrameCorpus,
    FrameUtterance,
    TrialList,
    save_embeddings,
    save_frame_corpus,
    save_trials,
)
from .x_logging_utils_x import log_info

if TYPE_CHECKING:
    from .core_io import FloatArray

FRAMES_PER_SECOND = 100


class Population(IntEnum):
    """Random-stream tags keeping the generated populations disjoint."""

    EVALUATION = 1
    COHORT = 2
    FRAMES = 3
    HELD_OUT_FRAMES = 4
    CHANNEL = 5


@dataclass(frozen=True, slots=True)
class SimConfig:
    n_speakers: int = 200
    dim: int = 64
    frames_per_second: int = FRAMES_PER_SECOND
    short_range_s: tuple[float, float] = (2.0, 6.0)
    long_max_s: float = 20.0
    long_fraction: float = 0.5
    noise_base: float = 0.25
    noise_duration_exponent: float = 0.5
    seed: int = 7
    utterances_per_speaker: int = 8
    cohort_speakers: int = 150
    frame_dim: int = 20
    frame_noise: float = 1.0
    degradation_range: tuple[float, float] = (1.0, 2.0)
    frame_channel_rank: int = 4
    frame_channel_std: float = 0.5
    frame_session_std: float = 0.25

    def __post_init__(self) -> None:
        positive = {
            "n_speakers": self.n_speakers,
            "dim": self.dim,
            "noise_base": self.noise_base,
            "utterances_per_speaker": self.utterances_per_speaker,
            "cohort_speakers": self.cohort_speakers,
            "frame_dim": self.frame_dim,
            "frame_noise": self.frame_noise,
        }
        for name, value in positive.items():
            if value <= 0:
                msg = f"{name} must be positive, got {value}"
                raise ValueError(msg)
        if self.frames_per_second != FRAMES_PER_SECOND:
            msg = "frames_per_second is fixed at 100 (10 ms frame shift)"
            raise ValueError(msg)
        if self.noise_duration_exponent < 0.0:
            msg = "noise_duration_exponent must be non-negative"
            raise ValueError(msg)
        short_low, short_high = self.short_range_s
        if not 0.0 < short_low < short_high < self.long_max_s:
            msg = "duration ranges must satisfy 0 < short_low < short_high < long_max"
            raise ValueError(msg)
        if not 0.0 <= self.long_fraction <= 1.0:
            msg = "long_fraction must lie in [0, 1]"
            raise ValueError(msg)
        low, high = self.degradation_range
        if not 0.0 < low <= high:
            msg = "degradation_range must satisfy 0 < low <= high"
            raise ValueError(msg)
        if not 0 <= self.frame_channel_rank <= self.frame_dim:
            msg = f"frame_channel_rank must lie in [0, {self.frame_dim}]"
            raise ValueError(msg)
        if self.frame_channel_std < 0.0 or self.frame_session_std < 0.0:
            msg = "frame offset stds must be non-negative"
            raise ValueError(msg)

    @property
    def long_range_s(self) -> tuple[float, float]:
        return (self.short_range_s[1], self.long_max_s)

    def noise_std(self, duration_s: float) -> float:
        return self.noise_base / duration_s**self.noise_duration_exponent

    def to_payload(self) -> dict[str, object]:
        payload = asdict(self)
        payload["short_range_s"] = list(self.short_range_s)
        payload["degradation_range"] = list(self.degradation_range)
        return payload


def _unit_rows(rng: np.random.Generator, rows: int, dim: int) -> FloatArray:
    draws = rng.standard_normal((rows, dim))
    return draws / np.linalg.norm(draws, axis=1, keepdims=True)


def generate_population(
    cfg: SimConfig,
    *,
    n_speakers: int | None = None,
    dim: int | None = None,
    population: Population = Population.EVALUATION,
) -> FloatArray:
    """Speaker means drawn uniformly on the unit hypersphere."""

    count = cfg.n_speakers if n_speakers is None else n_speakers
    if count < 2:
        msg = "a population needs at least two speakers"
        raise ValueError(msg)
    rng = np.random.default_rng([cfg.seed, int(population)])
    return _unit_rows(rng, count, cfg.dim if dim is None else dim)


def generate_utterance(  # noqa: PLR0913 - ids are keyword-only metadata
    speaker_mean: FloatArray,
    duration_s: float,
    cfg: SimConfig,
    rng: np.random.Generator,
    *,
    utt_id: str = "utt",
    speaker_id: str | None = None,
) -> Embedding:
    """Noisy embedding whose noise shrinks with duration; frame counts at 100/s.

    The noise is scaled by a degradation factor drawn from ``degradation_range``.
    """

    if duration_s < cfg.short_range_s[0]:
        msg = f"duration {duration_s} s is below the {cfg.short_range_s[0]} s minimum"
        raise ValueError(msg)
    mean = np.asarray(speaker_mean, dtype=np.float64)
    noise = rng.normal(0.0, cfg.noise_std(duration_s), size=mean.shape)
    n_frames = round(cfg.frames_per_second * duration_s)
    speech_fraction = rng.uniform(0.6, 1.0)
    degradation = rng.uniform(*cfg.degradation_range)
    return Embedding(
        utt_id=utt_id,
        speaker_id=speaker_id,
        vector=mean + degradation * noise,
        n_frames=n_frames,
        n_speech_frames=min(n_frames, round(speech_fraction * n_frames)),
    )


def generate_frames(
    frame_center: FloatArray,
    n_frames: int,
    cfg: SimConfig,
    rng: np.random.Generator,
) -> FloatArray:
    """Per-frame features scattered around the speaker's frame-space center."""

    center = np.asarray(frame_center, dtype=np.float64)
    return center + rng.normal(0.0, cfg.frame_noise, size=(n_frames, center.shape[0]))


def channel_basis(cfg: SimConfig) -> FloatArray:
    """Orthonormal rows spanning the channel subspace shared by every population."""

    if cfg.frame_channel_rank == 0:
        return np.zeros((0, cfg.frame_dim), dtype=np.float64)
    rng = np.random.default_rng([cfg.seed, int(Population.CHANNEL)])
    draws = rng.standard_normal((cfg.frame_dim, cfg.frame_channel_rank))
    basis, _ = np.linalg.qr(draws)
    return basis.T


def _utterance_offset(
    cfg: SimConfig, basis: FloatArray, rng: np.random.Generator
) -> FloatArray:
    channel = rng.normal(0.0, cfg.frame_channel_std, size=basis.shape[0]) @ basis
    return channel + rng.normal(0.0, cfg.frame_session_std, size=cfg.frame_dim)


def _durations(cfg: SimConfig, rng: np.random.Generator, count: int) -> list[float]:
    n_long = round(count * cfg.long_fraction)
    short_low, short_high = cfg.short_range_s
    long_low, long_high = cfg.long_range_s
    durations = [
        float(rng.uniform(short_low, short_high)) for _ in range(count - n_long)
    ]
    durations.extend(float(rng.uniform(long_low, long_high)) for _ in range(n_long))
    return durations


def _speaker_label(prefix: str, index: int) -> str:
    return f"{prefix}{index:04d}"


def generate_store(
    cfg: SimConfig,
    speaker_means: FloatArray,
    prefix: str = "spk",
    *,
    population: Population = Population.EVALUATION,
) -> EmbeddingStore:
    """``utterances_per_speaker`` utterances per speaker, short ones first."""

    embeddings: list[Embedding] = []
    for speaker_index, mean in enumerate(speaker_means):
        speaker_id = _speaker_label(prefix, speaker_index)
        plan_rng = np.random.default_rng([cfg.seed, int(population), speaker_index])
        durations = _durations(cfg, plan_rng, cfg.utterances_per_speaker)
        for utt_index, duration in enumerate(durations):
            rng = np.random.default_rng(
                [cfg.seed, int(population), speaker_index, utt_index + 1]
            )
            embeddings.append(
                generate_utterance(
                    mean,
                    duration,
                    cfg,
                    rng,
                    utt_id=f"{speaker_id}_u{utt_index:03d}",
                    speaker_id=speaker_id,
                )
            )
    return EmbeddingStore(embeddings)


def generate_cohort_store(cfg: SimConfig) -> EmbeddingStore:
    """Training-speaker population disjoint from the evaluation speakers."""

    means = generate_population(
        cfg, n_speakers=cfg.cohort_speakers, population=Population.COHORT
    )
    return generate_store(cfg, means, prefix="train", population=Population.COHORT)


def generate_trialset(
    cfg: SimConfig, trial_spec: CalibrationTrialSpec, seed: int
) -> tuple[EmbeddingStore, TrialList]:
    """Evaluation store plus a stratified, balanced labeled trial list."""

    store = generate_store(cfg, generate_population(cfg))
    trials = build_calibration_trials(store, trial_spec, seed)
    log_info("simulated", len(store), "utterances and", len(trials), "trials")
    return store, trials


def generate_frame_corpus(
    cfg: SimConfig,
    *,
    n_speakers: int,
    utterances_per_speaker: int,
    duration_range_s: tuple[float, float] = (2.0, 6.0),
    population: Population = Population.FRAMES,
    prefix: str = "frm",
) -> FrameCorpus:
    """Frame-feature utterances for toy extractor training or held-out evaluation.

    Each utterance shifts all of its frames by one channel plus session offset.
    """

    centers = generate_population(
        cfg, n_speakers=n_speakers, dim=cfg.frame_dim, population=population
    )
    basis = channel_basis(cfg)
    low, high = duration_range_s
    utterances: list[FrameUtterance] = []
    for speaker_index, center in enumerate(centers):
        speaker_id = _speaker_label(prefix, speaker_index)
        for utt_index in range(utterances_per_speaker):
            rng = np.random.default_rng(
                [cfg.seed, int(population), speaker_index, utt_index + 1]
            )
            duration = float(rng.uniform(low, high))
            n_frames = max(1, round(cfg.frames_per_second * duration))
            frames = generate_frames(center, n_frames, cfg, rng)
            utterances.append(
                FrameUtterance(
                    f"{speaker_id}_u{utt_index:03d}",
                    speaker_id,
                    frames + _utterance_offset(cfg, basis, rng),
                )
            )
    return FrameCorpus(utterances)


@dataclass(frozen=True, slots=True)
class SimulationFiles:
    embeddings: Path
    trials: Path
    cohort_embeddings: Path
    frames: Path | None = None


def write_simulation(
    cfg: SimConfig,
    trial_spec: CalibrationTrialSpec,
    out_dir: Path | str,
    *,
    frame_speakers: int = 0,
) -> SimulationFiles:
    """Write evaluation embeddings, trials, cohort embeddings and optional frames."""

    target = Path(out_dir)
    target.mkdir(parents=True, exist_ok=True)
    store, trials = generate_trialset(cfg, trial_spec, cfg.seed)
    files = SimulationFiles(
        embeddings=target / "embeddings.txt",
        trials=target / "trials.txt",
        cohort_embeddings=target / "cohort_embeddings.txt",
        frames=target / "frames.txt" if frame_speakers else None,
    )
    save_embeddings(store, files.embeddings)
    save_trials(trials, files.trials)
    save_embeddings(generate_cohort_store(cfg), files.cohort_embeddings)
    if files.frames is not None:
        corpus = generate_frame_corpus(
            cfg,
            n_speakers=frame_speakers,
            utterances_per_speaker=cfg.utterances_per_speaker,
        )
        save_frame_corpus(corpus, files.frames)
    log_info("simulation written to", target)
    return files


__all__ = [
    "FRAMES_PER_SECOND",
    "Population",
    "SimConfig",
    "SimulationFiles",
    "channel_basis",
    "generate_cohort_store",
    "generate_frame_corpus",
    "generate_frames",
    "generate_population",
    "generate_store",
    "generate_trialset",
    "generate_utterance",
    "write_simulation",
]
