"""Toy embedding extractor and the staged large-margin training loop.

The extractor mean-pools frame features, applies one affine map and a tanh.
Each stage trains it jointly with an AAM head using Adam with decoupled weight
decay, a triangular2 learning-rate cycle and either random or hard-prototype
batches.
"""

from __future__ import annotations

import json
import math
from collections import deque
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field, replace
from enum import StrEnum
from pathlib import Path
from typing import TYPE_CHECKING, cast

import numpy as np

from ..core_io import Embedding, EmbeddingStore, FrameCorpus
from ..json_contracts import TRAIN_PLAN_SCHEMA, load_json_document, validate_payload
from ..ledger import TrainingLog, TrainingLogEntry, read_training_log
from ..x_logging_utils_x import log_debug, log_info, log_warning
from .aam import DEFAULT_SCALE, AamHead, aam_loss_and_grad
from .clr import ClrSchedule, clr_lr
from .hpm import Batch, HardPrototypeSampler, HpmConfig, random_pass

if TYPE_CHECKING:
    from ..core_io import FloatArray

EXTRACTOR_WEIGHT_DECAY = 2e-5
HEAD_WEIGHT_DECAY = 2e-4
MAX_TIME_MASK = 5
WEIGHTS_FILE = "weights.npz"
MODEL_FILE = "model.json"
HISTORY_FILE = "history.log"


class DivergenceError(RuntimeError):
    """Raised when the training loss stops being finite."""

    def __init__(self, stage: int, iteration: int, loss: float) -> None:
        super().__init__(
            f"training diverged in stage {stage} at iteration {iteration} "
            f"(loss {loss!r})"
        )
        self.stage = stage
        self.iteration = iteration
        self.loss = loss


class SamplerKind(StrEnum):
    RANDOM = "random"
    HPM = "hpm"


class AblationKind(StrEnum):
    NO_MARGIN_INCREASE = "no_margin_increase"
    NO_DURATION_INCREASE = "no_duration_increase"
    NO_LR_DECREASE = "no_lr_decrease"
    NO_HARD_SAMPLING = "no_hard_sampling"
    FROZEN_EXTRACTOR = "frozen_extractor"


@dataclass(frozen=True, slots=True)
class TrainStage:
    margin: float
    crop_frames: int
    schedule: ClrSchedule
    sampler: SamplerKind = SamplerKind.RANDOM
    cycles: int = 1
    scale: float = DEFAULT_SCALE
    batch_size: int = 32
    augment: bool = False
    frozen_extractor: bool = False
    hpm: HpmConfig | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "sampler", SamplerKind(self.sampler))
        if not 0.0 <= self.margin < math.pi / 2:
            msg = f"stage margin must lie in [0, pi/2), got {self.margin}"
            raise ValueError(msg)
        if self.crop_frames < 1 or self.cycles < 1 or self.batch_size < 1:
            msg = "crop_frames, cycles and batch_size must be positive"
            raise ValueError(msg)
        if self.sampler is SamplerKind.HPM:
            if self.hpm is None:
                msg = "an hpm stage needs S, U and I"
                raise ValueError(msg)
            object.__setattr__(self, "batch_size", self.hpm.n)

    @property
    def iterations(self) -> int:
        return self.cycles * self.schedule.cycle_len

    def to_payload(self) -> dict[str, object]:
        payload: dict[str, object] = {
            "margin": self.margin,
            "crop_frames": self.crop_frames,
            "lr_min": self.schedule.lr_min,
            "lr_max": self.schedule.lr_max,
            "cycle_len": self.schedule.cycle_len,
            "cycles": self.cycles,
            "sampler": self.sampler.value,
            "scale": self.scale,
            "batch_size": self.batch_size,
            "augment": self.augment,
            "frozen_extractor": self.frozen_extractor,
        }
        if self.hpm is not None:
            payload["hpm"] = self.hpm.to_payload()
        return payload

    @classmethod
    def from_payload(cls, payload: Mapping[str, object]) -> TrainStage:
        hpm_payload = cast("Mapping[str, int] | None", payload.get("hpm"))
        return cls(
            margin=float(cast("float", payload["margin"])),
            crop_frames=int(cast("int", payload["crop_frames"])),
            schedule=ClrSchedule(
                lr_min=float(cast("float", payload["lr_min"])),
                lr_max=float(cast("float", payload["lr_max"])),
                cycle_len=int(cast("int", payload["cycle_len"])),
            ),
            sampler=SamplerKind(str(payload["sampler"])),
            cycles=int(cast("int", payload["cycles"])),
            scale=float(cast("float", payload.get("scale", DEFAULT_SCALE))),
            batch_size=int(cast("int", payload.get("batch_size", 32))),
            augment=bool(payload.get("augment", False)),
            frozen_extractor=bool(payload.get("frozen_extractor", False)),
            hpm=(
                HpmConfig(S=hpm_payload["S"], U=hpm_payload["U"], I=hpm_payload["I"])
                if hpm_payload is not None
                else None
            ),
        )


@dataclass(frozen=True, slots=True)
class TrainPlan:
    stages: tuple[TrainStage, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "stages", tuple(self.stages))
        if not self.stages:
            msg = "a training plan needs at least one stage"
            raise ValueError(msg)
        margins = [stage.margin for stage in self.stages]
        if any(later < earlier for earlier, later in zip(margins, margins[1:])):
            log_warning("training plan margins decrease across stages:", margins)

    @classmethod
    def default(  # noqa: PLR0913 - one knob per recipe parameter
        cls,
        *,
        crop_frames: int = 40,
        lr_min: float = 1e-7,
        lr_max: float = 1e-2,
        cycle_len: int = 200,
        cycles: int = 2,
        batch_size: int = 32,
        hpm: HpmConfig | None = None,
    ) -> TrainPlan:
        """Low-margin training on short crops, then large-margin fine-tuning.

        The second stage raises the margin from 0.2 to 0.5, triples the crop,
        lowers the peak learning rate 100x, halves the cycle, switches to hard
        prototype mining and turns augmentation off.
        """

        first = TrainStage(
            margin=0.2,
            crop_frames=crop_frames,
            schedule=ClrSchedule(lr_min, lr_max, cycle_len),
            sampler=SamplerKind.RANDOM,
            cycles=cycles,
            batch_size=batch_size,
            augment=True,
        )
        fine_tune_cfg = hpm or HpmConfig(S=4, U=1, I=8)
        second = TrainStage(
            margin=0.5,
            crop_frames=3 * crop_frames,
            schedule=ClrSchedule(
                lr_min, max(lr_min, lr_max / 100), max(2, cycle_len // 2)
            ),
            sampler=SamplerKind.HPM,
            cycles=1,
            augment=False,
            hpm=fine_tune_cfg,
        )
        return cls((first, second))

    def ablate(self, kind: AblationKind | str) -> TrainPlan:
        """Undo one fine-tuning change in the final stage relative to the first."""

        resolved = AblationKind(kind)
        if len(self.stages) < 2:
            msg = "ablations need a plan with a fine-tuning stage"
            raise ValueError(msg)
        base, last = self.stages[0], self.stages[-1]
        if resolved is AblationKind.NO_MARGIN_INCREASE:
            changed = replace(last, margin=base.margin)
        elif resolved is AblationKind.NO_DURATION_INCREASE:
            changed = replace(last, crop_frames=base.crop_frames)
        elif resolved is AblationKind.NO_LR_DECREASE:
            changed = replace(
                last, schedule=replace(last.schedule, lr_max=base.schedule.lr_max)
            )
        elif resolved is AblationKind.NO_HARD_SAMPLING:
            changed = replace(last, sampler=SamplerKind.RANDOM, hpm=None)
        else:
            changed = replace(last, frozen_extractor=True)
        return TrainPlan((*self.stages[:-1], changed))

    def to_payload(self) -> list[dict[str, object]]:
        return [stage.to_payload() for stage in self.stages]

    @classmethod
    def from_payload(cls, payload: Sequence[Mapping[str, object]]) -> TrainPlan:
        validate_payload([dict(stage) for stage in payload], TRAIN_PLAN_SCHEMA)
        return cls(tuple(TrainStage.from_payload(stage) for stage in payload))


def load_train_plan(path: Path | str) -> TrainPlan:
    payload = load_json_document(path, TRAIN_PLAN_SCHEMA)
    return TrainPlan.from_payload(cast("list[Mapping[str, object]]", payload))


@dataclass(slots=True)
class ToyExtractor:
    """``tanh(mean_t(frames) @ weights + bias)``."""

    weights: FloatArray
    bias: FloatArray

    @classmethod
    def initialize(
        cls, feature_dim: int, embedding_dim: int, rng: np.random.Generator
    ) -> ToyExtractor:
        scale = 1.0 / math.sqrt(feature_dim)
        weights = rng.normal(0.0, scale, size=(feature_dim, embedding_dim))
        return cls(weights=weights, bias=np.zeros(embedding_dim, dtype=np.float64))

    @property
    def feature_dim(self) -> int:
        return int(self.weights.shape[0])

    @property
    def embedding_dim(self) -> int:
        return int(self.weights.shape[1])

    def forward(self, pooled: FloatArray) -> FloatArray:
        return np.tanh(pooled @ self.weights + self.bias)

    def embed(self, frames: FloatArray) -> FloatArray:
        return self.forward(np.asarray(frames, dtype=np.float64).mean(axis=0))

    def extract(self, corpus: FrameCorpus) -> EmbeddingStore:
        """Embed every full utterance of *corpus*."""

        return EmbeddingStore(
            Embedding(
                utt_id=utterance.utt_id,
                speaker_id=utterance.speaker_id,
                vector=self.embed(utterance.frames),
                n_frames=utterance.n_frames,
            )
            for utterance in corpus
        )


class _AdamW:
    """Adam moments for one parameter array, updated in place."""

    __slots__ = ("_m", "_step", "_v", "weight_decay")

    beta1 = 0.9
    beta2 = 0.999
    eps = 1e-8

    def __init__(self, shape: tuple[int, ...], weight_decay: float) -> None:
        self._m = np.zeros(shape, dtype=np.float64)
        self._v = np.zeros(shape, dtype=np.float64)
        self._step = 0
        self.weight_decay = weight_decay

    def update(self, param: FloatArray, grad: FloatArray, lr: float) -> None:
        self._step += 1
        self._m = self.beta1 * self._m + (1.0 - self.beta1) * grad
        self._v = self.beta2 * self._v + (1.0 - self.beta2) * grad**2
        m_hat = self._m / (1.0 - self.beta1**self._step)
        v_hat = self._v / (1.0 - self.beta2**self._step)
        param -= lr * (m_hat / (np.sqrt(v_hat) + self.eps) + self.weight_decay * param)


@dataclass(slots=True)
class ToyModel:
    extractor: ToyExtractor
    head: AamHead
    speakers: tuple[str, ...]
    plan: TrainPlan
    stages_completed: int
    history: list[TrainingLogEntry] = field(default_factory=list)


def _prepare(
    frames: FloatArray, stage: TrainStage, rng: np.random.Generator
) -> FloatArray:
    """Random crop, optional time/feature masking, then mean pooling."""

    n_frames, feature_dim = frames.shape
    if n_frames > stage.crop_frames:
        start = int(rng.integers(0, n_frames - stage.crop_frames + 1))
        frames = frames[start : start + stage.crop_frames]
    if stage.augment:
        frames = frames.copy()
        width = int(rng.integers(0, MAX_TIME_MASK + 1))
        if 0 < width < frames.shape[0]:
            start = int(rng.integers(0, frames.shape[0] - width + 1))
            frames[start : start + width] = 0.0
        bands = int(rng.integers(0, feature_dim // 8 + 1))
        if bands:
            start = int(rng.integers(0, feature_dim - bands + 1))
            frames[:, start : start + bands] = 0.0
    return frames.mean(axis=0)


class _BatchStream:
    def __init__(
        self,
        stage: TrainStage,
        utterances_by_speaker: Mapping[str, list[str]],
        seed: tuple[int, ...],
    ) -> None:
        self._stage = stage
        self._utterances = utterances_by_speaker
        self._seed = seed
        self._passes = 0
        self._queue: deque[Batch] = deque()
        self._hpm = (
            HardPrototypeSampler(utterances_by_speaker, stage.hpm, seed)
            if stage.sampler is SamplerKind.HPM and stage.hpm is not None
            else None
        )

    def next(self, head: AamHead) -> Batch:
        while not self._queue:
            if self._hpm is not None:
                self._queue.extend(self._hpm.next_pass(head))
            else:
                self._queue.extend(
                    random_pass(
                        self._utterances,
                        self._stage.batch_size,
                        (*self._seed, self._passes),
                    )
                )
                self._passes += 1
        return self._queue.popleft()


def train_toy(  # noqa: PLR0913 - keyword options keep the call sites explicit
    plan: TrainPlan,
    corpus: FrameCorpus,
    seed: int,
    *,
    embedding_dim: int = 16,
    initial: ToyModel | None = None,
    log_path: Path | str | None = None,
    log_every: int = 100,
) -> ToyModel:
    """Train the toy extractor and AAM head stage by stage.

    With *initial* the stages continue from an already trained model; stage
    numbering and random streams carry on from it, so training stage 1 and then
    stage 2 separately matches training both in one call.
    """

    groups = corpus.by_speaker()
    speakers = tuple(groups)
    if len(speakers) < 2:
        msg = "training needs at least two speakers"
        raise ValueError(msg)
    class_of = {speaker: index for index, speaker in enumerate(speakers)}
    if initial is not None:
        if initial.speakers != speakers:
            msg = "initial model was trained on a different speaker set"
            raise ValueError(msg)
        extractor = ToyExtractor(
            initial.extractor.weights.copy(), initial.extractor.bias.copy()
        )
        head = AamHead(
            initial.head.prototypes.copy(), initial.head.margin, initial.head.scale
        )
        first_stage = initial.stages_completed
        history = list(initial.history)
        completed = initial.plan.stages
    else:
        init_rng = np.random.default_rng([seed, 0xC0FFEE])
        extractor = ToyExtractor.initialize(corpus.feature_dim, embedding_dim, init_rng)
        head = AamHead(
            init_rng.normal(size=(len(speakers), embedding_dim)),
            plan.stages[0].margin,
            plan.stages[0].scale,
        )
        first_stage = 0
        history = []
        completed = ()
    training_log = TrainingLog(Path(log_path)) if log_path is not None else None
    if training_log is not None and history:
        training_log.extend(history)
    iteration = history[-1].iteration + 1 if history else 0

    for offset, stage in enumerate(plan.stages):
        stage_index = first_stage + offset
        rng = np.random.default_rng([seed, stage_index])
        head.margin = stage.margin
        head.scale = stage.scale
        weights_opt = _AdamW(extractor.weights.shape, EXTRACTOR_WEIGHT_DECAY)
        bias_opt = _AdamW(extractor.bias.shape, 0.0)
        head_opt = _AdamW(head.prototypes.shape, HEAD_WEIGHT_DECAY)
        stream = _BatchStream(stage, groups, (seed, stage_index))
        log_info(
            "stage",
            stage_index,
            "margin",
            stage.margin,
            "crop",
            stage.crop_frames,
            "peak lr",
            stage.schedule.lr_max,
            "sampler",
            stage.sampler.value,
            "iterations",
            stage.iterations,
        )
        if training_log is not None:
            training_log.begin_stage(stage_index, stage.to_payload())
        entries: list[TrainingLogEntry] = []
        for step in range(stage.iterations):
            lr = clr_lr(step, stage.schedule)
            batch = stream.next(head)
            utterances = [corpus.get(utt_id) for utt_id in batch]
            pooled = np.stack([_prepare(u.frames, stage, rng) for u in utterances])
            labels = np.array(
                [class_of[u.speaker_id] for u in utterances], dtype=np.intp
            )
            embeddings = extractor.forward(pooled)
            loss, grad_x, grad_w = aam_loss_and_grad(embeddings, labels, head)
            finite = np.all(np.isfinite(grad_x)) and np.all(np.isfinite(grad_w))
            if not (math.isfinite(loss) and finite):
                raise DivergenceError(stage_index, iteration, loss)
            if not stage.frozen_extractor:
                grad_hidden = grad_x * (1.0 - embeddings**2)
                weights_opt.update(extractor.weights, pooled.T @ grad_hidden, lr)
                bias_opt.update(extractor.bias, grad_hidden.sum(axis=0), lr)
            head_opt.update(head.prototypes, grad_w, lr)
            entry = TrainingLogEntry(iteration, lr, loss)
            entries.append(entry)
            if training_log is not None:
                training_log.append(entry)
            if log_every > 0 and step % log_every == 0:
                log_debug(
                    "iteration", iteration, "lr", f"{lr:.3e}", "loss", f"{loss:.6f}"
                )
            iteration += 1
        history.extend(entries)
        tail = entries[-min(len(entries), 50) :]
        log_info(
            "stage",
            stage_index,
            "done, mean loss over last",
            len(tail),
            "iterations:",
            f"{float(np.mean([e.loss for e in tail])):.6f}",
        )

    return ToyModel(
        extractor=extractor,
        head=head,
        speakers=speakers,
        plan=TrainPlan((*completed, *plan.stages)),
        stages_completed=first_stage + len(plan.stages),
        history=history,
    )


def save_toy_model(model: ToyModel, directory: Path | str) -> Path:
    """Write ``weights.npz``, ``model.json`` and ``history.log`` into *directory*."""

    target = Path(directory)
    target.mkdir(parents=True, exist_ok=True)
    np.savez(
        target / WEIGHTS_FILE,
        weights=model.extractor.weights,
        bias=model.extractor.bias,
        prototypes=model.head.prototypes,
    )
    payload = {
        "plan": model.plan.to_payload(),
        "speakers": list(model.speakers),
        "stages_completed": model.stages_completed,
        "margin": model.head.margin,
        "scale": model.head.scale,
    }
    (target / MODEL_FILE).write_text(
        json.dumps(payload, indent=2) + "\n", encoding="utf-8"
    )
    TrainingLog(target / HISTORY_FILE).extend(model.history)
    return target


def load_toy_model(directory: Path | str) -> ToyModel:
    source = Path(directory)
    payload = cast(
        "dict[str, object]",
        json.loads((source / MODEL_FILE).read_text(encoding="utf-8")),
    )
    plan = TrainPlan.from_payload(cast("list[Mapping[str, object]]", payload["plan"]))
    history_path = source / HISTORY_FILE
    with np.load(source / WEIGHTS_FILE) as arrays:
        extractor = ToyExtractor(arrays["weights"].copy(), arrays["bias"].copy())
        head = AamHead(
            arrays["prototypes"].copy(),
            float(cast("float", payload["margin"])),
            float(cast("float", payload["scale"])),
        )
    return ToyModel(
        extractor=extractor,
        head=head,
        speakers=tuple(cast("list[str]", payload["speakers"])),
        plan=plan,
        stages_completed=int(cast("int", payload["stages_completed"])),
        history=read_training_log(history_path) if history_path.is_file() else [],
    )


__all__ = [
    "EXTRACTOR_WEIGHT_DECAY",
    "HEAD_WEIGHT_DECAY",
    "AblationKind",
    "DivergenceError",
    "SamplerKind",
    "ToyExtractor",
    "ToyModel",
    "TrainPlan",
    "TrainStage",
    "load_toy_model",
    "load_train_plan",
    "save_toy_model",
    "train_toy",
]
