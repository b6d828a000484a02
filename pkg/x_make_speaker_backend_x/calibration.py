"""Quality-aware linear calibration, calibration trial sets and score fusion.

The calibrated log-likelihood-ratio is ``l = w_s*s + w_q.q + b``. Parameters
minimize the prior-weighted binary cross-entropy of ``sigmoid(l + logit(P))``
with a damped Newton iteration started from zero, so fits are deterministic.
"""

from __future__ import annotations

import json
import math
from collections.abc import Mapping, Sequence
from dataclasses import dataclass
from pathlib import Path
from typing import TYPE_CHECKING, cast

import numpy as np
from scipy.special import expit

from .core_io import EmbeddingStore, Label, TrialList
from .json_contracts import (
    CALIBRATION_MODEL_SCHEMA,
    load_json_document,
    validate_payload,
)
from .quality import QmfConfig, QualityVector
from .x_logging_utils_x import log_debug, log_info

if TYPE_CHECKING:
    import numpy.typing as npt

    from .core_io import FloatArray

DEFAULT_PRIOR = 0.05
FRAMES_PER_SECOND = 100
MAX_ITERATIONS = 10_000
GRADIENT_TOLERANCE = 1e-8
_ARMIJO = 1e-4
_MIN_STEP = 1e-12
_WEIGHT_SUM_TOLERANCE = 1e-9
_MAX_PAIR_ATTEMPTS = 1000


class CalibrationError(RuntimeError):
    """Raised when a calibration or fusion fit fails."""

    def __init__(self, message: str, *, gradient_norm: float | None = None) -> None:
        super().__init__(message)
        self.gradient_norm = gradient_norm


class InsufficientDataError(ValueError):
    """Raised when a store cannot supply the requested calibration trials."""


class FusionWeightError(ValueError):
    """Raised when fusion weights are negative or do not sum to one."""


def logit(probability: float) -> float:
    if not 0.0 < probability < 1.0:
        msg = f"prior must lie in (0, 1), got {probability}"
        raise ValueError(msg)
    return math.log(probability / (1.0 - probability))


# Logistic regression core ---------------------------------------------------


@dataclass(frozen=True, slots=True)
class _Problem:
    design: FloatArray
    targets: FloatArray
    weights: FloatArray
    offset: float
    penalty_mask: FloatArray
    l2: float

    def objective(self, theta: FloatArray) -> float:
        z = self.design @ theta + self.offset
        losses = np.where(
            self.targets > 0.5, np.logaddexp(0.0, -z), np.logaddexp(0.0, z)
        )
        penalty = 0.5 * self.l2 * float(np.sum(self.penalty_mask * theta**2))
        return float(np.dot(self.weights, losses)) + penalty

    def gradient_and_hessian(self, theta: FloatArray) -> tuple[FloatArray, FloatArray]:
        z = self.design @ theta + self.offset
        prob = expit(z)
        residual = self.weights * (prob - self.targets)
        gradient = self.design.T @ residual + self.l2 * self.penalty_mask * theta
        curvature = self.weights * prob * (1.0 - prob)
        hessian = (self.design * curvature[:, None]).T @ self.design
        hessian += np.diag(self.l2 * self.penalty_mask)
        return gradient, hessian


def _class_weights(labels: npt.NDArray[np.bool_], prior: float) -> FloatArray:
    n_target = int(np.count_nonzero(labels))
    n_nontarget = labels.size - n_target
    if n_target == 0 or n_nontarget == 0:
        msg = "calibration needs both target and nontarget trials"
        raise CalibrationError(msg)
    return np.where(labels, prior / n_target, (1.0 - prior) / n_nontarget)


def _minimize(
    problem: _Problem,
    init: FloatArray,
    *,
    max_iter: int,
    tol: float,
) -> tuple[FloatArray, int]:
    theta = init.copy()
    value = problem.objective(theta)
    gradient, hessian = problem.gradient_and_hessian(theta)
    for iteration in range(max_iter):
        grad_norm = float(np.linalg.norm(gradient))
        if grad_norm <= tol:
            return theta, iteration
        direction = np.linalg.lstsq(hessian, -gradient, rcond=None)[0]
        slope = float(np.dot(gradient, direction))
        if slope >= 0.0:
            direction = -gradient
            slope = -grad_norm**2
        step = 1.0
        slack = 64.0 * np.finfo(np.float64).eps * max(1.0, abs(value))
        while True:
            candidate = theta + step * direction
            candidate_value = problem.objective(candidate)
            if candidate_value <= value + _ARMIJO * step * slope + slack:
                break
            step *= 0.5
            if step < _MIN_STEP:
                msg = f"line search stalled with gradient norm {grad_norm:.3e}"
                raise CalibrationError(msg, gradient_norm=grad_norm)
        theta, value = candidate, candidate_value
        gradient, hessian = problem.gradient_and_hessian(theta)
        log_debug("newton iteration", iteration, "objective", value)
    grad_norm = float(np.linalg.norm(gradient))
    if grad_norm <= tol:
        return theta, max_iter
    msg = f"no convergence after {max_iter} iterations, gradient norm {grad_norm:.3e}"
    raise CalibrationError(msg, gradient_norm=grad_norm)


def _as_labels(
    labels: Sequence[Label] | Sequence[bool] | npt.NDArray[np.bool_],
) -> npt.NDArray[np.bool_]:
    if isinstance(labels, np.ndarray):
        return labels.astype(bool)
    return np.array(
        [item is True or item == Label.TARGET for item in labels], dtype=bool
    )


def _as_quality(
    quality: FloatArray | Sequence[QualityVector] | None, n: int
) -> FloatArray:
    if quality is None:
        return np.zeros((n, 0), dtype=np.float64)
    if isinstance(quality, np.ndarray):
        matrix = np.asarray(quality, dtype=np.float64)
    else:
        matrix = np.array([vector.values for vector in quality], dtype=np.float64)
    if matrix.size == 0:
        return np.zeros((n, 0), dtype=np.float64)
    if matrix.ndim == 1:
        matrix = matrix[:, None]
    if matrix.shape[0] != n:
        msg = f"{matrix.shape[0]} quality rows for {n} scores"
        raise ValueError(msg)
    return matrix


# Models ---------------------------------------------------------------------


@dataclass(frozen=True, slots=True)
class CalibrationModel:
    """Weights of the quality-aware calibration map and the QMF layout they expect."""

    w_s: float
    w_q: tuple[float, ...]
    b: float
    qmf_config: QmfConfig | None = None
    effective_prior: float = DEFAULT_PRIOR

    def __post_init__(self) -> None:
        object.__setattr__(self, "w_q", tuple(float(w) for w in self.w_q))
        values = (self.w_s, self.b, *self.w_q)
        if not all(math.isfinite(value) for value in values):
            msg = "calibration weights must be finite"
            raise ValueError(msg)
        expected = self.qmf_config.feature_count if self.qmf_config else 0
        if len(self.w_q) != expected:
            msg = f"w_q has {len(self.w_q)} weights but the QMF layout has {expected}"
            raise ValueError(msg)
        logit(self.effective_prior)

    @classmethod
    def identity(cls) -> CalibrationModel:
        return cls(w_s=1.0, w_q=(), b=0.0)

    @property
    def feature_count(self) -> int:
        return len(self.w_q)

    def parameters(self) -> FloatArray:
        return np.array([self.w_s, *self.w_q, self.b], dtype=np.float64)

    def apply(
        self, score: float, quality: QualityVector | Sequence[float] = ()
    ) -> float:
        values = (
            quality.values if isinstance(quality, QualityVector) else tuple(quality)
        )
        if len(values) != len(self.w_q):
            msg = (
                f"quality vector has {len(values)} entries, "
                f"model expects {len(self.w_q)}"
            )
            raise ValueError(msg)
        total = self.w_s * float(score) + self.b
        for weight, value in zip(self.w_q, values, strict=True):
            total += weight * float(value)
        return total

    def apply_batch(
        self, scores: FloatArray, quality: FloatArray | None = None
    ) -> FloatArray:
        scores = np.asarray(scores, dtype=np.float64)
        matrix = _as_quality(quality, scores.shape[0])
        if matrix.shape[1] != len(self.w_q):
            msg = (
                f"quality matrix has {matrix.shape[1]} columns, "
                f"model expects {len(self.w_q)}"
            )
            raise ValueError(msg)
        weights = np.array(self.w_q, dtype=np.float64)
        return self.w_s * scores + matrix @ weights + self.b

    def to_payload(self) -> dict[str, object]:
        qmf = self.qmf_config
        return {
            "w_s": self.w_s,
            "w_q": list(self.w_q),
            "b": self.b,
            "qmf_config": qmf.to_payload() if qmf else None,
            "effective_prior": self.effective_prior,
            "feature_names": qmf.feature_names() if qmf else [],
            "snorm_std": "population",
        }

    @classmethod
    def from_payload(cls, payload: Mapping[str, object]) -> CalibrationModel:
        validate_payload(dict(payload), CALIBRATION_MODEL_SCHEMA)
        qmf_payload = payload.get("qmf_config")
        qmf_config = (
            QmfConfig.from_payload(cast("Mapping[str, object]", qmf_payload))
            if qmf_payload is not None
            else None
        )
        w_q = cast("list[float]", payload["w_q"])
        return cls(
            w_s=float(cast("float", payload["w_s"])),
            w_q=tuple(float(w) for w in w_q),
            b=float(cast("float", payload["b"])),
            qmf_config=qmf_config,
            effective_prior=float(
                cast("float", payload.get("effective_prior", DEFAULT_PRIOR))
            ),
        )


def apply(
    model: CalibrationModel,
    score: float,
    quality: QualityVector | Sequence[float] = (),
) -> float:
    """Evaluate ``w_s*s + w_q.q + b`` exactly."""

    return model.apply(score, quality)


def save_model(model: CalibrationModel, path: Path | str) -> None:
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    target.write_text(json.dumps(model.to_payload(), indent=2) + "\n", encoding="utf-8")


def load_model(path: Path | str) -> CalibrationModel:
    payload = load_json_document(path, CALIBRATION_MODEL_SCHEMA)
    return CalibrationModel.from_payload(cast("Mapping[str, object]", payload))


def calibration_objective(  # noqa: PLR0913 - mirrors fit's inputs
    model: CalibrationModel,
    scores: FloatArray,
    quality: FloatArray | Sequence[QualityVector] | None,
    labels: Sequence[Label] | Sequence[bool] | npt.NDArray[np.bool_],
    prior: float = DEFAULT_PRIOR,
    *,
    l2: float = 0.0,
) -> float:
    """Prior-weighted cross-entropy (nats) of *model* on a labeled set."""

    problem = _build_problem(scores, quality, labels, prior, l2)
    return problem.objective(model.parameters())


def _build_problem(
    scores: FloatArray,
    quality: FloatArray | Sequence[QualityVector] | None,
    labels: Sequence[Label] | Sequence[bool] | npt.NDArray[np.bool_],
    prior: float,
    l2: float,
) -> _Problem:
    score_array = np.asarray(scores, dtype=np.float64)
    if score_array.ndim != 1:
        msg = "scores must be one-dimensional"
        raise ValueError(msg)
    label_array = _as_labels(labels)
    if label_array.shape[0] != score_array.shape[0]:
        msg = f"{label_array.shape[0]} labels for {score_array.shape[0]} scores"
        raise ValueError(msg)
    if score_array.shape[0] < 2:
        msg = "calibration needs at least two trials"
        raise CalibrationError(msg)
    matrix = _as_quality(quality, score_array.shape[0])
    design = np.column_stack([score_array, matrix, np.ones_like(score_array)])
    if not np.all(np.isfinite(design)):
        msg = "calibration features must be finite"
        raise CalibrationError(msg)
    penalty_mask = np.ones(design.shape[1], dtype=np.float64)
    penalty_mask[-1] = 0.0
    return _Problem(
        design=design,
        targets=label_array.astype(np.float64),
        weights=_class_weights(label_array, prior),
        offset=logit(prior),
        penalty_mask=penalty_mask,
        l2=l2,
    )


def fit(  # noqa: PLR0913 - keyword options keep the call sites explicit
    scores: FloatArray,
    quality: FloatArray | Sequence[QualityVector] | None,
    labels: Sequence[Label] | Sequence[bool] | npt.NDArray[np.bool_],
    prior: float = DEFAULT_PRIOR,
    *,
    qmf_config: QmfConfig | None = None,
    l2: float = 0.0,
    init: Sequence[float] | None = None,
    max_iter: int = MAX_ITERATIONS,
    tol: float = GRADIENT_TOLERANCE,
) -> CalibrationModel:
    """Fit (w_s, w_q, b) by prior-weighted logistic regression."""

    problem = _build_problem(scores, quality, labels, prior, l2)
    n_params = problem.design.shape[1]
    if qmf_config is not None and qmf_config.feature_count != n_params - 2:
        msg = (
            f"QMF layout has {qmf_config.feature_count} features, "
            f"quality matrix has {n_params - 2}"
        )
        raise ValueError(msg)
    start = (
        np.zeros(n_params, dtype=np.float64)
        if init is None
        else np.asarray(init, dtype=np.float64)
    )
    if start.shape != (n_params,):
        msg = f"init must have {n_params} entries"
        raise ValueError(msg)
    theta, iterations = _minimize(problem, start, max_iter=max_iter, tol=tol)
    model = CalibrationModel(
        w_s=float(theta[0]),
        w_q=tuple(float(w) for w in theta[1:-1]),
        b=float(theta[-1]),
        qmf_config=qmf_config,
        effective_prior=prior,
    )
    log_info(
        "calibration converged in",
        iterations,
        "iterations: w_s",
        f"{model.w_s:.6g}",
        "b",
        f"{model.b:.6g}",
        "w_q",
        [f"{w:.6g}" for w in model.w_q],
    )
    return model


# Calibration trial sets -----------------------------------------------------


@dataclass(frozen=True, slots=True)
class CalibrationTrialSpec:
    """Duration-stratified trial set: short is [2, 6) s, long is [6, max] s."""

    short_range_s: tuple[float, float] = (2.0, 6.0)
    long_range_s: tuple[float, float] = (6.0, math.inf)
    trials_per_type: int = 10_000
    balanced: bool = True

    def __post_init__(self) -> None:
        if self.trials_per_type < 2 or self.trials_per_type % 2:
            msg = (
                "trials_per_type must be an even count of at least 2, "
                f"got {self.trials_per_type}"
            )
            raise ValueError(msg)
        if not self.balanced:
            msg = "calibration trial sets are always target/nontarget balanced"
            raise ValueError(msg)
        short_low, short_high = self.short_range_s
        long_low, long_high = self.long_range_s
        if not (short_low < short_high <= long_low < long_high):
            msg = "duration ranges must be ordered and non-overlapping"
            raise ValueError(msg)

    def is_short(self, seconds: float) -> bool:
        return self.short_range_s[0] <= seconds < self.short_range_s[1]

    def is_long(self, seconds: float) -> bool:
        return self.long_range_s[0] <= seconds <= self.long_range_s[1]


TRIAL_TYPES: tuple[tuple[str, str, str], ...] = (
    ("short-short", "short", "short"),
    ("short-long", "short", "long"),
    ("long-long", "long", "long"),
)


def _duration_pools(
    store: EmbeddingStore, trial_spec: CalibrationTrialSpec
) -> dict[str, dict[str, list[str]]]:
    pools: dict[str, dict[str, list[str]]] = {"short": {}, "long": {}}
    for embedding in store:
        if embedding.speaker_id is None:
            msg = f"utterance {embedding.utt_id!r} has no speaker label"
            raise InsufficientDataError(msg)
        seconds = embedding.n_frames / FRAMES_PER_SECOND
        if trial_spec.is_short(seconds):
            bucket = "short"
        elif trial_spec.is_long(seconds):
            bucket = "long"
        else:
            continue
        pools[bucket].setdefault(embedding.speaker_id, []).append(embedding.utt_id)
    return {
        name: {speaker: pool[speaker] for speaker in sorted(pool)}
        for name, pool in pools.items()
    }


def _sample_type(  # noqa: PLR0913 - one call site
    name: str,
    enroll_pool: dict[str, list[str]],
    test_pool: dict[str, list[str]],
    n_target: int,
    n_nontarget: int,
    rng: np.random.Generator,
) -> list[tuple[str, str, bool]]:
    same_bucket = enroll_pool is test_pool
    eligible = [
        speaker
        for speaker in enroll_pool
        if speaker in test_pool
        and (len(enroll_pool[speaker]) >= 2 if same_bucket else True)
    ]
    if not eligible:
        msg = f"no speaker can supply {name} target trials"
        raise InsufficientDataError(msg)
    enroll_speakers = list(enroll_pool)
    test_speakers = list(test_pool)
    if len(set(enroll_speakers) | set(test_speakers)) < 2:
        msg = f"{name} nontarget trials need at least two speakers"
        raise InsufficientDataError(msg)

    trials: list[tuple[str, str, bool]] = []
    seen: set[tuple[str, str]] = set()

    def _pick(items: Sequence[str]) -> str:
        return items[int(rng.integers(len(items)))]

    def _draw(target: bool) -> tuple[str, str]:
        for _ in range(_MAX_PAIR_ATTEMPTS):
            if target:
                speaker = _pick(eligible)
                utts = enroll_pool[speaker]
                if same_bucket:
                    first, second = rng.choice(len(utts), 2, replace=False)
                    pair = (utts[first], utts[second])
                else:
                    pair = (_pick(utts), _pick(test_pool[speaker]))
            else:
                enroll_speaker = _pick(enroll_speakers)
                test_speaker = _pick(test_speakers)
                if enroll_speaker == test_speaker:
                    continue
                pair = (
                    _pick(enroll_pool[enroll_speaker]),
                    _pick(test_pool[test_speaker]),
                )
            if pair not in seen and pair[::-1] not in seen:
                seen.add(pair)
                return pair
        kind = "target" if target else "nontarget"
        msg = f"could not draw enough distinct {name} {kind} trials"
        raise InsufficientDataError(msg)

    trials.extend((*_draw(True), True) for _ in range(n_target))
    trials.extend((*_draw(False), False) for _ in range(n_nontarget))
    order = rng.permutation(len(trials))
    return [trials[i] for i in order]


def build_calibration_trials(
    store: EmbeddingStore, trial_spec: CalibrationTrialSpec, seed: int
) -> TrialList:
    """Seeded short-short / short-long / long-long trial set, balanced per type.

    Durations come from ``n_frames`` at 100 frames per second.
    """

    pools = _duration_pools(store, trial_spec)
    for bucket in ("short", "long"):
        if not pools[bucket]:
            msg = f"store has no {bucket} utterances for the calibration trial set"
            raise InsufficientDataError(msg)
    rng = np.random.default_rng(seed)
    n_target = trial_spec.trials_per_type // 2
    n_nontarget = trial_spec.trials_per_type - n_target
    pairs: list[tuple[str, str]] = []
    labels: list[bool] = []
    for name, enroll_bucket, test_bucket in TRIAL_TYPES:
        sampled = _sample_type(
            name, pools[enroll_bucket], pools[test_bucket], n_target, n_nontarget, rng
        )
        for enroll_id, test_id, is_target in sampled:
            pairs.append((enroll_id, test_id))
            labels.append(is_target)
    log_info("built", len(pairs), "calibration trials from", len(store), "utterances")
    return TrialList.from_pairs(pairs, labels)


# Fusion ---------------------------------------------------------------------


def _check_weights(weights: Sequence[float] | FloatArray) -> FloatArray:
    array = np.asarray(weights, dtype=np.float64)
    if array.ndim != 1 or array.size == 0:
        msg = "fusion needs at least one weight"
        raise FusionWeightError(msg)
    if np.any(array < 0.0):
        msg = "fusion weights must be non-negative"
        raise FusionWeightError(msg)
    if abs(float(array.sum()) - 1.0) > _WEIGHT_SUM_TOLERANCE:
        msg = f"fusion weights must sum to 1, got {float(array.sum())!r}"
        raise FusionWeightError(msg)
    return array


def fuse(
    calibrated: Sequence[float] | FloatArray,
    weights: Sequence[float] | FloatArray,
) -> float | FloatArray:
    """Weighted average of per-system LLRs; accepts one trial or an (n, m) matrix."""

    weight_array = _check_weights(weights)
    values = np.asarray(calibrated, dtype=np.float64)
    if values.shape[-1] != weight_array.size:
        msg = f"{values.shape[-1]} systems for {weight_array.size} weights"
        raise FusionWeightError(msg)
    if values.ndim == 1:
        if weight_array.size == 1:
            return float(values[0])
        return float(values @ weight_array)
    for column, weight in enumerate(weight_array):
        if weight == 1.0:
            return values[:, column].copy()
    return values @ weight_array


@dataclass(frozen=True, slots=True)
class FusionModel:
    """Linear fusion ``sum_k w_k*l_k + b`` from a joint logistic fit."""

    weights: tuple[float, ...]
    b: float
    effective_prior: float = DEFAULT_PRIOR

    def apply(self, calibrated: FloatArray) -> FloatArray:
        values = np.atleast_2d(np.asarray(calibrated, dtype=np.float64))
        if values.shape[1] != len(self.weights):
            msg = f"{values.shape[1]} systems for {len(self.weights)} weights"
            raise FusionWeightError(msg)
        return values @ np.array(self.weights, dtype=np.float64) + self.b


def fit_fusion(
    calibrated: FloatArray,
    labels: Sequence[Label] | Sequence[bool] | npt.NDArray[np.bool_],
    prior: float = DEFAULT_PRIOR,
    *,
    l2: float = 0.0,
) -> FusionModel:
    matrix = np.atleast_2d(np.asarray(calibrated, dtype=np.float64))
    if matrix.shape[1] < 1:
        msg = "fusion needs at least one system"
        raise FusionWeightError(msg)
    problem = _build_problem(matrix[:, 0], matrix[:, 1:], labels, prior, l2)
    theta, _ = _minimize(
        problem,
        np.zeros(problem.design.shape[1], dtype=np.float64),
        max_iter=MAX_ITERATIONS,
        tol=GRADIENT_TOLERANCE,
    )
    log_info(
        "fusion weights",
        [f"{w:.6g}" for w in theta[:-1]],
        "offset",
        f"{theta[-1]:.6g}",
    )
    return FusionModel(
        weights=tuple(float(w) for w in theta[:-1]),
        b=float(theta[-1]),
        effective_prior=prior,
    )


__all__ = [
    "DEFAULT_PRIOR",
    "FRAMES_PER_SECOND",
    "TRIAL_TYPES",
    "CalibrationError",
    "CalibrationModel",
    "CalibrationTrialSpec",
    "FusionModel",
    "FusionWeightError",
    "InsufficientDataError",
    "apply",
    "build_calibration_trials",
    "calibration_objective",
    "fit",
    "fit_fusion",
    "fuse",
    "load_model",
    "logit",
    "save_model",
]
