"""Threshold-sweep and Bayes-threshold detection metrics.

A trial is accepted at threshold ``theta`` iff ``score >= theta``. Sweeps run
over every distinct score plus -inf and +inf, so accept-all and reject-all are
always among the operating points.
"""

from __future__ import annotations

import math
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, cast

import numpy as np

from .core_io import Label

if TYPE_CHECKING:
    import numpy.typing as npt

    from .core_io import FloatArray

LLR_CAP = 700.0
_LN2 = math.log(2.0)


class MetricsError(ValueError):
    """Raised when a metric is undefined for its input."""


@dataclass(frozen=True, slots=True)
class DcfParams:
    p_target: float = 0.01
    c_miss: float = 1.0
    c_fa: float = 1.0

    def __post_init__(self) -> None:
        if not 0.0 < self.p_target < 1.0:
            msg = f"p_target must lie in (0, 1), got {self.p_target}"
            raise ValueError(msg)
        if self.c_miss <= 0.0 or self.c_fa <= 0.0:
            msg = "detection costs must be positive"
            raise ValueError(msg)

    @property
    def bayes_threshold(self) -> float:
        cost_fa = (1.0 - self.p_target) * self.c_fa
        return math.log(cost_fa / (self.p_target * self.c_miss))

    @property
    def normalizer(self) -> float:
        return min(self.p_target * self.c_miss, (1.0 - self.p_target) * self.c_fa)

    def label(self) -> str:
        return f"minDCF(p={self.p_target:g})"

    def to_payload(self) -> dict[str, object]:
        return {"p_target": self.p_target, "c_miss": self.c_miss, "c_fa": self.c_fa}

    @classmethod
    def from_payload(cls, payload: Mapping[str, object]) -> DcfParams:
        return cls(
            p_target=float(cast("float", payload.get("p_target", 0.01))),
            c_miss=float(cast("float", payload.get("c_miss", 1.0))),
            c_fa=float(cast("float", payload.get("c_fa", 1.0))),
        )


def _split(
    scores: Sequence[float] | FloatArray,
    labels: Sequence[Label] | Sequence[bool] | npt.NDArray[np.bool_],
) -> tuple[FloatArray, FloatArray]:
    values = np.asarray(scores, dtype=np.float64)
    if isinstance(labels, np.ndarray):
        mask = labels.astype(bool)
    else:
        mask = np.array(
            [item is True or item == Label.TARGET for item in labels], dtype=bool
        )
    if values.ndim != 1 or mask.shape != values.shape:
        msg = f"{mask.size} labels for {values.size} scores"
        raise MetricsError(msg)
    if np.any(np.isnan(values)):
        msg = "scores contain NaN"
        raise MetricsError(msg)
    targets = values[mask]
    nontargets = values[~mask]
    if targets.size == 0 or nontargets.size == 0:
        msg = "metrics need both target and nontarget trials"
        raise MetricsError(msg)
    return targets, nontargets


@dataclass(frozen=True, slots=True)
class ErrorRates:
    """Swept operating points, thresholds ascending from -inf to +inf."""

    thresholds: FloatArray
    p_miss: FloatArray
    p_fa: FloatArray


def _rates(targets: FloatArray, nontargets: FloatArray) -> ErrorRates:
    thresholds = np.concatenate(
        ([-np.inf], np.unique(np.concatenate([targets, nontargets])), [np.inf])
    )
    thresholds = np.unique(thresholds)
    sorted_targets = np.sort(targets)
    sorted_nontargets = np.sort(nontargets)
    misses = np.searchsorted(sorted_targets, thresholds, side="left")
    false_accepts = sorted_nontargets.size - np.searchsorted(
        sorted_nontargets, thresholds, side="left"
    )
    if np.isposinf(thresholds[-1]):
        # score >= +inf only for +inf scores; reject-all must stay reachable.
        misses[-1] = sorted_targets.size
        false_accepts[-1] = 0
    return ErrorRates(
        thresholds=thresholds,
        p_miss=misses / sorted_targets.size,
        p_fa=false_accepts / sorted_nontargets.size,
    )


def detection_error_rates(
    scores: Sequence[float] | FloatArray,
    labels: Sequence[Label] | Sequence[bool] | npt.NDArray[np.bool_],
) -> ErrorRates:
    targets, nontargets = _split(scores, labels)
    return _rates(targets, nontargets)


def eer(
    scores: Sequence[float] | FloatArray,
    labels: Sequence[Label] | Sequence[bool] | npt.NDArray[np.bool_],
    *,
    interpolate: bool = True,
) -> float:
    """Equal error rate, linearly interpolated at the miss/false-accept crossing.

    With ``interpolate=False`` the larger of the two rates at the operating
    point where they are closest is returned instead.
    """

    rates = detection_error_rates(scores, labels)
    p_miss, p_fa = rates.p_miss, rates.p_fa
    if not interpolate:
        index = int(np.argmin(np.abs(p_miss - p_fa)))
        return float(max(p_miss[index], p_fa[index]))
    crossing = int(np.argmax(p_miss >= p_fa))
    if crossing == 0:
        return float(p_miss[0])
    gap_before = p_fa[crossing - 1] - p_miss[crossing - 1]
    gap_after = p_fa[crossing] - p_miss[crossing]
    fraction = gap_before / (gap_before - gap_after)
    return float(
        p_miss[crossing - 1] + fraction * (p_miss[crossing] - p_miss[crossing - 1])
    )


def _normalized_cost(
    p_miss: FloatArray | float, p_fa: FloatArray | float, params: DcfParams
) -> FloatArray:
    cost = params.p_target * params.c_miss * np.asarray(p_miss) + (
        1.0 - params.p_target
    ) * params.c_fa * np.asarray(p_fa)
    return cost / params.normalizer


def min_dcf(
    scores: Sequence[float] | FloatArray,
    labels: Sequence[Label] | Sequence[bool] | npt.NDArray[np.bool_],
    params: DcfParams | None = None,
) -> float:
    resolved = params or DcfParams()
    rates = detection_error_rates(scores, labels)
    return float(np.min(_normalized_cost(rates.p_miss, rates.p_fa, resolved)))


def act_dcf(
    llrs: Sequence[float] | FloatArray,
    labels: Sequence[Label] | Sequence[bool] | npt.NDArray[np.bool_],
    params: DcfParams | None = None,
) -> float:
    """Normalized cost at the Bayes threshold ``log((1-p)c_fa / (p c_miss))``."""

    resolved = params or DcfParams()
    targets, nontargets = _split(llrs, labels)
    theta = resolved.bayes_threshold
    p_miss = float(np.count_nonzero(targets < theta)) / targets.size
    p_fa = float(np.count_nonzero(nontargets >= theta)) / nontargets.size
    return float(_normalized_cost(p_miss, p_fa, resolved))


def _soft_log2(values: FloatArray) -> FloatArray:
    """log2(1 + exp(values)) with magnitudes above the cap treated as infinite."""

    capped = np.where(
        values > LLR_CAP, np.inf, np.where(values < -LLR_CAP, -np.inf, values)
    )
    return np.logaddexp(0.0, capped) / _LN2


def cllr(
    llrs: Sequence[float] | FloatArray,
    labels: Sequence[Label] | Sequence[bool] | npt.NDArray[np.bool_],
) -> float:
    """Log-likelihood-ratio cost in bits."""

    targets, nontargets = _split(llrs, labels)
    return float(
        0.5 * (np.mean(_soft_log2(-targets)) + np.mean(_soft_log2(nontargets)))
    )


@dataclass(frozen=True, slots=True)
class MetricRow:
    """One report row; actDCF and Cllr are filled only for LLR scores."""

    name: str
    eer: float
    min_dcf: tuple[float, ...]
    act_dcf: tuple[float, ...] | None = None
    cllr: float | None = None
    params: tuple[DcfParams, ...] = field(default=())

    def to_payload(self) -> dict[str, object]:
        payload: dict[str, object] = {
            "name": self.name,
            "eer": self.eer,
            "min_dcf": list(self.min_dcf),
        }
        if self.act_dcf is not None:
            payload["act_dcf"] = list(self.act_dcf)
        if self.cllr is not None:
            payload["cllr"] = self.cllr
        payload["dcf_params"] = [params.to_payload() for params in self.params]
        return payload


def evaluate_scores(
    scores: Sequence[float] | FloatArray,
    labels: Sequence[Label] | Sequence[bool] | npt.NDArray[np.bool_],
    params: Sequence[DcfParams] = (DcfParams(),),
    *,
    use_llr: bool = False,
    name: str = "scores",
) -> MetricRow:
    if not params:
        msg = "at least one DCF operating point is required"
        raise MetricsError(msg)
    resolved = tuple(params)
    return MetricRow(
        name=name,
        eer=eer(scores, labels),
        min_dcf=tuple(min_dcf(scores, labels, p) for p in resolved),
        act_dcf=(
            tuple(act_dcf(scores, labels, p) for p in resolved) if use_llr else None
        ),
        cllr=cllr(scores, labels) if use_llr else None,
        params=resolved,
    )


def format_metric_line(row: MetricRow) -> str:
    """``EER(%) minDCF [actDCF Cllr]`` with four decimals."""

    parts = [f"{100.0 * row.eer:.4f}", *(f"{value:.4f}" for value in row.min_dcf)]
    if row.act_dcf is not None:
        parts.extend(f"{value:.4f}" for value in row.act_dcf)
    if row.cllr is not None:
        parts.append(f"{row.cllr:.4f}")
    return " ".join(parts)


__all__ = [
    "LLR_CAP",
    "DcfParams",
    "ErrorRates",
    "MetricRow",
    "MetricsError",
    "act_dcf",
    "cllr",
    "detection_error_rates",
    "eer",
    "evaluate_scores",
    "format_metric_line",
    "min_dcf",
]
