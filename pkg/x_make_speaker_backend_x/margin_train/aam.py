"""Additive angular margin softmax: loss, gradients and prototype similarity."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np
from scipy.special import log_softmax, softmax

if TYPE_CHECKING:
    import numpy.typing as npt

    from ..core_io import FloatArray

DEFAULT_SCALE = 30.0
_SIN_FLOOR = 1e-12


class AamConfigError(ValueError):
    """Raised for invalid heads, zero embeddings or out-of-range labels."""


@dataclass(slots=True)
class AamHead:
    """Class prototypes with the margin and scale of the AAM-softmax layer.

    Rows are L2-normalized at every forward pass; the stored rows keep their
    raw length so gradients can be taken with respect to them.
    """

    prototypes: FloatArray
    margin: float = 0.2
    scale: float = DEFAULT_SCALE

    def __post_init__(self) -> None:
        self.prototypes = np.array(self.prototypes, dtype=np.float64)
        if self.prototypes.ndim != 2 or self.prototypes.shape[0] < 2:
            msg = "an AAM head needs at least two prototypes"
            raise AamConfigError(msg)
        if np.any(np.linalg.norm(self.prototypes, axis=1) == 0.0):
            msg = "prototypes must be nonzero"
            raise AamConfigError(msg)
        if not 0.0 <= self.margin < math.pi / 2:
            msg = f"margin must lie in [0, pi/2), got {self.margin}"
            raise AamConfigError(msg)
        if self.scale <= 0.0:
            msg = f"scale must be positive, got {self.scale}"
            raise AamConfigError(msg)

    @property
    def n_classes(self) -> int:
        return int(self.prototypes.shape[0])

    @property
    def dim(self) -> int:
        return int(self.prototypes.shape[1])

    def normalized(self) -> FloatArray:
        return self.prototypes / np.linalg.norm(self.prototypes, axis=1, keepdims=True)


@dataclass(frozen=True, slots=True)
class _Forward:
    unit_x: FloatArray
    x_norms: FloatArray
    unit_w: FloatArray
    w_norms: FloatArray
    cosines: FloatArray
    logits: FloatArray
    target_factor: FloatArray


def _forward(
    embeddings: FloatArray, labels: npt.NDArray[np.intp], head: AamHead
) -> _Forward:
    x = np.atleast_2d(np.asarray(embeddings, dtype=np.float64))
    if x.shape[1] != head.dim:
        msg = f"embeddings have dimension {x.shape[1]}, head expects {head.dim}"
        raise AamConfigError(msg)
    if labels.shape != (x.shape[0],):
        msg = f"{labels.size} labels for {x.shape[0]} embeddings"
        raise AamConfigError(msg)
    if np.any(labels < 0) or np.any(labels >= head.n_classes):
        msg = f"labels must lie in [0, {head.n_classes})"
        raise AamConfigError(msg)
    x_norms = np.linalg.norm(x, axis=1)
    if np.any(x_norms == 0.0):
        msg = "zero embedding in batch"
        raise AamConfigError(msg)
    w_norms = np.linalg.norm(head.prototypes, axis=1)
    if np.any(w_norms == 0.0):
        msg = "prototypes must be nonzero"
        raise AamConfigError(msg)
    unit_x = x / x_norms[:, None]
    unit_w = head.prototypes / w_norms[:, None]
    cosines = np.clip(unit_x @ unit_w.T, -1.0, 1.0)

    rows = np.arange(x.shape[0])
    target_cos = cosines[rows, labels]
    theta = np.arccos(target_cos)
    shifted = theta + head.margin
    clamped = shifted >= math.pi
    shifted = np.minimum(shifted, math.pi)

    logits = head.scale * cosines
    logits[rows, labels] = head.scale * np.cos(shifted)

    # d cos(theta + m) / d cos(theta); the clamped branch is constant.
    sin_theta = np.sin(theta)
    if head.margin == 0.0:
        factor = np.ones_like(theta)
    else:
        factor = np.divide(
            np.sin(shifted),
            sin_theta,
            out=np.zeros_like(theta),
            where=sin_theta > _SIN_FLOOR,
        )
    factor[clamped] = 0.0
    return _Forward(unit_x, x_norms, unit_w, w_norms, cosines, logits, factor)


def _as_labels(labels: npt.ArrayLike) -> npt.NDArray[np.intp]:
    return np.asarray(labels, dtype=np.intp).reshape(-1)


def aam_loss(embeddings: FloatArray, labels: npt.ArrayLike, head: AamHead) -> float:
    """Mean AAM-softmax cross-entropy over the batch."""

    label_array = _as_labels(labels)
    forward = _forward(embeddings, label_array, head)
    log_probs = log_softmax(forward.logits, axis=1)
    rows = np.arange(label_array.size)
    return float(-np.mean(log_probs[rows, label_array]))


def aam_loss_and_grad(
    embeddings: FloatArray, labels: npt.ArrayLike, head: AamHead
) -> tuple[float, FloatArray, FloatArray]:
    """Loss plus gradients with respect to raw embeddings and raw prototypes."""

    label_array = _as_labels(labels)
    forward = _forward(embeddings, label_array, head)
    n = label_array.size
    rows = np.arange(n)
    log_probs = log_softmax(forward.logits, axis=1)
    loss = float(-np.mean(log_probs[rows, label_array]))

    d_logits = softmax(forward.logits, axis=1)
    d_logits[rows, label_array] -= 1.0
    d_logits /= n
    d_cos = head.scale * d_logits
    d_cos[rows, label_array] *= forward.target_factor

    weighted = d_cos * forward.cosines
    grad_x = (
        d_cos @ forward.unit_w - weighted.sum(axis=1)[:, None] * forward.unit_x
    ) / forward.x_norms[:, None]
    grad_w = (
        d_cos.T @ forward.unit_x - weighted.sum(axis=0)[:, None] * forward.unit_w
    ) / forward.w_norms[:, None]
    return loss, grad_x, grad_w


def aam_grad(
    embeddings: FloatArray, labels: npt.ArrayLike, head: AamHead
) -> tuple[FloatArray, FloatArray]:
    _, grad_x, grad_w = aam_loss_and_grad(embeddings, labels, head)
    return grad_x, grad_w


def similarity_matrix(head: AamHead) -> FloatArray:
    """Cosine similarity between every pair of prototypes."""

    unit = head.normalized()
    sim = unit @ unit.T
    sim = 0.5 * (sim + sim.T)
    np.fill_diagonal(sim, 1.0)
    return sim


__all__ = [
    "DEFAULT_SCALE",
    "AamConfigError",
    "AamHead",
    "aam_grad",
    "aam_loss",
    "aam_loss_and_grad",
    "similarity_matrix",
]
