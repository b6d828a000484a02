"""Cyclical learning rate with the triangular2 policy."""

from __future__ import annotations

import math
from dataclasses import dataclass


@dataclass(frozen=True, slots=True)
class ClrSchedule:
    lr_min: float
    lr_max: float
    cycle_len: int
    policy: str = "triangular2"

    def __post_init__(self) -> None:
        if self.lr_min <= 0.0:
            msg = f"lr_min must be positive, got {self.lr_min}"
            raise ValueError(msg)
        if self.lr_max < self.lr_min:
            msg = f"lr_max {self.lr_max} is below lr_min {self.lr_min}"
            raise ValueError(msg)
        if self.cycle_len < 2:
            msg = f"cycle_len must be at least 2, got {self.cycle_len}"
            raise ValueError(msg)
        if self.policy != "triangular2":
            msg = f"unsupported CLR policy {self.policy!r}"
            raise ValueError(msg)

    def peak(self, cycle: int) -> float:
        return self.lr_min + math.ldexp(self.lr_max - self.lr_min, -cycle)


def clr_lr(iteration: int, sched: ClrSchedule) -> float:
    """Triangular wave from lr_min to the cycle peak at half cycle and back.

    The peak of cycle ``k`` is ``lr_min + (lr_max - lr_min) / 2**k``; every
    cycle boundary returns exactly ``lr_min``.
    """

    if iteration < 0:
        msg = f"iteration must be non-negative, got {iteration}"
        raise ValueError(msg)
    cycle, offset = divmod(iteration, sched.cycle_len)
    position = offset / sched.cycle_len
    height = 1.0 - abs(2.0 * position - 1.0)
    return sched.lr_min + math.ldexp((sched.lr_max - sched.lr_min) * height, -cycle)


__all__ = ["ClrSchedule", "clr_lr"]
