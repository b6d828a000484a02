# ruff: noqa: S101

from __future__ import annotations

import pytest

from x_make_speaker_backend_x.margin_train import ClrSchedule, clr_lr


def test_cycle_boundaries_return_lr_min_exactly() -> None:
    sched = ClrSchedule(lr_min=1e-7, lr_max=1e-2, cycle_len=200)
    for cycle in range(5):
        assert clr_lr(cycle * 200, sched) == 1e-7


def test_peaks_halve_every_cycle() -> None:
    sched = ClrSchedule(lr_min=1e-7, lr_max=1e-2, cycle_len=200)
    assert clr_lr(100, sched) == pytest.approx(1e-2)
    assert clr_lr(300, sched) == pytest.approx(1e-7 + (1e-2 - 1e-7) / 2)
    assert clr_lr(500, sched) == pytest.approx(1e-7 + (1e-2 - 1e-7) / 4)
    assert sched.peak(2) == pytest.approx(clr_lr(500, sched))


def test_wave_is_linear_and_symmetric_within_a_cycle() -> None:
    sched = ClrSchedule(lr_min=0.0 + 1e-6, lr_max=1.0, cycle_len=8)
    values = [clr_lr(i, sched) for i in range(9)]
    assert values[2] == pytest.approx(values[6])
    assert values[1] == pytest.approx(values[7])
    assert values[2] - values[1] == pytest.approx(values[1] - values[0])
    assert max(values) == pytest.approx(1.0)


@pytest.mark.parametrize(
    ("lr_min", "lr_max", "cycle_len", "policy"),
    [
        (0.0, 1.0, 10, "triangular2"),
        (0.5, 0.1, 10, "triangular2"),
        (0.1, 1.0, 1, "triangular2"),
        (0.1, 1.0, 10, "exp_range"),
    ],
)
def test_schedule_validation(
    lr_min: float, lr_max: float, cycle_len: int, policy: str
) -> None:
    with pytest.raises(ValueError):  # noqa: PT011 - several distinct messages
        ClrSchedule(lr_min, lr_max, cycle_len, policy)


def test_negative_iteration_is_rejected() -> None:
    with pytest.raises(ValueError, match="non-negative"):
        clr_lr(-1, ClrSchedule(1e-3, 1e-2, 10))


def test_late_cycles_settle_at_lr_min() -> None:
    sched = ClrSchedule(1e-8, 1e-3, 2)
    assert clr_lr(2049, sched) == 1e-8
    assert sched.peak(5000) == 1e-8
    assert clr_lr(2047, sched) >= 1e-8
