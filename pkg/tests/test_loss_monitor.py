from __future__ import annotations

import pytest

from plane_wave_inr.loss_monitor import LossMonitor


def test_window_statistics() -> None:
    monitor = LossMonitor(window_size=4)
    for i, loss in enumerate([5.0, 4.0, 3.0, 2.0, 1.0], start=1):
        monitor.record(i, loss)
    stats = monitor.stats()
    assert stats["count"] == 4.0
    assert stats["mean"] == pytest.approx(2.5)
    assert stats["min"] == 1.0
    assert stats["last"] == 1.0
    assert monitor.first_window_mean() == pytest.approx(3.5)


def test_empty_monitor() -> None:
    assert LossMonitor().stats()["count"] == 0.0


def test_plateau_warning_after_stalled_window() -> None:
    monitor = LossMonitor(window_size=3)
    for i in range(3):
        monitor.record(i, 1.0 - 0.1 * i)
    assert monitor.plateau_warning() is None
    for i in range(3):
        monitor.record(3 + i, 0.5)
    assert monitor.plateau_warning() is None
    for i in range(3):
        monitor.record(6 + i, 0.5)
    warning = monitor.plateau_warning()
    assert warning is not None and "plateau" in warning
