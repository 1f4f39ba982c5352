from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from statistics import quantiles


@dataclass(slots=True)
class LossSample:
    iteration: int
    loss: float


@dataclass(slots=True)
class LossMonitor:
    window_size: int = 100
    samples: deque[LossSample] = field(default_factory=deque)
    first_window: list[float] = field(default_factory=list)
    best_window_mean: float = float("inf")

    def __post_init__(self) -> None:
        self.samples = deque(self.samples, maxlen=self.window_size)

    def record(self, iteration: int, loss: float) -> None:
        self.samples.append(LossSample(iteration=iteration, loss=float(loss)))
        if len(self.first_window) < self.window_size:
            self.first_window.append(float(loss))

    def stats(self) -> dict[str, float]:
        if not self.samples:
            return {"count": 0.0, "mean": 0.0, "min": 0.0, "p95": 0.0, "last": 0.0}
        losses = [s.loss for s in self.samples]
        return {
            "count": float(len(losses)),
            "mean": sum(losses) / len(losses),
            "min": min(losses),
            "p95": self._p95(losses),
            "last": losses[-1],
        }

    def first_window_mean(self) -> float:
        return sum(self.first_window) / len(self.first_window) if self.first_window else 0.0

    def plateau_warning(self, min_relative_gain: float = 1e-3) -> str | None:
        if len(self.samples) < self.window_size:
            return None
        mean = self.stats()["mean"]
        previous = self.best_window_mean
        self.best_window_mean = min(previous, mean)
        if previous == float("inf"):
            return None
        if mean > previous * (1.0 - min_relative_gain):
            return (
                f"loss plateau: window mean {mean:.6f} did not improve on {previous:.6f} "
                f"over the last {self.window_size} iterations"
            )
        return None

    @staticmethod
    def _p95(values: list[float]) -> float:
        if len(values) == 1:
            return float(values[0])
        return float(quantiles(values, n=20, method="inclusive")[-1])
