from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError
from .numerics import Precision, as_dense


@dataclass(frozen=True, slots=True)
class CoordBatch:
    x: np.ndarray
    y: np.ndarray
    alpha: np.ndarray

    @property
    def count(self) -> int:
        return int(self.x.shape[0])

    def q(self) -> np.ndarray:
        return np.stack([self.x, self.y, self.alpha], axis=1)


@dataclass(frozen=True, slots=True)
class EncodedBatch:
    gamma: np.ndarray
    embedding_size: int

    @property
    def width(self) -> int:
        return int(self.gamma.shape[1])

    @property
    def count(self) -> int:
        return int(self.gamma.shape[0])


def encoded_width(embedding_size: int) -> int:
    return 6 * embedding_size + 3


def axis_coords(n: int) -> np.ndarray:
    if n == 1:
        return np.zeros(1)
    return np.linspace(-1.0, 1.0, n)


def normalize_angle(angle_deg: float, angle_min: float, angle_max: float) -> float:
    if angle_max == angle_min:
        return 0.0
    return 2.0 * (float(angle_deg) - angle_min) / (angle_max - angle_min) - 1.0


def grid_coords(height: int, width: int, row_range: tuple[int, int], angle_norm: float) -> CoordBatch:
    r0, r1 = int(row_range[0]), int(row_range[1])
    if height < 1 or width < 1:
        raise ContractError(f"grid must be non-empty, got {height}x{width}")
    if not 0 <= r0 < r1 <= height:
        raise ContractError(f"row range [{r0}, {r1}) is empty or outside 0..{height}")
    if not -1.0 <= angle_norm <= 1.0:
        raise ContractError(f"normalized angle {angle_norm} outside [-1, 1]")
    # y is normalized over the full image height so stripes embed like the full grid
    ys = axis_coords(height)[r0:r1]
    xs = axis_coords(width)
    yy, xx = np.meshgrid(ys, xs, indexing="ij")
    x = xx.reshape(-1)
    return CoordBatch(x=x, y=yy.reshape(-1), alpha=np.full_like(x, float(angle_norm)))


def positional_encode(
    batch: CoordBatch, embedding_size: int, precision: Precision | str = Precision.FLOAT64
) -> EncodedBatch:
    if embedding_size < 1:
        raise ContractError(f"embedding size must be >= 1, got {embedding_size}")
    q = batch.q()
    columns = [q]
    for level in range(embedding_size):
        scaled = (2.0**level) * np.pi * q
        columns.append(np.sin(scaled))
        columns.append(np.cos(scaled))
    gamma = as_dense(np.concatenate(columns, axis=1), precision)
    return EncodedBatch(gamma=gamma, embedding_size=embedding_size)
