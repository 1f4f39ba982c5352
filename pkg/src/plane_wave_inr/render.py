from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .encoding import grid_coords, positional_encode
from .errors import ContractError
from .model import ModelParams, Prediction, forward
from .numerics import ArrayOps, Precision, conv2d_separable

DEFAULT_CHUNK = 40_278


def gaussian_taps(sigma: float, size: int) -> np.ndarray:
    if size < 1 or size % 2 == 0:
        raise ContractError(f"kernel size must be a positive odd number, got {size}")
    if not sigma > 0:
        raise ContractError(f"sigma must be > 0, got {sigma}")
    offsets = np.arange(size, dtype=np.float64) - size // 2
    taps = np.exp(-(offsets**2) / (2.0 * sigma * sigma))
    return taps / taps.sum()


@dataclass(frozen=True, slots=True)
class PsfKernel:
    axial_sigma: float
    lateral_sigma: float
    size: int
    axial_taps: np.ndarray
    lateral_taps: np.ndarray

    @property
    def radius(self) -> int:
        return self.size // 2

    def full(self) -> np.ndarray:
        return np.outer(self.axial_taps, self.lateral_taps)


def make_kernel(axial_sigma: float = 2.0, lateral_sigma: float = 4.0, size: int = 11) -> PsfKernel:
    return PsfKernel(
        axial_sigma=float(axial_sigma),
        lateral_sigma=float(lateral_sigma),
        size=int(size),
        axial_taps=gaussian_taps(axial_sigma, size),
        lateral_taps=gaussian_taps(lateral_sigma, size),
    )


def render(o: Prediction | np.ndarray, kernel: PsfKernel) -> np.ndarray:
    image = o.image() if isinstance(o, Prediction) else np.asarray(o)
    return conv2d_separable(image, kernel)


def trace_render(ops: ArrayOps, o_image, kernel: PsfKernel):
    return ops.conv2d_separable(o_image, kernel)


@dataclass(frozen=True, slots=True)
class RenderedView:
    o: np.ndarray
    o_prime: np.ndarray
    alpha_norm: float


def render_view(
    params: ModelParams,
    height: int,
    width: int,
    alpha_norm: float,
    kernel: PsfKernel,
    chunk: int = DEFAULT_CHUNK,
) -> RenderedView:
    rows_per_block = max(1, chunk // max(1, width))
    precision = Precision(params.dtype.name)
    blocks = []
    for r0 in range(0, height, rows_per_block):
        r1 = min(height, r0 + rows_per_block)
        gamma = positional_encode(grid_coords(height, width, (r0, r1), alpha_norm), params.arch.embedding_size, precision)
        blocks.append(forward(params, gamma).o.reshape(r1 - r0, width))
    o = np.concatenate(blocks, axis=0)
    return RenderedView(o=o, o_prime=render(o, kernel), alpha_norm=float(alpha_norm))
