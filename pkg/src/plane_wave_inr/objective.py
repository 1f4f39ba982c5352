from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError, DimensionError
from .numerics import ArrayOps, Eager, Precision, Taps
from .render import gaussian_taps


@dataclass(frozen=True, slots=True)
class LossConfig:
    lam: float = 0.75
    ssim_window: int = 11
    ssim_sigma: float = 1.5
    k1: float = 0.01
    k2: float = 0.03
    data_range: float = 1.0

    def validate(self) -> "LossConfig":
        if not 0.0 <= self.lam <= 1.0:
            raise ContractError(f"lambda must lie in [0, 1], got {self.lam}")
        if self.ssim_window < 1 or self.ssim_window % 2 == 0:
            raise ContractError(f"ssim window must be odd, got {self.ssim_window}")
        if not self.data_range > 0:
            raise ContractError(f"data_range must be > 0, got {self.data_range}")
        return self

    @property
    def window_radius(self) -> int:
        return self.ssim_window // 2

    def window(self) -> Taps:
        taps = gaussian_taps(self.ssim_sigma, self.ssim_window)
        return Taps(axial_taps=taps, lateral_taps=taps)


def _check_pair(pred: np.ndarray, gt: np.ndarray, cfg: LossConfig | None = None) -> None:
    if pred.shape != gt.shape:
        raise DimensionError(f"prediction shape {pred.shape} does not match ground truth {gt.shape}")
    if cfg is not None:
        if pred.ndim != 2 or min(pred.shape) < cfg.ssim_window:
            raise DimensionError(f"image {pred.shape} is smaller than the {cfg.ssim_window}px SSIM window")


def _row_span(shape: tuple[int, ...], rows: tuple[int, int] | None) -> tuple[int, int]:
    start, stop = rows if rows is not None else (0, shape[0])
    if not 0 <= start < stop <= shape[0]:
        raise DimensionError(f"row range [{start}, {stop}) outside 0..{shape[0]}")
    return start, stop


def trace_mse(ops: ArrayOps, pred, gt, rows: tuple[int, int] | None = None):
    start, stop = _row_span(ops.value(pred).shape, rows)
    if (start, stop) != (0, ops.value(pred).shape[0]):
        pred, gt = ops.rows(pred, start, stop), ops.rows(gt, start, stop)
    diff = ops.sub(pred, gt)
    return ops.mean(ops.mul(diff, diff))


def trace_ssim_map(ops: ArrayOps, pred, gt, cfg: LossConfig):
    """Gaussian-windowed SSIM map; windows use replicate padding at the borders."""
    window = cfg.window()
    c1 = (cfg.k1 * cfg.data_range) ** 2
    c2 = (cfg.k2 * cfg.data_range) ** 2
    mu_x = ops.conv2d_separable(pred, window)
    mu_y = ops.conv2d_separable(gt, window)
    mu_xx = ops.mul(mu_x, mu_x)
    mu_yy = ops.mul(mu_y, mu_y)
    mu_xy = ops.mul(mu_x, mu_y)
    var_x = ops.sub(ops.conv2d_separable(ops.mul(pred, pred), window), mu_xx)
    var_y = ops.sub(ops.conv2d_separable(ops.mul(gt, gt), window), mu_yy)
    cov = ops.sub(ops.conv2d_separable(ops.mul(pred, gt), window), mu_xy)
    numerator = ops.mul(ops.shift(ops.scale(mu_xy, 2.0), c1), ops.shift(ops.scale(cov, 2.0), c2))
    denominator = ops.mul(ops.shift(ops.add(mu_xx, mu_yy), c1), ops.shift(ops.add(var_x, var_y), c2))
    return ops.div(numerator, denominator)


def _interior_mean(ops: ArrayOps, x, radius: int):
    height, width = ops.value(x).shape
    if radius == 0:
        return ops.mean(x)
    inside = ops.rows(x, radius, height - radius)
    mask = np.zeros((height - 2 * radius, width))
    mask[:, radius : width - radius] = 1.0
    return ops.scale(ops.mean(ops.mul(inside, ops.constant(mask))), width / (width - 2 * radius))


def trace_ssim_index(ops: ArrayOps, pred, gt, cfg: LossConfig):
    return _interior_mean(ops, trace_ssim_map(ops, pred, gt, cfg), cfg.window_radius)


def trace_ssim_loss(ops: ArrayOps, pred, gt, cfg: LossConfig, rows: tuple[int, int] | None = None):
    """1 - mean SSIM. A row band averages the padded map over every column; the full image uses the interior."""
    if rows is None:
        return ops.shift(ops.scale(trace_ssim_index(ops, pred, gt, cfg), -1.0), 1.0)
    ssim = trace_ssim_map(ops, pred, gt, cfg)
    start, stop = _row_span(ops.value(ssim).shape, rows)
    if (start, stop) != (0, ops.value(ssim).shape[0]):
        ssim = ops.rows(ssim, start, stop)
    return ops.shift(ops.scale(ops.mean(ssim), -1.0), 1.0)


def trace_combined_loss(ops: ArrayOps, pred, gt, cfg: LossConfig, rows: tuple[int, int] | None = None):
    cfg.validate()
    if cfg.lam == 0.0:
        return trace_mse(ops, pred, gt, rows)
    if cfg.lam == 1.0:
        return trace_ssim_loss(ops, pred, gt, cfg, rows)
    ssim_term = ops.scale(trace_ssim_loss(ops, pred, gt, cfg, rows), cfg.lam)
    mse_term = ops.scale(trace_mse(ops, pred, gt, rows), 1.0 - cfg.lam)
    return ops.add(ssim_term, mse_term)


def _eager(pred: np.ndarray, gt: np.ndarray) -> tuple[Eager, np.ndarray, np.ndarray]:
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    precision = Precision.FLOAT32 if pred.dtype == np.float32 and gt.dtype == np.float32 else Precision.FLOAT64
    ops = Eager(precision)
    return ops, ops.constant(pred), ops.constant(gt)


def mse_loss(pred: np.ndarray, gt: np.ndarray) -> float:
    _check_pair(np.asarray(pred), np.asarray(gt))
    ops, p, g = _eager(pred, gt)
    return float(trace_mse(ops, p, g))


def ssim_map(pred: np.ndarray, gt: np.ndarray, cfg: LossConfig = LossConfig()) -> np.ndarray:
    _check_pair(np.asarray(pred), np.asarray(gt), cfg.validate())
    ops, p, g = _eager(pred, gt)
    return trace_ssim_map(ops, p, g, cfg)


def ssim_loss(pred: np.ndarray, gt: np.ndarray, cfg: LossConfig = LossConfig()) -> float:
    _check_pair(np.asarray(pred), np.asarray(gt), cfg.validate())
    ops, p, g = _eager(pred, gt)
    return float(trace_ssim_loss(ops, p, g, cfg))


def combined_loss(pred: np.ndarray, gt: np.ndarray, cfg: LossConfig = LossConfig()) -> float:
    _check_pair(np.asarray(pred), np.asarray(gt), cfg.validate())
    ops, p, g = _eager(pred, gt)
    return float(trace_combined_loss(ops, p, g, cfg))


def ssim_index(pred: np.ndarray, gt: np.ndarray, cfg: LossConfig = LossConfig()) -> float:
    _check_pair(np.asarray(pred), np.asarray(gt), cfg.validate())
    ops, p, g = _eager(pred, gt)
    return float(trace_ssim_index(ops, p, g, cfg))
