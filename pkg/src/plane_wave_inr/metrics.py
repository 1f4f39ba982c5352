from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .data_io import PlaneWaveStack, denormalize_db
from .errors import DimensionError, MeasurementError, SpecParseError
from .event_log import to_jsonable
from .model import ModelParams
from .objective import LossConfig, ssim_index
from .render import DEFAULT_CHUNK, PsfKernel, make_kernel, render_view

ROI_KINDS = {"rect": 4, "disk": 3}
ROI_ROLES = ("target_in", "background_out", "snr_roi", "scatterer_point")
SCALES = ("normalized", "envelope")
SOURCES = ("gt", "o", "o_prime", "nearest_view")
DEFAULT_ROI_PATH = Path(__file__).with_name("presets").joinpath("roi-default.txt")


@dataclass(frozen=True, slots=True)
class Region:
    name: str
    kind: str
    role: str
    params: tuple[int, ...]

    def within(self, shape: tuple[int, int]) -> bool:
        height, width = shape
        if self.kind == "rect":
            row0, col0, rows, cols = self.params
            return rows > 0 and cols > 0 and row0 >= 0 and col0 >= 0 and row0 + rows <= height and col0 + cols <= width
        row, col, radius = self.params
        return radius >= 0 and row - radius >= 0 and col - radius >= 0 and row + radius < height and col + radius < width

    def mask(self, shape: tuple[int, int]) -> np.ndarray:
        out = np.zeros(shape, dtype=bool)
        if self.kind == "rect":
            row0, col0, rows, cols = self.params
            out[row0 : row0 + rows, col0 : col0 + cols] = True
            return out
        row, col, radius = self.params
        rr, cc = np.ogrid[: shape[0], : shape[1]]
        return (rr - row) ** 2 + (cc - col) ** 2 <= radius * radius


@dataclass(frozen=True, slots=True)
class RoiSpec:
    regions: tuple[Region, ...] = ()

    def by_role(self, role: str) -> list[Region]:
        return [r for r in self.regions if r.role == role]

    def validate(self, shape: tuple[int, int]) -> "RoiSpec":
        for region in self.regions:
            if not region.within(shape):
                raise MeasurementError(region.name, f"outside image bounds {shape[0]}x{shape[1]}")
        return self

    def background_mask(self, shape: tuple[int, int]) -> np.ndarray:
        out = np.zeros(shape, dtype=bool)
        for region in self.by_role("background_out"):
            out |= region.mask(shape)
        return out


def parse_roi_text(text: str, source: str = "") -> RoiSpec:
    """Line format: ``name kind role params...``; ``#`` starts a comment."""
    regions: list[Region] = []
    seen: set[str] = set()
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) < 3:
            raise SpecParseError("expected 'name kind role params...'", line=number, source=source)
        name, kind, role, *values = parts
        if kind not in ROI_KINDS:
            raise SpecParseError(f"unknown region kind {kind!r}", line=number, source=source)
        if role not in ROI_ROLES:
            raise SpecParseError(f"unknown region role {role!r}", line=number, source=source)
        if len(values) != ROI_KINDS[kind]:
            raise SpecParseError(f"{kind} needs {ROI_KINDS[kind]} parameters, got {len(values)}", line=number, source=source)
        if name in seen:
            raise SpecParseError(f"duplicate region name {name!r}", line=number, source=source)
        try:
            params = tuple(int(v) for v in values)
        except ValueError as exc:
            raise SpecParseError(f"region parameters must be integers: {exc}", line=number, source=source) from exc
        seen.add(name)
        regions.append(Region(name=name, kind=kind, role=role, params=params))
    return RoiSpec(regions=tuple(regions))


def load_roi_spec(path: str | Path | None = None) -> RoiSpec:
    target = Path(path) if path else DEFAULT_ROI_PATH
    return parse_roi_text(target.read_text(encoding="utf-8"), source=str(target))


def _pair(pred: np.ndarray, gt: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise DimensionError(f"shape mismatch {pred.shape} vs {gt.shape}")
    return pred, gt


def psnr(pred: np.ndarray, gt: np.ndarray, data_range: float = 1.0) -> float:
    pred, gt = _pair(pred, gt)
    mse = float(np.mean((pred - gt) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(data_range * data_range / mse)


def ssim_metric(pred: np.ndarray, gt: np.ndarray, cfg: LossConfig = LossConfig()) -> float:
    pred, gt = _pair(pred, gt)
    return ssim_index(pred, gt, cfg)


def _crossing(profile: np.ndarray, peak: int, threshold: float, step: int) -> float | None:
    j = peak + step
    while 0 <= j < len(profile):
        if profile[j] <= threshold:
            inner = profile[j - step]
            if profile[j] == threshold:
                return float(j)
            return float(j) - step * (threshold - profile[j]) / (inner - profile[j])
        j += step
    return None


def fwhm(image_db: np.ndarray, region: Region, axis: str, pitch_mm: float, drop_db: float = 6.0) -> float:
    """-6 dB width through the region's peak, with linear sub-pixel crossings."""
    image = np.asarray(image_db, dtype=np.float64)
    if axis not in ("axial", "lateral"):
        raise ValueError(f"axis must be 'axial' or 'lateral', got {axis!r}")
    if not region.within(image.shape):
        raise MeasurementError(region.name, "outside image bounds")
    masked = np.where(region.mask(image.shape), image, -np.inf)
    row, col = np.unravel_index(int(np.argmax(masked)), image.shape)
    profile = image[:, col] if axis == "axial" else image[row, :]
    peak = row if axis == "axial" else col
    threshold = profile[peak] - drop_db
    left = _crossing(profile, peak, threshold, -1)
    right = _crossing(profile, peak, threshold, +1)
    if left is None or right is None:
        raise MeasurementError(region.name, f"no -{drop_db:g} dB crossing along {axis} axis inside the image")
    return (right - left) * pitch_mm


def cnr(image: np.ndarray, in_mask: np.ndarray, out_mask: np.ndarray) -> float:
    values = np.asarray(image, dtype=np.float64)
    in_mask = np.asarray(in_mask, dtype=bool)
    out_mask = np.asarray(out_mask, dtype=bool)
    if np.any(in_mask & out_mask):
        raise ValueError("CNR target and background regions overlap")
    inside = values[in_mask]
    outside = values[out_mask]
    if inside.size == 0 or outside.size == 0:
        raise ValueError("CNR regions must be non-empty")
    contrast = abs(inside.mean() - outside.mean()) ** 2
    if contrast == 0.0:
        return -math.inf
    noise = (inside.var() + outside.var()) / 2.0
    if noise == 0.0:
        return math.inf
    return 10.0 * math.log10(contrast / noise)


def snr(image: np.ndarray, mask: np.ndarray) -> float:
    values = np.asarray(image, dtype=np.float64)[np.asarray(mask, dtype=bool)]
    if values.size == 0:
        raise ValueError("SNR region must be non-empty")
    sigma = values.std()
    if sigma == 0.0:
        return math.inf
    return float(values.mean() / sigma)


@dataclass(frozen=True, slots=True)
class MetricRow:
    section: str
    angle_index: int
    angle_deg: float
    source: str
    metric: str
    region: str
    value: float


def mean_std(values: Sequence[float]) -> tuple[float, float]:
    if not values:
        return math.nan, math.nan
    if all(v == values[0] for v in values):
        return float(values[0]), 0.0
    arr = np.asarray(values, dtype=np.float64)
    return float(arr.mean()), float(arr.std())


@dataclass(slots=True)
class MetricsReport:
    rows: list[MetricRow] = field(default_factory=list)
    metadata: dict = field(default_factory=dict)
    errors: list[str] = field(default_factory=list)

    @property
    def sections(self) -> list[str]:
        return list(dict.fromkeys(r.section for r in self.rows))

    def values(self, section: str, source: str, metric: str, region: str = "") -> list[float]:
        return [
            r.value
            for r in self.rows
            if r.section == section and r.source == source and r.metric == metric and r.region == region
        ]

    def aggregate(self) -> dict:
        out: dict = {}
        keys = dict.fromkeys((r.section, r.source, r.metric, r.region) for r in self.rows)
        for section, source, metric, region in keys:
            values = [v for v in self.values(section, source, metric, region) if not math.isnan(v)]
            mean, std = mean_std(values)
            label = f"{metric}[{region}]" if region else metric
            out.setdefault(section, {}).setdefault(source, {})[label] = {"mean": mean, "std": std, "count": len(values)}
        return out

    def extend(self, other: "MetricsReport") -> "MetricsReport":
        self.rows.extend(other.rows)
        self.errors.extend(other.errors)
        for key, value in other.metadata.items():
            self.metadata.setdefault(key, value)
        return self

    def write_csv(self, path: str | Path) -> Path:
        target = Path(path)
        target.parent.mkdir(parents=True, exist_ok=True)
        with target.open("w", encoding="utf-8", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["section", "angle_index", "angle_deg", "source", "metric", "region", "value"])
            for r in self.rows:
                writer.writerow([r.section, r.angle_index, repr(r.angle_deg), r.source, r.metric, r.region, repr(r.value)])
        return target

    def write_json(self, path: str | Path) -> Path:
        target = Path(path)
        target.parent.mkdir(parents=True, exist_ok=True)
        body = {"metadata": self.metadata, "aggregate": self.aggregate(), "errors": self.errors}
        text = json.dumps(to_jsonable(body), indent=2, ensure_ascii=True, allow_nan=False)
        target.write_text(text + "\n", encoding="utf-8")
        return target


def read_metric_rows(path: str | Path) -> list[MetricRow]:
    with Path(path).open("r", encoding="utf-8", newline="") as f:
        return [
            MetricRow(
                section=item["section"],
                angle_index=int(item["angle_index"]),
                angle_deg=float(item["angle_deg"]),
                source=item["source"],
                metric=item["metric"],
                region=item["region"],
                value=float(item["value"]),
            )
            for item in csv.DictReader(f)
        ]


@dataclass(slots=True)
class EvalConfig:
    loss: LossConfig = field(default_factory=LossConfig)
    kernel: PsfKernel = field(default_factory=make_kernel)
    scale: str = "normalized"
    chunk: int = DEFAULT_CHUNK
    workers: int = 1
    holdout_index: int | None = None
    train_indices: tuple[int, ...] | None = None


def _scaled(image01: np.ndarray, stack: PlaneWaveStack, scale: str) -> np.ndarray:
    if scale == "envelope":
        return 10.0 ** (denormalize_db(image01, stack.dyn_range).astype(np.float64) / 20.0)
    return image01


def _angle_rows(
    params: ModelParams | None,
    stack: PlaneWaveStack,
    roi: RoiSpec,
    index: int,
    section: str,
    cfg: EvalConfig,
) -> MetricsReport:
    report = MetricsReport()
    shape = (stack.height, stack.width)
    gt = stack.normalized(index).astype(np.float64)
    sources: dict[str, np.ndarray] = {"gt": gt}
    if params is not None:
        view = render_view(params, stack.height, stack.width, stack.alpha_norm(index), cfg.kernel, cfg.chunk)
        sources["o"] = np.clip(view.o.astype(np.float64), 0.0, 1.0)
        sources["o_prime"] = np.clip(view.o_prime.astype(np.float64), 0.0, 1.0)
    if cfg.train_indices is not None and index not in cfg.train_indices and cfg.train_indices:
        nearest = stack.nearest_index(float(stack.angles_deg[index]), among=cfg.train_indices)
        sources["nearest_view"] = stack.normalized(nearest).astype(np.float64)

    angle = float(stack.angles_deg[index])
    background = roi.background_mask(shape)

    def add(source: str, metric: str, region: str, value: float) -> None:
        report.rows.append(MetricRow(section, index, angle, source, metric, region, float(value)))

    for source, image in sources.items():
        add(source, "ssim", "", ssim_metric(image, gt, cfg.loss))
        add(source, "psnr", "", psnr(image, gt, cfg.loss.data_range))
        image_db = denormalize_db(image, stack.dyn_range)
        for region in roi.by_role("scatterer_point"):
            for axis, pitch in (("axial", stack.axial_pitch_mm), ("lateral", stack.lateral_pitch_mm)):
                try:
                    value = fwhm(image_db, region, axis, pitch)
                except MeasurementError as exc:
                    report.errors.append(f"{section}/{index}/{source}: {exc}")
                    value = math.nan
                add(source, f"fwhm_{axis}_mm", region.name, value)
        scaled = _scaled(image, stack, cfg.scale)
        if background.any():
            for region in roi.by_role("target_in"):
                target = region.mask(shape)
                outside = background & ~target
                if not outside.any():
                    report.errors.append(f"{section}/{index}/{source}: {region.name}: background lies inside the target")
                    add(source, "cnr_db", region.name, math.nan)
                    continue
                add(source, "cnr_db", region.name, cnr(scaled, target, outside))
        for region in roi.by_role("snr_roi"):
            add(source, "snr", region.name, snr(scaled, region.mask(shape)))
    return report


def evaluate_stack(
    params: ModelParams | None,
    stack: PlaneWaveStack,
    roi: RoiSpec,
    views: str = "all",
    cfg: EvalConfig | None = None,
) -> MetricsReport:
    cfg = cfg or EvalConfig()
    if cfg.scale not in SCALES:
        raise ValueError(f"scale must be one of {', '.join(SCALES)}, got {cfg.scale!r}")
    roi.validate((stack.height, stack.width))
    if views == "all":
        indices = list(range(stack.num_angles))
    elif views == "holdout":
        indices = [stack.orthogonal_index() if cfg.holdout_index is None else cfg.holdout_index]
    else:
        raise ValueError(f"views must be 'all' or 'holdout', got {views!r}")

    def run(index: int) -> MetricsReport:
        return _angle_rows(params, stack, roi, index, views, cfg)

    if cfg.workers > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            parts = list(pool.map(run, indices))
    else:
        parts = [run(i) for i in indices]

    report = MetricsReport(
        metadata={
            "scale": cfg.scale,
            "ssim_window": cfg.loss.ssim_window,
            "ssim_sigma": cfg.loss.ssim_sigma,
            "data_range": cfg.loss.data_range,
            "dyn_range_db": list(stack.dyn_range),
            "kernel": {"axial_sigma": cfg.kernel.axial_sigma, "lateral_sigma": cfg.kernel.lateral_sigma, "size": cfg.kernel.size},
            "provenance": stack.provenance,
        }
    )
    for part in parts:
        report.extend(part)
    return report
