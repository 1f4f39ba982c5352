from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

import numpy as np

from .data_io import DEFAULT_DYN_RANGE, PlaneWaveStack
from .errors import ContractError, SpecParseError
from .numerics import conv2d_separable
from .render import make_kernel

DEFAULT_SPEC_PATH = Path(__file__).with_name("presets").joinpath("phantom-default.json")


@dataclass(frozen=True, slots=True)
class Scatterer:
    depth_mm: float
    lateral_mm: float
    amplitude_db: float = 0.0
    sigma_axial_px: float = 2.0
    sigma_lateral_px: float = 4.0
    casts_shadow: bool = True


@dataclass(frozen=True, slots=True)
class AnechoicDisk:
    depth_mm: float
    lateral_mm: float
    radius_mm: float
    floor_db: float = -60.0


@dataclass(frozen=True, slots=True)
class ShadowModel:
    enabled: bool = True
    attenuation_db: float = 18.0
    half_width_px: float = 3.0
    spread_per_px: float = 0.1


@dataclass(frozen=True, slots=True)
class PhantomSpec:
    height: int = 64
    width: int = 64
    axial_pitch_mm: float = 0.2
    lateral_pitch_mm: float = 0.3
    angles_deg: tuple[float, ...] = tuple(np.linspace(-16.0, 16.0, 8).tolist())
    background_db: float = -30.0
    scatterers: tuple[Scatterer, ...] = ()
    disks: tuple[AnechoicDisk, ...] = ()
    shadow: ShadowModel = field(default_factory=ShadowModel)
    speckle: float = 0.0
    speckle_grain_px: tuple[float, float] = (2.5, 5.0)
    dyn_range: tuple[float, float] = DEFAULT_DYN_RANGE
    provenance: str = "phantom"

    def validate(self) -> "PhantomSpec":
        if self.height < 1 or self.width < 1:
            raise ContractError(f"grid must be non-empty, got {self.height}x{self.width}")
        if not self.angles_deg:
            raise ContractError("phantom needs at least one angle")
        if not 0.0 <= self.speckle <= 1.0:
            raise ContractError(f"speckle level must lie in [0, 1], got {self.speckle}")
        depth_extent = (self.height - 1) * self.axial_pitch_mm
        lateral_extent = (self.width - 1) * self.lateral_pitch_mm
        for index, item in enumerate(self.scatterers):
            if not (0.0 <= item.depth_mm <= depth_extent and 0.0 <= item.lateral_mm <= lateral_extent):
                raise ContractError(f"scatterer {index} at ({item.depth_mm}, {item.lateral_mm}) mm lies outside the grid")
        for index, disk in enumerate(self.disks):
            inside = (
                disk.radius_mm > 0
                and disk.depth_mm - disk.radius_mm >= 0.0
                and disk.depth_mm + disk.radius_mm <= depth_extent
                and disk.lateral_mm - disk.radius_mm >= 0.0
                and disk.lateral_mm + disk.radius_mm <= lateral_extent
            )
            if not inside:
                raise ContractError(f"disk {index} does not fit inside the grid")
        return self


def _amplitude(db: float) -> float:
    return 10.0 ** (db / 20.0)


def _speckle_field(spec: PhantomSpec, rng: np.random.Generator) -> np.ndarray:
    grain_axial, grain_lateral = spec.speckle_grain_px
    size = 2 * math.ceil(3.0 * max(grain_axial, grain_lateral)) + 1
    size = min(size, 2 * (min(spec.height, spec.width) - 1) + 1)
    kernel = make_kernel(grain_axial, grain_lateral, size)
    real = conv2d_separable(rng.standard_normal((spec.height, spec.width)), kernel)
    imag = conv2d_separable(rng.standard_normal((spec.height, spec.width)), kernel)
    envelope = np.hypot(real, imag)
    envelope /= envelope.mean()
    return (1.0 - spec.speckle) + spec.speckle * envelope


def _shadow_db(spec: PhantomSpec, scatterer: Scatterer, angle_deg: float) -> np.ndarray:
    rows = np.arange(spec.height, dtype=np.float64)[:, None]
    cols = np.arange(spec.width, dtype=np.float64)[None, :]
    row_s = scatterer.depth_mm / spec.axial_pitch_mm
    col_s = scatterer.lateral_mm / spec.lateral_pitch_mm
    below = np.clip(rows - row_s, 0.0, None)
    # wedge centre drifts opposite the steering direction with depth
    drift_px = -math.tan(math.radians(angle_deg)) * below * spec.axial_pitch_mm / spec.lateral_pitch_mm
    half_width = spec.shadow.half_width_px + spec.shadow.spread_per_px * below
    profile = np.exp(-0.5 * ((cols - (col_s + drift_px)) / half_width) ** 2)
    onset = np.clip(below / (2.0 * scatterer.sigma_axial_px), 0.0, 1.0)
    return -spec.shadow.attenuation_db * profile * onset


def generate_phantom(spec: PhantomSpec, seed: int = 0) -> PlaneWaveStack:
    spec.validate()
    rng = np.random.default_rng(seed)
    speckle = _speckle_field(spec, rng) if spec.speckle > 0 else np.ones((spec.height, spec.width))
    rows = np.arange(spec.height, dtype=np.float64)[:, None]
    cols = np.arange(spec.width, dtype=np.float64)[None, :]
    tiny = _amplitude(spec.dyn_range[0] - 20.0)

    images = []
    for angle in spec.angles_deg:
        amp = np.full((spec.height, spec.width), _amplitude(spec.background_db)) * speckle
        if spec.shadow.enabled:
            for scatterer in spec.scatterers:
                if scatterer.casts_shadow:
                    amp = amp * 10.0 ** (_shadow_db(spec, scatterer, float(angle)) / 20.0)
        for disk in spec.disks:
            dist = np.hypot(
                rows * spec.axial_pitch_mm - disk.depth_mm,
                cols * spec.lateral_pitch_mm - disk.lateral_mm,
            )
            amp = np.where(dist <= disk.radius_mm, _amplitude(disk.floor_db) * speckle, amp)
        for scatterer in spec.scatterers:
            row_s = scatterer.depth_mm / spec.axial_pitch_mm
            col_s = scatterer.lateral_mm / spec.lateral_pitch_mm
            bump = np.exp(
                -0.5 * ((rows - row_s) / scatterer.sigma_axial_px) ** 2
                - 0.5 * ((cols - col_s) / scatterer.sigma_lateral_px) ** 2
            )
            # peak lands at amplitude_db, not above it
            amp = np.maximum(amp, _amplitude(scatterer.amplitude_db) * bump)
        images.append(20.0 * np.log10(np.maximum(amp, tiny)))

    return PlaneWaveStack(
        images=np.stack(images),
        angles_deg=np.asarray(spec.angles_deg, dtype=np.float64),
        axial_pitch_mm=spec.axial_pitch_mm,
        lateral_pitch_mm=spec.lateral_pitch_mm,
        dyn_min=spec.dyn_range[0],
        dyn_max=spec.dyn_range[1],
        provenance=spec.provenance,
    )


def _line_of(text: str, key: str) -> int | None:
    needle = f'"{key}"'
    for number, line in enumerate(text.splitlines(), start=1):
        if needle in line:
            return number
    return None


def _build(cls: type, obj: Any, text: str, source: str, where: str) -> Any:
    if not isinstance(obj, dict):
        raise SpecParseError(f"{where} must be a JSON object", source=source)
    allowed = {f.name for f in fields(cls)}
    for key in obj:
        if key not in allowed:
            raise SpecParseError(f"unknown key {key!r} in {where}", line=_line_of(text, key), source=source)
    return obj


def phantom_spec_from_obj(obj: Any, text: str = "", source: str = "") -> PhantomSpec:
    data = dict(_build(PhantomSpec, obj, text, source, "phantom spec"))
    try:
        if "angles_deg" in data:
            angles = data["angles_deg"]
            if isinstance(angles, dict):
                angles = np.linspace(float(angles["min"]), float(angles["max"]), int(angles["count"])).tolist()
            data["angles_deg"] = tuple(float(a) for a in angles)
        if "scatterers" in data:
            data["scatterers"] = tuple(
                Scatterer(**_build(Scatterer, item, text, source, "scatterer")) for item in data["scatterers"]
            )
        if "disks" in data:
            data["disks"] = tuple(AnechoicDisk(**_build(AnechoicDisk, item, text, source, "disk")) for item in data["disks"])
        if "shadow" in data:
            data["shadow"] = ShadowModel(**_build(ShadowModel, data["shadow"], text, source, "shadow"))
        for key in ("speckle_grain_px", "dyn_range"):
            if key in data:
                data[key] = tuple(float(v) for v in data[key])
        return PhantomSpec(**data).validate()
    except SpecParseError:
        raise
    except (TypeError, KeyError, ValueError) as exc:
        raise SpecParseError(str(exc), source=source) from exc


def load_phantom_spec(path: str | Path | None = None) -> PhantomSpec:
    target = Path(path) if path else DEFAULT_SPEC_PATH
    text = target.read_text(encoding="utf-8")
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SpecParseError(exc.msg, line=exc.lineno, source=str(target)) from exc
    return phantom_spec_from_obj(obj, text=text, source=str(target))
