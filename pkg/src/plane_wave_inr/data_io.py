from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .binfmt import Writer, pack_file, unpack_file, write_bytes
from .encoding import normalize_angle
from .errors import ContractError, FormatError

STACK_MAGIC = b"PWST"
STACK_VERSION = 1
DEFAULT_DYN_RANGE = (-60.0, 0.0)
EXPORT_FORMATS = ("pgm8", "pgm16", "png8")
STACK_ENCODINGS = {"float32": 4, "uint8": 1}


def _f32(value: float) -> float:
    return float(np.float32(value))


@dataclass(slots=True)
class PlaneWaveStack:
    images: np.ndarray
    angles_deg: np.ndarray
    axial_pitch_mm: float = 0.1
    lateral_pitch_mm: float = 0.1
    dyn_min: float = DEFAULT_DYN_RANGE[0]
    dyn_max: float = DEFAULT_DYN_RANGE[1]
    provenance: str = ""

    def __post_init__(self) -> None:
        images = np.array(self.images, dtype=np.float32)
        angles = np.array(self.angles_deg, dtype=np.float32).reshape(-1)
        if images.ndim != 3 or min(images.shape) < 1:
            raise ContractError(f"images must be a non-empty A x H x W array, got shape {images.shape}")
        if images.shape[0] != angles.shape[0]:
            raise ContractError(f"{images.shape[0]} images but {angles.shape[0]} angles")
        if np.any(np.diff(angles) <= 0):
            raise ContractError("angles must be strictly ascending")
        self.dyn_min, self.dyn_max = _f32(self.dyn_min), _f32(self.dyn_max)
        if not self.dyn_max > self.dyn_min:
            raise ContractError(f"dynamic range max {self.dyn_max} must exceed min {self.dyn_min}")
        self.axial_pitch_mm, self.lateral_pitch_mm = _f32(self.axial_pitch_mm), _f32(self.lateral_pitch_mm)
        np.clip(images, self.dyn_min, self.dyn_max, out=images)
        images.flags.writeable = False
        angles.flags.writeable = False
        self.images = images
        self.angles_deg = angles

    @property
    def num_angles(self) -> int:
        return int(self.images.shape[0])

    @property
    def height(self) -> int:
        return int(self.images.shape[1])

    @property
    def width(self) -> int:
        return int(self.images.shape[2])

    @property
    def dyn_range(self) -> tuple[float, float]:
        return self.dyn_min, self.dyn_max

    @property
    def angle_span(self) -> tuple[float, float]:
        return float(self.angles_deg[0]), float(self.angles_deg[-1])

    def orthogonal_index(self) -> int:
        """Index of the angle closest to 0 degrees (first one on ties)."""
        return int(np.argmin(np.abs(self.angles_deg)))

    def alpha_norm(self, index: int) -> float:
        return normalize_angle(float(self.angles_deg[index]), *self.angle_span)

    def normalized(self, index: int) -> np.ndarray:
        return normalize_db(self.images[index], self.dyn_range)

    def nearest_index(self, angle_deg: float, among: Sequence[int] | None = None) -> int:
        candidates = list(range(self.num_angles)) if among is None else list(among)
        if not candidates:
            raise ContractError("no candidate angles")
        return min(candidates, key=lambda i: (abs(float(self.angles_deg[i]) - angle_deg), i))


def normalize_db(image: np.ndarray, dyn_range: tuple[float, float] = DEFAULT_DYN_RANGE) -> np.ndarray:
    lo, hi = float(dyn_range[0]), float(dyn_range[1])
    if not hi > lo:
        raise ContractError(f"dynamic range max {hi} must exceed min {lo}")
    image = np.asarray(image)
    dtype = image.dtype if image.dtype in (np.float32, np.float64) else np.float64
    return ((np.clip(image, lo, hi) - lo) / (hi - lo)).astype(dtype, copy=False)


def denormalize_db(image: np.ndarray, dyn_range: tuple[float, float] = DEFAULT_DYN_RANGE) -> np.ndarray:
    lo, hi = float(dyn_range[0]), float(dyn_range[1])
    if not hi > lo:
        raise ContractError(f"dynamic range max {hi} must exceed min {lo}")
    image = np.asarray(image)
    dtype = image.dtype if image.dtype in (np.float32, np.float64) else np.float64
    return (lo + np.clip(image, 0.0, 1.0) * (hi - lo)).astype(dtype, copy=False)


def stack_to_bytes(stack: PlaneWaveStack) -> bytes:
    writer = Writer()
    writer.u32(stack.height, stack.width, stack.num_angles)
    writer.f32(stack.dyn_min, stack.dyn_max, stack.axial_pitch_mm, stack.lateral_pitch_mm)
    tag = stack.provenance.encode("utf-8")
    writer.u32(len(tag))
    writer.raw(tag)
    writer.array_f32(stack.angles_deg)
    writer.array_f32(stack.images)
    return pack_file(STACK_MAGIC, STACK_VERSION, writer.payload())


def stack_from_bytes(data: bytes) -> PlaneWaveStack:
    _, reader = unpack_file(data, STACK_MAGIC, {STACK_VERSION})
    dims_offset = reader.offset
    height, width, count = reader.u32(3, what="dimensions")
    if min(height, width, count) < 1:
        raise FormatError(f"invalid dimensions {height}x{width}x{count}", offset=dims_offset)
    range_offset = reader.offset
    dyn_min, dyn_max, axial_pitch, lateral_pitch = reader.f32(4, what="range and pitch")
    if not dyn_max > dyn_min:
        raise FormatError(f"dynamic range max {dyn_max} must exceed min {dyn_min}", offset=range_offset)
    (tag_len,) = reader.u32(what="provenance length")
    tag_offset = reader.offset
    try:
        provenance = reader.raw(tag_len, what="provenance").decode("utf-8")
    except UnicodeDecodeError as exc:
        raise FormatError("provenance tag is not valid UTF-8", offset=tag_offset) from exc
    angles_offset = reader.offset
    angles = reader.array_f32((count,), what="angles")
    if np.any(np.diff(angles) <= 0):
        raise FormatError("angle list is not strictly ascending", offset=angles_offset)
    images = reader.array_f32((count, height, width), what="images")
    reader.expect_end()
    return PlaneWaveStack(
        images=images,
        angles_deg=angles,
        axial_pitch_mm=axial_pitch,
        lateral_pitch_mm=lateral_pitch,
        dyn_min=dyn_min,
        dyn_max=dyn_max,
        provenance=provenance,
    )


def save_stack(stack: PlaneWaveStack, path: str | Path) -> int:
    return write_bytes(path, stack_to_bytes(stack))


def load_stack(path: str | Path) -> PlaneWaveStack:
    return stack_from_bytes(Path(path).read_bytes())


def quantize(image: np.ndarray, maxval: int) -> np.ndarray:
    # np.rint rounds half to even
    return np.rint(np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0) * maxval).astype(np.int64)


def export_image(
    image: np.ndarray,
    path: str | Path,
    fmt: str = "pgm8",
    db_range: tuple[float, float] | None = None,
) -> int:
    """Write a grayscale image; ``db_range`` marks the input as dB and maps it to [0, 1] first."""
    fmt = fmt.strip().lower()
    if fmt not in EXPORT_FORMATS:
        raise ContractError(f"unknown export format {fmt!r}, expected one of {', '.join(EXPORT_FORMATS)}")
    image = np.asarray(image)
    if image.ndim != 2:
        raise ContractError(f"export expects a 2-D image, got shape {image.shape}")
    unit = normalize_db(image, db_range) if db_range is not None else image
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    height, width = unit.shape
    if fmt == "png8":
        from matplotlib import image as mpimg

        mpimg.imsave(target, quantize(unit, 255).astype(np.uint8), cmap="gray", vmin=0, vmax=255, format="png")
        return target.stat().st_size
    maxval = 255 if fmt == "pgm8" else 65535
    dtype = np.uint8 if fmt == "pgm8" else np.dtype(">u2")
    header = f"P5 {width} {height} {maxval}\n".encode("ascii")
    return write_bytes(target, header + quantize(unit, maxval).astype(dtype).tobytes())


def stack_nbytes(num_angles: int, height: int, width: int, encoding: str = "float32") -> int:
    if encoding not in STACK_ENCODINGS:
        raise ContractError(f"unknown stack encoding {encoding!r}, expected one of {', '.join(STACK_ENCODINGS)}")
    return int(num_angles) * int(height) * int(width) * STACK_ENCODINGS[encoding]


@dataclass(frozen=True, slots=True)
class CompressionReport:
    model_bytes: int
    stack_bytes: int
    ratio: float
    encoding: str = ""

    def to_dict(self) -> dict:
        return {
            "model_bytes": self.model_bytes,
            "stack_bytes": self.stack_bytes,
            "ratio": self.ratio,
            "encoding": self.encoding,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), ensure_ascii=True)


def compression_ratio(model_bytes: int, stack_bytes: int, encoding: str = "") -> CompressionReport:
    if model_bytes <= 0 or stack_bytes <= 0:
        raise ContractError(f"sizes must be positive, got model={model_bytes} stack={stack_bytes}")
    return CompressionReport(
        model_bytes=int(model_bytes),
        stack_bytes=int(stack_bytes),
        ratio=int(stack_bytes) / int(model_bytes),
        encoding=encoding,
    )


def compression_report(weight_file_bytes: int, stack: PlaneWaveStack, encoding: str = "float32") -> CompressionReport:
    stack_bytes = stack_nbytes(stack.num_angles, stack.height, stack.width, encoding)
    return compression_ratio(weight_file_bytes, stack_bytes, encoding)
