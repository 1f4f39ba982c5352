from __future__ import annotations

import numpy as np
import pytest

from plane_wave_inr.binfmt import Writer, pack_file
from plane_wave_inr.data_io import (
    STACK_MAGIC,
    STACK_VERSION,
    PlaneWaveStack,
    compression_ratio,
    compression_report,
    denormalize_db,
    export_image,
    load_stack,
    normalize_db,
    save_stack,
    stack_from_bytes,
    stack_nbytes,
    stack_to_bytes,
)
from plane_wave_inr.errors import ContractError, FormatError


def _stack() -> PlaneWaveStack:
    rng = np.random.default_rng(0)
    return PlaneWaveStack(
        images=rng.uniform(-70.0, 5.0, size=(3, 5, 4)),
        angles_deg=[-4.0, 0.0, 4.0],
        axial_pitch_mm=0.2,
        lateral_pitch_mm=0.3,
        provenance="unit-test",
    )


def test_construction_clamps_to_dynamic_range() -> None:
    stack = _stack()
    assert stack.images.dtype == np.float32
    assert stack.images.min() >= -60.0 and stack.images.max() <= 0.0
    assert not stack.images.flags.writeable
    assert stack.orthogonal_index() == 1
    assert stack.alpha_norm(0) == -1.0


def test_construction_rejects_bad_angles() -> None:
    with pytest.raises(ContractError):
        PlaneWaveStack(images=np.zeros((2, 3, 3)), angles_deg=[1.0, 1.0])
    with pytest.raises(ContractError):
        PlaneWaveStack(images=np.zeros((2, 3, 3)), angles_deg=[1.0])


def test_stack_round_trip_is_bitwise(tmp_path) -> None:
    stack = _stack()
    path = tmp_path / "s.pwst"
    save_stack(stack, path)
    loaded = load_stack(path)
    assert np.array_equal(loaded.images, stack.images)
    assert np.array_equal(loaded.angles_deg, stack.angles_deg)
    assert loaded.provenance == "unit-test"
    assert loaded.axial_pitch_mm == stack.axial_pitch_mm
    assert stack_to_bytes(loaded) == path.read_bytes()


def test_non_ascending_angles_in_file_report_offset() -> None:
    writer = Writer()
    writer.u32(1, 1, 2)
    writer.f32(-60.0, 0.0, 0.1, 0.1)
    writer.u32(0)
    writer.array_f32(np.array([3.0, 1.0]))
    writer.array_f32(np.zeros((2, 1, 1)))
    with pytest.raises(FormatError) as info:
        stack_from_bytes(pack_file(STACK_MAGIC, STACK_VERSION, writer.payload()))
    assert info.value.offset == 16 + 12 + 16 + 4


def test_corruption_is_detected() -> None:
    data = bytearray(stack_to_bytes(_stack()))
    data[-8] ^= 0x01
    with pytest.raises(FormatError, match="checksum"):
        stack_from_bytes(bytes(data))
    with pytest.raises(FormatError):
        stack_from_bytes(bytes(data) + b"\0")
    good = stack_to_bytes(_stack())
    bumped = good[:4] + (STACK_VERSION + 1).to_bytes(4, "little") + good[8:]
    with pytest.raises(FormatError, match="version"):
        stack_from_bytes(bumped)


def test_db_normalization_round_trip() -> None:
    db = np.array([-60.0, -30.0, 0.0, 10.0])
    unit = normalize_db(db)
    assert unit.tolist() == [0.0, 0.5, 1.0, 1.0]
    assert denormalize_db(unit).tolist() == [-60.0, -30.0, 0.0, 0.0]
    with pytest.raises(ContractError):
        normalize_db(db, (0.0, 0.0))


def test_pgm_export(tmp_path) -> None:
    image = np.array([[0.0, 0.5, 1.0, 2.0], [0.25, 0.75, -1.0, 1.0], [0.0, 0.0, 0.0, 0.0]])
    path = tmp_path / "a.pgm"
    export_image(image, path, "pgm8")
    data = path.read_bytes()
    header = b"P5 4 3 255\n"
    assert data.startswith(header)
    assert len(data) == len(header) + 12
    assert data[len(header) + 2] == 255 and data[len(header) + 3] == 255

    path16 = tmp_path / "b.pgm"
    export_image(image, path16, "pgm16")
    data16 = path16.read_bytes()
    header16 = b"P5 4 3 65535\n"
    assert len(data16) == len(header16) + 24
    assert data16[len(header16) + 4 : len(header16) + 6] == b"\xff\xff"


def test_png_export_writes_png(tmp_path) -> None:
    path = tmp_path / "a.png"
    export_image(np.linspace(0.0, 1.0, 64).reshape(8, 8), path, "png8")
    assert path.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"


def test_export_rejects_unknown_format(tmp_path) -> None:
    with pytest.raises(ContractError):
        export_image(np.zeros((2, 2)), tmp_path / "x", "tiff")


def test_compression_accounting() -> None:
    assert compression_ratio(530_000, 8_000_000).ratio == pytest.approx(15.1, abs=0.05)
    assert compression_ratio(1234, 1234).ratio == 1.0
    assert stack_nbytes(75, 685, 588, "uint8") == 75 * 685 * 588
    report = compression_report(100, _stack(), "float32")
    assert report.stack_bytes == 3 * 5 * 4 * 4
    assert report.ratio == pytest.approx(2.4)
    with pytest.raises(ContractError):
        compression_ratio(0, 10)
