from __future__ import annotations

import json

import numpy as np
import pytest

from plane_wave_inr.data_io import stack_to_bytes
from plane_wave_inr.errors import ContractError, SpecParseError
from plane_wave_inr.phantom import (
    AnechoicDisk,
    PhantomSpec,
    Scatterer,
    ShadowModel,
    generate_phantom,
    load_phantom_spec,
    phantom_spec_from_obj,
)


def test_bundled_default_spec_gives_64x64x8_stack() -> None:
    stack = generate_phantom(load_phantom_spec(), seed=0)
    assert (stack.num_angles, stack.height, stack.width) == (8, 64, 64)
    assert stack.angle_span == (-16.0, 16.0)
    assert stack.provenance == "phantom-default"


@pytest.mark.parametrize("name", ["phantom-resolution.json", "phantom-contrast.json"])
def test_other_bundled_presets_load(name: str) -> None:
    from plane_wave_inr.phantom import DEFAULT_SPEC_PATH

    spec = load_phantom_spec(DEFAULT_SPEC_PATH.with_name(name))
    stack = generate_phantom(spec, seed=1)
    assert stack.num_angles == len(spec.angles_deg)


def test_same_seed_is_byte_identical(small_spec: PhantomSpec) -> None:
    a = stack_to_bytes(generate_phantom(small_spec, seed=9))
    b = stack_to_bytes(generate_phantom(small_spec, seed=9))
    c = stack_to_bytes(generate_phantom(small_spec, seed=10))
    assert a == b
    assert a != c


def test_scatterer_peak_sits_at_its_position() -> None:
    spec = PhantomSpec(
        height=40,
        width=40,
        angles_deg=(0.0,),
        scatterers=(Scatterer(depth_mm=2.0, lateral_mm=6.0),),
        shadow=ShadowModel(enabled=False),
    )
    image = generate_phantom(spec).images[0]
    row, col = np.unravel_index(int(np.argmax(image)), image.shape)
    assert (row, col) == (10, 20)
    assert image[row, col] == pytest.approx(0.0, abs=1e-9)
    assert np.count_nonzero(image == image.max()) == 1


def test_default_phantom_stays_within_the_dynamic_range() -> None:
    stack = generate_phantom(load_phantom_spec(), seed=0)
    assert stack.images.max() <= stack.dyn_max + 1e-9


def test_shadow_drifts_against_the_steering_direction() -> None:
    spec = PhantomSpec(
        height=64,
        width=64,
        angles_deg=(-16.0, 16.0),
        scatterers=(Scatterer(depth_mm=2.0, lateral_mm=9.6),),
    )
    stack = generate_phantom(spec)
    deep = 50
    left_steer = int(np.argmin(stack.images[0][deep]))
    right_steer = int(np.argmin(stack.images[1][deep]))
    assert right_steer < 32 < left_steer


def test_anechoic_disk_is_dark() -> None:
    spec = PhantomSpec(
        height=40,
        width=40,
        angles_deg=(0.0,),
        disks=(AnechoicDisk(depth_mm=4.0, lateral_mm=6.0, radius_mm=1.0, floor_db=-55.0),),
    )
    image = generate_phantom(spec).images[0]
    assert image[20, 20] == pytest.approx(-55.0, abs=1e-4)
    assert image[2, 2] == pytest.approx(-30.0, abs=1e-4)


def test_geometry_outside_grid_is_rejected() -> None:
    with pytest.raises(ContractError):
        PhantomSpec(height=10, width=10, scatterers=(Scatterer(depth_mm=50.0, lateral_mm=1.0),)).validate()
    with pytest.raises(ContractError):
        PhantomSpec(height=10, width=10, disks=(AnechoicDisk(1.0, 1.0, 5.0),)).validate()


def test_unknown_key_reports_line(tmp_path) -> None:
    path = tmp_path / "spec.json"
    path.write_text('{\n  "height": 16,\n  "widht": 16\n}\n', encoding="utf-8")
    with pytest.raises(SpecParseError) as info:
        load_phantom_spec(path)
    assert info.value.line == 3
    assert "widht" in str(info.value)


def test_malformed_json_reports_line(tmp_path) -> None:
    path = tmp_path / "spec.json"
    path.write_text('{\n  "height": 16,\n  "width": \n}\n', encoding="utf-8")
    with pytest.raises(SpecParseError) as info:
        load_phantom_spec(path)
    assert info.value.line == 4


def test_angle_range_shorthand() -> None:
    spec = phantom_spec_from_obj(json.loads('{"angles_deg": {"min": -4, "max": 4, "count": 5}}'))
    assert spec.angles_deg == (-4.0, -2.0, 0.0, 2.0, 4.0)
