from __future__ import annotations

import pytest

from plane_wave_inr.data_io import PlaneWaveStack
from plane_wave_inr.model import ModelArch
from plane_wave_inr.phantom import PhantomSpec, Scatterer, generate_phantom
from plane_wave_inr.trainer import TrainConfig


@pytest.fixture
def toy_arch() -> ModelArch:
    return ModelArch(num_layers=2, width=8, skip_layer_index=2, embedding_size=2)


@pytest.fixture
def small_spec() -> PhantomSpec:
    return PhantomSpec(
        height=24,
        width=24,
        angles_deg=(-8.0, 0.0, 8.0),
        scatterers=(Scatterer(depth_mm=2.0, lateral_mm=3.0),),
        speckle=0.3,
        provenance="small",
    )


@pytest.fixture
def small_stack(small_spec: PhantomSpec) -> PlaneWaveStack:
    return generate_phantom(small_spec, seed=0)


@pytest.fixture
def toy_config(toy_arch: ModelArch) -> TrainConfig:
    return TrainConfig(
        iterations=6,
        stripes_per_image=2,
        learning_rate=1e-2,
        final_learning_rate=1e-3,
        arch=toy_arch,
        log_every=0,
    )
