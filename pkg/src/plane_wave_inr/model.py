from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .binfmt import Reader, Writer, pack_file, unpack_file, write_bytes
from .encoding import EncodedBatch, encoded_width
from .errors import ContractError, DimensionError, FormatError
from .numerics import ArrayOps, Eager, Precision, Tape, as_dense, check_finite

WEIGHTS_MAGIC = b"PWIN"
WEIGHTS_VERSION = 1


@dataclass(frozen=True, slots=True)
class ModelArch:
    num_layers: int = 8
    width: int = 256
    skip_layer_index: int = 5
    embedding_size: int = 10

    @property
    def input_width(self) -> int:
        return encoded_width(self.embedding_size)

    def validate(self) -> "ModelArch":
        if self.width < 1:
            raise ContractError(f"width must be >= 1, got {self.width}")
        if self.num_layers < 2:
            raise ContractError(f"num_layers must be >= 2, got {self.num_layers}")
        if not 1 < self.skip_layer_index <= self.num_layers:
            raise ContractError(
                f"skip_layer_index must satisfy 1 < skip <= num_layers, got {self.skip_layer_index}"
            )
        if self.embedding_size < 1:
            raise ContractError(f"embedding_size must be >= 1, got {self.embedding_size}")
        return self

    def layer_shapes(self) -> list[tuple[int, int]]:
        """(fan_in, fan_out) for hidden layers 1..num_layers, then the output layer."""
        shapes: list[tuple[int, int]] = []
        fan_in = self.input_width
        for index in range(1, self.num_layers + 1):
            if index == self.skip_layer_index:
                fan_in += self.input_width
            shapes.append((fan_in, self.width))
            fan_in = self.width
        shapes.append((self.width, 1))
        return shapes

    def to_dict(self) -> dict[str, int]:
        return {
            "num_layers": self.num_layers,
            "width": self.width,
            "skip_layer_index": self.skip_layer_index,
            "embedding_size": self.embedding_size,
        }


def parameter_count(arch: ModelArch) -> int:
    return sum(fan_in * fan_out + fan_out for fan_in, fan_out in arch.layer_shapes())


@dataclass(frozen=True, slots=True)
class ModelParams:
    arch: ModelArch
    layers: tuple[tuple[np.ndarray, np.ndarray], ...]
    seed: int = 0

    def parameter_count(self) -> int:
        return int(sum(w.size + b.size for w, b in self.layers))

    @property
    def dtype(self) -> np.dtype:
        return self.layers[0][0].dtype

    def named(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        for index, (weight, bias) in enumerate(self.layers):
            out[layer_name(index, "weight")] = weight
            out[layer_name(index, "bias")] = bias
        return out

    @classmethod
    def from_named(cls, arch: ModelArch, named: dict[str, np.ndarray], seed: int = 0) -> "ModelParams":
        count = len(arch.layer_shapes())
        layers = tuple((named[layer_name(i, "weight")], named[layer_name(i, "bias")]) for i in range(count))
        return cls(arch=arch, layers=layers, seed=seed)

    def astype(self, precision: Precision | str) -> "ModelParams":
        layers = tuple((as_dense(w, precision), as_dense(b, precision)) for w, b in self.layers)
        return ModelParams(arch=self.arch, layers=layers, seed=self.seed)

    def same_as(self, other: "ModelParams") -> bool:
        if self.arch != other.arch or self.seed != other.seed or len(self.layers) != len(other.layers):
            return False
        return all(
            w.dtype == ow.dtype and np.array_equal(w, ow) and np.array_equal(b, ob)
            for (w, b), (ow, ob) in zip(self.layers, other.layers)
        )


def layer_name(index: int, kind: str) -> str:
    return f"layer{index}.{kind}"


@dataclass(frozen=True, slots=True)
class Prediction:
    o: np.ndarray
    grid_shape: tuple[int, int] | None = None

    def image(self) -> np.ndarray:
        if self.grid_shape is None:
            raise ContractError("prediction has no grid shape")
        return self.o.reshape(self.grid_shape)


def init_params(arch: ModelArch, seed: int) -> ModelParams:
    """He-uniform weights (bound sqrt(6/fan_in)) and zero biases, float32."""
    arch.validate()
    rng = np.random.default_rng(seed)
    layers = []
    for fan_in, fan_out in arch.layer_shapes():
        bound = np.sqrt(6.0 / fan_in)
        weight = rng.uniform(-bound, bound, size=(fan_in, fan_out)).astype(np.float32)
        layers.append((weight, np.zeros(fan_out, dtype=np.float32)))
    return ModelParams(arch=arch, layers=tuple(layers), seed=int(seed))


def mlp(ops: ArrayOps, layers: Sequence[tuple], gamma, skip_layer_index: int):
    hidden = gamma
    for index, (weight, bias) in enumerate(layers[:-1], start=1):
        if index == skip_layer_index:
            hidden = ops.concat(hidden, gamma)
        hidden = ops.relu(ops.affine(hidden, weight, bias))
    weight, bias = layers[-1]
    return ops.affine(hidden, weight, bias)


def _check_width(params: ModelParams, width: int) -> None:
    if width != params.arch.input_width:
        raise DimensionError(f"encoded width {width} does not match model input width {params.arch.input_width}")


def forward(params: ModelParams, gamma: EncodedBatch, grid_shape: tuple[int, int] | None = None) -> Prediction:
    _check_width(params, gamma.width)
    ops = Eager(Precision(params.dtype.name))
    x = ops.constant(gamma.gamma)
    out = check_finite(mlp(ops, params.layers, x, params.arch.skip_layer_index), "forward")
    return Prediction(o=out.reshape(-1), grid_shape=grid_shape)


def register_params(tape: Tape, params: ModelParams) -> list[tuple[int, int]]:
    handles = []
    for index, (weight, bias) in enumerate(params.layers):
        handles.append((tape.parameter(layer_name(index, "weight"), weight), tape.parameter(layer_name(index, "bias"), bias)))
    return handles


def trace_forward(tape: Tape, params: ModelParams, gamma: EncodedBatch) -> int:
    _check_width(params, gamma.width)
    handles = register_params(tape, params)
    return mlp(tape, handles, tape.constant(gamma.gamma), params.arch.skip_layer_index)


def weights_to_bytes(params: ModelParams) -> bytes:
    arch = params.arch
    writer = Writer()
    writer.u32(arch.num_layers, arch.width, arch.skip_layer_index, arch.embedding_size)
    writer.u64(params.seed)
    for weight, bias in params.layers:
        writer.array_f32(weight)
        writer.array_f32(bias)
    return pack_file(WEIGHTS_MAGIC, WEIGHTS_VERSION, writer.payload())


def read_params(reader: Reader) -> ModelParams:
    descriptor_offset = reader.offset
    num_layers, width, skip, embedding = reader.u32(4, what="descriptor")
    (seed,) = reader.u64(what="seed")
    arch = ModelArch(num_layers=num_layers, width=width, skip_layer_index=skip, embedding_size=embedding)
    try:
        arch.validate()
    except ContractError as exc:
        raise FormatError(f"invalid architecture descriptor: {exc}", offset=descriptor_offset) from exc
    layers = []
    for index, (fan_in, fan_out) in enumerate(arch.layer_shapes()):
        weight = reader.array_f32((fan_in, fan_out), what=layer_name(index, "weight"))
        bias = reader.array_f32((fan_out,), what=layer_name(index, "bias"))
        layers.append((weight, bias))
    return ModelParams(arch=arch, layers=tuple(layers), seed=int(seed))


def weights_from_bytes(data: bytes) -> ModelParams:
    _, reader = unpack_file(data, WEIGHTS_MAGIC, {WEIGHTS_VERSION})
    params = read_params(reader)
    reader.expect_end()
    return params


def save_weights(params: ModelParams, path: str | Path) -> int:
    return write_bytes(path, weights_to_bytes(params.astype(Precision.FLOAT32)))


def load_weights(path: str | Path) -> ModelParams:
    return weights_from_bytes(Path(path).read_bytes())
