from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Protocol, Sequence, TypeVar

import numpy as np

from .errors import ContractError, DimensionError, NumericalError

DenseArray = np.ndarray
H = TypeVar("H")


class Precision(str, Enum):
    FLOAT32 = "float32"
    FLOAT64 = "float64"

    @property
    def dtype(self) -> np.dtype:
        return np.dtype(self.value)


class SeparableTaps(Protocol):
    axial_taps: np.ndarray
    lateral_taps: np.ndarray


@dataclass(frozen=True, slots=True)
class Taps:
    axial_taps: np.ndarray
    lateral_taps: np.ndarray


def as_dense(values: Any, precision: Precision | str = Precision.FLOAT64) -> np.ndarray:
    return np.ascontiguousarray(values, dtype=Precision(precision).dtype)


def check_finite(array: np.ndarray, what: str) -> np.ndarray:
    if not np.all(np.isfinite(array)):
        raise NumericalError(f"non-finite values produced by {what}")
    return array


def affine_forward(x: np.ndarray, weight: np.ndarray, bias: np.ndarray) -> np.ndarray:
    if x.ndim != 2 or weight.ndim != 2 or bias.ndim != 1:
        raise DimensionError(f"affine expects 2-D input/weight and 1-D bias, got {x.shape}, {weight.shape}, {bias.shape}")
    if x.shape[1] != weight.shape[0] or bias.shape[0] != weight.shape[1]:
        raise DimensionError(f"affine shapes do not conform: input {x.shape}, weight {weight.shape}, bias {bias.shape}")
    return x @ weight + bias


def relu(x: np.ndarray) -> np.ndarray:
    return np.where(x > 0, x, np.zeros_like(x))


def relu_backward(grad: np.ndarray, x: np.ndarray) -> np.ndarray:
    # subgradient at exactly zero is zero
    return np.where(x > 0, grad, np.zeros_like(grad))


def _along(array: np.ndarray, axis: int, start: int, stop: int) -> np.ndarray:
    return array[start:stop] if axis == 0 else array[:, start:stop]


def _filter_axis(x: np.ndarray, taps: np.ndarray, axis: int) -> np.ndarray:
    radius = len(taps) // 2
    n = x.shape[axis]
    pad = [(0, 0), (0, 0)]
    pad[axis] = (radius, radius)
    padded = np.pad(x, pad, mode="edge")
    flipped = taps[::-1]
    out = np.zeros_like(x)
    for s in range(len(taps)):
        out += flipped[s] * _along(padded, axis, s, s + n)
    return out


def _filter_axis_backward(grad: np.ndarray, taps: np.ndarray, axis: int) -> np.ndarray:
    radius = len(taps) // 2
    n = grad.shape[axis]
    shape = list(grad.shape)
    shape[axis] = n + 2 * radius
    padded = np.zeros(shape, dtype=grad.dtype)
    flipped = taps[::-1]
    for s in range(len(taps)):
        _along(padded, axis, s, s + n)[...] += flipped[s] * grad
    out = _along(padded, axis, radius, radius + n).copy()
    if radius:
        # replicate padding folds the halo gradient back onto the edge samples
        if axis == 0:
            out[0] += padded[:radius].sum(axis=0)
            out[-1] += padded[radius + n :].sum(axis=0)
        else:
            out[:, 0] += padded[:, :radius].sum(axis=1)
            out[:, -1] += padded[:, radius + n :].sum(axis=1)
    return out


def _check_conv_shape(image: np.ndarray, kernel: SeparableTaps) -> None:
    if image.ndim != 2:
        raise DimensionError(f"convolution expects a 2-D image, got shape {image.shape}")
    for taps, extent, label in (
        (kernel.axial_taps, image.shape[0], "height"),
        (kernel.lateral_taps, image.shape[1], "width"),
    ):
        if len(taps) % 2 != 1:
            raise DimensionError(f"kernel taps must have odd length, got {len(taps)}")
        radius = len(taps) // 2
        if extent < radius + 1:
            raise DimensionError(f"image {label} {extent} is smaller than kernel radius+1 ({radius + 1})")


def conv2d_separable(image: np.ndarray, kernel: SeparableTaps) -> np.ndarray:
    """Same-size 2-D convolution with an outer-product kernel.

    Vertical pass with the axial taps, then horizontal pass with the lateral
    taps, both with replicate (edge-clamp) padding.
    """
    _check_conv_shape(image, kernel)
    axial = np.asarray(kernel.axial_taps, dtype=image.dtype)
    lateral = np.asarray(kernel.lateral_taps, dtype=image.dtype)
    return _filter_axis(_filter_axis(image, axial, 0), lateral, 1)


def conv2d_separable_backward(grad: np.ndarray, kernel: SeparableTaps) -> np.ndarray:
    axial = np.asarray(kernel.axial_taps, dtype=grad.dtype)
    lateral = np.asarray(kernel.lateral_taps, dtype=grad.dtype)
    return _filter_axis_backward(_filter_axis_backward(grad, lateral, 1), axial, 0)


def _same_shape(a: np.ndarray, b: np.ndarray, op: str) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{op} expects equal shapes, got {a.shape} and {b.shape}")


class ArrayOps(Protocol[H]):
    def constant(self, array: np.ndarray) -> H: ...
    def value(self, handle: H) -> np.ndarray: ...
    def affine(self, x: H, weight: H, bias: H) -> H: ...
    def relu(self, x: H) -> H: ...
    def concat(self, a: H, b: H) -> H: ...
    def reshape(self, x: H, shape: Sequence[int]) -> H: ...
    def conv2d_separable(self, x: H, kernel: SeparableTaps) -> H: ...
    def rows(self, x: H, start: int, stop: int) -> H: ...
    def add(self, a: H, b: H) -> H: ...
    def sub(self, a: H, b: H) -> H: ...
    def mul(self, a: H, b: H) -> H: ...
    def div(self, a: H, b: H) -> H: ...
    def scale(self, x: H, factor: float) -> H: ...
    def shift(self, x: H, offset: float) -> H: ...
    def mean(self, x: H) -> H: ...
    def sum(self, x: H) -> H: ...


class Eager:
    def __init__(self, precision: Precision | str = Precision.FLOAT64) -> None:
        self.precision = Precision(precision)

    def constant(self, array: np.ndarray) -> np.ndarray:
        return as_dense(array, self.precision)

    def value(self, handle: np.ndarray) -> np.ndarray:
        return handle

    def affine(self, x: np.ndarray, weight: np.ndarray, bias: np.ndarray) -> np.ndarray:
        return affine_forward(x, weight, bias)

    def relu(self, x: np.ndarray) -> np.ndarray:
        return relu(x)

    def concat(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        if a.ndim != 2 or b.ndim != 2 or a.shape[0] != b.shape[0]:
            raise DimensionError(f"concat expects row-aligned 2-D arrays, got {a.shape} and {b.shape}")
        return np.concatenate([a, b], axis=1)

    def reshape(self, x: np.ndarray, shape: Sequence[int]) -> np.ndarray:
        if int(np.prod(shape)) != x.size:
            raise DimensionError(f"cannot reshape {x.shape} to {tuple(shape)}")
        return x.reshape(tuple(shape))

    def conv2d_separable(self, x: np.ndarray, kernel: SeparableTaps) -> np.ndarray:
        return conv2d_separable(x, kernel)

    def rows(self, x: np.ndarray, start: int, stop: int) -> np.ndarray:
        if not 0 <= start < stop <= x.shape[0]:
            raise DimensionError(f"row range [{start}, {stop}) outside 0..{x.shape[0]}")
        return x[start:stop]

    def add(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        _same_shape(a, b, "add")
        return a + b

    def sub(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        _same_shape(a, b, "sub")
        return a - b

    def mul(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        _same_shape(a, b, "mul")
        return a * b

    def div(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        _same_shape(a, b, "div")
        return a / b

    def scale(self, x: np.ndarray, factor: float) -> np.ndarray:
        return x * factor

    def shift(self, x: np.ndarray, offset: float) -> np.ndarray:
        return x + offset

    def mean(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x.mean(), dtype=x.dtype)

    def sum(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x.sum(), dtype=x.dtype)


@dataclass(slots=True)
class TapeEntry:
    op: str
    inputs: tuple[int, ...]
    value: np.ndarray
    requires_grad: bool
    saved: dict[str, Any] = field(default_factory=dict)
    name: str | None = None


class Tape:
    """Records primitive applications in execution order.

    Node ids are indices into ``entries``; every entry is appended after its
    inputs, so walking the ids downwards visits a node after all its consumers.
    """

    def __init__(self, precision: Precision | str = Precision.FLOAT32) -> None:
        self.precision = Precision(precision)
        self.entries: list[TapeEntry] = []
        self.parameters: dict[str, int] = {}
        self._eager = Eager(self.precision)

    def __len__(self) -> int:
        return len(self.entries)

    def _record(self, op: str, inputs: Sequence[int], value: np.ndarray, **saved: Any) -> int:
        check_finite(value, op)
        requires_grad = any(self.entries[i].requires_grad for i in inputs)
        self.entries.append(TapeEntry(op=op, inputs=tuple(inputs), value=value, requires_grad=requires_grad, saved=saved))
        return len(self.entries) - 1

    def value(self, node: int) -> np.ndarray:
        return self.entries[node].value

    def constant(self, array: np.ndarray) -> int:
        value = as_dense(array, self.precision)
        check_finite(value, "constant")
        self.entries.append(TapeEntry(op="constant", inputs=(), value=value, requires_grad=False))
        return len(self.entries) - 1

    def parameter(self, name: str, array: np.ndarray) -> int:
        if name in self.parameters:
            raise ContractError(f"parameter {name!r} already on tape")
        value = as_dense(array, self.precision)
        check_finite(value, f"parameter {name}")
        self.entries.append(TapeEntry(op="parameter", inputs=(), value=value, requires_grad=True, name=name))
        node = len(self.entries) - 1
        self.parameters[name] = node
        return node

    def affine(self, x: int, weight: int, bias: int) -> int:
        out = self._eager.affine(self.value(x), self.value(weight), self.value(bias))
        return self._record("affine", (x, weight, bias), out)

    def relu(self, x: int) -> int:
        return self._record("relu", (x,), relu(self.value(x)))

    def concat(self, a: int, b: int) -> int:
        out = self._eager.concat(self.value(a), self.value(b))
        return self._record("concat", (a, b), out, split=self.value(a).shape[1])

    def reshape(self, x: int, shape: Sequence[int]) -> int:
        return self._record("reshape", (x,), self._eager.reshape(self.value(x), shape))

    def conv2d_separable(self, x: int, kernel: SeparableTaps) -> int:
        return self._record("conv2d_separable", (x,), conv2d_separable(self.value(x), kernel), kernel=kernel)

    def rows(self, x: int, start: int, stop: int) -> int:
        out = self._eager.rows(self.value(x), start, stop)
        return self._record("rows", (x,), out, start=start, stop=stop)

    def add(self, a: int, b: int) -> int:
        return self._record("add", (a, b), self._eager.add(self.value(a), self.value(b)))

    def sub(self, a: int, b: int) -> int:
        return self._record("sub", (a, b), self._eager.sub(self.value(a), self.value(b)))

    def mul(self, a: int, b: int) -> int:
        return self._record("mul", (a, b), self._eager.mul(self.value(a), self.value(b)))

    def div(self, a: int, b: int) -> int:
        return self._record("div", (a, b), self._eager.div(self.value(a), self.value(b)))

    def scale(self, x: int, factor: float) -> int:
        return self._record("scale", (x,), self.value(x) * factor, factor=factor)

    def shift(self, x: int, offset: float) -> int:
        return self._record("shift", (x,), self.value(x) + offset)

    def mean(self, x: int) -> int:
        return self._record("mean", (x,), self._eager.mean(self.value(x)))

    def sum(self, x: int) -> int:
        return self._record("sum", (x,), self._eager.sum(self.value(x)))

    def backward(self, loss_node: int, upstream: float = 1.0) -> dict[str, np.ndarray]:
        return backward(self, loss_node, upstream)


Rule = Callable[[Tape, TapeEntry, np.ndarray], tuple[np.ndarray, ...]]


def _affine_rule(tape: Tape, entry: TapeEntry, grad: np.ndarray) -> tuple[np.ndarray, ...]:
    x, weight, _ = (tape.value(i) for i in entry.inputs)
    needs = [tape.entries[i].requires_grad for i in entry.inputs]
    gx = grad @ weight.T if needs[0] else None
    gw = x.T @ grad if needs[1] else None
    gb = grad.sum(axis=0) if needs[2] else None
    return gx, gw, gb


def _rows_rule(tape: Tape, entry: TapeEntry, grad: np.ndarray) -> tuple[np.ndarray, ...]:
    out = np.zeros_like(tape.value(entry.inputs[0]))
    out[entry.saved["start"] : entry.saved["stop"]] = grad
    return (out,)


def _div_rule(tape: Tape, entry: TapeEntry, grad: np.ndarray) -> tuple[np.ndarray, ...]:
    a, b = (tape.value(i) for i in entry.inputs)
    return grad / b, -grad * a / (b * b)


_RULES: dict[str, Rule] = {
    "affine": _affine_rule,
    "relu": lambda t, e, g: (relu_backward(g, t.value(e.inputs[0])),),
    "concat": lambda t, e, g: (g[:, : e.saved["split"]], g[:, e.saved["split"] :]),
    "reshape": lambda t, e, g: (g.reshape(t.value(e.inputs[0]).shape),),
    "conv2d_separable": lambda t, e, g: (conv2d_separable_backward(g, e.saved["kernel"]),),
    "rows": _rows_rule,
    "add": lambda t, e, g: (g, g),
    "sub": lambda t, e, g: (g, -g),
    "mul": lambda t, e, g: (g * t.value(e.inputs[1]), g * t.value(e.inputs[0])),
    "div": _div_rule,
    "scale": lambda t, e, g: (g * e.saved["factor"],),
    "shift": lambda t, e, g: (g,),
    "mean": lambda t, e, g: (np.full_like(t.value(e.inputs[0]), g / t.value(e.inputs[0]).size),),
    "sum": lambda t, e, g: (np.full_like(t.value(e.inputs[0]), g),),
}


def backward(tape: Tape, loss_node: int, upstream: float = 1.0) -> dict[str, np.ndarray]:
    loss = tape.value(loss_node)
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss node, got shape {loss.shape}")
    pending: dict[int, np.ndarray] = {loss_node: np.full_like(loss, upstream)}
    out: dict[str, np.ndarray] = {}
    for node in range(loss_node, -1, -1):
        grad = pending.pop(node, None)
        if grad is None:
            continue
        entry = tape.entries[node]
        if entry.op == "parameter":
            out[entry.name or str(node)] = grad
            continue
        if not entry.requires_grad:
            continue
        for source, source_grad in zip(entry.inputs, _RULES[entry.op](tape, entry, grad)):
            if source_grad is None or not tape.entries[source].requires_grad:
                continue
            if source in pending:
                pending[source] = pending[source] + source_grad
            else:
                pending[source] = source_grad
    for name, node in tape.parameters.items():
        if name not in out:
            out[name] = np.zeros_like(tape.value(node))
    return out
