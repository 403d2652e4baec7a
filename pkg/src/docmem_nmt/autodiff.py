"""
Dense 64-bit tensors with tape-based reverse-mode differentiation.

Every operation goes through `apply`, which checks shapes, evaluates the forward
rule, rejects non-finite results and, when one of the inputs lives on a `Tape`,
records the operation so that `Tape.backward` can replay it in reverse.

Shape rules per op kind:

- matmul: 1-D or 2-D operands, inner extents equal (vector @ vector gives a scalar).
- add / elementwise-mul: operands broadcast together (numpy rules); add is n-ary.
- tanh, sigmoid, scalar-mul, dropout-mask: any shape; the dropout mask matches the input.
- softmax: reduces the last axis; an optional boolean mask over that axis excludes entries.
- softmax-cross-entropy: 1-D logits and an in-range gold index, scalar output.
- concat: equal rank, extents equal except along `axis`.
- stack: 1-D inputs of equal length, stacked as rows.
- transpose: 2-D input.
- slice: any basic numpy index that selects at least one value.
- embedding-lookup: 2-D table, ids within the row range.
- sum: reduces all axes, or one `axis`.
"""

from __future__ import annotations

from collections.abc import Callable, Iterator, Mapping, Sequence
from enum import Enum
from typing import Any, NamedTuple, TypeAlias

import numpy as np
import numpy.typing as npt

from docmem_nmt.errors import NonDeterministicError, NonFiniteError, ShapeError, TapeError

Array: TypeAlias = npt.NDArray[np.float64]


class OpKind(str, Enum):
    MATMUL = "matmul"
    ADD = "add"
    MUL = "elementwise-mul"
    TANH = "tanh"
    SIGMOID = "sigmoid"
    SOFTMAX = "softmax"
    SOFTMAX_XENT = "softmax-cross-entropy"
    CONCAT = "concat"
    STACK = "stack"
    TRANSPOSE = "transpose"
    SLICE = "slice"
    EMBEDDING_LOOKUP = "embedding-lookup"
    SUM = "sum"
    SCALAR_MUL = "scalar-mul"
    DROPOUT_MASK = "dropout-mask"


class Tensor:
    """An immutable float64 array, optionally bound to a node of a tape."""

    __slots__ = ("node", "tape", "value")

    def __init__(self, value: Any, node: int | None = None, tape: Tape | None = None) -> None:
        array = np.array(value, dtype=np.float64)
        array.setflags(write=False)
        self.value: Array = array
        self.node = node
        self.tape = tape

    @classmethod
    def _wrap(cls, array: Array, node: int | None = None, tape: Tape | None = None) -> Tensor:
        tensor = cls.__new__(cls)
        array.setflags(write=False)
        tensor.value = array
        tensor.node = node
        tensor.tape = tape
        return tensor

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(self.value.shape)

    @property
    def requires_grad(self) -> bool:
        return self.tape is not None

    def item(self) -> float:
        if self.value.size != 1:
            msg = f"item() needs a single value, got shape {self.shape}"
            raise ShapeError(msg)
        return float(self.value.reshape(()))

    def detach(self) -> Tensor:
        return Tensor._wrap(self.value)

    def __repr__(self) -> str:
        node = f", node={self.node}" if self.node is not None else ""
        return f"Tensor(shape={self.shape}{node})"

    def __add__(self, other: Tensor) -> Tensor:
        return add(self, other)

    def __sub__(self, other: Tensor) -> Tensor:
        return add(self, scale(other, -1.0))

    def __mul__(self, other: Tensor) -> Tensor:
        return mul(self, other)

    def __matmul__(self, other: Tensor) -> Tensor:
        return matmul(self, other)

    def __neg__(self) -> Tensor:
        return scale(self, -1.0)


BackwardRule = Callable[[Array, tuple[Array, ...], Array, dict[str, Any]], tuple["Array | None", ...]]


class _Rule(NamedTuple):
    check: Callable[[tuple[Array, ...], dict[str, Any]], None]
    forward: Callable[[tuple[Array, ...], dict[str, Any]], Array]
    backward: BackwardRule


class Tape:
    """Ordered record of operations; node ids are positions in the record."""

    def __init__(self) -> None:
        self._outputs: list[Array] = []
        self._inputs: list[tuple[Array, ...]] = []
        self._parents: list[tuple[int | None, ...]] = []
        self._kinds: list[OpKind | None] = []
        self._attrs: list[dict[str, Any]] = []

    def __len__(self) -> int:
        return len(self._outputs)

    @property
    def kinds(self) -> Sequence[OpKind | None]:
        """Op kind per node, `None` for leaves."""
        return tuple(self._kinds)

    def leaf(self, value: Any) -> Tensor:
        array = np.array(value, dtype=np.float64)
        node = self._append(array, (), (), None, {})
        return Tensor._wrap(array, node, self)

    def record(self, kind: OpKind, inputs: Sequence[Tensor], output: Array, attrs: dict[str, Any]) -> Tensor:
        parents = tuple(t.node if t.tape is self else None for t in inputs)
        node = self._append(output, tuple(t.value for t in inputs), parents, kind, attrs)
        return Tensor._wrap(output, node, self)

    def _append(
        self,
        output: Array,
        inputs: tuple[Array, ...],
        parents: tuple[int | None, ...],
        kind: OpKind | None,
        attrs: dict[str, Any],
    ) -> int:
        self._outputs.append(output)
        self._inputs.append(inputs)
        self._parents.append(parents)
        self._kinds.append(kind)
        self._attrs.append(attrs)
        return len(self._outputs) - 1

    def backward(self, loss: Tensor) -> GradientMap:
        """Propagate d(loss)/d(node) to every node that precedes `loss` on this tape."""
        if loss.tape is not self or loss.node is None:
            msg = "loss was not produced on this tape"
            raise TapeError(msg)
        if loss.value.shape != ():
            msg = f"loss must be a scalar, got shape {loss.shape}"
            raise ShapeError(msg)

        grads: list[Array | None] = [None] * len(self._outputs)
        grads[loss.node] = np.ones((), dtype=np.float64)
        for node in range(loss.node, -1, -1):
            g = grads[node]
            kind = self._kinds[node]
            if g is None or kind is None:
                continue
            rule = _RULES[kind]
            input_grads = rule.backward(g, self._inputs[node], self._outputs[node], self._attrs[node])
            for parent, input_grad in zip(self._parents[node], input_grads):
                if parent is None or input_grad is None:
                    continue
                previous = grads[parent]
                grads[parent] = input_grad if previous is None else previous + input_grad
        return GradientMap(grads, [out.shape for out in self._outputs])


class GradientMap(Mapping[int, Array]):
    """Gradients by node id; nodes the loss does not reach map to zeros."""

    def __init__(self, grads: list[Array | None], shapes: list[tuple[int, ...]]) -> None:
        self._grads = grads
        self._shapes = shapes

    def __getitem__(self, node: int) -> Array:
        grad = self._grads[node]
        if grad is None:
            return np.zeros(self._shapes[node], dtype=np.float64)
        return np.asarray(grad, dtype=np.float64).reshape(self._shapes[node])

    def __iter__(self) -> Iterator[int]:
        return iter(range(len(self._grads)))

    def __len__(self) -> int:
        return len(self._grads)

    def of(self, tensor: Tensor) -> Array:
        if tensor.node is None:
            msg = "tensor is not on a tape"
            raise TapeError(msg)
        return self[tensor.node]


def apply(kind: OpKind | str, inputs: Sequence[Tensor], **attrs: Any) -> Tensor:
    kind = OpKind(kind)
    rule = _RULES[kind]
    values = tuple(t.value for t in inputs)
    rule.check(values, attrs)
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        output = np.asarray(rule.forward(values, attrs), dtype=np.float64)
    if not np.all(np.isfinite(output)):
        raise NonFiniteError(kind.value, f"input shapes {[v.shape for v in values]}")

    tape: Tape | None = None
    for tensor in inputs:
        if tensor.tape is None:
            continue
        if tape is not None and tensor.tape is not tape:
            msg = f"inputs of '{kind.value}' are recorded on different tapes"
            raise TapeError(msg)
        tape = tensor.tape
    if tape is None:
        return Tensor._wrap(output)
    return tape.record(kind, inputs, output, attrs)


def _shape_error(kind: OpKind, values: tuple[Array, ...], detail: str) -> ShapeError:
    return ShapeError(f"{kind.value}: {detail} (got shapes {[tuple(v.shape) for v in values]})")


def _unbroadcast(g: Array, shape: tuple[int, ...]) -> Array:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _check_arity(kind: OpKind, values: tuple[Array, ...], arity: int) -> None:
    if len(values) != arity:
        raise _shape_error(kind, values, f"expects {arity} input(s)")


# matmul


def _matmul_check(values: tuple[Array, ...], attrs: dict[str, Any]) -> None:
    _check_arity(OpKind.MATMUL, values, 2)
    a, b = values
    if a.ndim not in (1, 2) or b.ndim not in (1, 2):
        raise _shape_error(OpKind.MATMUL, values, "operands must be 1-D or 2-D")
    if a.shape[-1] != b.shape[0]:
        raise _shape_error(OpKind.MATMUL, values, "inner extents differ")


def _matmul_backward(g: Array, values: tuple[Array, ...], out: Array, attrs: dict[str, Any]) -> tuple[Array, ...]:
    a, b = values
    if a.ndim == 1 and b.ndim == 1:
        return g * b, g * a
    if a.ndim == 2 and b.ndim == 1:
        return np.outer(g, b), a.T @ g
    if a.ndim == 1:
        return b @ g, np.outer(a, g)
    return g @ b.T, a.T @ g


# add / mul


def _broadcast_check(kind: OpKind, minimum: int) -> Callable[[tuple[Array, ...], dict[str, Any]], None]:
    def check(values: tuple[Array, ...], attrs: dict[str, Any]) -> None:
        if len(values) < minimum or (kind is OpKind.MUL and len(values) != 2):
            raise _shape_error(kind, values, "wrong number of inputs")
        try:
            np.broadcast_shapes(*(v.shape for v in values))
        except ValueError:
            raise _shape_error(kind, values, "operands do not broadcast") from None

    return check


def _add_forward(values: tuple[Array, ...], attrs: dict[str, Any]) -> Array:
    total = values[0]
    for value in values[1:]:
        total = total + value
    return total


def _add_backward(g: Array, values: tuple[Array, ...], out: Array, attrs: dict[str, Any]) -> tuple[Array, ...]:
    return tuple(_unbroadcast(g, v.shape) for v in values)


def _mul_backward(g: Array, values: tuple[Array, ...], out: Array, attrs: dict[str, Any]) -> tuple[Array, ...]:
    a, b = values
    return _unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)


# elementwise nonlinearities


def _unary_check(kind: OpKind) -> Callable[[tuple[Array, ...], dict[str, Any]], None]:
    def check(values: tuple[Array, ...], attrs: dict[str, Any]) -> None:
        _check_arity(kind, values, 1)

    return check


def _sigmoid(x: Array) -> Array:
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


# softmax


def _softmax_check(values: tuple[Array, ...], attrs: dict[str, Any]) -> None:
    _check_arity(OpKind.SOFTMAX, values, 1)
    (x,) = values
    if x.ndim == 0:
        raise _shape_error(OpKind.SOFTMAX, values, "needs at least one axis")
    mask = attrs.get("mask")
    if mask is not None:
        if np.shape(mask) != (x.shape[-1],):
            raise _shape_error(OpKind.SOFTMAX, values, f"mask shape {np.shape(mask)} does not match last axis")
        if not np.any(mask):
            raise _shape_error(OpKind.SOFTMAX, values, "mask excludes every entry")


def _softmax_forward(values: tuple[Array, ...], attrs: dict[str, Any]) -> Array:
    (x,) = values
    mask = attrs.get("mask")
    z = x if mask is None else np.where(mask, x, -np.inf)
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def _softmax_backward(g: Array, values: tuple[Array, ...], out: Array, attrs: dict[str, Any]) -> tuple[Array, ...]:
    return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)


def log_softmax(logits: Array) -> Array:
    """Plain numpy log-softmax over the last axis, for search and scoring."""
    m = logits.max(axis=-1, keepdims=True)
    return logits - (m + np.log(np.exp(logits - m).sum(axis=-1, keepdims=True)))


def _xent_check(values: tuple[Array, ...], attrs: dict[str, Any]) -> None:
    _check_arity(OpKind.SOFTMAX_XENT, values, 1)
    (z,) = values
    if z.ndim != 1:
        raise _shape_error(OpKind.SOFTMAX_XENT, values, "logits must be 1-D")
    gold = attrs["gold"]
    if not 0 <= gold < z.shape[0]:
        raise _shape_error(OpKind.SOFTMAX_XENT, values, f"gold index {gold} out of range")


def _xent_forward(values: tuple[Array, ...], attrs: dict[str, Any]) -> Array:
    (z,) = values
    return -log_softmax(z)[attrs["gold"]]


def _xent_backward(g: Array, values: tuple[Array, ...], out: Array, attrs: dict[str, Any]) -> tuple[Array, ...]:
    (z,) = values
    p = np.exp(log_softmax(z))
    p[attrs["gold"]] -= 1.0
    return (g * p,)


# layout ops


def _concat_check(values: tuple[Array, ...], attrs: dict[str, Any]) -> None:
    if not values:
        raise _shape_error(OpKind.CONCAT, values, "needs at least one input")
    axis = attrs.get("axis", 0)
    ndim = values[0].ndim
    if ndim == 0 or any(v.ndim != ndim for v in values) or not -ndim <= axis < ndim:
        raise _shape_error(OpKind.CONCAT, values, f"inputs must share a rank with axis {axis}")
    reference = np.delete(np.array(values[0].shape), axis)
    if any(not np.array_equal(np.delete(np.array(v.shape), axis), reference) for v in values):
        raise _shape_error(OpKind.CONCAT, values, f"extents differ off axis {axis}")


def _concat_backward(g: Array, values: tuple[Array, ...], out: Array, attrs: dict[str, Any]) -> tuple[Array, ...]:
    axis = attrs.get("axis", 0)
    bounds = np.cumsum([v.shape[axis] for v in values])[:-1]
    return tuple(np.split(g, bounds, axis=axis))


def _stack_check(values: tuple[Array, ...], attrs: dict[str, Any]) -> None:
    if not values or values[0].ndim != 1 or any(v.shape != values[0].shape for v in values):
        raise _shape_error(OpKind.STACK, values, "inputs must be 1-D vectors of equal length")


def _transpose_check(values: tuple[Array, ...], attrs: dict[str, Any]) -> None:
    _check_arity(OpKind.TRANSPOSE, values, 1)
    if values[0].ndim != 2:
        raise _shape_error(OpKind.TRANSPOSE, values, "input must be 2-D")


def _slice_check(values: tuple[Array, ...], attrs: dict[str, Any]) -> None:
    _check_arity(OpKind.SLICE, values, 1)
    try:
        selected = values[0][attrs["key"]]
    except IndexError as exc:
        raise _shape_error(OpKind.SLICE, values, str(exc)) from None
    if np.size(selected) == 0:
        raise _shape_error(OpKind.SLICE, values, f"key {attrs['key']!r} selects nothing")


def _slice_backward(g: Array, values: tuple[Array, ...], out: Array, attrs: dict[str, Any]) -> tuple[Array, ...]:
    full = np.zeros_like(values[0])
    full[attrs["key"]] = g
    return (full,)


def _lookup_check(values: tuple[Array, ...], attrs: dict[str, Any]) -> None:
    _check_arity(OpKind.EMBEDDING_LOOKUP, values, 1)
    (table,) = values
    if table.ndim != 2:
        raise _shape_error(OpKind.EMBEDDING_LOOKUP, values, "table must be 2-D")
    ids = np.asarray(attrs["ids"])
    if ids.size == 0 or ids.min() < 0 or ids.max() >= table.shape[0]:
        raise _shape_error(OpKind.EMBEDDING_LOOKUP, values, f"ids {ids.tolist()} out of range")


def _lookup_backward(g: Array, values: tuple[Array, ...], out: Array, attrs: dict[str, Any]) -> tuple[Array, ...]:
    full = np.zeros_like(values[0])
    np.add.at(full, attrs["ids"], g)
    return (full,)


def _sum_backward(g: Array, values: tuple[Array, ...], out: Array, attrs: dict[str, Any]) -> tuple[Array, ...]:
    (x,) = values
    axis = attrs.get("axis")
    if axis is not None:
        g = np.expand_dims(g, axis)
    return (np.broadcast_to(g, x.shape).copy(),)


def _dropout_check(values: tuple[Array, ...], attrs: dict[str, Any]) -> None:
    _check_arity(OpKind.DROPOUT_MASK, values, 1)
    if np.shape(attrs["mask"]) != values[0].shape:
        raise _shape_error(OpKind.DROPOUT_MASK, values, f"mask shape {np.shape(attrs['mask'])} differs")


_RULES: dict[OpKind, _Rule] = {
    OpKind.MATMUL: _Rule(_matmul_check, lambda v, a: np.matmul(v[0], v[1]), _matmul_backward),
    OpKind.ADD: _Rule(_broadcast_check(OpKind.ADD, 1), _add_forward, _add_backward),
    OpKind.MUL: _Rule(_broadcast_check(OpKind.MUL, 2), lambda v, a: v[0] * v[1], _mul_backward),
    OpKind.TANH: _Rule(
        _unary_check(OpKind.TANH), lambda v, a: np.tanh(v[0]), lambda g, v, out, a: (g * (1.0 - out * out),)
    ),
    OpKind.SIGMOID: _Rule(
        _unary_check(OpKind.SIGMOID), lambda v, a: _sigmoid(v[0]), lambda g, v, out, a: (g * out * (1.0 - out),)
    ),
    OpKind.SOFTMAX: _Rule(_softmax_check, _softmax_forward, _softmax_backward),
    OpKind.SOFTMAX_XENT: _Rule(_xent_check, _xent_forward, _xent_backward),
    OpKind.CONCAT: _Rule(_concat_check, lambda v, a: np.concatenate(v, axis=a.get("axis", 0)), _concat_backward),
    OpKind.STACK: _Rule(_stack_check, lambda v, a: np.stack(v), lambda g, v, out, a: tuple(g)),
    OpKind.TRANSPOSE: _Rule(_transpose_check, lambda v, a: v[0].T.copy(), lambda g, v, out, a: (g.T,)),
    OpKind.SLICE: _Rule(_slice_check, lambda v, a: np.array(v[0][a["key"]]), _slice_backward),
    OpKind.EMBEDDING_LOOKUP: _Rule(_lookup_check, lambda v, a: v[0][a["ids"]].copy(), _lookup_backward),
    OpKind.SUM: _Rule(_unary_check(OpKind.SUM), lambda v, a: np.sum(v[0], axis=a.get("axis")), _sum_backward),
    OpKind.SCALAR_MUL: _Rule(
        _unary_check(OpKind.SCALAR_MUL), lambda v, a: v[0] * a["scale"], lambda g, v, out, a: (g * a["scale"],)
    ),
    OpKind.DROPOUT_MASK: _Rule(_dropout_check, lambda v, a: v[0] * a["mask"], lambda g, v, out, a: (g * a["mask"],)),
}


def constant(value: Any) -> Tensor:
    return Tensor(value)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    return apply(OpKind.MATMUL, (a, b))


def add(*terms: Tensor) -> Tensor:
    return apply(OpKind.ADD, terms)


def mul(a: Tensor, b: Tensor) -> Tensor:
    return apply(OpKind.MUL, (a, b))


def tanh(x: Tensor) -> Tensor:
    return apply(OpKind.TANH, (x,))


def sigmoid(x: Tensor) -> Tensor:
    return apply(OpKind.SIGMOID, (x,))


def softmax(x: Tensor, mask: npt.NDArray[np.bool_] | None = None) -> Tensor:
    return apply(OpKind.SOFTMAX, (x,), mask=mask)


def softmax_cross_entropy(logits: Tensor, gold: int) -> Tensor:
    return apply(OpKind.SOFTMAX_XENT, (logits,), gold=int(gold))


def concat(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    return apply(OpKind.CONCAT, parts, axis=axis)


def stack(rows: Sequence[Tensor]) -> Tensor:
    return apply(OpKind.STACK, rows)


def transpose(x: Tensor) -> Tensor:
    return apply(OpKind.TRANSPOSE, (x,))


def take(x: Tensor, key: Any) -> Tensor:
    return apply(OpKind.SLICE, (x,), key=key)


def lookup(table: Tensor, ids: int | Sequence[int]) -> Tensor:
    return apply(OpKind.EMBEDDING_LOOKUP, (table,), ids=ids)


def reduce_sum(x: Tensor, axis: int | None = None) -> Tensor:
    return apply(OpKind.SUM, (x,), axis=axis)


def scale(x: Tensor, factor: float) -> Tensor:
    return apply(OpKind.SCALAR_MUL, (x,), scale=float(factor))


def dropout(x: Tensor, mask: Array | None) -> Tensor:
    """Apply a pre-sampled inverted-dropout mask; `None` means evaluation mode."""
    if mask is None:
        return x
    return apply(OpKind.DROPOUT_MASK, (x,), mask=mask)


def dropout_mask(rng: np.random.Generator, shape: tuple[int, ...], rate: float) -> Array | None:
    """Binary keep-mask scaled by 1/(1-rate), or `None` when dropout is off."""
    if rate <= 0.0:
        return None
    return (rng.random(shape) >= rate).astype(np.float64) / (1.0 - rate)


class GradCheckResult(NamedTuple):
    max_relative_error: float
    worst_parameter: str | None
    worst_index: tuple[int, ...] | None
    checked: int


def _coordinates(shape: tuple[int, ...], sample: int | None, rng: np.random.Generator) -> list[tuple[int, ...]]:
    indices = list(np.ndindex(*shape))
    if sample is None or sample >= len(indices):
        return indices
    chosen = np.sort(rng.choice(len(indices), size=sample, replace=False))
    return [indices[i] for i in chosen]


def grad_check(
    f: Callable[[Mapping[str, Tensor]], Tensor],
    point: Mapping[str, Array],
    names: Sequence[str] | None = None,
    eps: float = 1e-5,
    sample: int | None = None,
    seed: int = 0,
) -> GradCheckResult:
    """
    Compare tape gradients against central finite differences.

    `f` receives a mapping of parameter name to tensor and must return a scalar.
    Only `names` (default: every entry of `point`) are checked; the rest are passed
    as constants. The error per coordinate is
    |analytic - numeric| / max(1, |analytic|, |numeric|). With `sample`, at most that
    many coordinates per parameter are checked, drawn with `seed`.
    """
    if eps <= 0:
        msg = f"eps must be positive, got {eps}"
        raise ValueError(msg)
    names = list(point) if names is None else list(names)
    base = {name: np.array(value, dtype=np.float64) for name, value in point.items()}

    def evaluate(values: Mapping[str, Array]) -> float:
        return float(f({name: Tensor(value) for name, value in values.items()}).value)

    reference = evaluate(base)
    if evaluate(base) != reference:
        msg = "function is not deterministic: two forward passes disagree (is dropout enabled?)"
        raise NonDeterministicError(msg)

    tape = Tape()
    view: dict[str, Tensor] = {
        name: tape.leaf(value) if name in names else Tensor(value) for name, value in base.items()
    }
    loss = f(view)
    grads = tape.backward(loss)

    rng = np.random.default_rng(seed)
    worst = GradCheckResult(0.0, None, None, 0)
    checked = 0
    for name in names:
        analytic = grads.of(view[name])
        for index in _coordinates(base[name].shape, sample, rng):
            original = base[name][index]
            base[name][index] = original + eps
            plus = evaluate(base)
            base[name][index] = original - eps
            minus = evaluate(base)
            base[name][index] = original
            numeric = (plus - minus) / (2.0 * eps)
            a = float(analytic[index])
            error = abs(a - numeric) / max(1.0, abs(a), abs(numeric))
            checked += 1
            if error > worst.max_relative_error:
                worst = GradCheckResult(error, name, tuple(int(i) for i in index), 0)
    return worst._replace(checked=checked)
