"""
Recurrent cells, the bidirectional driver, embeddings and affine layers.

Parameter tensors are looked up by name in a bound view (see `ParamSet.bind`);
each layer type declares the shapes it needs under a name prefix.
"""

from __future__ import annotations

from collections.abc import Mapping, Sequence
from dataclasses import dataclass
from enum import Enum
from typing import NamedTuple, Union

import numpy as np

from docmem_nmt import autodiff as ad
from docmem_nmt.autodiff import Tensor
from docmem_nmt.errors import ShapeError

Shapes = dict[str, tuple[int, ...]]


class CellKind(str, Enum):
    GRU = "gru"
    LSTM = "lstm"


def _check(name: str, tensor: Tensor, shape: tuple[int, ...]) -> None:
    if tensor.shape != shape:
        msg = f"{name}: expected shape {shape}, got {tensor.shape}"
        raise ShapeError(msg)


@dataclass(frozen=True)
class GruParams:
    """GRU weights; gate rows are stacked [update; reset; candidate]."""

    w: Tensor
    u_zr: Tensor
    u_n: Tensor
    b: Tensor

    def __post_init__(self) -> None:
        hidden, input_dim = self.u_n.shape[0], self.w.shape[-1]
        for name, shape in self.shapes("", input_dim, hidden).items():
            _check(f"gru{name}", getattr(self, name.lstrip(".")), shape)

    @property
    def hidden_dim(self) -> int:
        return self.u_n.shape[0]

    @property
    def input_dim(self) -> int:
        return self.w.shape[1]

    @staticmethod
    def shapes(prefix: str, input_dim: int, hidden_dim: int) -> Shapes:
        return {
            f"{prefix}.w": (3 * hidden_dim, input_dim),
            f"{prefix}.u_zr": (2 * hidden_dim, hidden_dim),
            f"{prefix}.u_n": (hidden_dim, hidden_dim),
            f"{prefix}.b": (3 * hidden_dim,),
        }

    @classmethod
    def bind(cls, view: Mapping[str, Tensor], prefix: str) -> GruParams:
        return cls(view[f"{prefix}.w"], view[f"{prefix}.u_zr"], view[f"{prefix}.u_n"], view[f"{prefix}.b"])


@dataclass(frozen=True)
class LstmParams:
    """LSTM weights; gate rows are stacked [input; forget; candidate; output]."""

    w: Tensor
    u: Tensor
    b: Tensor

    def __post_init__(self) -> None:
        hidden, input_dim = self.u.shape[-1], self.w.shape[-1]
        for name, shape in self.shapes("", input_dim, hidden).items():
            _check(f"lstm{name}", getattr(self, name.lstrip(".")), shape)

    @property
    def hidden_dim(self) -> int:
        return self.u.shape[1]

    @property
    def input_dim(self) -> int:
        return self.w.shape[1]

    @staticmethod
    def shapes(prefix: str, input_dim: int, hidden_dim: int) -> Shapes:
        return {
            f"{prefix}.w": (4 * hidden_dim, input_dim),
            f"{prefix}.u": (4 * hidden_dim, hidden_dim),
            f"{prefix}.b": (4 * hidden_dim,),
        }

    @classmethod
    def bind(cls, view: Mapping[str, Tensor], prefix: str) -> LstmParams:
        return cls(view[f"{prefix}.w"], view[f"{prefix}.u"], view[f"{prefix}.b"])


@dataclass(frozen=True)
class AffineParams:
    w: Tensor
    b: Tensor | None = None

    @staticmethod
    def shapes(prefix: str, input_dim: int, output_dim: int, bias: bool = True) -> Shapes:
        shapes: Shapes = {f"{prefix}.w": (output_dim, input_dim)}
        if bias:
            shapes[f"{prefix}.b"] = (output_dim,)
        return shapes

    @classmethod
    def bind(cls, view: Mapping[str, Tensor], prefix: str) -> AffineParams:
        return cls(view[f"{prefix}.w"], view.get(f"{prefix}.b"))

    def __call__(self, x: Tensor) -> Tensor:
        y = ad.matmul(self.w, x)
        return y if self.b is None else ad.add(y, self.b)


@dataclass(frozen=True)
class EmbeddingTable:
    """Rows indexed by token id, reserved tokens included."""

    table: Tensor

    @staticmethod
    def shapes(name: str, vocab_size: int, embed_dim: int) -> Shapes:
        return {name: (vocab_size, embed_dim)}

    @property
    def vocab_size(self) -> int:
        return self.table.shape[0]

    def __call__(self, token: int) -> Tensor:
        return ad.lookup(self.table, token)


class Dropout:
    """Inverted dropout with masks drawn from a dedicated generator; rate 0 is the identity."""

    def __init__(self, rng: np.random.Generator | None = None, rate: float = 0.0) -> None:
        self.rng = rng
        self.rate = rate

    @property
    def active(self) -> bool:
        return self.rng is not None and self.rate > 0.0

    def __call__(self, x: Tensor) -> Tensor:
        if self.rng is None:
            return x
        return ad.dropout(x, ad.dropout_mask(self.rng, x.shape, self.rate))


NO_DROPOUT = Dropout()

CellParams = Union[GruParams, LstmParams]


class LstmState(NamedTuple):
    h: Tensor
    c: Tensor


def gru_step(x: Tensor, h_prev: Tensor, p: GruParams) -> Tensor:
    """h' = (1 - z) * h + z * n, computed as h + z * (n - h)."""
    hidden = p.hidden_dim
    if x.shape != (p.input_dim,) or h_prev.shape != (hidden,):
        msg = f"gru_step: input {x.shape} / state {h_prev.shape} do not match ({p.input_dim}, {hidden})"
        raise ShapeError(msg)
    gx = ad.add(ad.matmul(p.w, x), p.b)
    zr = ad.sigmoid(ad.add(ad.take(gx, slice(0, 2 * hidden)), ad.matmul(p.u_zr, h_prev)))
    z = ad.take(zr, slice(0, hidden))
    r = ad.take(zr, slice(hidden, 2 * hidden))
    n = ad.tanh(ad.add(ad.take(gx, slice(2 * hidden, 3 * hidden)), ad.matmul(p.u_n, ad.mul(r, h_prev))))
    return ad.add(h_prev, ad.mul(z, n - h_prev))


def lstm_step(x: Tensor, state: LstmState, p: LstmParams) -> LstmState:
    hidden = p.hidden_dim
    if x.shape != (p.input_dim,) or state.h.shape != (hidden,) or state.c.shape != (hidden,):
        msg = f"lstm_step: input {x.shape} / state {state.h.shape} do not match ({p.input_dim}, {hidden})"
        raise ShapeError(msg)
    gates = ad.add(ad.matmul(p.w, x), ad.matmul(p.u, state.h), p.b)
    i = ad.sigmoid(ad.take(gates, slice(0, hidden)))
    f = ad.sigmoid(ad.take(gates, slice(hidden, 2 * hidden)))
    g = ad.tanh(ad.take(gates, slice(2 * hidden, 3 * hidden)))
    o = ad.sigmoid(ad.take(gates, slice(3 * hidden, 4 * hidden)))
    c = ad.add(ad.mul(f, state.c), ad.mul(i, g))
    return LstmState(ad.mul(o, ad.tanh(c)), c)


def _zeros(hidden: int) -> Tensor:
    return ad.constant([0.0] * hidden)


def unroll(seq: Sequence[Tensor], p: CellParams) -> list[Tensor]:
    """Left-to-right hidden states from a zero initial state."""
    states: list[Tensor] = []
    if isinstance(p, GruParams):
        h = _zeros(p.hidden_dim)
        for x in seq:
            h = gru_step(x, h, p)
            states.append(h)
    else:
        state = LstmState(_zeros(p.hidden_dim), _zeros(p.hidden_dim))
        for x in seq:
            state = lstm_step(x, state, p)
            states.append(state.h)
    return states


class BiRnnStates(NamedTuple):
    rows: list[Tensor]
    forward: list[Tensor]
    backward: list[Tensor]

    @property
    def final(self) -> Tensor:
        """[last forward state; first-position backward state]."""
        return ad.concat([self.forward[-1], self.backward[0]])


def birnn(seq: Sequence[Tensor], fwd: CellParams, bwd: CellParams) -> BiRnnStates:
    if not seq:
        msg = "birnn: empty sequence"
        raise ShapeError(msg)
    forward = unroll(seq, fwd)
    backward = unroll(seq[::-1], bwd)[::-1]
    rows = [ad.concat([f, b]) for f, b in zip(forward, backward)]
    return BiRnnStates(rows, forward, backward)


def cell_shapes(kind: CellKind, prefix: str, input_dim: int, hidden_dim: int) -> Shapes:
    if kind is CellKind.GRU:
        return GruParams.shapes(prefix, input_dim, hidden_dim)
    return LstmParams.shapes(prefix, input_dim, hidden_dim)


def bind_cell(kind: CellKind, view: Mapping[str, Tensor], prefix: str) -> CellParams:
    if kind is CellKind.GRU:
        return GruParams.bind(view, prefix)
    return LstmParams.bind(view, prefix)
