"""
External document memories.

A memory holds one cell per document sentence. The source memory runs a
document-level bidirectional GRU over sentence representations produced by a
pretrained (then frozen) sentence-level bidirectional LSTM language model. The
target memory holds the final decoder state of each sentence's current translation.
"""

from __future__ import annotations

from collections.abc import Mapping, Sequence
from dataclasses import dataclass, replace
from enum import Enum

import numpy as np

from docmem_nmt import autodiff as ad
from docmem_nmt.autodiff import Array, Tensor
from docmem_nmt.corpus import BOS_ID, EOS_ID
from docmem_nmt.errors import MemoryReadError, ShapeError
from docmem_nmt.layers import (
    NO_DROPOUT,
    AffineParams,
    BiRnnStates,
    Dropout,
    EmbeddingTable,
    GruParams,
    LstmParams,
    Shapes,
    birnn,
)
from docmem_nmt.params import ParamSet
from docmem_nmt.snmt import DecoderTrace

Params = Mapping[str, Tensor]

LM_PREFIX = "lm."
LM_HEAD = ("lm.out.w", "lm.out.b")


class MemoryOrigin(str, Enum):
    SOURCE = "source"
    TARGET = "target"


@dataclass(frozen=True)
class Memory:
    cells: Tensor
    origin: MemoryOrigin
    excluded: int | None = None

    def __post_init__(self) -> None:
        if len(self.cells.shape) != 2 or self.cells.shape[0] < 1:
            msg = f"memory cells must be a non-empty matrix, got shape {self.cells.shape}"
            raise ShapeError(msg)
        if self.excluded is not None and not 0 <= self.excluded < len(self):
            msg = f"excluded cell {self.excluded} out of range for {len(self)} cells"
            raise ValueError(msg)

    def __len__(self) -> int:
        return self.cells.shape[0]

    @property
    def dim(self) -> int:
        return self.cells.shape[1]

    def excluding(self, index: int | None) -> Memory:
        return replace(self, excluded=index)


def mem_read(memory: Memory, q: Tensor) -> tuple[Tensor, Tensor]:
    """Attention over cells: p = softmax(M q) with the excluded cell masked out, out = p M."""
    if q.shape != (memory.dim,):
        msg = f"query shape {q.shape} does not match cell dimension {memory.dim}"
        raise ShapeError(msg)
    mask = None
    if memory.excluded is not None:
        if len(memory) == 1:
            msg = "cannot read a single-cell memory with that cell excluded"
            raise MemoryReadError(msg)
        mask = np.ones(len(memory), dtype=bool)
        mask[memory.excluded] = False
    weights = ad.softmax(ad.matmul(memory.cells, q), mask=mask)
    return weights, ad.matmul(weights, memory.cells)


@dataclass(frozen=True)
class LmDims:
    vocab: int
    embed: int
    hidden: int

    @property
    def rep_dim(self) -> int:
        return 2 * self.hidden


def lm_shapes(dims: LmDims) -> Shapes:
    return {
        **EmbeddingTable.shapes("lm.emb", dims.vocab, dims.embed),
        **LstmParams.shapes("lm.fwd", dims.embed, dims.hidden),
        **LstmParams.shapes("lm.bwd", dims.embed, dims.hidden),
        **AffineParams.shapes("lm.out", dims.hidden, dims.vocab),
    }


class SentenceLm:
    """
    Bidirectional LSTM language model over source sentences.

    The forward direction predicts the next token (the end token after the last
    word), the backward direction the previous one (the start token before the
    first word), both through one shared output layer. The output layer starts at
    zero, so an untrained model is uniform over the vocabulary.
    """

    def __init__(self, params: ParamSet) -> None:
        self.params = params
        self._reps: dict[tuple[int, ...], Array] = {}

    @classmethod
    def initialize(cls, dims: LmDims, rng: np.random.Generator) -> SentenceLm:
        return cls(ParamSet.initialize(lm_shapes(dims), rng, zeros=LM_HEAD))

    @property
    def frozen(self) -> bool:
        return all(name in self.params.frozen for name in self.params)

    @property
    def rep_dim(self) -> int:
        return 2 * self.params["lm.fwd.u"].shape[1]

    def freeze(self) -> SentenceLm:
        self.params.freeze(self.params.keys())
        return self

    def loss(self, x: Sequence[int], view: Params, dropout: Dropout = NO_DROPOUT) -> Tensor:
        """Summed cross-entropy of both directions; 2 * len(x) predictions."""
        states = self._states(x, view, dropout)
        head = AffineParams.bind(view, "lm.out")
        next_tokens = [*x[1:], EOS_ID]
        prev_tokens = [BOS_ID, *x[:-1]]
        terms = [ad.softmax_cross_entropy(head(dropout(h)), gold) for h, gold in zip(states.forward, next_tokens)]
        terms += [ad.softmax_cross_entropy(head(dropout(h)), gold) for h, gold in zip(states.backward, prev_tokens)]
        return ad.add(*terms)

    def represent(self, x: Sequence[int]) -> Array:
        """[last forward state; first backward state], cached while the model is frozen."""
        key = tuple(x)
        if (rep := self._reps.get(key)) is not None:
            return rep
        rep = self._states(x, self.params.bind()).final.value
        if self.frozen:
            self._reps[key] = rep
        return rep

    def _states(self, x: Sequence[int], view: Params, dropout: Dropout = NO_DROPOUT) -> BiRnnStates:
        emb = EmbeddingTable(view["lm.emb"])
        return birnn(
            [dropout(emb(token)) for token in x], LstmParams.bind(view, "lm.fwd"), LstmParams.bind(view, "lm.bwd")
        )


def doc_memory_shapes(rep_dim: int, doc_hidden: int) -> Shapes:
    return {
        **GruParams.shapes("mem.doc.fwd", rep_dim, doc_hidden),
        **GruParams.shapes("mem.doc.bwd", rep_dim, doc_hidden),
    }


def build_source_memory(
    sources: Sequence[Sequence[int]],
    lm: SentenceLm,
    p: Params,
    dropout: Dropout = NO_DROPOUT,
) -> Memory:
    """Document-level bi-GRU states over the sentence representations, one cell per sentence."""
    reps = [dropout(ad.constant(lm.represent(x))) for x in sources]
    states = birnn(reps, GruParams.bind(p, "mem.doc.fwd"), GruParams.bind(p, "mem.doc.bwd"))
    return Memory(ad.stack(states.rows), MemoryOrigin.SOURCE)


def _zeros(dim: int) -> Tensor:
    return ad.constant(np.zeros(dim))


def source_query(h_t: Tensor, p: Params) -> Tensor:
    if "mem.P_src.w" in p:
        return AffineParams.bind(p, "mem.P_src")(h_t)
    return h_t


def query_source(memory: Memory, h_t: Tensor, t: int, p: Params) -> Tensor:
    """c_src: read of every cell but `t`; zero for a single-sentence document."""
    if len(memory) == 1:
        return _zeros(memory.dim)
    return mem_read(memory.excluding(t), source_query(h_t, p))[1]


def build_target_memory(traces: Sequence[DecoderTrace | None]) -> Memory:
    """Cell t is the final decoder state of sentence t's current translation."""
    if not traces:
        msg = "target memory needs at least one translation"
        raise ValueError(msg)
    if missing := [t for t, trace in enumerate(traces) if trace is None or not len(trace)]:
        msg = f"missing translation trace for sentence(s) {missing}"
        raise ValueError(msg)
    cells = np.stack([trace.final_state for trace in traces if trace is not None])
    return Memory(ad.constant(cells), MemoryOrigin.TARGET)


def target_query(s_t: Tensor, h_t: Tensor, p: Params) -> Tensor:
    return ad.add(s_t, ad.matmul(p["mem.W_at"], h_t))


def query_target(memory: Memory, s_t: Tensor, h_t: Tensor, t: int, p: Params) -> Tensor:
    """c_trg: read with query s_t + W_at h_t, excluding `t`; zero for a single-sentence document."""
    if len(memory) == 1:
        return _zeros(memory.dim)
    return mem_read(memory.excluding(t), target_query(s_t, h_t, p))[1]
