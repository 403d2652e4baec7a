"""
Document-conditioned translation.

Memory contexts are computed once per sentence and held constant across its
decoding steps. The cell of the sentence being translated is always excluded
from both memory reads.
"""

from __future__ import annotations

from collections.abc import Mapping, Sequence
from dataclasses import dataclass, replace
from typing import NamedTuple

import numpy as np

from docmem_nmt import autodiff as ad
from docmem_nmt.autodiff import Tensor
from docmem_nmt.config import Memories, ModelConfig, QueryRep, SearchConfig, SearchKind, TrainConfig, Variant
from docmem_nmt.corpus import EncodedDocument
from docmem_nmt.errors import DataFormatError, ModelConfigError
from docmem_nmt.layers import NO_DROPOUT, AffineParams, Dropout, Shapes
from docmem_nmt.memory import (
    LM_PREFIX,
    Memory,
    SentenceLm,
    build_source_memory,
    build_target_memory,
    doc_memory_shapes,
    query_source,
    query_target,
)
from docmem_nmt.params import ParamSet
from docmem_nmt.snmt import (
    Annotations,
    DecoderTrace,
    MemoryContext,
    beam_decode,
    encode,
    exhaustive_decode,
    nll,
    score_tokens,
)

Params = Mapping[str, Tensor]

# Context injection matrices start at zero so a fresh document model scores exactly like its stage-1 initialization
ZERO_INIT = ("dec.W_sm", "dec.W_st", "dec.W_ym", "dec.W_yt", "dec.W_sp")


class DocModel:
    """Parameters together with the configuration that decides how they are wired."""

    def __init__(self, params: ParamSet, cfg: ModelConfig) -> None:
        cfg.validate()
        self.params = params
        self.cfg = cfg
        lm_params = params.subset(LM_PREFIX)
        self.lm = SentenceLm(lm_params) if len(lm_params) else None
        if self.lm is None and (cfg.memories.source or cfg.query_rep is QueryRep.MEMORY) and self.uses_memory:
            msg = "source memory and memory-side queries need a pretrained sentence language model"
            raise ModelConfigError(msg)

    @property
    def variant(self) -> Variant:
        return self.cfg.decode_variant

    @property
    def uses_memory(self) -> bool:
        return self.variant is not Variant.NONE

    @property
    def needs_target(self) -> bool:
        return self.variant is Variant.PREV_TRG or (self.uses_memory and self.cfg.memories.target)

    @property
    def needs_source(self) -> bool:
        return self.uses_memory and self.cfg.memories.source

    def sentence_level(self) -> DocModel:
        """The same parameters used as a plain sentence-level model."""
        return DocModel(self.params, replace(self.cfg, memories=Memories.NONE, prev_trg=False))

    def view(self, tape: ad.Tape | None = None) -> dict[str, Tensor]:
        return self.params.bind(tape)


def query_dim(cfg: ModelConfig, lm_rep_dim: int) -> int:
    return lm_rep_dim if cfg.query_rep is QueryRep.MEMORY else 2 * cfg.hidden


def doc_shapes(cfg: ModelConfig, tgt_vocab: int, lm_rep_dim: int) -> Shapes:
    """Parameters the document model adds on top of the sentence-level model."""
    hidden, cell_dim, q_dim = cfg.hidden, 2 * cfg.doc_hidden, query_dim(cfg, lm_rep_dim)
    shapes: Shapes = {}
    if cfg.prev_trg:
        shapes["dec.W_sp"] = (hidden, hidden)
    if cfg.memories.source:
        shapes |= doc_memory_shapes(lm_rep_dim, cfg.doc_hidden)
        if q_dim != cell_dim:
            shapes |= AffineParams.shapes("mem.P_src", q_dim, cell_dim)
        if cfg.variant is Variant.MEM_TO_CONTEXT or cfg.prev_trg:
            shapes["dec.W_sm"] = (hidden, cell_dim)
        else:
            shapes["dec.W_ym"] = (tgt_vocab, cell_dim)
    if cfg.memories.target:
        shapes["mem.W_at"] = (hidden, q_dim)
        if cfg.variant is Variant.MEM_TO_CONTEXT:
            shapes["dec.W_st"] = (hidden, hidden)
        else:
            shapes["dec.W_yt"] = (tgt_vocab, hidden)
    return shapes


def extend_for_documents(snmt: ParamSet, lm: SentenceLm | None, cfg: ModelConfig, rng: np.random.Generator) -> ParamSet:
    """Stage-2 starting point: stage-1 parameters, the frozen sentence LM and fresh memory parameters."""
    cfg.validate()
    params = snmt.copy()
    if lm is not None:
        params = params.merge(lm.params.copy())
        params.freeze(lm.params.keys())
    lm_rep_dim = lm.rep_dim if lm is not None else 0
    tgt_vocab = snmt["dec.W_y"].shape[0]
    shapes = doc_shapes(cfg, tgt_vocab, lm_rep_dim)
    return params.merge(ParamSet.initialize(shapes, rng, zeros=[name for name in shapes if name in ZERO_INIT]))


class DropoutPlan(NamedTuple):
    nmt: Dropout = NO_DROPOUT
    doc: Dropout = NO_DROPOUT


def dropout_plan(model: ModelConfig, train: TrainConfig, rng: np.random.Generator, stage: int) -> DropoutPlan:
    """Stage 1 uses one rate; stage 2 distinguishes single- and dual-memory models."""
    if stage == 1 or model.decode_variant is Variant.NONE:
        return DropoutPlan(Dropout(rng, train.dropout_stage1))
    if model.memories is Memories.BOTH:
        return DropoutPlan(Dropout(rng, train.dropout_dual), Dropout(rng, train.dropout_doc_rnn))
    return DropoutPlan(Dropout(rng, train.dropout_single), Dropout(rng, train.dropout_single))


@dataclass
class DocumentContext:
    """Per-document state shared by every sentence: annotations, queries and memories."""

    sources: Sequence[Sequence[int]]
    annotations: list[Annotations]
    queries: list[Tensor]
    source_memory: Memory | None
    target_memory: Memory | None = None

    def __len__(self) -> int:
        return len(self.sources)


def prepare_document(
    sources: Sequence[Sequence[int]],
    model: DocModel,
    p: Params,
    dropout: DropoutPlan = DropoutPlan(),
) -> DocumentContext:
    """Encode every sentence and build the source memory once for the document."""
    if not sources:
        msg = "cannot translate an empty document"
        raise DataFormatError(msg)
    annotations = [encode(x, p, dropout.nmt) for x in sources]
    if model.cfg.query_rep is QueryRep.MEMORY and model.uses_memory and model.lm is not None:
        queries = [ad.constant(model.lm.represent(x)) for x in sources]
    else:
        queries = [ann.rep for ann in annotations]
    source_memory = None
    if model.needs_source:
        assert model.lm is not None
        source_memory = build_source_memory(sources, model.lm, p, dropout.doc)
    return DocumentContext(sources, annotations, queries, source_memory)


def target_traces(
    sources: Sequence[Sequence[int]],
    translations: Sequence[Sequence[int]],
    p: Params,
) -> list[DecoderTrace]:
    """Sentence-level traces of fixed translations, used to fill the target memory during training."""
    if len(sources) != len(translations):
        msg = f"{len(translations)} translations for a document of {len(sources)} sentences"
        raise DataFormatError(msg)
    return [score_tokens(x, y, p) for x, y in zip(sources, translations)]


def sentence_context(ctx: DocumentContext, t: int, model: DocModel, p: Params) -> MemoryContext | None:
    variant = model.variant
    if variant is Variant.NONE:
        return None
    if model.needs_target and ctx.target_memory is None:
        msg = f"the '{model.cfg.memories.value}' model needs the current translations of the document"
        raise ModelConfigError(msg)
    source = target = None
    if model.cfg.memories.source:
        if ctx.source_memory is None:
            msg = "source memory was not built for this document"
            raise ModelConfigError(msg)
        source = query_source(ctx.source_memory, ctx.queries[t], t, p)
    if variant is Variant.PREV_TRG:
        assert ctx.target_memory is not None
        hidden = ctx.target_memory.dim
        previous = ad.take(ctx.target_memory.cells, t - 1) if t > 0 else ad.constant(np.zeros(hidden))
        return MemoryContext(source=source, previous=previous)
    if model.cfg.memories.target:
        assert ctx.target_memory is not None
        s_t = ad.take(ctx.target_memory.cells, t)
        target = query_target(ctx.target_memory, s_t, ctx.queries[t], t, p)
    return MemoryContext(source=source, target=target)


def translate_in_context(
    x_t: Sequence[int],
    t: int,
    ctx: DocumentContext,
    model: DocModel,
    p: Params,
    search: SearchConfig,
) -> tuple[list[int], DecoderTrace]:
    mem_ctx = sentence_context(ctx, t, model, p)
    ann = ctx.annotations[t]
    if search.search is SearchKind.EXHAUSTIVE:
        return exhaustive_decode(x_t, p, search.max_len, model.variant, mem_ctx, ann=ann)
    return beam_decode(x_t, p, search.beam, search.max_len, model.variant, mem_ctx, ann=ann)


def score_in_context(
    x_t: Sequence[int],
    tokens: Sequence[int],
    t: int,
    ctx: DocumentContext,
    model: DocModel,
    p: Params,
) -> DecoderTrace:
    """Trace and log-probability of a fixed translation of sentence `t` under the document model."""
    return score_tokens(x_t, tokens, p, model.variant, sentence_context(ctx, t, model, p), ann=ctx.annotations[t])


def doc_nll(
    doc: EncodedDocument,
    translations: Sequence[Sequence[int]] | None,
    model: DocModel,
    p: Params,
    dropout: DropoutPlan = DropoutPlan(),
) -> Tensor:
    """
    Pseudo-likelihood loss of a document: sum over t of -log P(y_t | x_t, y_-t, x_-t).

    `translations` fill the target memory (generated or gold); they are scored
    with the sentence-level part of the current parameters, off the tape.
    """
    if not len(doc):
        msg = "cannot score an empty document"
        raise DataFormatError(msg)
    ctx = prepare_document(doc.source, model, p, dropout)
    if model.needs_target:
        if translations is None:
            msg = "target memory needs the document's current translations"
            raise ModelConfigError(msg)
        ctx.target_memory = build_target_memory(target_traces(doc.source, translations, model.view()))
    terms = [
        nll(x, y, p, model.variant, sentence_context(ctx, t, model, p), dropout.nmt, ann=ctx.annotations[t])
        for t, (x, y) in enumerate(zip(doc.source, doc.target))
    ]
    return ad.add(*terms)
