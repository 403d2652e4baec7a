"""
Sentence-level attentional encoder-decoder.

The decoder recurrence is

    s_j = tanh(W_s s_{j-1} + W_sj E_T[y_{j-1}] + W_sc c_j [+ context terms])
    r_j = tanh(s_j + W_rc c_j + W_rj E_T[y_{j-1}])
    logits_j = W_y r_j + b_r [+ output terms]

with attention scores v . tanh(W_ae h_i + W_at s_{j-1}). Document context enters
either inside the state (`mem-to-context`), in the logits (`mem-to-output`) or as
the previous sentence's final state (`prev-trg`). Context terms are always summed
after the base terms, so zero contexts give results identical to `Variant.NONE`.
"""

from __future__ import annotations

from collections.abc import Mapping, Sequence
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from docmem_nmt import autodiff as ad
from docmem_nmt.autodiff import Array, Tensor
from docmem_nmt.config import ModelConfig, Variant
from docmem_nmt.corpus import BOS_ID, EOS_ID
from docmem_nmt.errors import DataFormatError, ModelConfigError
from docmem_nmt.layers import NO_DROPOUT, AffineParams, Dropout, EmbeddingTable, GruParams, Shapes, birnn, gru_step
from docmem_nmt.params import ParamSet

Params = Mapping[str, Tensor]


@dataclass(frozen=True)
class SnmtDims:
    src_vocab: int
    tgt_vocab: int
    embed: int
    hidden: int
    align: int
    decoder_layers: int = 1

    @classmethod
    def from_config(cls, cfg: ModelConfig, src_vocab: int, tgt_vocab: int) -> SnmtDims:
        return cls(src_vocab, tgt_vocab, cfg.embed, cfg.hidden, cfg.align, cfg.decoder_layers)


def snmt_shapes(dims: SnmtDims) -> Shapes:
    embed, hidden, align = dims.embed, dims.hidden, dims.align
    shapes: Shapes = {
        **EmbeddingTable.shapes("emb.src", dims.src_vocab, embed),
        **EmbeddingTable.shapes("emb.tgt", dims.tgt_vocab, embed),
        **GruParams.shapes("enc.fwd", embed, hidden),
        **GruParams.shapes("enc.bwd", embed, hidden),
        **AffineParams.shapes("init", hidden, hidden),
        "att.W_ae": (align, 2 * hidden),
        "att.W_at": (align, hidden),
        "att.v": (align,),
        "dec.W_s": (hidden, hidden),
        "dec.W_sj": (hidden, embed),
        "dec.W_sc": (hidden, 2 * hidden),
        "dec.W_rc": (hidden, 2 * hidden),
        "dec.W_rj": (hidden, embed),
        "dec.W_y": (dims.tgt_vocab, hidden),
        "dec.b_r": (dims.tgt_vocab,),
    }
    if dims.decoder_layers == 2:
        shapes |= GruParams.shapes("dec.l2", hidden, hidden)
    return shapes


def init_snmt(dims: SnmtDims, rng: np.random.Generator) -> ParamSet:
    return ParamSet.initialize(snmt_shapes(dims), rng)


class Annotations(NamedTuple):
    rows: Tensor
    """Per-word states [fwd_i; bwd_i], one row per source token."""
    keys: Tensor
    """Attention keys W_ae h_i, precomputed once per sentence."""
    rep: Tensor
    """Sentence representation [last forward state; first backward state]."""
    init_source: Tensor
    """First-position backward state, feeds the initial decoder state."""


class MemoryContext(NamedTuple):
    source: Tensor | None = None
    target: Tensor | None = None
    previous: Tensor | None = None

    @property
    def empty(self) -> bool:
        return self.source is None and self.target is None and self.previous is None


class DecoderState(NamedTuple):
    layers: tuple[Tensor, ...]

    @property
    def s(self) -> Tensor:
        return self.layers[0]

    @property
    def top(self) -> Tensor:
        return self.layers[-1]


class StepOutput(NamedTuple):
    state: DecoderState
    logits: Tensor
    alpha: Tensor
    context: Tensor
    readout: Tensor


class StepRecord(NamedTuple):
    token: int
    log_prob: float
    state: Array
    alpha: Array
    context: Array
    readout: Array


@dataclass(frozen=True)
class DecoderTrace:
    """Per-step decoder values of one translation, detached from any tape."""

    tokens: tuple[int, ...]
    log_probs: tuple[float, ...]
    states: tuple[Array, ...]
    alphas: tuple[Array, ...]
    contexts: tuple[Array, ...]
    readouts: tuple[Array, ...]
    score: float

    @classmethod
    def from_records(cls, records: Sequence[StepRecord]) -> DecoderTrace:
        score = 0.0
        for record in records:
            score += record.log_prob
        return cls(
            tokens=tuple(r.token for r in records),
            log_probs=tuple(r.log_prob for r in records),
            states=tuple(r.state for r in records),
            alphas=tuple(r.alpha for r in records),
            contexts=tuple(r.context for r in records),
            readouts=tuple(r.readout for r in records),
            score=score,
        )

    @property
    def final_state(self) -> Array:
        return self.states[-1]

    def __len__(self) -> int:
        return len(self.tokens)


def _param(p: Params, name: str) -> Tensor:
    try:
        return p[name]
    except KeyError:
        msg = f"the model has no parameter '{name}' (trained without this memory or variant?)"
        raise ModelConfigError(msg) from None


def encode(x: Sequence[int], p: Params, dropout: Dropout = NO_DROPOUT) -> Annotations:
    emb = EmbeddingTable(p["emb.src"])
    states = birnn([dropout(emb(token)) for token in x], GruParams.bind(p, "enc.fwd"), GruParams.bind(p, "enc.bwd"))
    rows = ad.stack(states.rows)
    keys = ad.matmul(rows, ad.transpose(p["att.W_ae"]))
    return Annotations(rows, keys, states.final, states.backward[0])


def initial_state(ann: Annotations, p: Params) -> DecoderState:
    s0 = ad.tanh(AffineParams.bind(p, "init")(ann.init_source))
    if "dec.l2.w" in p:
        return DecoderState((s0, ad.constant(np.zeros(s0.shape))))
    return DecoderState((s0,))


def attend(s_prev: Tensor, ann: Annotations, p: Params) -> tuple[Tensor, Tensor]:
    scores = ad.matmul(ad.tanh(ad.add(ann.keys, ad.matmul(p["att.W_at"], s_prev))), p["att.v"])
    alpha = ad.softmax(scores)
    return alpha, ad.matmul(alpha, ann.rows)


def check_variant(variant: Variant, mem_ctx: MemoryContext | None) -> None:
    ctx = mem_ctx or MemoryContext()
    if variant is Variant.NONE and not ctx.empty:
        msg = "variant 'none' takes no memory context"
        raise ModelConfigError(msg)
    if variant in (Variant.MEM_TO_CONTEXT, Variant.MEM_TO_OUTPUT):
        if ctx.source is None and ctx.target is None:
            msg = f"variant '{variant.value}' needs a source or target memory context"
            raise ModelConfigError(msg)
        if ctx.previous is not None:
            msg = f"variant '{variant.value}' does not take a previous-sentence state"
            raise ModelConfigError(msg)
    if variant is Variant.PREV_TRG and (ctx.previous is None or ctx.target is not None):
        msg = "variant 'prev-trg' needs the previous-sentence state and takes no target memory context"
        raise ModelConfigError(msg)


def decode_step(
    state: DecoderState,
    y_prev: int,
    ann: Annotations,
    p: Params,
    mem_ctx: MemoryContext | None = None,
    variant: Variant = Variant.NONE,
    dropout: Dropout = NO_DROPOUT,
) -> StepOutput:
    check_variant(variant, mem_ctx)
    ctx = mem_ctx or MemoryContext()
    alpha, c = attend(state.s, ann, p)
    e = dropout(ad.lookup(p["emb.tgt"], y_prev))

    terms = [ad.matmul(p["dec.W_s"], state.s), ad.matmul(p["dec.W_sj"], e), ad.matmul(p["dec.W_sc"], c)]
    if variant in (Variant.MEM_TO_CONTEXT, Variant.PREV_TRG) and ctx.source is not None:
        terms.append(ad.matmul(_param(p, "dec.W_sm"), ctx.source))
    if variant is Variant.MEM_TO_CONTEXT and ctx.target is not None:
        terms.append(ad.matmul(_param(p, "dec.W_st"), ctx.target))
    if variant is Variant.PREV_TRG and ctx.previous is not None:
        terms.append(ad.matmul(_param(p, "dec.W_sp"), ctx.previous))
    s = ad.tanh(ad.add(*terms))

    layers = (s,)
    if len(state.layers) == 2:
        layers = (s, gru_step(s, state.layers[1], GruParams.bind(p, "dec.l2")))
    readout = ad.tanh(ad.add(layers[-1], ad.matmul(p["dec.W_rc"], c), ad.matmul(p["dec.W_rj"], e)))

    logit_terms = [ad.matmul(p["dec.W_y"], dropout(readout)), p["dec.b_r"]]
    if variant is Variant.MEM_TO_OUTPUT:
        if ctx.source is not None:
            logit_terms.append(ad.matmul(_param(p, "dec.W_ym"), ctx.source))
        if ctx.target is not None:
            logit_terms.append(ad.matmul(_param(p, "dec.W_yt"), ctx.target))
    return StepOutput(DecoderState(layers), ad.add(*logit_terms), alpha, c, readout)


def _record(out: StepOutput, token: int, log_prob: float) -> StepRecord:
    return StepRecord(token, log_prob, out.state.top.value, out.alpha.value, out.context.value, out.readout.value)


class Forced(NamedTuple):
    loss: Tensor
    trace: DecoderTrace


def force(
    x: Sequence[int],
    y: Sequence[int],
    p: Params,
    variant: Variant = Variant.NONE,
    mem_ctx: MemoryContext | None = None,
    dropout: Dropout = NO_DROPOUT,
    ann: Annotations | None = None,
) -> Forced:
    """Teacher-forced pass over `y`; the loss is the summed token cross-entropy."""
    if not y:
        msg = "cannot score an empty target sentence"
        raise DataFormatError(msg)
    ann = ann if ann is not None else encode(x, p, dropout)
    state = initial_state(ann, p)
    y_prev = BOS_ID
    losses: list[Tensor] = []
    records: list[StepRecord] = []
    for token in y:
        out = decode_step(state, y_prev, ann, p, mem_ctx, variant, dropout)
        losses.append(ad.softmax_cross_entropy(out.logits, token))
        records.append(_record(out, token, float(ad.log_softmax(out.logits.value)[token])))
        state, y_prev = out.state, token
    return Forced(ad.add(*losses), DecoderTrace.from_records(records))


def nll(
    x: Sequence[int],
    y: Sequence[int],
    p: Params,
    variant: Variant = Variant.NONE,
    mem_ctx: MemoryContext | None = None,
    dropout: Dropout = NO_DROPOUT,
    ann: Annotations | None = None,
) -> Tensor:
    """-sum_j log P(y_j | y_<j, x, context); `y` must end with the end token."""
    if y and y[-1] != EOS_ID:
        msg = "target sentence must end with the end-of-sentence token"
        raise DataFormatError(msg)
    return force(x, y, p, variant, mem_ctx, dropout, ann).loss


@dataclass(frozen=True)
class _Node:
    parent: _Node | None
    record: StepRecord | None
    state: DecoderState
    score: float
    length: int
    token: int

    def records(self) -> list[StepRecord]:
        records: list[StepRecord] = []
        node: _Node | None = self
        while node is not None and node.record is not None:
            records.append(node.record)
            node = node.parent
        return records[::-1]


def _root(ann: Annotations, p: Params) -> _Node:
    return _Node(None, None, initial_state(ann, p), 0.0, 0, BOS_ID)


def _finish(node: _Node) -> tuple[list[int], DecoderTrace]:
    trace = DecoderTrace.from_records(node.records())
    return list(trace.tokens), trace


def greedy_decode(
    x: Sequence[int],
    p: Params,
    max_len: int,
    variant: Variant = Variant.NONE,
    mem_ctx: MemoryContext | None = None,
    ann: Annotations | None = None,
) -> tuple[list[int], DecoderTrace]:
    return _finish(_greedy(ann if ann is not None else encode(x, p), p, max_len, variant, mem_ctx))


def _greedy(ann: Annotations, p: Params, max_len: int, variant: Variant, mem_ctx: MemoryContext | None) -> _Node:
    node = _root(ann, p)
    while node.length < max_len and (node.length == 0 or node.token != EOS_ID):
        out = decode_step(node.state, node.token, ann, p, mem_ctx, variant)
        log_probs = ad.log_softmax(out.logits.value)
        masked = log_probs.copy()
        masked[BOS_ID] = -np.inf
        token = int(np.argmax(masked))
        log_prob = float(log_probs[token])
        node = _Node(node, _record(out, token, log_prob), out.state, node.score + log_prob, node.length + 1, token)
    return node


def beam_decode(
    x: Sequence[int],
    p: Params,
    beam_size: int,
    max_len: int,
    variant: Variant = Variant.NONE,
    mem_ctx: MemoryContext | None = None,
    ann: Annotations | None = None,
) -> tuple[list[int], DecoderTrace]:
    """
    Beam search scored by the unnormalized sum of token log-probs.

    Hypotheses end with the end token or at `max_len` tokens; the start token is
    never emitted. The greedy hypothesis is always among the finished ones.
    """
    if beam_size < 1 or max_len < 1:
        msg = f"beam_size and max_len must be at least 1, got {beam_size} and {max_len}"
        raise ValueError(msg)
    ann = ann if ann is not None else encode(x, p)
    live = [_root(ann, p)]
    finished: list[_Node] = []
    for _ in range(max_len):
        outputs: list[StepOutput] = []
        candidates: list[tuple[float, int, int, float]] = []
        for index, node in enumerate(live):
            out = decode_step(node.state, node.token, ann, p, mem_ctx, variant)
            outputs.append(out)
            log_probs = ad.log_softmax(out.logits.value)
            for token, log_prob in enumerate(log_probs.tolist()):
                if token != BOS_ID:
                    candidates.append((node.score + log_prob, index, token, log_prob))
        candidates.sort(key=lambda candidate: -candidate[0])

        parents, live = live, []
        for score, index, token, log_prob in candidates[:beam_size]:
            parent, out = parents[index], outputs[index]
            child = _Node(parent, _record(out, token, log_prob), out.state, score, parent.length + 1, token)
            (finished if token == EOS_ID or child.length == max_len else live).append(child)
        if not live:
            break
        # Scores never increase, so no live hypothesis can overtake the best finished one
        if finished and max(node.score for node in finished) >= live[0].score:
            break

    if beam_size > 1:
        finished.append(_greedy(ann, p, max_len, variant, mem_ctx))
    return _finish(max(finished, key=lambda node: node.score))


def exhaustive_decode(
    x: Sequence[int],
    p: Params,
    max_len: int,
    variant: Variant = Variant.NONE,
    mem_ctx: MemoryContext | None = None,
    ann: Annotations | None = None,
) -> tuple[list[int], DecoderTrace]:
    """Exact argmax over every hypothesis of at most `max_len` tokens (branch and bound)."""
    if max_len < 1:
        msg = f"max_len must be at least 1, got {max_len}"
        raise ValueError(msg)
    ann = ann if ann is not None else encode(x, p)
    best: list[_Node] = []

    def visit(node: _Node) -> None:
        out = decode_step(node.state, node.token, ann, p, mem_ctx, variant)
        log_probs = ad.log_softmax(out.logits.value)
        for token, log_prob in enumerate(log_probs.tolist()):
            score = node.score + log_prob
            if token == BOS_ID or (best and score <= best[0].score):
                continue
            child = _Node(node, _record(out, token, log_prob), out.state, score, node.length + 1, token)
            if token == EOS_ID or child.length == max_len:
                best[:] = [child]
            else:
                visit(child)

    visit(_root(ann, p))
    return _finish(best[0])


def score_tokens(
    x: Sequence[int],
    tokens: Sequence[int],
    p: Params,
    variant: Variant = Variant.NONE,
    mem_ctx: MemoryContext | None = None,
    ann: Annotations | None = None,
) -> DecoderTrace:
    """Trace of a fixed hypothesis, with the same arithmetic as the search functions."""
    ann = ann if ann is not None else encode(x, p)
    node = _root(ann, p)
    for token in tokens:
        out = decode_step(node.state, node.token, ann, p, mem_ctx, variant)
        log_prob = float(ad.log_softmax(out.logits.value)[token])
        node = _Node(node, _record(out, token, log_prob), out.state, node.score + log_prob, node.length + 1, token)
    return DecoderTrace.from_records(node.records())
