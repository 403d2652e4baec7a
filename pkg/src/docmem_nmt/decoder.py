"""
Document decoding by block coordinate descent.

Pass 0 translates every sentence with the sentence-level model. Each further
pass visits the sentences in ascending order; before each visit the target
memory is rebuilt from the current translations, then sentence t is translated
again with the document model while all other translations stay fixed.
"""

from __future__ import annotations

from collections.abc import Sequence
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from functools import partial

from docmem_nmt.config import SearchConfig, SearchKind
from docmem_nmt.docnmt import DocModel, prepare_document, score_in_context, translate_in_context
from docmem_nmt.memory import build_target_memory
from docmem_nmt.snmt import DecoderTrace, beam_decode, exhaustive_decode

AUDIT_HEADER = "doc\tpass\tsentence\tchanged\told_score\tnew_score"


@dataclass(frozen=True)
class AuditRecord:
    """One coordinate update; scores are log-probabilities under the document model."""

    doc_id: int
    pass_index: int
    sentence: int
    changed: bool
    old_score: float
    new_score: float
    old_tokens: tuple[int, ...] = ()
    new_tokens: tuple[int, ...] = ()

    def to_row(self) -> str:
        return (
            f"{self.doc_id}\t{self.pass_index}\t{self.sentence}\t{int(self.changed)}"
            f"\t{self.old_score:.6f}\t{self.new_score:.6f}"
        )


@dataclass
class BcdResult:
    translations: list[list[int]]
    traces: list[DecoderTrace]
    audit: list[AuditRecord] = field(default_factory=list)

    @property
    def replacements(self) -> list[AuditRecord]:
        return [record for record in self.audit if record.changed]


def _sentence_level(
    sources: Sequence[Sequence[int]],
    model: DocModel,
    search: SearchConfig,
) -> tuple[list[list[int]], list[DecoderTrace]]:
    view = model.view()
    translations: list[list[int]] = []
    traces: list[DecoderTrace] = []
    for x in sources:
        if search.search is SearchKind.EXHAUSTIVE:
            tokens, trace = exhaustive_decode(x, view, search.max_len)
        else:
            tokens, trace = beam_decode(x, view, search.beam, search.max_len)
        translations.append(tokens)
        traces.append(trace)
    return translations, traces


def bcd_decode(
    sources: Sequence[Sequence[int]],
    model: DocModel,
    search: SearchConfig,
    passes: int | None = None,
    base: DocModel | None = None,
    doc_id: int = 0,
) -> BcdResult:
    """
    Translate one document.

    `base` provides the pass-0 translations; by default it is `model` used as a
    sentence-level model (zero memory readings). `passes` defaults to `search.passes`.
    """
    passes = search.passes if passes is None else passes
    if passes < 0:
        msg = f"passes must not be negative, got {passes}"
        raise ValueError(msg)
    translations, traces = _sentence_level(sources, base or model.sentence_level(), search)
    result = BcdResult(translations, traces)
    if passes == 0:
        return result

    view = model.view()
    ctx = prepare_document(sources, model, view)
    for pass_index in range(1, passes + 1):
        for t, x in enumerate(sources):
            if model.needs_target:
                ctx.target_memory = build_target_memory(result.traces)
            old = score_in_context(x, result.translations[t], t, ctx, model, view)
            tokens, trace = translate_in_context(x, t, ctx, model, view, search)
            changed = tokens != result.translations[t]
            if changed:
                result.translations[t] = tokens
                result.traces[t] = trace
            result.audit.append(
                AuditRecord(doc_id, pass_index, t, changed, old.score, trace.score, old.tokens, tuple(tokens))
            )
    return result


def _decode_one(
    item: tuple[int, Sequence[Sequence[int]]],
    model: DocModel,
    search: SearchConfig,
    passes: int,
    base: DocModel | None,
) -> BcdResult:
    doc_id, sources = item
    return bcd_decode(sources, model, search, passes, base, doc_id)


def decode_documents(
    documents: Sequence[Sequence[Sequence[int]]],
    model: DocModel,
    search: SearchConfig,
    passes: int | None = None,
    base: DocModel | None = None,
) -> list[BcdResult]:
    """Decode documents independently, over `search.jobs` worker processes; results keep input order."""
    passes = search.passes if passes is None else passes
    work = partial(_decode_one, model=model, search=replace(search, jobs=1), passes=passes, base=base)
    items = list(enumerate(documents))
    if search.jobs <= 1 or len(items) <= 1:
        return [work(item) for item in items]
    with ProcessPoolExecutor(max_workers=search.jobs) as executor:
        return list(executor.map(work, items))
