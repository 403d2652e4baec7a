import numpy as np
import pytest

from docmem_nmt.config import Memories, SearchConfig, SearchKind, Variant
from docmem_nmt.corpus import EncodedDocument
from docmem_nmt.decoder import AuditRecord, bcd_decode, decode_documents
from docmem_nmt.docnmt import prepare_document, score_in_context
from docmem_nmt.memory import build_target_memory
from docmem_nmt.snmt import beam_decode

EXHAUSTIVE = SearchConfig(max_len=3, search=SearchKind.EXHAUSTIVE)


def test_zero_passes_is_sentence_level(model_factory, document: EncodedDocument) -> None:
    model = model_factory(Memories.BOTH, seed=1)
    search = SearchConfig(beam=3, max_len=5)

    result = bcd_decode(document.source, model, search, passes=0)

    view = model.view()
    assert result.translations == [beam_decode(x, view, 3, 5)[0] for x in document.source]
    assert result.audit == []


def test_sentence_level_model_never_changes(model_factory, document: EncodedDocument) -> None:
    model = model_factory(Memories.NONE, seed=2)

    result = bcd_decode(document.source, model, SearchConfig(beam=2, max_len=5), passes=2)

    assert result.replacements == []
    assert len(result.audit) == 2 * len(document)


def test_fresh_document_model_keeps_pass_zero(model_factory, document: EncodedDocument) -> None:
    model = model_factory(Memories.BOTH, Variant.MEM_TO_OUTPUT, seed=3, scale=None)
    search = SearchConfig(beam=3, max_len=5)

    result = bcd_decode(document.source, model, search, passes=1)

    assert result.translations == bcd_decode(document.source, model, search, passes=0).translations
    assert result.replacements == []


@pytest.mark.parametrize("variant", [Variant.MEM_TO_CONTEXT, Variant.MEM_TO_OUTPUT], ids=lambda v: v.value)
@pytest.mark.parametrize("seed", range(4))
def test_exhaustive_updates_never_lower_the_conditional(model_factory, variant: Variant, seed: int) -> None:
    model = model_factory(Memories.BOTH, variant, src_vocab=6, tgt_vocab=6, seed=seed, scale=1.5)
    rng = np.random.default_rng(seed)
    sources = [[int(t) for t in rng.integers(3, 6, size=2)] for _ in range(3)]

    result = bcd_decode(sources, model, EXHAUSTIVE, passes=2)

    assert len(result.audit) == 6
    for record in result.audit:
        assert record.new_score >= record.old_score - 1e-12
        assert record.changed == (record.new_tokens != record.old_tokens)


@pytest.mark.slow
def test_exhaustive_updates_never_lower_the_conditional_on_many_documents(model_factory) -> None:
    variants = [Variant.MEM_TO_CONTEXT, Variant.MEM_TO_OUTPUT]
    memories = [Memories.SRC, Memories.TRG, Memories.BOTH]
    for seed in range(100):
        rng = np.random.default_rng(1000 + seed)
        model = model_factory(
            memories[seed % 3], variants[seed % 2], src_vocab=6, tgt_vocab=6, seed=1000 + seed, scale=1.5
        )
        sources = [[int(t) for t in rng.integers(3, 6, size=rng.integers(1, 3))] for _ in range(rng.integers(2, 4))]

        result = bcd_decode(sources, model, EXHAUSTIVE, passes=2)

        assert len(result.audit) == 2 * len(sources)
        for record in result.audit:
            assert record.new_score >= record.old_score - 1e-12, seed


def test_audit_scores_are_conditionals(model_factory) -> None:
    model = model_factory(Memories.BOTH, src_vocab=6, tgt_vocab=6, seed=5, scale=1.5)
    sources = [[3, 4], [5], [4, 4]]

    result = bcd_decode(sources, model, EXHAUSTIVE, passes=1)

    first = result.audit[0]
    start = bcd_decode(sources, model, EXHAUSTIVE, passes=0)
    view = model.view()
    ctx = prepare_document(sources, model, view)
    ctx.target_memory = build_target_memory(start.traces)
    assert first.old_score == score_in_context(sources[0], start.translations[0], 0, ctx, model, view).score
    assert first.old_tokens == tuple(start.translations[0])


@pytest.mark.parametrize("seed", range(3))
def test_fixpoint_is_stable(model_factory, seed: int) -> None:
    model = model_factory(Memories.BOTH, src_vocab=6, tgt_vocab=6, seed=10 + seed, scale=1.5)
    sources = [[3, 4], [5, 3], [4]]

    result = bcd_decode(sources, model, EXHAUSTIVE, passes=4)

    changed = [any(r.changed for r in result.audit if r.pass_index == p) for p in range(1, 5)]
    for earlier, later in zip(changed, changed[1:]):
        assert earlier or not later


def test_replacements_only_touch_their_cell(model_factory) -> None:
    model = model_factory(Memories.TRG, src_vocab=6, tgt_vocab=6, seed=6, scale=1.5)
    sources = [[3, 4], [5], [4, 4]]
    start = bcd_decode(sources, model, EXHAUSTIVE, passes=0)
    before = build_target_memory(start.traces).cells.value

    result = bcd_decode(sources, model, EXHAUSTIVE, passes=1)

    after = build_target_memory(result.traces).cells.value
    for t in range(len(sources)):
        if t not in {r.sentence for r in result.replacements}:
            np.testing.assert_array_equal(after[t], before[t])


def test_default_passes_come_from_search(model_factory, document: EncodedDocument) -> None:
    model = model_factory(Memories.SRC, seed=7)

    result = bcd_decode(document.source, model, SearchConfig(beam=2, max_len=4, passes=2))

    assert {r.pass_index for r in result.audit} == {1, 2}


def test_negative_passes_are_rejected(model_factory, document: EncodedDocument) -> None:
    with pytest.raises(ValueError, match="passes"):
        bcd_decode(document.source, model_factory(), SearchConfig(), passes=-1)


def test_base_model_provides_pass_zero(model_factory, document: EncodedDocument) -> None:
    model = model_factory(Memories.BOTH, seed=8)
    base = model_factory(Memories.NONE, seed=9)

    result = bcd_decode(document.source, model, SearchConfig(beam=2, max_len=5), passes=0, base=base)

    view = base.view()
    assert result.translations == [beam_decode(x, view, 2, 5)[0] for x in document.source]


def test_audit_row() -> None:
    record = AuditRecord(3, 1, 2, True, -4.5, -1.25, (4,), (5,))

    assert record.to_row() == "3\t1\t2\t1\t-4.500000\t-1.250000"


def test_decode_documents_keeps_order(model_factory, document: EncodedDocument) -> None:
    model = model_factory(Memories.BOTH, seed=11)
    docs = [document.source, document.source[:2], document.source[1:]]
    search = SearchConfig(beam=2, max_len=4)

    results = decode_documents(docs, model, search, passes=1)

    assert [r.audit[0].doc_id for r in results] == [0, 1, 2]
    assert [r.translations for r in results] == [bcd_decode(d, model, search, 1).translations for d in docs]


def test_decode_documents_in_worker_processes(model_factory, document: EncodedDocument) -> None:
    model = model_factory(Memories.BOTH, seed=12)
    docs = [document.source, document.source[::-1]]

    sequential = decode_documents(docs, model, SearchConfig(beam=2, max_len=4), passes=1)
    parallel = decode_documents(docs, model, SearchConfig(beam=2, max_len=4, jobs=2), passes=1)

    assert [r.translations for r in parallel] == [r.translations for r in sequential]
    assert [r.audit for r in parallel] == [r.audit for r in sequential]
