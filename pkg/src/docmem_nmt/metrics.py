"""
Evaluation metrics.

BLEU is corpus-level and computed from summed sufficient statistics
(hypothesis length, reference length, clipped matches and totals per n-gram
order), without smoothing. The same statistics drive paired bootstrap resampling.
"""

from __future__ import annotations

import math
from collections import Counter
from collections.abc import Callable, Iterable, Sequence
from dataclasses import dataclass
from typing import NamedTuple, Protocol

import numpy as np

from docmem_nmt.autodiff import Array
from docmem_nmt.corpus import EncodedDocument, is_ambiguous
from docmem_nmt.docnmt import DocModel, doc_nll

Sentence = Sequence[str]


class BleuResult(NamedTuple):
    score: float
    precisions: tuple[float, ...]
    brevity_penalty: float
    sys_len: int
    ref_len: int
    smoothing: str = "none"


def _ngrams(tokens: Sentence, n: int) -> Counter[tuple[str, ...]]:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def bleu_stats(candidate: Sentence, reference: Sentence, max_n: int = 4) -> Array:
    """[sys_len, ref_len, matches_1, totals_1, ..., matches_N, totals_N] for one sentence pair."""
    if not reference:
        msg = "empty reference sentence"
        raise ValueError(msg)
    stats = np.zeros(2 + 2 * max_n)
    stats[0], stats[1] = len(candidate), len(reference)
    for n in range(1, max_n + 1):
        cand, ref = _ngrams(candidate, n), _ngrams(reference, n)
        stats[2 * n] = sum(min(count, ref[gram]) for gram, count in cand.items())
        stats[2 * n + 1] = max(len(candidate) - n + 1, 0)
    return stats


def bleu_from_stats(stats: Array, max_n: int = 4) -> BleuResult:
    sys_len, ref_len = int(stats[0]), int(stats[1])
    matches, totals = stats[2::2], stats[3::2]
    precisions = tuple(float(m / t) if t > 0 else 0.0 for m, t in zip(matches, totals))
    if sys_len == 0:
        return BleuResult(0.0, precisions, 0.0, sys_len, ref_len)
    bp = 1.0 if sys_len > ref_len else math.exp(1.0 - ref_len / sys_len)
    if min(precisions) == 0.0:
        return BleuResult(0.0, precisions, bp, sys_len, ref_len)
    score = bp * math.exp(sum(math.log(p) for p in precisions) / max_n)
    return BleuResult(score, precisions, bp, sys_len, ref_len)


def _check_aligned(candidates: Sequence[object], references: Sequence[object]) -> None:
    if len(candidates) != len(references):
        msg = f"{len(candidates)} candidates for {len(references)} references"
        raise ValueError(msg)


def bleu(candidates: Sequence[Sentence], references: Sequence[Sentence], max_n: int = 4) -> BleuResult:
    """Corpus BLEU: geometric mean of clipped n-gram precisions times the brevity penalty."""
    _check_aligned(candidates, references)
    stats = np.zeros(2 + 2 * max_n)
    for candidate, reference in zip(candidates, references):
        stats += bleu_stats(candidate, reference, max_n)
    return bleu_from_stats(stats, max_n)


def bleu1(candidates: Sequence[Sentence], references: Sequence[Sentence]) -> BleuResult:
    return bleu(candidates, references, max_n=1)


def perplexity_from_nll(total_nll: float, tokens: int) -> float:
    if tokens <= 0:
        msg = "perplexity needs at least one target token"
        raise ValueError(msg)
    return math.exp(total_nll / tokens)


def perplexity(
    model: DocModel,
    docs: Sequence[EncodedDocument],
    translations: Sequence[Sequence[Sequence[int]]] | None = None,
) -> float:
    """exp(total NLL / target tokens), end tokens included; document models use their memories."""
    view = model.view()
    total, tokens = 0.0, 0
    for index, doc in enumerate(docs):
        doc_translations = translations[index] if translations is not None else None
        total += doc_nll(doc, doc_translations, model, view).item()
        tokens += sum(len(y) for y in doc.target)
    return perplexity_from_nll(total, tokens)


def aligned_position(index: int, source_len: int, candidate_len: int) -> int | None:
    """Candidate position at the same relative offset as source position `index`."""
    if candidate_len == 0:
        return None
    return index * candidate_len // source_len


def consistency_score(
    candidates: Sequence[Sequence[Sentence]],
    sources: Sequence[Sequence[Sentence]],
    token_filter: Callable[[str], bool] | None = None,
) -> float | None:
    """
    Fraction of repeated source token types rendered identically across a document.

    Both arguments are nested per document. A type counts when it occurs at least
    twice in a document; its rendering is the candidate token at the same relative
    position. Returns None when no type repeats.
    """
    _check_aligned(candidates, sources)
    consistent = repeated = 0
    for doc_candidates, doc_sources in zip(candidates, sources):
        _check_aligned(doc_candidates, doc_sources)
        renderings: dict[str, list[str | None]] = {}
        for candidate, source in zip(doc_candidates, doc_sources):
            for index, token in enumerate(source):
                if token_filter is not None and not token_filter(token):
                    continue
                position = aligned_position(index, len(source), len(candidate))
                renderings.setdefault(token, []).append(None if position is None else candidate[position])
        for rendered in renderings.values():
            if len(rendered) < 2:
                continue
            repeated += 1
            consistent += rendered[0] is not None and all(r == rendered[0] for r in rendered)
    return consistent / repeated if repeated else None


def ambiguous_accuracy(
    candidates: Iterable[Sentence],
    sources: Iterable[Sentence],
    references: Iterable[Sentence],
) -> float | None:
    """Share of ambiguous source tokens whose position-aligned candidate token matches the reference."""
    correct = total = 0
    for candidate, source, reference in zip(candidates, sources, references):
        for index, token in enumerate(source):
            if not is_ambiguous(token):
                continue
            total += 1
            position = aligned_position(index, len(source), len(candidate))
            ref_position = aligned_position(index, len(source), len(reference))
            if position is not None and ref_position is not None:
                correct += candidate[position] == reference[ref_position]
    return correct / total if total else None


class CorpusMetric(Protocol):
    def sentence_stats(self, candidate: Sentence, reference: Sentence) -> Array: ...

    def from_stats(self, stats: Array) -> float: ...


@dataclass(frozen=True)
class BleuMetric:
    max_n: int = 4

    def sentence_stats(self, candidate: Sentence, reference: Sentence) -> Array:
        return bleu_stats(candidate, reference, self.max_n)

    def from_stats(self, stats: Array) -> float:
        return bleu_from_stats(stats, self.max_n).score


class SignificanceResult(NamedTuple):
    score_a: float
    score_b: float
    p_value: float
    n_resamples: int

    @property
    def delta(self) -> float:
        return self.score_b - self.score_a

    def significant(self, alpha: float = 0.05) -> bool:
        return self.p_value < alpha


def bootstrap_significance(
    metric: CorpusMetric,
    system_a: Sequence[Sentence],
    system_b: Sequence[Sentence],
    references: Sequence[Sentence],
    n_resamples: int = 1000,
    seed: int = 1,
) -> SignificanceResult:
    """
    Paired bootstrap over sentence indices.

    p is the fraction of resamples in which system B does not beat system A.
    """
    if n_resamples < 1:
        msg = f"n_resamples must be at least 1, got {n_resamples}"
        raise ValueError(msg)
    _check_aligned(system_a, references)
    _check_aligned(system_b, references)
    if not references:
        msg = "cannot resample an empty corpus"
        raise ValueError(msg)
    stats_a = np.stack([metric.sentence_stats(c, r) for c, r in zip(system_a, references)])
    stats_b = np.stack([metric.sentence_stats(c, r) for c, r in zip(system_b, references)])
    size = len(references)
    rng = np.random.default_rng(seed)
    not_better = 0
    for _ in range(n_resamples):
        weights = np.bincount(rng.integers(0, size, size), minlength=size).astype(np.float64)
        not_better += metric.from_stats(weights @ stats_b) <= metric.from_stats(weights @ stats_a)
    return SignificanceResult(
        metric.from_stats(stats_a.sum(axis=0)),
        metric.from_stats(stats_b.sum(axis=0)),
        not_better / n_resamples,
        n_resamples,
    )
