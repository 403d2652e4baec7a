from __future__ import annotations

from enum import Enum
from typing import TYPE_CHECKING

from docmem_nmt.corpus import EOS_ID, encode_documents, load_documents, read_translations
from docmem_nmt.errors import DataFormatError, UsageError
from docmem_nmt.metrics import (
    BleuMetric,
    ambiguous_accuracy,
    bleu,
    bleu1,
    bootstrap_significance,
    consistency_score,
    perplexity,
)
from docmem_nmt.trainer import memory_translations
from docmem_nmt.workspace import STAGE1_KIND, STAGE2_KIND, model_from_checkpoint, read_checkpoint

if TYPE_CHECKING:
    from collections.abc import Sequence
    from pathlib import Path

    from docmem_nmt import Printer
    from docmem_nmt.config import RunConfig
    from docmem_nmt.corpus import Vocabulary
    from docmem_nmt.metrics import BleuResult

REPORT_FILENAME = "report.tsv"
NOT_APPLICABLE = "n/a"

Documents = list[list[list[str]]]


class MetricName(str, Enum):
    BLEU = "bleu"
    BLEU1 = "bleu1"
    PPL = "ppl"
    CONSISTENCY = "consistency"
    SIGNIFICANCE = "significance"
    AMBIGUOUS = "ambiguous"


def _flatten(documents: Documents) -> list[list[str]]:
    return [sentence for doc in documents for sentence in doc]


def _fraction(value: float | None) -> str:
    return NOT_APPLICABLE if value is None else f"{value:.6f}"


def _terminated(ids: list[int]) -> list[int]:
    return ids if ids and ids[-1] == EOS_ID else [*ids, EOS_ID]


def _bleu_rows(result: BleuResult, name: str) -> list[tuple[str, str]]:
    rows = [(name, f"{100 * result.score:.2f}")]
    rows += [(f"precision-{n}", f"{p:.6f}") for n, p in enumerate(result.precisions, start=1)]
    rows += [
        ("brevity-penalty", f"{result.brevity_penalty:.6f}"),
        ("sys-len", str(result.sys_len)),
        ("ref-len", str(result.ref_len)),
        ("smoothing", result.smoothing),
    ]
    return rows


class EvaluateTranslations:
    def __init__(
        self,
        printer: Printer,
        config: RunConfig,
        metric: MetricName,
        out_dir: Path,
        hypothesis: Path | None = None,
        reference: Path | None = None,
        source: Path | None = None,
        hypothesis_b: Path | None = None,
        checkpoint: Path | None = None,
        vocabularies: tuple[Vocabulary, Vocabulary] | None = None,
        resamples: int = 1000,
    ) -> None:
        self.printer = printer
        self.config = config
        self.metric = metric
        self.out_dir = out_dir
        self.hypothesis = hypothesis
        self.reference = reference
        self.source = source
        self.hypothesis_b = hypothesis_b
        self.checkpoint = checkpoint
        self.vocabularies = vocabularies
        self.resamples = resamples

    def execute(self) -> list[Path]:
        rows = self.compute()
        self.printer.report(rows, title=f"{self.metric.value} report")
        out = self.out_dir / REPORT_FILENAME
        out.write_text("".join(f"{key}\t{value}\n" for key, value in rows), encoding="utf-8")
        return [out]

    def compute(self) -> list[tuple[str, str]]:
        if self.metric is MetricName.PPL:
            return self._perplexity()
        if self.metric is MetricName.CONSISTENCY:
            hyp, src = self._read(self.hypothesis, "--hyp"), self._read(self.source, "--src")
            self._check_documents(hyp, src, "source")
            return [("consistency", _fraction(consistency_score(hyp, src)))]

        hyp, ref = self._read(self.hypothesis, "--hyp"), self._read(self.reference, "--ref")
        self._check_documents(hyp, ref, "reference")
        if self.metric is MetricName.BLEU:
            return _bleu_rows(bleu(_flatten(hyp), _flatten(ref)), "bleu")
        if self.metric is MetricName.BLEU1:
            return _bleu_rows(bleu1(_flatten(hyp), _flatten(ref)), "bleu1")
        if self.metric is MetricName.AMBIGUOUS:
            src = self._read(self.source, "--src")
            self._check_documents(hyp, src, "source")
            accuracy = ambiguous_accuracy(_flatten(hyp), _flatten(src), _flatten(ref))
            return [("ambiguous-accuracy", _fraction(accuracy))]
        return self._significance(hyp, ref)

    def _significance(self, hyp: Documents, ref: Documents) -> list[tuple[str, str]]:
        hyp_b = self._read(self.hypothesis_b, "--hyp-b")
        self._check_documents(hyp_b, ref, "reference")
        result = bootstrap_significance(
            BleuMetric(),
            _flatten(hyp),
            _flatten(hyp_b),
            _flatten(ref),
            n_resamples=self.resamples,
            seed=self.config.train.seed,
        )
        return [
            ("bleu-a", f"{100 * result.score_a:.2f}"),
            ("bleu-b", f"{100 * result.score_b:.2f}"),
            ("delta", f"{100 * result.delta:+.2f}"),
            ("p-value", f"{result.p_value:.4f}"),
            ("resamples", str(result.n_resamples)),
            ("significant", "yes" if result.significant() else "no"),
        ]

    def _perplexity(self) -> list[tuple[str, str]]:
        if self.checkpoint is None or self.vocabularies is None:
            msg = "ppl needs --checkpoint and vocabularies"
            raise UsageError(msg)
        if self.source is None or self.reference is None:
            msg = "ppl needs --src and --ref"
            raise UsageError(msg)
        model = model_from_checkpoint(read_checkpoint(self.checkpoint, STAGE1_KIND, STAGE2_KIND))
        src_vocab, tgt_vocab = self.vocabularies
        documents = load_documents(self.source, self.reference, min_sentences=1)
        encoded = encode_documents(documents, src_vocab, tgt_vocab)
        translations = None
        if self.hypothesis is not None:
            hyp = self._read(self.hypothesis, "--hyp")
            self._check_documents(hyp, [doc.source for doc in documents], "source")
            translations = [[_terminated(tgt_vocab.encode(sentence)) for sentence in doc] for doc in hyp]
        elif model.needs_target:
            translations = memory_translations(encoded, model, self.config.train)
        value = perplexity(model, encoded, translations)
        return [("perplexity", f"{value:.6f}"), ("documents", str(len(encoded)))]

    @staticmethod
    def _read(path: Path | None, flag: str) -> Documents:
        if path is None:
            msg = f"this metric needs {flag}"
            raise UsageError(msg)
        return read_translations(path)

    @staticmethod
    def _check_documents(candidates: Sequence[Sequence[object]], other: Sequence[Sequence[object]], what: str) -> None:
        if len(candidates) != len(other) or any(len(a) != len(b) for a, b in zip(candidates, other)):
            msg = f"translations do not have the document structure of the {what} file"
            raise DataFormatError(msg)
