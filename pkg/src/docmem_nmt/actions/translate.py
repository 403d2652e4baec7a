from __future__ import annotations

from typing import TYPE_CHECKING, Any

from docmem_nmt import Replacement
from docmem_nmt.corpus import read_translations, write_translations
from docmem_nmt.decoder import AUDIT_HEADER, BcdResult, decode_documents
from docmem_nmt.errors import DataFormatError
from docmem_nmt.workspace import STAGE1_KIND, STAGE2_KIND, model_from_checkpoint, read_checkpoint, sentence_model

if TYPE_CHECKING:
    from collections.abc import Mapping, Sequence
    from pathlib import Path

    from docmem_nmt import Printer
    from docmem_nmt.config import SearchConfig
    from docmem_nmt.corpus import Vocabulary

TRANSLATIONS_FILENAME = "translations.txt"
AUDIT_FILENAME = "audit.tsv"


class TranslateDocuments:
    """
    Translate a source document file with block coordinate descent.

    Pass 0 is the sentence-level translation; every further pass re-translates
    each sentence in context. The audit keeps one row per visited sentence.
    """

    def __init__(
        self,
        printer: Printer,
        search: SearchConfig,
        checkpoint_path: Path,
        input_path: Path,
        vocabularies: tuple[Vocabulary, Vocabulary],
        out_dir: Path,
        model_overrides: Mapping[str, Any] | None = None,
        base_checkpoint_path: Path | None = None,
    ) -> None:
        self.printer = printer
        self.search = search
        self.checkpoint_path = checkpoint_path
        self.input_path = input_path
        self.src_vocab, self.tgt_vocab = vocabularies
        self.out_dir = out_dir
        self.model_overrides = model_overrides or {}
        self.base_checkpoint_path = base_checkpoint_path

    def execute(self) -> list[Path]:
        checkpoint = read_checkpoint(self.checkpoint_path, STAGE1_KIND, STAGE2_KIND)
        model = model_from_checkpoint(checkpoint, self.model_overrides)
        base = None
        if self.base_checkpoint_path is not None:
            base = sentence_model(read_checkpoint(self.base_checkpoint_path, STAGE1_KIND, STAGE2_KIND))

        documents = read_translations(self.input_path)
        if not documents:
            msg = "no documents to translate"
            raise DataFormatError(msg, path=str(self.input_path))
        sources = [[self.src_vocab.encode(sentence) for sentence in doc] for doc in documents]
        self.printer.info(
            f"Translating {len(sources)} documents with {model.variant.value} "
            f"({self.search.search.value} search, {self.search.passes} coordinate pass(es), {self.search.jobs} job(s))"
        )
        results = decode_documents(sources, model, self.search, base=base)

        translations = [[self.tgt_vocab.decode(tokens) for tokens in result.translations] for result in results]
        out = self.out_dir / TRANSLATIONS_FILENAME
        write_translations(translations, out)
        audit = self.out_dir / AUDIT_FILENAME
        self.write_audit(results, audit)
        self.report_replacements(results)
        self.printer.success(f"Translations written to {out}")
        return [out, audit]

    @staticmethod
    def write_audit(results: Sequence[BcdResult], path: Path) -> None:
        rows = [record.to_row() for result in results for record in result.audit]
        path.write_text("\n".join([AUDIT_HEADER, *rows]) + "\n", encoding="utf-8")

    def report_replacements(self, results: Sequence[BcdResult]) -> None:
        replacements = [
            Replacement(
                record.doc_id,
                record.pass_index,
                record.sentence,
                self.tgt_vocab.decode(record.old_tokens),
                self.tgt_vocab.decode(record.new_tokens),
                record.new_score - record.old_score,
            )
            for result in results
            for record in result.replacements
        ]
        visited = sum(len(result.audit) for result in results)
        if not replacements:
            self.printer.info(f"No sentence changed during {visited} coordinate update(s)")
            return
        self.printer.info(f"{len(replacements)} of {visited} coordinate update(s) changed a translation:")
        self.printer.replacements(replacements)
