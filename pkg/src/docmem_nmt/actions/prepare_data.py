from __future__ import annotations

from dataclasses import replace
from typing import TYPE_CHECKING

from docmem_nmt.corpus import build_vocab, gen_synthetic, iter_sentences, write_documents
from docmem_nmt.workspace import SOURCE_SUFFIX, SOURCE_VOCAB, SPLITS, TARGET_SUFFIX, TARGET_VOCAB, DataDir

if TYPE_CHECKING:
    from pathlib import Path

    from docmem_nmt import Printer
    from docmem_nmt.config import RunConfig


class GenerateSyntheticCorpus:
    """Write train/dev/test splits of the topic-marker corpus; held-out splits get a tenth of the documents."""

    def __init__(self, printer: Printer, config: RunConfig, out_dir: Path) -> None:
        self.printer = printer
        self.config = config
        self.out_dir = out_dir

    def execute(self) -> list[Path]:
        spec = self.config.synthetic
        written: list[Path] = []
        for offset, split in enumerate(SPLITS):
            n_docs = spec.n_docs if split == "train" else max(1, spec.n_docs // 10)
            documents = gen_synthetic(replace(spec, n_docs=n_docs, seed=spec.seed + offset))
            src, tgt = self.out_dir / f"{split}{SOURCE_SUFFIX}", self.out_dir / f"{split}{TARGET_SUFFIX}"
            write_documents(documents, src, tgt)
            self.printer.debug(f"Wrote {len(documents)} {split} documents to {src.name} and {tgt.name}")
            written += [src, tgt]
        self.printer.success(
            f"Synthetic corpus written to {self.out_dir} "
            f"({spec.n_docs} training documents of {spec.sentences} sentences, seed {spec.seed})"
        )
        return written


class BuildVocabularies:
    def __init__(self, printer: Printer, config: RunConfig, data: DataDir, out_dir: Path) -> None:
        self.printer = printer
        self.config = config
        self.data = data
        self.out_dir = out_dir

    def execute(self) -> list[Path]:
        documents = self.data.documents("train")
        min_freq = self.config.data.min_freq
        written: list[Path] = []
        for side, name in (("source", SOURCE_VOCAB), ("target", TARGET_VOCAB)):
            vocab = build_vocab(iter_sentences(documents, side), min_freq=min_freq)
            path = self.out_dir / name
            vocab.save(path)
            self.printer.info(f"{side.capitalize()} vocabulary: {len(vocab)} types (min frequency {min_freq})")
            written.append(path)
        return written
