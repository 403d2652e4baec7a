"""
On-disk layout shared by the commands.

A data directory holds `<split>.src` / `<split>.tgt` document files and,
once built, the `vocab.src` / `vocab.tgt` vocabularies. Every command writes its
artifacts and a run manifest into its own output directory.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import TYPE_CHECKING, Any, Final

from docmem_nmt.checkpoint import Checkpoint, load_checkpoint
from docmem_nmt.config import Memories, ModelConfig, section_from_dict
from docmem_nmt.corpus import Document, EncodedDocument, Vocabulary, encode_documents, load_documents
from docmem_nmt.docnmt import DocModel
from docmem_nmt.errors import DataFormatError
from docmem_nmt.trainer import TrainingData

if TYPE_CHECKING:
    from collections.abc import Mapping
    from pathlib import Path

    from docmem_nmt.config import DataConfig

SPLITS: Final = ("train", "dev", "test")
SOURCE_SUFFIX: Final = ".src"
TARGET_SUFFIX: Final = ".tgt"
SOURCE_VOCAB: Final = "vocab.src"
TARGET_VOCAB: Final = "vocab.tgt"

LM_KIND: Final = "lm"
STAGE1_KIND: Final = "stage1"
STAGE2_KIND: Final = "stage2"
CHECKPOINT_KINDS: Final = (LM_KIND, STAGE1_KIND, STAGE2_KIND)


def checkpoint_name(kind: str) -> str:
    return f"{kind}.ckpt"


def log_name(kind: str) -> str:
    return f"{kind}.log"


def load_vocabularies(directory: Path) -> tuple[Vocabulary, Vocabulary]:
    return Vocabulary.load(directory / SOURCE_VOCAB), Vocabulary.load(directory / TARGET_VOCAB)


@dataclass
class DataDir:
    root: Path
    settings: DataConfig
    vocab_dir: Path | None = None

    def source(self, split: str) -> Path:
        return self.root / f"{split}{SOURCE_SUFFIX}"

    def target(self, split: str) -> Path:
        return self.root / f"{split}{TARGET_SUFFIX}"

    def has(self, split: str) -> bool:
        return self.source(split).exists() and self.target(split).exists()

    def documents(self, split: str) -> list[Document]:
        if not self.has(split):
            msg = f"missing {split} split: expected {self.source(split).name} and {self.target(split).name}"
            raise DataFormatError(msg, path=str(self.root))
        return load_documents(
            self.source(split),
            self.target(split),
            lowercase=self.settings.lowercase,
            min_sentences=self.settings.min_sentences,
        )

    @property
    def vocab_paths(self) -> tuple[Path, Path]:
        root = self.vocab_dir or self.root
        return root / SOURCE_VOCAB, root / TARGET_VOCAB

    @cached_property
    def vocabularies(self) -> tuple[Vocabulary, Vocabulary]:
        return load_vocabularies(self.vocab_dir or self.root)

    def encoded(self, split: str) -> list[EncodedDocument]:
        src, tgt = self.vocabularies
        return encode_documents(self.documents(split), src, tgt)

    def training_data(self) -> TrainingData:
        """Encoded train split plus the dev split when present (it drives model selection)."""
        src, tgt = self.vocabularies
        dev = self.encoded("dev") if self.has("dev") else []
        return TrainingData(self.encoded("train"), dev, len(src), len(tgt))

    def input_paths(self, *splits: str) -> list[Path]:
        paths = [path for split in splits for path in (self.source(split), self.target(split)) if path.exists()]
        return [*paths, *(path for path in self.vocab_paths if path.exists())]


def read_checkpoint(path: Path, *kinds: str) -> Checkpoint:
    checkpoint = load_checkpoint(path)
    if kinds and checkpoint.kind not in kinds:
        msg = f"expected a {' or '.join(kinds)} checkpoint, got '{checkpoint.kind}'"
        raise DataFormatError(msg, path=str(path))
    return checkpoint


def model_from_checkpoint(checkpoint: Checkpoint, overrides: Mapping[str, Any] | None = None) -> DocModel:
    """
    Rebuild a model from a stage-1 or stage-2 checkpoint.

    The configuration echoed in the checkpoint is the base; `overrides` (by config
    key) replace model settings such as `memories` or `variant`. A stage-1 model
    has no memory parameters, so it defaults to no memories.
    """
    echo: dict[str, Any] = dict(checkpoint.config)
    if checkpoint.kind == STAGE1_KIND:
        echo |= {"memories": Memories.NONE.value, "prev-trg": "false"}
    echo |= {key: value for key, value in (overrides or {}).items() if value is not None}
    cfg = section_from_dict(ModelConfig, echo)
    return DocModel(checkpoint.params, cfg)


def sentence_model(checkpoint: Checkpoint) -> DocModel:
    return model_from_checkpoint(checkpoint).sentence_level()
