"""
Document corpora, vocabularies and the synthetic topic-marker corpus.

On disk a corpus side is UTF-8 text with one whitespace-tokenized sentence per
line and a blank line between documents; the two sides must have their blank
lines in the same places.
"""

from __future__ import annotations

from collections import Counter
from collections.abc import Iterable, Iterator, Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from docmem_nmt.config import SyntheticSpec
from docmem_nmt.errors import DataFormatError

__all__ = [
    "BOS",
    "BOS_ID",
    "EOS",
    "EOS_ID",
    "UNK",
    "UNK_ID",
    "Document",
    "EncodedDocument",
    "SyntheticSpec",
    "Vocabulary",
    "build_vocab",
    "encode_documents",
    "gen_synthetic",
    "load_documents",
    "write_documents",
]

UNK, BOS, EOS = "<unk>", "<s>", "</s>"
UNK_ID, BOS_ID, EOS_ID = 0, 1, 2
RESERVED = (UNK, BOS, EOS)

TOPICS = ("A", "B")
AMBIGUOUS_PREFIX = "amb"


class Vocabulary:
    """Token ids with the reserved block first; unknown tokens map to `UNK_ID`."""

    def __init__(self, tokens: Sequence[str], counts: dict[str, int] | None = None) -> None:
        self.id_to_token: list[str] = [*RESERVED, *tokens]
        self.token_to_id: dict[str, int] = {token: idx for idx, token in enumerate(self.id_to_token)}
        if len(self.token_to_id) != len(self.id_to_token):
            msg = "vocabulary contains duplicate tokens"
            raise DataFormatError(msg)
        self.counts: dict[str, int] = dict(counts or {})

    def __len__(self) -> int:
        return len(self.id_to_token)

    def __contains__(self, token: object) -> bool:
        return token in self.token_to_id

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Vocabulary) and self.id_to_token == other.id_to_token

    def encode(self, tokens: Iterable[str]) -> list[int]:
        return [self.token_to_id.get(token, UNK_ID) for token in tokens]

    def decode(self, ids: Iterable[int]) -> list[str]:
        """Tokens up to (excluding) the first end token; start tokens are dropped."""
        tokens: list[str] = []
        for idx in ids:
            if idx == EOS_ID:
                break
            if idx != BOS_ID:
                tokens.append(self.id_to_token[idx])
        return tokens

    def save(self, path: Path) -> None:
        lines = [f"{token}\t{self.counts.get(token, 0)}\n" for token in self.id_to_token[len(RESERVED) :]]
        path.write_text("".join(lines), encoding="utf-8")

    @classmethod
    def load(cls, path: Path) -> Vocabulary:
        tokens: list[str] = []
        counts: dict[str, int] = {}
        with path.open(encoding="utf-8") as file:
            for lineno, line in enumerate(file, start=1):
                token, sep, count = line.rstrip("\n").partition("\t")
                if not sep or not token or not count.isdigit():
                    msg = f"expected 'token<TAB>count', got {line.rstrip()!r}"
                    raise DataFormatError(msg, path=str(path), line=lineno)
                if token in RESERVED:
                    msg = f"reserved token {token!r} must not appear in a vocabulary file"
                    raise DataFormatError(msg, path=str(path), line=lineno)
                tokens.append(token)
                counts[token] = int(count)
        return cls(tokens, counts)


def build_vocab(sentences: Iterable[Sequence[str]], min_freq: int = 5) -> Vocabulary:
    """Keep tokens seen at least `min_freq` times, by descending count then lexicographically."""
    counts: Counter[str] = Counter()
    seen = False
    for sentence in sentences:
        seen = True
        counts.update(sentence)
    if not seen:
        msg = "cannot build a vocabulary from an empty corpus"
        raise DataFormatError(msg)
    kept = sorted(
        (token for token, count in counts.items() if count >= min_freq and token not in RESERVED),
        key=lambda token: (-counts[token], token),
    )
    return Vocabulary(kept, {token: counts[token] for token in kept})


@dataclass
class Document:
    source: list[list[str]] = field(default_factory=list)
    target: list[list[str]] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.source)


@dataclass
class EncodedDocument:
    """Token ids; every target sentence ends with `EOS_ID`."""

    source: list[list[int]]
    target: list[list[int]]

    def __len__(self) -> int:
        return len(self.source)


def encode_documents(documents: Iterable[Document], src: Vocabulary, tgt: Vocabulary) -> list[EncodedDocument]:
    return [
        EncodedDocument(
            [src.encode(sentence) for sentence in doc.source],
            [[*tgt.encode(sentence), EOS_ID] for sentence in doc.target],
        )
        for doc in documents
    ]


def _tokenize(line: str, lowercase: bool) -> list[str]:
    return (line.lower() if lowercase else line).split()


def _read_lines(path: Path) -> list[str]:
    with path.open(encoding="utf-8") as file:
        return [line.rstrip("\n") for line in file]


def load_documents(
    src_path: Path,
    tgt_path: Path,
    lowercase: bool = False,
    min_sentences: int = 2,
) -> list[Document]:
    """
    Load an aligned pair of document files.

    Documents with fewer than `min_sentences` sentences are dropped. Trailing
    blank lines are tolerated.
    """
    src_lines = _read_lines(src_path)
    tgt_lines = _read_lines(tgt_path)
    while src_lines and not src_lines[-1].strip():
        src_lines.pop()
    while tgt_lines and not tgt_lines[-1].strip():
        tgt_lines.pop()

    documents: list[Document] = []
    current = Document([], [])
    for lineno, (src_line, tgt_line) in enumerate(zip(src_lines, tgt_lines), start=1):
        src_blank, tgt_blank = not src_line.strip(), not tgt_line.strip()
        if src_blank != tgt_blank:
            blank, other = (src_path, tgt_path) if src_blank else (tgt_path, src_path)
            msg = f"document boundary mismatch: blank in {blank.name} but not in {other.name}"
            raise DataFormatError(msg, path=str(src_path), line=lineno)
        if src_blank:
            if current.source:
                documents.append(current)
            current = Document([], [])
            continue
        current.source.append(_tokenize(src_line, lowercase))
        current.target.append(_tokenize(tgt_line, lowercase))
    if current.source:
        documents.append(current)

    if len(src_lines) != len(tgt_lines):
        msg = (
            f"{src_path.name} has {len(src_lines)} lines but {tgt_path.name} has {len(tgt_lines)}"
            " (differing document structure)"
        )
        raise DataFormatError(msg, path=str(src_path), line=min(len(src_lines), len(tgt_lines)) + 1)
    return [doc for doc in documents if len(doc) >= min_sentences]


def _format_side(side: Iterable[Sequence[Sequence[str]]]) -> str:
    return "\n".join("".join(" ".join(sentence) + "\n" for sentence in doc) for doc in side)


def write_documents(documents: Sequence[Document], src_path: Path, tgt_path: Path) -> None:
    src_path.write_text(_format_side(doc.source for doc in documents), encoding="utf-8")
    tgt_path.write_text(_format_side(doc.target for doc in documents), encoding="utf-8")


def write_translations(translations: Sequence[Sequence[Sequence[str]]], path: Path) -> None:
    """An empty translation is written as the end token; a blank line would split its document."""
    path.write_text(_format_side([[sentence or [EOS] for sentence in doc] for doc in translations]), encoding="utf-8")


def read_translations(path: Path) -> list[list[list[str]]]:
    """One side of a document file, as token lists per document."""
    docs: list[list[list[str]]] = [[]]
    for line in _read_lines(path):
        if line.strip():
            docs[-1].append(line.split())
        elif docs[-1]:
            docs.append([])
    return [doc for doc in docs if doc]


def content_token(idx: int) -> str:
    return f"w{idx}"


def content_translation(idx: int) -> str:
    return f"c{idx}"


def marker_token(topic: str) -> str:
    return f"topic_{topic}"


def ambiguous_token(idx: int) -> str:
    return f"{AMBIGUOUS_PREFIX}{idx}"


def ambiguous_translation(idx: int, topic: str) -> str:
    return f"{AMBIGUOUS_PREFIX}{idx}_{topic}"


def is_ambiguous(token: str) -> bool:
    return token.startswith(AMBIGUOUS_PREFIX) and token[len(AMBIGUOUS_PREFIX) :].isdigit()


def gen_synthetic(spec: SyntheticSpec) -> list[Document]:
    """
    Generate the topic-marker corpus.

    Each document draws a topic; its first sentence starts with the topic marker
    (translated to itself). Content tokens translate one-to-one. Later sentences
    carry, with probability `amb_prob`, one ambiguous token whose translation
    depends on the topic only. The result is a pure function of `spec`.
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    documents: list[Document] = []
    for _ in range(spec.n_docs):
        topic = TOPICS[int(rng.integers(len(TOPICS)))]
        doc = Document([], [])
        for index in range(spec.sentences):
            length = int(rng.integers(spec.min_len, spec.max_len + 1))
            words = rng.integers(spec.content_vocab, size=length)
            source = [content_token(int(w)) for w in words]
            target = [content_translation(int(w)) for w in words]
            if index == 0:
                source[0] = target[0] = marker_token(topic)
            elif rng.random() < spec.amb_prob:
                position = int(rng.integers(length))
                kind = int(rng.integers(spec.ambiguous))
                source[position] = ambiguous_token(kind)
                target[position] = ambiguous_translation(kind, topic)
            doc.source.append(source)
            doc.target.append(target)
        documents.append(doc)
    return documents


def iter_sentences(documents: Iterable[Document], side: str = "source") -> Iterator[list[str]]:
    for doc in documents:
        yield from getattr(doc, side)
