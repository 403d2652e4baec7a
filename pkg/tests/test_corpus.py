from pathlib import Path

import pytest

from docmem_nmt.config import SyntheticSpec
from docmem_nmt.corpus import (
    BOS_ID,
    EOS_ID,
    RESERVED,
    UNK_ID,
    Document,
    Vocabulary,
    build_vocab,
    encode_documents,
    gen_synthetic,
    is_ambiguous,
    iter_sentences,
    load_documents,
    read_translations,
    write_documents,
    write_translations,
)
from docmem_nmt.errors import DataFormatError


def write_pair(tmp_path: Path, src: str, tgt: str) -> tuple[Path, Path]:
    src_path, tgt_path = tmp_path / "train.src", tmp_path / "train.tgt"
    src_path.write_text(src, encoding="utf-8")
    tgt_path.write_text(tgt, encoding="utf-8")
    return src_path, tgt_path


@pytest.mark.parametrize(
    "count,kept",
    [
        pytest.param(4, False, id="below-threshold"),
        pytest.param(5, True, id="at-threshold"),
    ],
)
def test_build_vocab_frequency_threshold(count: int, kept: bool) -> None:
    vocab = build_vocab([["rare"]] * count + [["common"]] * 9, min_freq=5)

    assert ("rare" in vocab) is kept
    assert vocab.encode(["rare"]) == ([vocab.token_to_id["rare"]] if kept else [UNK_ID])


def test_build_vocab_all_rare_keeps_reserved_tokens() -> None:
    vocab = build_vocab([["a", "b"], ["c"]], min_freq=5)

    assert vocab.id_to_token == list(RESERVED)
    assert len(vocab) == 3


def test_build_vocab_orders_by_count_then_token() -> None:
    vocab = build_vocab([["b", "a", "c", "c"], ["a", "b", "c"]], min_freq=1)

    assert vocab.id_to_token[len(RESERVED) :] == ["c", "a", "b"]


def test_build_vocab_empty_corpus() -> None:
    with pytest.raises(DataFormatError):
        build_vocab([])


def test_vocabulary_decode_stops_at_end_token() -> None:
    vocab = Vocabulary(["x", "y"])

    assert vocab.decode([BOS_ID, 3, 4, EOS_ID, 3]) == ["x", "y"]


def test_vocabulary_save_load(tmp_path: Path) -> None:
    vocab = build_vocab([["x", "y", "y"]], min_freq=1)
    path = tmp_path / "vocab.tgt"

    vocab.save(path)
    loaded = Vocabulary.load(path)

    assert loaded == vocab
    assert loaded.counts == {"y": 2, "x": 1}


@pytest.mark.parametrize(
    "content,line",
    [
        pytest.param("x\t1\ny 2\n", 2, id="missing-tab"),
        pytest.param("x\t1\n</s>\t3\n", 2, id="reserved"),
        pytest.param("x\tmany\n", 1, id="bad-count"),
    ],
)
def test_vocabulary_load_rejects_malformed_lines(tmp_path: Path, content: str, line: int) -> None:
    path = tmp_path / "vocab.src"
    path.write_text(content, encoding="utf-8")

    with pytest.raises(DataFormatError) as exc:
        Vocabulary.load(path)

    assert exc.value.line == line


def test_load_documents_splits_on_blank_lines(tmp_path: Path) -> None:
    src, tgt = write_pair(tmp_path, "a b\nc\n\nd\ne f\ng\n\n", "A B\nC\n\nD\nE F\nG\n")

    docs = load_documents(src, tgt)

    assert [len(doc) for doc in docs] == [2, 3]
    assert docs[1].target[1] == ["E", "F"]


def test_load_documents_drops_short_documents(tmp_path: Path) -> None:
    src, tgt = write_pair(tmp_path, "a\n\nb\nc\n", "A\n\nB\nC\n")

    assert len(load_documents(src, tgt)) == 1
    assert len(load_documents(src, tgt, min_sentences=1)) == 2


def test_load_documents_lowercase(tmp_path: Path) -> None:
    src, tgt = write_pair(tmp_path, "Hello World\nx\n", "Bonjour\ny\n")

    docs = load_documents(src, tgt, lowercase=True)

    assert docs[0].source[0] == ["hello", "world"]
    assert docs[0].target[0] == ["bonjour"]


def test_load_documents_blank_line_mismatch_cites_line(tmp_path: Path) -> None:
    src, tgt = write_pair(tmp_path, "a\nb\n\nc\nd\ne\n\nf\n", "A\nB\n\nC\nD\nE\nX\nF\n")

    with pytest.raises(DataFormatError) as exc:
        load_documents(src, tgt)

    assert exc.value.line == 7
    assert ":7:" in str(exc.value)


def test_load_documents_length_mismatch(tmp_path: Path) -> None:
    src, tgt = write_pair(tmp_path, "a\nb\nc\n", "A\nB\n")

    with pytest.raises(DataFormatError, match="differing document structure"):
        load_documents(src, tgt)


def test_write_then_load_documents(tmp_path: Path) -> None:
    docs = [Document([["a", "b"], ["c"]], [["A"], ["B", "C"]]), Document([["d"], ["e"]], [["D"], ["E"]])]
    src, tgt = tmp_path / "x.src", tmp_path / "x.tgt"

    write_documents(docs, src, tgt)

    assert src.read_text(encoding="utf-8") == "a b\nc\n\nd\ne\n"
    assert load_documents(src, tgt) == docs


def test_read_translations(tmp_path: Path) -> None:
    path = tmp_path / "translations.txt"
    write_translations([[["a", "b"], ["c"]], [["d"]]], path)

    assert read_translations(path) == [[["a", "b"], ["c"]], [["d"]]]


def test_empty_translation_keeps_document_structure(tmp_path: Path) -> None:
    path = tmp_path / "translations.txt"
    write_translations([[["a"], [], ["b"]], [[]]], path)

    assert read_translations(path) == [[["a"], ["</s>"], ["b"]], [["</s>"]]]


def test_encode_documents_appends_end_token() -> None:
    src, tgt = Vocabulary(["a"]), Vocabulary(["A"])

    (encoded,) = encode_documents([Document([["a", "zz"]], [["A"]])], src, tgt)

    assert encoded.source == [[3, UNK_ID]]
    assert encoded.target == [[3, EOS_ID]]


def test_iter_sentences() -> None:
    docs = [Document([["a"], ["b"]], [["A"], ["B"]]), Document([["c"]], [["C"]])]

    assert list(iter_sentences(docs)) == [["a"], ["b"], ["c"]]
    assert list(iter_sentences(docs, "target")) == [["A"], ["B"], ["C"]]


def test_gen_synthetic_is_deterministic() -> None:
    spec = SyntheticSpec(n_docs=5, sentences=4, seed=11)

    assert gen_synthetic(spec) == gen_synthetic(SyntheticSpec(n_docs=5, sentences=4, seed=11))
    assert gen_synthetic(spec) != gen_synthetic(SyntheticSpec(n_docs=5, sentences=4, seed=12))


def test_gen_synthetic_structure() -> None:
    spec = SyntheticSpec(n_docs=20, sentences=5, amb_prob=1.0, seed=3)

    docs = gen_synthetic(spec)

    assert len(docs) == 20
    for doc in docs:
        assert len(doc) == 5
        marker = doc.source[0][0]
        assert marker.startswith("topic_")
        assert doc.target[0][0] == marker
        topic = marker.removeprefix("topic_")
        for src, tgt in zip(doc.source, doc.target):
            assert len(src) == len(tgt)
            assert spec.min_len <= len(src) <= spec.max_len
            for s, t in zip(src, tgt):
                if is_ambiguous(s):
                    assert t == f"{s}_{topic}"
                elif s.startswith("w"):
                    assert t == "c" + s[1:]
        assert all(any(is_ambiguous(token) for token in sentence) for sentence in doc.source[1:])


@pytest.mark.parametrize(
    "token,expected",
    [("amb3", True), ("amb3_A", False), ("w3", False), ("ambx", False)],
)
def test_is_ambiguous(token: str, expected: bool) -> None:
    assert is_ambiguous(token) is expected
