"""
The topic-marker experiment run end to end with conf/synthetic.conf.

The sentence model can only guess the topic of an ambiguous word; a document model
reading both memories should recover it from the first sentence of the document.
"""

from pathlib import Path
from typing import NamedTuple

import numpy as np
import pytest

from docmem_nmt.cli import EXIT_OK, run
from docmem_nmt.corpus import (
    TOPICS,
    ambiguous_token,
    ambiguous_translation,
    content_token,
    content_translation,
    marker_token,
    read_translations,
)
from docmem_nmt.metrics import BleuMetric, ambiguous_accuracy, bleu, bootstrap_significance, consistency_score

CONFIG = Path(__file__).parents[1] / "conf" / "synthetic.conf"

pytestmark = pytest.mark.slow

Documents = list[list[list[str]]]


class Outputs(NamedTuple):
    source: Documents
    reference: Documents
    sentence_model: Documents
    both_memories: Documents


def flatten(documents: Documents) -> list[list[str]]:
    return [sentence for doc in documents for sentence in doc]


def cli(*argv: str) -> None:
    assert run([*argv, "--config", str(CONFIG), "-q"]) == EXIT_OK


@pytest.fixture(scope="module")
def work(tmp_path_factory: pytest.TempPathFactory) -> Path:
    work = tmp_path_factory.mktemp("reproduction")
    data, runs = str(work / "data"), str(work / "runs")

    cli("gen-synthetic", "--out", data)
    cli("build-vocab", "--data", data, "--out", data)
    cli("pretrain-lm", "--data", data, "--out", runs)
    cli("train-stage1", "--data", data, "--out", runs)
    cli("train-stage2", "--data", data, "--out", runs, "--stage1", f"{runs}/stage1.ckpt", "--lm", f"{runs}/lm.ckpt")
    return work


@pytest.fixture(scope="module")
def outputs(work: Path) -> Outputs:
    data = work / "data"
    translated = {}
    for checkpoint in ("stage1.ckpt", "stage2.ckpt"):
        out = work / checkpoint.removesuffix(".ckpt")
        argv = ["translate", "--checkpoint", str(work / "runs" / checkpoint), "--vocab", str(data)]
        cli(*argv, "--input", str(data / "test.src"), "--out", str(out))
        translated[checkpoint] = read_translations(out / "translations.txt")
    return Outputs(
        read_translations(data / "test.src"),
        read_translations(data / "test.tgt"),
        translated["stage1.ckpt"],
        translated["stage2.ckpt"],
    )


def accuracy(outputs: Outputs, candidates: Documents) -> float | None:
    return ambiguous_accuracy(flatten(candidates), flatten(outputs.source), flatten(outputs.reference))


def test_sentence_model_guesses_the_topic(outputs: Outputs) -> None:
    result = accuracy(outputs, outputs.sentence_model)

    assert result is not None
    assert 0.40 <= result <= 0.65


def test_both_memories_recover_the_topic(outputs: Outputs) -> None:
    result = accuracy(outputs, outputs.both_memories)

    assert result is not None
    assert result >= 0.75


def test_both_memories_gain_bleu_and_consistency(outputs: Outputs) -> None:
    reference = flatten(outputs.reference)
    baseline = bleu(flatten(outputs.sentence_model), reference).score
    improved = bleu(flatten(outputs.both_memories), reference).score

    assert 100 * (improved - baseline) >= 2.0
    assert consistency_score(outputs.both_memories, outputs.source) > consistency_score(
        outputs.sentence_model, outputs.source
    )


def test_bleu_gain_is_significant(outputs: Outputs) -> None:
    result = bootstrap_significance(
        BleuMetric(),
        flatten(outputs.sentence_model),
        flatten(outputs.both_memories),
        flatten(outputs.reference),
        seed=1,
    )

    assert result.delta > 0
    assert result.p_value < 0.05
    assert result.significant()


def marker_document(topic: str, kind: int) -> tuple[list[list[str]], list[list[str]]]:
    """A marker sentence, then three sentences with one ambiguous word each; only the marker depends on `topic`."""
    words = np.random.default_rng(kind).integers(40, size=(4, 5)).tolist()
    source = [[marker_token(topic), *(content_token(w) for w in words[0][1:])]]
    target = [[marker_token(topic), *(content_translation(w) for w in words[0][1:])]]
    for offset, row in enumerate(words[1:]):
        amb = (kind + offset) % 6
        source.append([content_token(row[0]), ambiguous_token(amb), *(content_token(w) for w in row[2:])])
        target.append(
            [content_translation(row[0]), ambiguous_translation(amb, topic), *(content_translation(w) for w in row[2:])]
        )
    return source, target


def test_topic_marker_decides_the_ambiguous_translation(work: Path) -> None:
    source, reference = zip(*(marker_document(topic, kind) for topic in TOPICS for kind in range(6)))
    path = work / "markers.src"
    path.write_text("\n\n".join("\n".join(map(" ".join, doc)) for doc in source) + "\n", encoding="utf-8")
    out = work / "markers"

    argv = ["translate", "--checkpoint", str(work / "runs" / "stage2.ckpt"), "--vocab", str(work / "data")]
    cli(*argv, "--input", str(path), "--out", str(out))

    candidates = read_translations(out / "translations.txt")
    result = ambiguous_accuracy(flatten(candidates), flatten(list(source)), flatten(list(reference)))
    assert result is not None
    assert result >= 0.75
