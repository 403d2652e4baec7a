from __future__ import annotations

import math
from dataclasses import replace
from typing import TYPE_CHECKING

import numpy as np
import pytest

from docmem_nmt.autodiff import Tape
from docmem_nmt.config import Memories, RunConfig, TargetMemorySource, TrainConfig
from docmem_nmt.corpus import EOS_ID, EncodedDocument
from docmem_nmt.docnmt import DocModel
from docmem_nmt.errors import DataFormatError
from docmem_nmt.memory import LmDims, SentenceLm
from docmem_nmt.metrics import perplexity
from docmem_nmt.params import ParamSet, gradients
from docmem_nmt.snmt import SnmtDims, init_snmt, nll
from docmem_nmt.trainer import (
    EpochRecord,
    Stream,
    TrainingData,
    TrainingLog,
    lr_schedule,
    memory_translations,
    pretrain_sentence_lm,
    rng_for,
    sgd_step,
    train_stage1,
    train_stage2,
)

if TYPE_CHECKING:
    from pathlib import Path

    from pytest_mock import MockerFixture


@pytest.mark.parametrize(
    "stage,epoch,expected",
    [
        pytest.param(1, 1, 0.1, id="stage1-first"),
        pytest.param(1, 4, 0.1, id="stage1-before-decay"),
        pytest.param(1, 5, 0.05, id="stage1-first-decay"),
        pytest.param(1, 6, 0.025, id="stage1-second-decay"),
        pytest.param(2, 1, 0.08, id="stage2-first"),
        pytest.param(2, 2, 0.072, id="stage2-first-decay"),
    ],
)
def test_lr_schedule(stage: int, epoch: int, expected: float) -> None:
    assert lr_schedule(stage, epoch) == pytest.approx(expected, rel=1e-12)


def test_lr_schedule_closed_form() -> None:
    for epoch in range(1, 16):
        assert lr_schedule(1, epoch) == 0.1 * 0.5 ** max(0, epoch - 4)
        assert lr_schedule(2, epoch) == 0.08 * 0.9 ** max(0, epoch - 1)


@pytest.mark.parametrize("stage,epoch", [(3, 1), (1, 0)], ids=["unknown-stage", "epoch-zero"])
def test_lr_schedule_rejects(stage: int, epoch: int) -> None:
    with pytest.raises(ValueError):
        lr_schedule(stage, epoch)


@pytest.fixture
def params() -> ParamSet:
    return ParamSet({"w": np.array([1.0]), "lm.w": np.array([1.0])}, frozen=["lm.w"])


def test_sgd_step(params: ParamSet) -> None:
    assert sgd_step(params, {"w": np.array([2.0]), "lm.w": np.array([2.0])}, lr=0.1)

    assert params["w"][0] == pytest.approx(0.8)
    assert params["lm.w"][0] == 1.0


def test_sgd_step_zero_learning_rate(params: ParamSet) -> None:
    sgd_step(params, {"w": np.array([2.0])}, lr=0.0)

    assert params["w"][0] == 1.0


def test_sgd_step_clips_global_norm() -> None:
    params = ParamSet({"a": np.zeros(1), "b": np.zeros(1)})

    sgd_step(params, {"a": np.array([3.0]), "b": np.array([4.0])}, lr=1.0, clip_norm=1.0)

    np.testing.assert_allclose([params["a"][0], params["b"][0]], [-0.6, -0.8])


def test_sgd_step_rejects_non_finite(params: ParamSet, mocker: MockerFixture) -> None:
    printer = mocker.Mock()

    applied = sgd_step(params, {"w": np.array([np.nan])}, lr=0.1, printer=printer)

    assert not applied
    assert params["w"][0] == 1.0
    printer.warning.assert_called_once()
    assert "non-finite gradient for w" in printer.warning.call_args.args[0]


def test_sgd_step_unknown_parameter(params: ParamSet) -> None:
    with pytest.raises(KeyError):
        sgd_step(params, {"v": np.array([1.0])}, lr=0.1)


def test_sgd_step_decreases_loss() -> None:
    dims = SnmtDims(src_vocab=6, tgt_vocab=6, embed=4, hidden=4, align=4)
    params = init_snmt(dims, np.random.default_rng(0))
    x, y = [3, 4, 5], [4, 3, EOS_ID]
    tape = Tape()
    view = params.bind(tape)
    before = nll(x, y, view)

    sgd_step(params, gradients(view, tape.backward(before)), lr=0.01)

    assert nll(x, y, params.bind()).item() < before.item()


def test_rng_streams_are_seeded_and_distinct() -> None:
    first = rng_for(3, Stream.INIT).random(4)

    np.testing.assert_array_equal(first, rng_for(3, Stream.INIT).random(4))
    assert not np.allclose(first, rng_for(3, Stream.SHUFFLE).random(4))
    assert not np.allclose(first, rng_for(4, Stream.INIT).random(4))


def test_training_log(tmp_path: Path, mocker: MockerFixture) -> None:
    printer = mocker.Mock()
    log = TrainingLog()
    dev = EpochRecord("stage1", 1, "dev", 12.5, 0.1, 2.0)
    log.add(dev, printer)
    log.add(EpochRecord("stage1", 1, "train", 10.0, 0.1, 2.0))

    log.write(tmp_path / "stage1.log")

    assert (tmp_path / "stage1.log").read_text(encoding="utf-8").splitlines() == [
        "stage\tepoch\tsplit\tperplexity\tlr\tseconds",
        "stage1\t1\tdev\t12.500000\t0.1\t2.000",
        "stage1\t1\ttrain\t10.000000\t0.1\t2.000",
    ]
    assert log.perplexities("stage1", "dev") == [12.5]
    printer.epoch.assert_called_once_with(dev)


def lm_sentences(data: TrainingData) -> list[list[int]]:
    return [x for doc in data.train for x in doc.source]


def test_untrained_lm_perplexity_is_vocab_size(training_data: TrainingData) -> None:
    dims = LmDims(training_data.src_vocab, 4, 3)

    result = pretrain_sentence_lm(lm_sentences(training_data), dims, TrainConfig(lm_epochs=0))

    assert result.perplexities == [pytest.approx(training_data.src_vocab, rel=1e-12)]
    assert result.lm.frozen


def test_lm_pretraining_lowers_perplexity_deterministically(training_data: TrainingData) -> None:
    dims = LmDims(training_data.src_vocab, 4, 3)
    cfg = TrainConfig(lm_epochs=3, batch_size=4)

    first = pretrain_sentence_lm(lm_sentences(training_data), dims, cfg)
    second = pretrain_sentence_lm(lm_sentences(training_data), dims, cfg)

    assert first.perplexities == second.perplexities
    assert all(later <= earlier for earlier, later in zip(first.perplexities, first.perplexities[1:]))
    assert [r.epoch for r in first.log.records] == [0, 1, 2, 3]


def test_lm_pretraining_rejects_empty_corpus() -> None:
    with pytest.raises(DataFormatError):
        pretrain_sentence_lm([[], []], LmDims(8, 4, 3), TrainConfig())


def sentence_model(params: ParamSet, cfg: RunConfig) -> DocModel:
    return DocModel(params, replace(cfg.model, memories=Memories.NONE))


def test_stage1_selects_best_dev_epoch(training_data: TrainingData, run_config: RunConfig) -> None:
    result = train_stage1(training_data, run_config)

    dev = result.log.perplexities("stage1", "dev")
    assert len(dev) == 2
    assert len(result.log.perplexities("stage1", "train")) == 2
    assert dev[result.best_epoch - 1] == min(dev)
    assert perplexity(sentence_model(result.params, run_config), training_data.dev) == pytest.approx(min(dev))
    assert min(dev) <= dev[0]


@pytest.mark.parametrize("batch_size,lr", [(1, 0.025), (4, 0.1)], ids=["batch-1", "batch-4"])
def test_stage1_batch_sizes(training_data: TrainingData, run_config: RunConfig, batch_size: int, lr: float) -> None:
    cfg = replace(run_config, train=replace(run_config.train, batch_size=batch_size, stage1_lr=lr))

    result = train_stage1(training_data, cfg)

    assert all(math.isfinite(ppl) for ppl in result.log.perplexities("stage1", "train"))


def test_stage1_without_dev_keeps_last_epoch(training_data: TrainingData, run_config: RunConfig) -> None:
    result = train_stage1(replace(training_data, dev=[]), run_config)

    assert result.best_epoch == run_config.train.stage1_epochs


def test_stage1_is_deterministic(training_data: TrainingData, run_config: RunConfig) -> None:
    assert train_stage1(training_data, run_config).params.equals(train_stage1(training_data, run_config).params)


def test_stage1_rejects_empty_corpus(run_config: RunConfig) -> None:
    with pytest.raises(DataFormatError):
        train_stage1(TrainingData([], [], 8, 8), run_config)


@pytest.fixture
def lm(training_data: TrainingData) -> SentenceLm:
    dims = LmDims(training_data.src_vocab, 4, 3)
    return pretrain_sentence_lm(lm_sentences(training_data), dims, TrainConfig(lm_epochs=1)).lm


@pytest.fixture
def stage1(training_data: TrainingData, run_config: RunConfig) -> ParamSet:
    return train_stage1(training_data, run_config).params


def test_stage2_warm_start_matches_stage1(
    training_data: TrainingData, run_config: RunConfig, lm: SentenceLm, stage1: ParamSet
) -> None:
    result = train_stage2(training_data, stage1, lm, run_config)

    warm = result.log.perplexities("stage2", "train")[0]
    assert warm == pytest.approx(perplexity(sentence_model(stage1, run_config), training_data.train), rel=1e-9)
    assert len(result.log.perplexities("stage2", "dev")) == run_config.train.stage2_epochs + 1


def test_stage2_keeps_the_language_model_frozen(
    training_data: TrainingData, run_config: RunConfig, lm: SentenceLm, stage1: ParamSet
) -> None:
    snapshot = lm.params.copy()

    cfg = replace(run_config, train=replace(run_config.train, select_best=False))

    result = train_stage2(training_data, stage1, lm, cfg)

    for name in snapshot:
        np.testing.assert_array_equal(result.params[name], snapshot[name])
    assert not result.params.subset("dec.").equals(stage1.subset("dec."))


def test_stage2_is_deterministic(
    training_data: TrainingData, run_config: RunConfig, lm: SentenceLm, stage1: ParamSet
) -> None:
    first = train_stage2(training_data, stage1, lm, run_config)
    second = train_stage2(training_data, stage1, lm, run_config)

    assert first.params.equals(second.params)


@pytest.mark.parametrize(
    "source,expected_gold",
    [(TargetMemorySource.GOLD, True), (TargetMemorySource.GENERATED, False)],
    ids=["gold", "generated"],
)
def test_memory_translations(
    training_data: TrainingData, run_config: RunConfig, model_factory, source: TargetMemorySource, expected_gold: bool
) -> None:
    model = model_factory(Memories.BOTH, src_vocab=training_data.src_vocab, tgt_vocab=training_data.tgt_vocab)
    cfg = replace(run_config.train, target_memory=source)

    translations = memory_translations(training_data.train, model, cfg)

    assert translations is not None
    assert len(translations) == len(training_data.train)
    assert (translations == [doc.target for doc in training_data.train]) is expected_gold
    assert all(len(t) == len(doc) for t, doc in zip(translations, training_data.train))


def test_source_only_model_needs_no_translations(
    training_data: TrainingData, run_config: RunConfig, model_factory
) -> None:
    model = model_factory(Memories.SRC, src_vocab=training_data.src_vocab, tgt_vocab=training_data.tgt_vocab)

    assert memory_translations(training_data.train, model, run_config.train) is None


def test_stage2_rejects_empty_documents(run_config: RunConfig, stage1: ParamSet, lm: SentenceLm) -> None:
    data = TrainingData([EncodedDocument([], [])], [], 8, 8)

    with pytest.raises(DataFormatError, match="no sentences"):
        train_stage2(data, stage1, lm, run_config)


@pytest.mark.slow
def test_stage2_training_lowers_dev_nll(training_data: TrainingData, run_config: RunConfig, lm: SentenceLm) -> None:
    cfg = replace(run_config, train=replace(run_config.train, stage1_epochs=5, stage2_epochs=5))
    stage1 = train_stage1(training_data, cfg).params

    result = train_stage2(training_data, stage1, lm, cfg)

    dev = result.log.perplexities("stage2", "dev")
    assert min(dev[1:]) < dev[0]
