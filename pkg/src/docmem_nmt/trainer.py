"""
Stage-wise SGD training.

1. Sentence LM pretraining on source sentences (its parameters are frozen afterwards).
2. Stage 1: the sentence-level model, i.e. the document model with zero memory readings.
3. Stage 2: every document-model parameter except the frozen LM, one document per
   minibatch, with the target memory filled from translations decoded once by the
   stage-1 model (or from gold translations as an ablation).

Every random draw comes from a generator derived from the configured seed and a
fixed purpose tag, so reruns are bit-identical.
"""

from __future__ import annotations

import math
import time
from collections.abc import Callable, Mapping, Sequence
from dataclasses import dataclass, field, replace
from enum import IntEnum
from pathlib import Path
from typing import TYPE_CHECKING

import numpy as np

from docmem_nmt import autodiff as ad
from docmem_nmt.autodiff import Array, Tape, Tensor
from docmem_nmt.config import Memories, RunConfig, TargetMemorySource, TrainConfig
from docmem_nmt.corpus import EncodedDocument
from docmem_nmt.docnmt import DocModel, doc_nll, dropout_plan, extend_for_documents
from docmem_nmt.errors import DataFormatError, NonFiniteError
from docmem_nmt.memory import LmDims, SentenceLm
from docmem_nmt.metrics import perplexity, perplexity_from_nll
from docmem_nmt.params import ParamSet, gradients
from docmem_nmt.snmt import SnmtDims, beam_decode, init_snmt, nll

if TYPE_CHECKING:
    from docmem_nmt import Printer


class Stream(IntEnum):
    """Purpose tags for the derived random generators."""

    INIT = 1
    SHUFFLE = 2
    DROPOUT = 3
    LM_INIT = 4
    LM_SHUFFLE = 5
    DOC_INIT = 6


def rng_for(seed: int, stream: Stream) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, int(stream)]))


def lr_schedule(stage: int, epoch: int, cfg: TrainConfig | None = None) -> float:
    """lr0 * decay ** max(0, epoch - decay_after), with 1-based epochs."""
    cfg = cfg or TrainConfig()
    if epoch < 1:
        msg = f"epochs are numbered from 1, got {epoch}"
        raise ValueError(msg)
    if stage == 1:
        lr0, decay, after = cfg.stage1_lr, cfg.stage1_decay, cfg.stage1_decay_after
    elif stage == 2:
        lr0, decay, after = cfg.stage2_lr, cfg.stage2_decay, cfg.stage2_decay_after
    else:
        msg = f"unknown training stage: {stage}"
        raise ValueError(msg)
    return lr0 * decay ** max(0, epoch - after)


def sgd_step(
    params: ParamSet,
    grads: Mapping[str, Array],
    lr: float,
    printer: Printer | None = None,
    clip_norm: float | None = None,
) -> bool:
    """
    Apply p <- p - lr * g in place to every trainable parameter in `grads`.

    Gradients are rescaled when their global norm exceeds `clip_norm`. A step
    with any non-finite gradient is rejected (and reported); returns whether the
    step was applied.
    """
    if lr < 0:
        msg = f"learning rate must not be negative, got {lr}"
        raise ValueError(msg)
    if unknown := grads.keys() - params.keys():
        msg = f"gradients for unknown parameters: {sorted(unknown)}"
        raise KeyError(msg)
    if bad := [name for name, grad in grads.items() if not np.all(np.isfinite(grad))]:
        if printer is not None:
            printer.warning(f"Rejected SGD step: non-finite gradient for {', '.join(sorted(bad))}")
        return False

    factor = 1.0
    if clip_norm is not None:
        norm = math.sqrt(sum(float(np.sum(grad * grad)) for grad in grads.values()))
        if norm > clip_norm:
            factor = clip_norm / norm
    for name, grad in grads.items():
        if name not in params.frozen:
            params.set(name, params[name] - lr * (factor * grad if factor != 1.0 else grad))
    return True


@dataclass(frozen=True)
class EpochRecord:
    stage: str
    epoch: int
    split: str
    perplexity: float
    lr: float
    seconds: float

    def to_row(self) -> str:
        return f"{self.stage}\t{self.epoch}\t{self.split}\t{self.perplexity:.6f}\t{self.lr:.6g}\t{self.seconds:.3f}"


LOG_HEADER = "stage\tepoch\tsplit\tperplexity\tlr\tseconds"


@dataclass
class TrainingLog:
    records: list[EpochRecord] = field(default_factory=list)

    def add(self, record: EpochRecord, printer: Printer | None = None) -> None:
        self.records.append(record)
        if printer is not None:
            printer.epoch(record)

    def perplexities(self, stage: str, split: str) -> list[float]:
        return [r.perplexity for r in self.records if r.stage == stage and r.split == split]

    def write(self, path: Path) -> None:
        path.write_text("\n".join([LOG_HEADER, *(r.to_row() for r in self.records)]) + "\n", encoding="utf-8")


@dataclass
class TrainingData:
    train: list[EncodedDocument]
    dev: list[EncodedDocument]
    src_vocab: int
    tgt_vocab: int

    def pairs(self) -> list[tuple[list[int], list[int]]]:
        return [(x, y) for doc in self.train for x, y in zip(doc.source, doc.target)]


@dataclass
class TrainResult:
    params: ParamSet
    log: TrainingLog
    best_epoch: int


@dataclass
class LmResult:
    lm: SentenceLm
    perplexities: list[float]
    log: TrainingLog


def _batches(order: Array, size: int) -> list[Array]:
    return [order[start : start + size] for start in range(0, len(order), size)]


def _check_finite(value: float, what: str) -> float:
    if not math.isfinite(value):
        raise NonFiniteError(what, f"value {value}")
    return value


def _minibatch_step(
    params: ParamSet,
    loss_fn: Callable[[Mapping[str, Tensor]], tuple[Tensor, int]],
    lr: float,
    clip_norm: float | None,
    printer: Printer | None,
) -> tuple[float, int]:
    """One SGD step on `loss / n`, where `loss_fn` returns the summed loss and n; returns (loss, n)."""
    tape = Tape()
    view = params.bind(tape)
    loss, count = loss_fn(view)
    grads = tape.backward(ad.scale(loss, 1.0 / count))
    sgd_step(params, gradients(view, grads), lr, printer, clip_norm)
    return _check_finite(loss.item(), "loss"), count


def lm_perplexity(lm: SentenceLm, sentences: Sequence[Sequence[int]]) -> float:
    view = lm.params.bind()
    total = sum(lm.loss(x, view).item() for x in sentences)
    return perplexity_from_nll(total, sum(2 * len(x) for x in sentences))


def pretrain_sentence_lm(
    sentences: Sequence[Sequence[int]],
    dims: LmDims,
    cfg: TrainConfig,
    printer: Printer | None = None,
) -> LmResult:
    """
    Train the sentence LM; `perplexities[e]` is the training perplexity after epoch e
    (index 0 is the untrained model, which is uniform over the vocabulary).
    """
    sentences = [x for x in sentences if x]
    if not sentences:
        msg = "cannot pretrain the sentence language model on an empty corpus"
        raise DataFormatError(msg)
    lm = SentenceLm.initialize(dims, rng_for(cfg.seed, Stream.LM_INIT))
    shuffle = rng_for(cfg.seed, Stream.LM_SHUFFLE)
    log = TrainingLog()
    trace = [lm_perplexity(lm, sentences)]
    log.add(EpochRecord("lm", 0, "train", trace[0], 0.0, 0.0), printer)
    for epoch in range(1, cfg.lm_epochs + 1):
        started = time.perf_counter()
        for batch in _batches(shuffle.permutation(len(sentences)), cfg.batch_size):

            def loss_fn(view: Mapping[str, Tensor], batch: Array = batch) -> tuple[Tensor, int]:
                return ad.add(*(lm.loss(sentences[i], view) for i in batch)), len(batch)

            _minibatch_step(lm.params, loss_fn, cfg.lm_lr, cfg.clip_norm, printer)
        trace.append(_check_finite(lm_perplexity(lm, sentences), "perplexity"))
        log.add(EpochRecord("lm", epoch, "train", trace[-1], cfg.lm_lr, time.perf_counter() - started), printer)
    return LmResult(lm.freeze(), trace, log)


def _select(
    best: tuple[float, int, ParamSet] | None,
    dev_ppl: float,
    epoch: int,
    params: ParamSet,
) -> tuple[float, int, ParamSet]:
    if best is None or dev_ppl < best[0]:
        return dev_ppl, epoch, params.copy()
    return best


def train_stage1(data: TrainingData, cfg: RunConfig, printer: Printer | None = None) -> TrainResult:
    """Sentence-level training; the result also initializes the document model."""
    pairs = data.pairs()
    if not pairs:
        msg = "cannot train on an empty corpus"
        raise DataFormatError(msg)
    train = cfg.train
    dims = SnmtDims.from_config(cfg.model, data.src_vocab, data.tgt_vocab)
    params = init_snmt(dims, rng_for(train.seed, Stream.INIT))
    model_cfg = replace(cfg.model, memories=Memories.NONE, prev_trg=False)
    model = DocModel(params, model_cfg)
    dropout = dropout_plan(model_cfg, train, rng_for(train.seed, Stream.DROPOUT), stage=1)
    shuffle = rng_for(train.seed, Stream.SHUFFLE)

    log = TrainingLog()
    best: tuple[float, int, ParamSet] | None = None
    for epoch in range(1, train.stage1_epochs + 1):
        started = time.perf_counter()
        lr = lr_schedule(1, epoch, train)
        total, tokens = 0.0, 0
        for batch in _batches(shuffle.permutation(len(pairs)), train.batch_size):

            def loss_fn(view: Mapping[str, Tensor], batch: Array = batch) -> tuple[Tensor, int]:
                losses = [nll(*pairs[i], view, dropout=dropout.nmt) for i in batch]
                return ad.add(*losses), len(batch)

            loss, _ = _minibatch_step(params, loss_fn, lr, train.clip_norm, printer)
            total += loss
            tokens += sum(len(pairs[i][1]) for i in batch)
        seconds = time.perf_counter() - started
        log.add(EpochRecord("stage1", epoch, "train", perplexity_from_nll(total, tokens), lr, seconds), printer)
        if data.dev:
            dev_ppl = _check_finite(perplexity(model, data.dev), "dev perplexity")
            log.add(EpochRecord("stage1", epoch, "dev", dev_ppl, lr, seconds), printer)
            best = _select(best, dev_ppl, epoch, params)
    return _finish("stage1", params, best, train, log, printer)


def _finish(
    stage: str,
    params: ParamSet,
    best: tuple[float, int, ParamSet] | None,
    cfg: TrainConfig,
    log: TrainingLog,
    printer: Printer | None,
) -> TrainResult:
    last_epoch = cfg.stage1_epochs if stage == "stage1" else cfg.stage2_epochs
    if cfg.select_best and best is not None:
        if printer is not None:
            printer.success(f"{stage}: selected epoch {best[1]} (dev perplexity {best[0]:.4f})")
        return TrainResult(best[2], log, best[1])
    return TrainResult(params, log, last_epoch)


def generate_translations(
    docs: Sequence[EncodedDocument],
    model: DocModel,
    beam: int,
    max_len: int,
) -> list[list[list[int]]]:
    """One sentence-level decoding pass over every document."""
    view = model.view()
    return [[beam_decode(x, view, beam, max_len)[0] for x in doc.source] for doc in docs]


def memory_translations(
    docs: Sequence[EncodedDocument],
    model: DocModel,
    cfg: TrainConfig,
) -> list[list[list[int]]] | None:
    if not model.needs_target:
        return None
    if cfg.target_memory is TargetMemorySource.GOLD:
        return [doc.target for doc in docs]
    return generate_translations(docs, model.sentence_level(), cfg.gen_beam, cfg.gen_max_len)


def train_stage2(
    data: TrainingData,
    stage1: ParamSet,
    lm: SentenceLm | None,
    cfg: RunConfig,
    printer: Printer | None = None,
) -> TrainResult:
    """Document-model training, warm-started from stage 1; epoch 0 logs the warm-start perplexity."""
    if not data.train:
        msg = "cannot train on an empty corpus"
        raise DataFormatError(msg)
    if empty := [i for i, doc in enumerate(data.train) if not len(doc)]:
        msg = f"document(s) {empty} have no sentences"
        raise DataFormatError(msg)
    train = cfg.train
    params = extend_for_documents(stage1, lm, cfg.model, rng_for(train.seed, Stream.DOC_INIT))
    model = DocModel(params, cfg.model)
    dropout = dropout_plan(cfg.model, train, rng_for(train.seed, Stream.DROPOUT), stage=2)
    shuffle = rng_for(train.seed, Stream.SHUFFLE)

    if printer is not None and model.needs_target:
        printer.info(f"Filling target memories from {train.target_memory.value} translations")
    train_translations = memory_translations(data.train, model, train)
    dev_translations = memory_translations(data.dev, model, train)

    log = TrainingLog()
    best: tuple[float, int, ParamSet] | None = None
    warm = perplexity(model, data.train, train_translations)
    log.add(EpochRecord("stage2", 0, "train", warm, 0.0, 0.0), printer)
    if data.dev:
        best = _select(None, perplexity(model, data.dev, dev_translations), 0, params)
        log.add(EpochRecord("stage2", 0, "dev", best[0], 0.0, 0.0), printer)

    for epoch in range(1, train.stage2_epochs + 1):
        started = time.perf_counter()
        lr = lr_schedule(2, epoch, train)
        total, tokens = 0.0, 0
        for index in shuffle.permutation(len(data.train)):
            doc = data.train[index]
            translations = train_translations[index] if train_translations is not None else None

            def loss_fn(
                view: Mapping[str, Tensor],
                doc: EncodedDocument = doc,
                translations: list[list[int]] | None = translations,
            ) -> tuple[Tensor, int]:
                return doc_nll(doc, translations, model, view, dropout), len(doc)

            loss, _ = _minibatch_step(params, loss_fn, lr, train.clip_norm, printer)
            total += loss
            tokens += sum(len(y) for y in doc.target)
        seconds = time.perf_counter() - started
        log.add(EpochRecord("stage2", epoch, "train", perplexity_from_nll(total, tokens), lr, seconds), printer)
        if data.dev:
            dev_ppl = _check_finite(perplexity(model, data.dev, dev_translations), "dev perplexity")
            log.add(EpochRecord("stage2", epoch, "dev", dev_ppl, lr, seconds), printer)
            best = _select(best, dev_ppl, epoch, params)
    return _finish("stage2", params, best, train, log, printer)
