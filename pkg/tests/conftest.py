from __future__ import annotations

import os
from collections.abc import Callable
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from docmem_nmt.config import (
    DataConfig,
    Memories,
    ModelConfig,
    QueryRep,
    RunConfig,
    SearchConfig,
    SyntheticSpec,
    TrainConfig,
    Variant,
)
from docmem_nmt.corpus import (
    EOS_ID,
    RESERVED,
    EncodedDocument,
    build_vocab,
    encode_documents,
    gen_synthetic,
    iter_sentences,
    write_documents,
)
from docmem_nmt.docnmt import DocModel, extend_for_documents
from docmem_nmt.memory import LmDims, SentenceLm
from docmem_nmt.params import ParamSet
from docmem_nmt.snmt import SnmtDims, snmt_shapes
from docmem_nmt.trainer import TrainingData
from docmem_nmt.workspace import DataDir

SRC_VOCAB = 8
TGT_VOCAB = 8

ModelFactory = Callable[..., DocModel]


def pytest_collection_modifyitems(config: pytest.Config, items: list[pytest.Item]) -> None:
    if os.getenv("DOCMEM_NMT_SLOW"):
        return
    skip = pytest.mark.skip(reason="set DOCMEM_NMT_SLOW=1 to run")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


def _tiny_config(
    memories: Memories = Memories.NONE,
    variant: Variant = Variant.MEM_TO_CONTEXT,
    prev_trg: bool = False,
    query_rep: QueryRep = QueryRep.ENCODER,
    decoder_layers: int = 1,
) -> ModelConfig:
    return ModelConfig(
        preset="tiny",
        hidden=4,
        embed=4,
        align=4,
        lm_hidden=3,
        doc_hidden=4,
        decoder_layers=decoder_layers,
        variant=variant,
        memories=memories,
        prev_trg=prev_trg,
        query_rep=query_rep,
    )


@pytest.fixture
def model_factory() -> ModelFactory:
    """
    Build small document models.

    With `scale`, every trainable tensor (the zero-initialized injection matrices
    included) is redrawn uniformly in [-scale, scale].
    """

    def make(
        memories: Memories = Memories.NONE,
        variant: Variant = Variant.MEM_TO_CONTEXT,
        *,
        prev_trg: bool = False,
        query_rep: QueryRep = QueryRep.ENCODER,
        decoder_layers: int = 1,
        src_vocab: int = SRC_VOCAB,
        tgt_vocab: int = TGT_VOCAB,
        seed: int = 0,
        scale: float | None = 0.5,
    ) -> DocModel:
        cfg = _tiny_config(memories, variant, prev_trg, query_rep, decoder_layers)
        rng = np.random.default_rng(seed)
        stage1 = ParamSet.initialize(snmt_shapes(SnmtDims.from_config(cfg, src_vocab, tgt_vocab)), rng, scale=0.5)
        lm = SentenceLm.initialize(LmDims(src_vocab, cfg.embed, cfg.lm_hidden), rng)
        for name in lm.params:
            lm.params.set(name, rng.uniform(-0.5, 0.5, lm.params[name].shape))
        params = extend_for_documents(stage1, lm.freeze(), cfg, rng)
        if scale is not None:
            for name in params.trainable:
                params.set(name, rng.uniform(-scale, scale, params[name].shape))
        return DocModel(params, cfg)

    return make


def _random_sentence(rng: np.random.Generator, vocab: int, low: int = 1, high: int = 4) -> list[int]:
    return [int(t) for t in rng.integers(len(RESERVED), vocab, size=int(rng.integers(low, high + 1)))]


@pytest.fixture
def document() -> EncodedDocument:
    rng = np.random.default_rng(42)
    source = [_random_sentence(rng, SRC_VOCAB) for _ in range(3)]
    target = [[*_random_sentence(rng, TGT_VOCAB), EOS_ID] for _ in range(3)]
    return EncodedDocument(source, target)


@pytest.fixture
def synthetic_spec() -> SyntheticSpec:
    return SyntheticSpec(n_docs=6, sentences=3, min_len=2, max_len=4, content_vocab=6, ambiguous=2, seed=7)


@pytest.fixture
def training_data(synthetic_spec: SyntheticSpec) -> TrainingData:
    train = gen_synthetic(synthetic_spec)
    dev = gen_synthetic(replace(synthetic_spec, n_docs=2, seed=synthetic_spec.seed + 1))
    src = build_vocab(iter_sentences(train, "source"), min_freq=1)
    tgt = build_vocab(iter_sentences(train, "target"), min_freq=1)
    return TrainingData(encode_documents(train, src, tgt), encode_documents(dev, src, tgt), len(src), len(tgt))


@pytest.fixture
def run_config() -> RunConfig:
    return RunConfig(
        model=_tiny_config(Memories.BOTH),
        train=TrainConfig(stage1_epochs=2, stage2_epochs=2, lm_epochs=1, batch_size=4, gen_beam=2, gen_max_len=6),
        search=SearchConfig(beam=2, max_len=6),
    )


@pytest.fixture
def data_dir(tmp_path: Path, synthetic_spec: SyntheticSpec) -> DataDir:
    """A prepared data directory: synthetic train and dev splits plus min-freq 1 vocabularies."""
    root = tmp_path / "data"
    root.mkdir()
    train = gen_synthetic(synthetic_spec)
    dev = gen_synthetic(replace(synthetic_spec, n_docs=2, seed=synthetic_spec.seed + 1))
    write_documents(train, root / "train.src", root / "train.tgt")
    write_documents(dev, root / "dev.src", root / "dev.tgt")
    build_vocab(iter_sentences(train, "source"), min_freq=1).save(root / "vocab.src")
    build_vocab(iter_sentences(train, "target"), min_freq=1).save(root / "vocab.tgt")
    return DataDir(root, DataConfig(min_freq=1))
