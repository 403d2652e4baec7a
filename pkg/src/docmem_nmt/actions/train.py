from __future__ import annotations

from dataclasses import replace
from typing import TYPE_CHECKING

from docmem_nmt.checkpoint import save_checkpoint
from docmem_nmt.config import ModelConfig, QueryRep, RunConfig, Variant, section_from_dict
from docmem_nmt.errors import UsageError
from docmem_nmt.memory import LmDims, SentenceLm
from docmem_nmt.trainer import TrainingLog, pretrain_sentence_lm, train_stage1, train_stage2
from docmem_nmt.workspace import LM_KIND, STAGE1_KIND, STAGE2_KIND, DataDir, checkpoint_name, log_name, read_checkpoint

if TYPE_CHECKING:
    from pathlib import Path

    from docmem_nmt import Printer
    from docmem_nmt.params import ParamSet


class _TrainingAction:
    kind: str

    def __init__(self, printer: Printer, config: RunConfig, data: DataDir, out_dir: Path) -> None:
        self.printer = printer
        self.config = config
        self.data = data
        self.out_dir = out_dir

    def _save(self, params: ParamSet, log: TrainingLog, config: RunConfig | None = None) -> list[Path]:
        ckpt = self.out_dir / checkpoint_name(self.kind)
        save_checkpoint(ckpt, params, self.kind, (config or self.config).as_dict())
        log_path = self.out_dir / log_name(self.kind)
        log.write(log_path)
        self.printer.success(f"Saved {ckpt.name} ({len(params)} tensors) and {log_path.name} to {self.out_dir}")
        return [ckpt, log_path]


class PretrainSentenceLm(_TrainingAction):
    kind = LM_KIND

    def execute(self) -> list[Path]:
        data = self.data.training_data()
        sentences = [x for doc in data.train for x in doc.source]
        dims = LmDims(data.src_vocab, self.config.model.embed, self.config.model.lm_hidden)
        self.printer.info(f"Pretraining the sentence language model on {len(sentences)} source sentences")
        result = pretrain_sentence_lm(sentences, dims, self.config.train, self.printer)
        return self._save(result.lm.params, result.log)


class TrainSentenceModel(_TrainingAction):
    kind = STAGE1_KIND

    def execute(self) -> list[Path]:
        data = self.data.training_data()
        if not data.dev:
            self.printer.warning("No dev split found: the last epoch is kept instead of the best dev epoch")
        self.printer.info(f"Stage 1: sentence-level training on {len(data.pairs())} sentence pairs")
        result = train_stage1(data, self.config, self.printer)
        return self._save(result.params, result.log)


class TrainDocumentModel(_TrainingAction):
    kind = STAGE2_KIND

    def __init__(
        self,
        printer: Printer,
        config: RunConfig,
        data: DataDir,
        out_dir: Path,
        stage1_path: Path,
        lm_path: Path | None = None,
    ) -> None:
        super().__init__(printer, config, data, out_dir)
        self.stage1_path = stage1_path
        self.lm_path = lm_path

    def model_config(self, stage1_echo: dict[str, str]) -> ModelConfig:
        """Memory settings from the run configuration, network dimensions from the stage-1 checkpoint."""
        trained = section_from_dict(ModelConfig, stage1_echo)
        return replace(
            self.config.model,
            hidden=trained.hidden,
            embed=trained.embed,
            align=trained.align,
            decoder_layers=trained.decoder_layers,
        )

    def execute(self) -> list[Path]:
        stage1 = read_checkpoint(self.stage1_path, STAGE1_KIND)
        config = replace(self.config, model=self.model_config(stage1.config))
        needs_lm = config.model.memories.source or config.model.query_rep is QueryRep.MEMORY
        lm = None
        if self.lm_path is not None:
            lm = SentenceLm(read_checkpoint(self.lm_path, LM_KIND).params).freeze()
        elif needs_lm and config.model.decode_variant is not Variant.NONE:
            msg = f"memories '{config.model.memories.value}' need a pretrained sentence language model (--lm)"
            raise UsageError(msg)

        data = self.data.training_data()
        self.printer.info(
            f"Stage 2: {config.model.variant.value} with '{config.model.memories.value}' memories"
            f" on {len(data.train)} documents"
        )
        result = train_stage2(data, stage1.params, lm, config, self.printer)
        return self._save(result.params, result.log, config)
