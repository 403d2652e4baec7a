from __future__ import annotations

from typing import TYPE_CHECKING, NamedTuple

import numpy as np

from docmem_nmt.autodiff import GradCheckResult, grad_check
from docmem_nmt.corpus import EOS_ID, RESERVED, EncodedDocument
from docmem_nmt.docnmt import DocModel, doc_nll, extend_for_documents
from docmem_nmt.errors import NumericalError
from docmem_nmt.memory import LmDims, SentenceLm
from docmem_nmt.snmt import SnmtDims, init_snmt

if TYPE_CHECKING:
    from collections.abc import Sequence
    from pathlib import Path

    from docmem_nmt import Printer
    from docmem_nmt.config import RunConfig

GRAD_CHECK_FILENAME = "grad_check.tsv"
TOLERANCE = 1e-4
SRC_VOCAB = 10
TGT_VOCAB = 12
PERTURB_SCALE = 0.3


class GradCheckCase(NamedTuple):
    model: DocModel
    document: EncodedDocument


def random_document(rng: np.random.Generator, sentences: int = 2) -> EncodedDocument:
    first = len(RESERVED)
    lengths = rng.integers(2, 5, size=sentences)
    source = [[int(t) for t in rng.integers(first, SRC_VOCAB, size=n)] for n in lengths]
    target = [[*(int(t) for t in rng.integers(first, TGT_VOCAB, size=n)), EOS_ID] for n in lengths]
    return EncodedDocument(source, target)


def build_case(config: RunConfig, seed: int) -> GradCheckCase:
    """
    A small document model with every parameter drawn at random.

    Memory injection matrices normally start at zero, which would hide the
    gradients of everything behind them, so they are redrawn as well.
    """
    rng = np.random.default_rng(seed)
    cfg = config.model
    lm = SentenceLm.initialize(LmDims(SRC_VOCAB, cfg.embed, cfg.lm_hidden), rng)
    for name in lm.params:
        lm.params.set(name, rng.uniform(-PERTURB_SCALE, PERTURB_SCALE, lm.params[name].shape))
    lm.freeze()
    stage1 = init_snmt(SnmtDims.from_config(cfg, SRC_VOCAB, TGT_VOCAB), rng)
    params = extend_for_documents(stage1, lm, cfg, rng)
    for name in params.trainable:
        params.set(name, rng.uniform(-PERTURB_SCALE, PERTURB_SCALE, params[name].shape))
    return GradCheckCase(DocModel(params, cfg), random_document(rng))


class CheckGradients:
    """Compare tape gradients of the document loss and the sentence LM loss with finite differences."""

    def __init__(
        self,
        printer: Printer,
        config: RunConfig,
        out_dir: Path,
        sample: int | None = 5,
        tolerance: float = TOLERANCE,
    ) -> None:
        self.printer = printer
        self.config = config
        self.out_dir = out_dir
        self.sample = sample
        self.tolerance = tolerance

    def execute(self) -> list[Path]:
        seed = self.config.train.seed
        case = build_case(self.config, seed)
        model, doc = case.model, case.document
        lm = model.lm
        translations = doc.target if model.needs_target else None
        self.printer.info(
            f"Checking {model.variant.value} with '{model.cfg.memories.value}' memories "
            f"({len(model.params.trainable)} trainable tensors, hidden {model.cfg.hidden})"
        )
        results = {
            "document-loss": grad_check(
                lambda view: doc_nll(doc, translations, model, view),
                model.params,
                model.params.trainable,
                sample=self.sample,
                seed=seed,
            )
        }
        if lm is not None:
            results["sentence-lm-loss"] = grad_check(
                lambda view: lm.loss(doc.source[0], view), lm.params, list(lm.params), sample=self.sample, seed=seed
            )
        rows = self.rows(results)
        self.printer.report(rows, title="Finite-difference check")
        out = self.out_dir / GRAD_CHECK_FILENAME
        out.write_text("".join(f"{key}\t{value}\n" for key, value in rows), encoding="utf-8")

        worst = max(results.items(), key=lambda item: item[1].max_relative_error)
        if worst[1].max_relative_error > self.tolerance:
            msg = (
                f"{worst[0]}: relative error {worst[1].max_relative_error:.3e} exceeds {self.tolerance:g} "
                f"at {worst[1].worst_parameter}{list(worst[1].worst_index or ())}"
            )
            raise NumericalError(msg)
        self.printer.success(f"Gradients match finite differences within {self.tolerance:g}")
        return [out]

    @staticmethod
    def rows(results: dict[str, GradCheckResult]) -> Sequence[tuple[str, str]]:
        rows: list[tuple[str, str]] = []
        for name, result in results.items():
            rows += [
                (f"{name}.max-relative-error", f"{result.max_relative_error:.3e}"),
                (f"{name}.worst-parameter", result.worst_parameter or "-"),
                (f"{name}.checked", str(result.checked)),
            ]
        return rows
