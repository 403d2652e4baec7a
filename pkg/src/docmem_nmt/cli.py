"""
Command line entry point.

Exit codes: 0 success, 1 usage or model configuration error, 2 data or file
format error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import TYPE_CHECKING, Any, NoReturn

from docmem_nmt import CONFIG_FILENAME
from docmem_nmt.actions.evaluate import EvaluateTranslations, MetricName
from docmem_nmt.actions.grad_check import CheckGradients
from docmem_nmt.actions.prepare_data import BuildVocabularies, GenerateSyntheticCorpus
from docmem_nmt.actions.train import PretrainSentenceLm, TrainDocumentModel, TrainSentenceModel
from docmem_nmt.actions.translate import TranslateDocuments
from docmem_nmt.config import (
    Memories,
    QueryRep,
    SearchKind,
    TargetMemorySource,
    Variant,
    load_config,
    section_as_dict,
)
from docmem_nmt.errors import (
    DataFormatError,
    MemoryReadError,
    ModelConfigError,
    NumericalError,
    ShapeError,
    UsageError,
)
from docmem_nmt.manifest import write_run_manifest
from docmem_nmt.presets import PRESETS
from docmem_nmt.shell import Palette, ShellPrinter, Verbosity, use_color
from docmem_nmt.workspace import DataDir, load_vocabularies

if TYPE_CHECKING:
    from collections.abc import Callable, Sequence

    from docmem_nmt import Printer
    from docmem_nmt.config import RunConfig

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERICAL = 3

CONFIG_DEST = "config:"
MODEL_KEYS = ("variant", "memories", "prev-trg", "query-rep")


class ArgumentParser(argparse.ArgumentParser):
    def error(self, message: str) -> NoReturn:
        msg = f"{self.prog}: {message}"
        raise UsageError(msg)


def _key_value(value: str) -> tuple[str, str]:
    key, sep, rest = value.partition("=")
    if not sep or not key.strip():
        msg = f"expected KEY=VALUE, got {value!r}"
        raise argparse.ArgumentTypeError(msg)
    return key.strip(), rest.strip()


def config_flag(parser: argparse.ArgumentParser, *flags: str, key: str, **kwargs: Any) -> None:
    """A flag that overrides the configuration key `key`; unset flags leave the configuration alone."""
    parser.add_argument(*flags, dest=f"{CONFIG_DEST}{key}", default=None, **kwargs)


def _choices(enum: Any, *exclude: str) -> list[str]:
    return [member.value for member in enum if member.value not in exclude]


def _add_common(parser: argparse.ArgumentParser, seed_key: str = "seed") -> None:
    parser.add_argument("--config", type=Path, help=f"key = value file or TOML file (default: ./{CONFIG_FILENAME})")
    parser.add_argument("--out", type=Path, default=Path(), help="Output directory (default: current directory)")
    parser.add_argument(
        "--set", action="append", type=_key_value, default=[], metavar="KEY=VALUE", help="Override a config key"
    )
    config_flag(parser, "--seed", key=seed_key, help="Random seed")
    config_flag(parser, "--preset", key="preset", choices=list(PRESETS), help="Network dimension preset")
    parser.add_argument("-v", "--verbose", action="store_true", help="Show detailed output")
    parser.add_argument("-q", "--quiet", action="store_true", help="Hide all output except errors")


def _add_data(parser: argparse.ArgumentParser, vocab: bool = True) -> None:
    parser.add_argument("--data", type=Path, required=True, help="Directory with <split>.src and <split>.tgt files")
    if vocab:
        parser.add_argument("--vocab", type=Path, help="Directory with vocab.src and vocab.tgt (default: --data)")


def _add_model(parser: argparse.ArgumentParser) -> None:
    config_flag(parser, "--variant", key="variant", choices=_choices(Variant, "none", "prev-trg"))
    config_flag(parser, "--memories", key="memories", choices=_choices(Memories))
    config_flag(parser, "--prev-trg", key="prev-trg", action="store_const", const="true", help="PrevTrg ablation")
    config_flag(parser, "--query-rep", key="query-rep", choices=_choices(QueryRep))


def build_parser() -> ArgumentParser:
    paint = Palette(use_color())
    parser = ArgumentParser(
        prog="docmem-nmt",
        description=f"Document-level translation with {paint('source', 'cyan')} and {paint('target', 'cyan')} memories",
    )
    commands = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    sub = commands.add_parser("gen-synthetic", help="Generate the topic-marker corpus")
    _add_common(sub, seed_key="synthetic-seed")
    config_flag(sub, "--docs", key="synthetic-docs", type=int, help="Training documents")
    config_flag(sub, "--sentences", key="synthetic-sentences", type=int, help="Sentences per document")
    sub.set_defaults(handler=gen_synthetic)

    sub = commands.add_parser("build-vocab", help="Build source and target vocabularies from the train split")
    _add_common(sub)
    _add_data(sub, vocab=False)
    config_flag(sub, "--min-freq", key="min-freq", type=int, help="Rarer tokens map to <unk> (default: 5)")
    sub.set_defaults(handler=build_vocab)

    sub = commands.add_parser("pretrain-lm", help="Pretrain the sentence language model")
    _add_common(sub)
    _add_data(sub)
    config_flag(sub, "--epochs", key="lm-epochs", type=int)
    sub.set_defaults(handler=pretrain_lm)

    sub = commands.add_parser("train-stage1", help="Train the sentence-level model")
    _add_common(sub)
    _add_data(sub)
    config_flag(sub, "--epochs", key="stage1-epochs", type=int)
    sub.set_defaults(handler=train_stage1)

    sub = commands.add_parser("train-stage2", help="Train the document model from a stage-1 checkpoint")
    _add_common(sub)
    _add_data(sub)
    _add_model(sub)
    sub.add_argument("--stage1", type=Path, required=True, help="Stage-1 checkpoint")
    sub.add_argument("--lm", type=Path, help="Sentence language model checkpoint (needed for source memory)")
    config_flag(sub, "--epochs", key="stage2-epochs", type=int)
    config_flag(sub, "--target-memory", key="target-memory", choices=_choices(TargetMemorySource))
    sub.set_defaults(handler=train_stage2)

    sub = commands.add_parser("translate", help="Translate documents with block coordinate descent")
    _add_common(sub)
    _add_model(sub)
    sub.add_argument("--checkpoint", type=Path, required=True, help="Stage-1 or stage-2 checkpoint")
    sub.add_argument("--input", type=Path, required=True, help="Source document file")
    sub.add_argument("--vocab", type=Path, required=True, help="Directory with vocab.src and vocab.tgt")
    sub.add_argument("--base-checkpoint", type=Path, help="Checkpoint providing the pass-0 translations")
    config_flag(sub, "--passes", key="passes", type=int, help="Coordinate passes after the first (default: 1)")
    config_flag(sub, "--beam", key="beam", type=int)
    config_flag(sub, "--max-len", key="max-len", type=int)
    config_flag(sub, "--search", key="search", choices=_choices(SearchKind))
    config_flag(sub, "--jobs", key="jobs", type=int, help="Worker processes over documents (default: 1)")
    sub.set_defaults(handler=translate)

    sub = commands.add_parser("evaluate", help="Score translations")
    _add_common(sub)
    sub.add_argument("metric", choices=_choices(MetricName))
    sub.add_argument("--hyp", type=Path, help="Translations (system A for significance)")
    sub.add_argument("--hyp-b", type=Path, help="System B translations")
    sub.add_argument("--ref", type=Path, help="Reference translations")
    sub.add_argument("--src", type=Path, help="Source documents")
    sub.add_argument("--checkpoint", type=Path, help="Model checkpoint (ppl)")
    sub.add_argument("--vocab", type=Path, help="Directory with vocab.src and vocab.tgt (ppl)")
    sub.add_argument("--resamples", type=int, default=1000, help="Bootstrap resamples (significance)")
    sub.set_defaults(handler=evaluate)

    sub = commands.add_parser("grad-check", help="Check gradients against finite differences")
    _add_common(sub)
    _add_model(sub)
    sub.add_argument("--sample", type=int, default=5, help="Coordinates per tensor, 0 for all (default: 5)")
    sub.add_argument("--tolerance", type=float, default=1e-4)
    sub.set_defaults(handler=grad_check)
    return parser


@dataclass
class Invocation:
    args: argparse.Namespace
    config: RunConfig
    printer: Printer

    @property
    def out_dir(self) -> Path:
        out: Path = self.args.out
        return out

    def data(self) -> DataDir:
        return DataDir(self.args.data, self.config.data, getattr(self.args, "vocab", None))

    def model_overrides(self) -> dict[str, Any]:
        """Resolved model settings that any layer set explicitly; they replace the checkpoint's echo."""
        resolved = section_as_dict(self.config.model)
        return {key: resolved[key] for key in MODEL_KEYS if key in self.config.explicit}


# Input files and written files of a command
Outcome = tuple[list[Path], list[Path]]


def gen_synthetic(inv: Invocation) -> Outcome:
    return [], GenerateSyntheticCorpus(inv.printer, inv.config, inv.out_dir).execute()


def build_vocab(inv: Invocation) -> Outcome:
    data = inv.data()
    inputs = [data.source("train"), data.target("train")]
    return inputs, BuildVocabularies(inv.printer, inv.config, data, inv.out_dir).execute()


def pretrain_lm(inv: Invocation) -> Outcome:
    data = inv.data()
    return data.input_paths("train"), PretrainSentenceLm(inv.printer, inv.config, data, inv.out_dir).execute()


def train_stage1(inv: Invocation) -> Outcome:
    data = inv.data()
    return data.input_paths("train", "dev"), TrainSentenceModel(inv.printer, inv.config, data, inv.out_dir).execute()


def train_stage2(inv: Invocation) -> Outcome:
    data, args = inv.data(), inv.args
    action = TrainDocumentModel(inv.printer, inv.config, data, inv.out_dir, args.stage1, args.lm)
    inputs = [*data.input_paths("train", "dev"), args.stage1, *([args.lm] if args.lm else [])]
    return inputs, action.execute()


def translate(inv: Invocation) -> Outcome:
    args = inv.args
    action = TranslateDocuments(
        inv.printer,
        inv.config.search,
        args.checkpoint,
        args.input,
        load_vocabularies(args.vocab),
        inv.out_dir,
        model_overrides=inv.model_overrides(),
        base_checkpoint_path=args.base_checkpoint,
    )
    inputs = [args.checkpoint, args.input, *([args.base_checkpoint] if args.base_checkpoint else [])]
    return inputs, action.execute()


def evaluate(inv: Invocation) -> Outcome:
    args = inv.args
    action = EvaluateTranslations(
        inv.printer,
        inv.config,
        MetricName(args.metric),
        inv.out_dir,
        hypothesis=args.hyp,
        reference=args.ref,
        source=args.src,
        hypothesis_b=args.hyp_b,
        checkpoint=args.checkpoint,
        vocabularies=load_vocabularies(args.vocab) if args.vocab else None,
        resamples=args.resamples,
    )
    inputs = [path for path in (args.hyp, args.hyp_b, args.ref, args.src, args.checkpoint) if path is not None]
    return inputs, action.execute()


def grad_check(inv: Invocation) -> Outcome:
    args = inv.args
    action = CheckGradients(inv.printer, inv.config, inv.out_dir, sample=args.sample or None, tolerance=args.tolerance)
    return [], action.execute()


def config_overrides(args: argparse.Namespace) -> dict[str, Any]:
    """Explicit `--set` values first, then dedicated flags, which win."""
    overrides: dict[str, Any] = dict(args.set)
    for dest, value in vars(args).items():
        if dest.startswith(CONFIG_DEST) and value is not None:
            overrides[dest.removeprefix(CONFIG_DEST)] = value
    return overrides


def _config_path(args: argparse.Namespace) -> Path | None:
    if args.config is not None:
        path: Path = args.config
        return path
    default = Path.cwd() / CONFIG_FILENAME
    return default if default.exists() else None


def execute(args: argparse.Namespace, printer: Printer) -> None:
    config = load_config(_config_path(args), config_overrides(args), printer)
    inv = Invocation(args, config, printer)
    inv.out_dir.mkdir(parents=True, exist_ok=True)
    handler: Callable[[Invocation], Outcome] = args.handler
    inputs, outputs = handler(inv)
    seed = config.synthetic.seed if args.command == "gen-synthetic" else config.train.seed
    manifest = write_run_manifest(
        inv.out_dir, args.command, config.as_dict(), seed, inputs, [path.name for path in outputs]
    )
    printer.debug(f"Run manifest written to {manifest}")


def run(argv: Sequence[str] | None = None) -> int:
    printer: Printer = ShellPrinter()
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        printer.error(str(exc))
        return EXIT_USAGE
    except SystemExit as exc:
        # --help and --version
        return int(exc.code or 0)

    printer = ShellPrinter(verbosity=Verbosity.from_flags(args.verbose, args.quiet))
    try:
        execute(args, printer)
    except (UsageError, ModelConfigError, MemoryReadError) as exc:
        printer.error(str(exc))
        return EXIT_USAGE
    except (DataFormatError, ShapeError) as exc:
        printer.error(str(exc))
        return EXIT_DATA
    except FileNotFoundError as exc:
        printer.error(f"File not found: {exc.filename}")
        return EXIT_DATA
    except NumericalError as exc:
        printer.error(f"Numerical failure: {exc}")
        return EXIT_NUMERICAL
    return EXIT_OK


def main() -> None:
    sys.exit(run())
