from __future__ import annotations

import os
import sys
from collections.abc import Iterable, Iterator, Mapping
from dataclasses import Field, dataclass, field, fields
from enum import Enum
from pathlib import Path
from typing import TYPE_CHECKING, Any, Callable, NamedTuple, TypedDict, TypeVar

from docmem_nmt.errors import ConfigError, ModelConfigError
from docmem_nmt.presets import DEFAULT_PRESET, PRESETS

if sys.version_info >= (3, 11):
    import tomllib as toml
else:
    import tomli as toml

if TYPE_CHECKING:
    from docmem_nmt import Printer

ENV_PREFIX = "DOCMEM_NMT"
TOOL_TABLE = "docmem-nmt"


class Variant(str, Enum):
    """How (and whether) document context enters the decoder."""

    NONE = "none"
    MEM_TO_CONTEXT = "mem-to-context"
    MEM_TO_OUTPUT = "mem-to-output"
    PREV_TRG = "prev-trg"


class Memories(str, Enum):
    NONE = "none"
    SRC = "src"
    TRG = "trg"
    BOTH = "both"

    @property
    def source(self) -> bool:
        return self in (Memories.SRC, Memories.BOTH)

    @property
    def target(self) -> bool:
        return self in (Memories.TRG, Memories.BOTH)


class QueryRep(str, Enum):
    """Which sentence representation queries the memories."""

    ENCODER = "encoder"
    MEMORY = "memory"


class TargetMemorySource(str, Enum):
    GENERATED = "generated"
    GOLD = "gold"


class SearchKind(str, Enum):
    BEAM = "beam"
    EXHAUSTIVE = "exhaustive"


def env_as_bool(value: str) -> bool:
    value = (value or "False").lower()
    if value not in ("true", "1", "false", "0", "yes", "no"):
        msg = f"not a boolean: {value}"
        raise ValueError(msg)
    return value in ("true", "1", "yes")


def as_preset(value: str) -> str:
    if value not in PRESETS:
        msg = f"unknown preset {value!r}, expected one of {', '.join(PRESETS)}"
        raise ValueError(msg)
    return value


class Metadata(TypedDict, total=False):
    """Configuration metadata known fields"""

    key: str
    """Key in config files and `--set` overrides"""
    env: str
    """Optionally map the environment variable suffix"""
    cast: Callable[[str], Any]
    """Cast function applied to textual values"""


class Entry(NamedTuple):
    """One configuration value and where it was read from."""

    key: str
    value: Any
    path: str | None = None
    line: int | None = None


@dataclass
class ModelConfig:
    preset: str = field(default=DEFAULT_PRESET, metadata=Metadata(key="preset", env="PRESET", cast=as_preset))
    hidden: int = field(default=32, metadata=Metadata(key="hidden", env="HIDDEN", cast=int))
    embed: int = field(default=32, metadata=Metadata(key="embed", env="EMBED", cast=int))
    align: int = field(default=16, metadata=Metadata(key="align", env="ALIGN", cast=int))
    lm_hidden: int = field(default=32, metadata=Metadata(key="lm-hidden", cast=int))
    doc_hidden: int = field(default=32, metadata=Metadata(key="doc-hidden", cast=int))
    decoder_layers: int = field(default=1, metadata=Metadata(key="decoder-layers", cast=int))
    variant: Variant = field(default=Variant.MEM_TO_CONTEXT, metadata=Metadata(key="variant", cast=Variant))
    memories: Memories = field(default=Memories.BOTH, metadata=Metadata(key="memories", cast=Memories))
    prev_trg: bool = field(default=False, metadata=Metadata(key="prev-trg", cast=env_as_bool))
    query_rep: QueryRep = field(default=QueryRep.ENCODER, metadata=Metadata(key="query-rep", cast=QueryRep))

    def apply_preset(self, name: str) -> None:
        preset = PRESETS[as_preset(name)]
        self.preset = name
        self.hidden = preset["hidden"]
        self.embed = preset["embed"]
        self.align = preset["align"]
        self.lm_hidden = preset["lm_hidden"]
        self.doc_hidden = preset["doc_hidden"]

    @property
    def decode_variant(self) -> Variant:
        if self.prev_trg:
            return Variant.PREV_TRG
        if self.memories is Memories.NONE:
            return Variant.NONE
        return self.variant

    def validate(self) -> None:
        for name in ("hidden", "embed", "align", "lm_hidden", "doc_hidden"):
            if getattr(self, name) < 1:
                msg = f"dimension '{name}' must be positive, got {getattr(self, name)}"
                raise ConfigError(msg)
        if self.decoder_layers not in (1, 2):
            msg = f"decoder-layers must be 1 or 2, got {self.decoder_layers}"
            raise ConfigError(msg)
        if self.variant not in (Variant.MEM_TO_CONTEXT, Variant.MEM_TO_OUTPUT):
            msg = f"variant must be mem-to-context or mem-to-output, got {self.variant.value}"
            raise ModelConfigError(msg)
        if self.prev_trg and self.memories.target:
            msg = f"the prev-trg ablation cannot be combined with '{self.memories.value}' memories"
            raise ModelConfigError(msg)


@dataclass
class TrainConfig:
    seed: int = field(default=1, metadata=Metadata(key="seed", env="SEED", cast=int))
    stage1_lr: float = field(default=0.1, metadata=Metadata(key="stage1-lr", cast=float))
    stage1_decay: float = field(default=0.5, metadata=Metadata(key="stage1-decay", cast=float))
    stage1_decay_after: int = field(default=4, metadata=Metadata(key="stage1-decay-after", cast=int))
    stage1_epochs: int = field(default=10, metadata=Metadata(key="stage1-epochs", env="STAGE1_EPOCHS", cast=int))
    stage2_lr: float = field(default=0.08, metadata=Metadata(key="stage2-lr", cast=float))
    stage2_decay: float = field(default=0.9, metadata=Metadata(key="stage2-decay", cast=float))
    stage2_decay_after: int = field(default=1, metadata=Metadata(key="stage2-decay-after", cast=int))
    stage2_epochs: int = field(default=15, metadata=Metadata(key="stage2-epochs", env="STAGE2_EPOCHS", cast=int))
    lm_lr: float = field(default=0.1, metadata=Metadata(key="lm-lr", cast=float))
    lm_epochs: int = field(default=3, metadata=Metadata(key="lm-epochs", cast=int))
    batch_size: int = field(default=16, metadata=Metadata(key="batch-size", cast=int))
    clip_norm: float = field(default=5.0, metadata=Metadata(key="clip-norm", cast=float))
    target_memory: TargetMemorySource = field(
        default=TargetMemorySource.GENERATED,
        metadata=Metadata(key="target-memory", cast=TargetMemorySource),
    )
    dropout_stage1: float = field(default=0.0, metadata=Metadata(key="dropout-stage1", cast=float))
    dropout_single: float = field(default=0.2, metadata=Metadata(key="dropout-single", cast=float))
    dropout_doc_rnn: float = field(default=0.2, metadata=Metadata(key="dropout-doc-rnn", cast=float))
    dropout_dual: float = field(default=0.5, metadata=Metadata(key="dropout-dual", cast=float))
    gen_beam: int = field(default=5, metadata=Metadata(key="gen-beam", cast=int))
    gen_max_len: int = field(default=50, metadata=Metadata(key="gen-max-len", cast=int))
    select_best: bool = field(default=True, metadata=Metadata(key="select-best", cast=env_as_bool))

    def validate(self) -> None:
        for name in ("stage1_lr", "stage2_lr", "lm_lr", "clip_norm"):
            if not getattr(self, name) > 0:
                msg = f"'{name.replace('_', '-')}' must be positive, got {getattr(self, name)}"
                raise ConfigError(msg)
        for name in ("stage1_epochs", "stage2_epochs", "batch_size", "gen_beam", "gen_max_len"):
            if getattr(self, name) < 1:
                msg = f"'{name.replace('_', '-')}' must be at least 1, got {getattr(self, name)}"
                raise ConfigError(msg)
        if self.lm_epochs < 0:
            msg = f"'lm-epochs' must not be negative, got {self.lm_epochs}"
            raise ConfigError(msg)
        for name in ("dropout_stage1", "dropout_single", "dropout_doc_rnn", "dropout_dual"):
            if not 0.0 <= getattr(self, name) < 1.0:
                msg = f"'{name.replace('_', '-')}' must be in [0, 1), got {getattr(self, name)}"
                raise ConfigError(msg)


@dataclass
class SearchConfig:
    beam: int = field(default=5, metadata=Metadata(key="beam", env="BEAM", cast=int))
    max_len: int = field(default=50, metadata=Metadata(key="max-len", cast=int))
    passes: int = field(default=1, metadata=Metadata(key="passes", env="PASSES", cast=int))
    search: SearchKind = field(default=SearchKind.BEAM, metadata=Metadata(key="search", cast=SearchKind))
    jobs: int = field(default=1, metadata=Metadata(key="jobs", env="JOBS", cast=int))

    def validate(self) -> None:
        if self.beam < 1 or self.max_len < 1 or self.jobs < 1:
            msg = f"beam, max-len and jobs must be at least 1 (got {self.beam}, {self.max_len}, {self.jobs})"
            raise ConfigError(msg)
        if self.passes < 0:
            msg = f"passes must not be negative, got {self.passes}"
            raise ConfigError(msg)


@dataclass
class DataConfig:
    lowercase: bool = field(default=False, metadata=Metadata(key="lowercase", cast=env_as_bool))
    min_freq: int = field(default=5, metadata=Metadata(key="min-freq", cast=int))
    min_sentences: int = field(default=2, metadata=Metadata(key="min-sentences", cast=int))

    def validate(self) -> None:
        if self.min_freq < 1 or self.min_sentences < 1:
            msg = "min-freq and min-sentences must be at least 1"
            raise ConfigError(msg)


@dataclass
class SyntheticSpec:
    """Shape of the generated topic-marker corpus."""

    n_docs: int = field(default=200, metadata=Metadata(key="synthetic-docs", cast=int))
    sentences: int = field(default=8, metadata=Metadata(key="synthetic-sentences", cast=int))
    min_len: int = field(default=4, metadata=Metadata(key="synthetic-min-len", cast=int))
    max_len: int = field(default=8, metadata=Metadata(key="synthetic-max-len", cast=int))
    content_vocab: int = field(default=40, metadata=Metadata(key="synthetic-content-vocab", cast=int))
    ambiguous: int = field(default=6, metadata=Metadata(key="synthetic-ambiguous", cast=int))
    amb_prob: float = field(default=0.7, metadata=Metadata(key="synthetic-amb-prob", cast=float))
    seed: int = field(default=1, metadata=Metadata(key="synthetic-seed", env="SYNTHETIC_SEED", cast=int))

    def validate(self) -> None:
        for name in ("n_docs", "sentences", "content_vocab", "ambiguous"):
            if getattr(self, name) < 1:
                msg = f"synthetic '{name}' must be positive, got {getattr(self, name)}"
                raise ConfigError(msg)
        if not 2 <= self.min_len <= self.max_len:
            msg = f"synthetic sentence lengths must satisfy 2 <= min <= max, got {self.min_len}..{self.max_len}"
            raise ConfigError(msg)
        if not 0.0 < self.amb_prob <= 1.0:
            msg = f"synthetic ambiguous-token probability must be in (0, 1], got {self.amb_prob}"
            raise ConfigError(msg)
        if self.ambiguous > self.content_vocab:
            msg = f"more ambiguous types ({self.ambiguous}) than content tokens ({self.content_vocab})"
            raise ConfigError(msg)


Section = TypeVar("Section", ModelConfig, TrainConfig, SearchConfig, DataConfig, SyntheticSpec)


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    search: SearchConfig = field(default_factory=SearchConfig)
    data: DataConfig = field(default_factory=DataConfig)
    synthetic: SyntheticSpec = field(default_factory=SyntheticSpec)
    unknown_keys: list[str] = field(default_factory=list, repr=False, compare=False)
    # keys set by a file, the environment or the command line
    explicit: set[str] = field(default_factory=set, repr=False, compare=False)

    def sections(self) -> Iterator[ModelConfig | TrainConfig | SearchConfig | DataConfig | SyntheticSpec]:
        yield from (self.model, self.train, self.search, self.data, self.synthetic)

    def validate(self) -> None:
        for section in self.sections():
            section.validate()

    def as_dict(self) -> dict[str, Any]:
        return {key: value for section in self.sections() for key, value in section_as_dict(section).items()}

    def update(self, values: Mapping[str, Any], path: str | None = None) -> RunConfig:
        return self.apply(Entry(key, value, path) for key, value in values.items())

    def apply(self, entries: Iterable[Entry]) -> RunConfig:
        """
        Apply entries given lowest priority first, possibly from several layers.

        A preset resets every dimension: only the last preset is applied, before
        anything else, so an explicit dimension from any layer still wins over it.
        """
        entries = list(entries)
        presets = [entry for entry in entries if entry.key == "preset"]
        for entry in [*presets[-1:], *(entry for entry in entries if entry.key != "preset")]:
            if not self.set(entry.key, entry.value, path=entry.path, line=entry.line):
                self.unknown_keys.append(entry.key)
        return self

    def set(self, key: str, value: Any, *, path: str | None = None, line: int | None = None) -> bool:
        for section in self.sections():
            spec = _keyed_fields(type(section)).get(key)
            if spec is None:
                continue
            setattr(section, spec.name, cast_value(spec, key, value, path=path, line=line))
            self.explicit.add(key)
            if key == "preset":
                self.model.apply_preset(self.model.preset)
            return True
        return False


def _keyed_fields(cls: type) -> dict[str, Field[Any]]:
    return {f.metadata.get("key", f.name): f for f in fields(cls)}


def cast_value(spec: Field[Any], key: str, value: Any, *, path: str | None = None, line: int | None = None) -> Any:
    caster = spec.metadata.get("cast", str)
    try:
        return caster(value if isinstance(value, str) else str(value))
    except ValueError as exc:
        msg = f"invalid value for '{key}': {value!r} ({exc})"
        raise ConfigError(msg, path=path, line=line) from exc


def section_as_dict(section: Any) -> dict[str, Any]:
    result: dict[str, Any] = {}
    for key, spec in _keyed_fields(type(section)).items():
        value = getattr(section, spec.name)
        result[key] = value.value if isinstance(value, Enum) else value
    return result


def section_from_dict(cls: type[Section], data: Mapping[str, Any]) -> Section:
    """Rebuild one section from a flat echo, ignoring keys that belong to other sections."""
    section = cls()
    keyed = _keyed_fields(cls)
    for key, value in data.items():
        if spec := keyed.get(key):
            setattr(section, spec.name, cast_value(spec, key, value))
    return section


def parse_key_value(path: Path) -> list[tuple[str, str, int]]:
    """Parse `key = value` lines; '#' starts a comment, blank lines are skipped."""
    entries: list[tuple[str, str, int]] = []
    with path.open(encoding="utf-8") as file:
        for lineno, raw in enumerate(file, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep or not key.strip():
                msg = f"expected 'key = value', got {raw.strip()!r}"
                raise ConfigError(msg, path=str(path), line=lineno)
            entries.append((key.strip(), value.strip(), lineno))
    return entries


def file_entries(path: Path) -> list[Entry]:
    if path.suffix == ".toml":
        with path.open("rb") as file:
            try:
                data = toml.load(file)
            except toml.TOMLDecodeError as exc:
                raise ConfigError(str(exc), path=str(path)) from exc
        table = data.get("tool", {}).get(TOOL_TABLE, {})
        return [Entry(key, value, str(path)) for key, value in table.items()]
    return [Entry(key, value, str(path), lineno) for key, value, lineno in parse_key_value(path)]


def env_entries() -> list[Entry]:
    entries: list[Entry] = []
    for section in RunConfig().sections():
        for key, spec in _keyed_fields(type(section)).items():
            var = spec.metadata.get("env")
            if var and (value := os.getenv(f"{ENV_PREFIX}_{var}")):
                entries.append(Entry(key, value, f"${ENV_PREFIX}_{var}"))
    return entries


def update_from_env(config: RunConfig) -> RunConfig:
    return config.apply(env_entries())


def load_config(
    path: Path | None = None,
    overrides: Mapping[str, Any] | None = None,
    printer: Printer | None = None,
) -> RunConfig:
    """
    Resolve the run configuration.

    Layers, lowest priority first: defaults, the config file, `DOCMEM_NMT_*`
    environment variables, then `overrides` (command-line flags).

    Args:
        path (Path | None): A TOML file with a `[tool.docmem-nmt]` table (e.g. pyproject.toml)
            or a plain `key = value` file. None means defaults only.
        overrides (Mapping | None): Values from the command line, by config key.
        printer (Printer | None): Receives a warning for every unknown key.

    Returns:
        RunConfig: The validated configuration.
    """
    entries = file_entries(path) if path is not None else []
    entries += env_entries()
    entries += [Entry(key, value) for key, value in (overrides or {}).items() if value is not None]
    config = RunConfig().apply(entries)
    config.validate()
    if printer is not None:
        for key in config.unknown_keys:
            printer.warning(f"Unknown configuration key ignored: {key}")
    return config
