from __future__ import annotations

from abc import ABC, abstractmethod
from typing import TYPE_CHECKING, Final, NamedTuple

if TYPE_CHECKING:
    from collections.abc import Sequence

    from docmem_nmt.trainer import EpochRecord

CONFIG_FILENAME: Final[str] = "docmem-nmt.conf"
MANIFEST_FILENAME: Final[str] = "manifest.yaml"


class Replacement(NamedTuple):
    """A coordinate update that changed the translation of one sentence."""

    doc: int
    pass_index: int
    sentence: int
    old: Sequence[str]
    new: Sequence[str]
    # new minus old log-probability under the document model
    gain: float


class Printer(ABC):
    """Where commands send their progress; the CLI uses `ShellPrinter`, tests a mock."""

    @abstractmethod
    def debug(self, msg: str) -> None:
        raise NotImplementedError

    @abstractmethod
    def info(self, msg: str) -> None:
        raise NotImplementedError

    @abstractmethod
    def warning(self, msg: str) -> None:
        raise NotImplementedError

    @abstractmethod
    def error(self, msg: str) -> None:
        raise NotImplementedError

    @abstractmethod
    def success(self, msg: str) -> None:
        raise NotImplementedError

    @abstractmethod
    def epoch(self, record: EpochRecord) -> None:
        raise NotImplementedError

    @abstractmethod
    def replacements(self, changes: Sequence[Replacement]) -> None:
        raise NotImplementedError

    @abstractmethod
    def report(self, rows: Sequence[tuple[str, str]], title: str | None = None) -> None:
        raise NotImplementedError
