"""
Terminal rendering of training progress, BCD replacements and metric reports.
"""

from __future__ import annotations

import os
import sys
from enum import IntEnum, auto
from itertools import groupby
from typing import TYPE_CHECKING, TextIO

from docmem_nmt import Printer
from docmem_nmt.utils import token_diff

if TYPE_CHECKING:
    from collections.abc import Sequence

    from docmem_nmt import Replacement
    from docmem_nmt.trainer import EpochRecord

PREFIX = "[docmem-nmt]"


def use_color() -> bool:
    """
    NO_COLOR (https://no-color.org/) wins over FORCE_COLOR (https://force-color.org/);
    otherwise color only on a terminal.
    """
    if os.getenv("NO_COLOR") is not None:
        return False
    return os.getenv("FORCE_COLOR") is not None or sys.stdout.isatty()


class Verbosity(IntEnum):
    QUIET = auto()
    NORMAL = auto()
    DEBUG = auto()

    @classmethod
    def from_flags(cls, verbose: bool, quiet: bool) -> Verbosity:
        return cls.DEBUG if verbose else cls.QUIET if quiet else cls.NORMAL


class Palette:
    """ANSI escapes, all empty when color is off."""

    def __init__(self, enabled: bool) -> None:
        codes = {
            "green": "\033[92m",
            "yellow": "\033[93m",
            "red": "\033[91m",
            "purple": "\033[95m",
            "cyan": "\033[96m",
            "bold": "\033[1m",
            "end": "\033[0m",
        }
        self.codes = codes if enabled else dict.fromkeys(codes, "")

    def __call__(self, text: str, *names: str) -> str:
        if not names:
            return text
        return "".join(self.codes[name] for name in names) + text + self.codes["end"]


class ShellPrinter(Printer):
    def __init__(
        self, with_prefix: bool = True, verbosity: Verbosity = Verbosity.NORMAL, color: bool | None = None
    ) -> None:
        self.prefix = PREFIX if with_prefix else ""
        self.verbosity = verbosity
        self.paint = Palette(use_color() if color is None else color)
        # best perplexity so far per (stage, split)
        self.best: dict[tuple[str, str], float] = {}

    def print(self, msg: str, verbosity: Verbosity = Verbosity.NORMAL, out: TextIO | None = None) -> None:
        if self.verbosity < verbosity:
            return
        lines = msg.split("\n")
        if self.prefix:
            lines = [f"{self.paint(self.prefix, 'cyan')} {line}" for line in lines]
        # Bind late due to https://github.com/pytest-dev/pytest/issues/5997
        (out or sys.stdout).write("\n".join(lines) + "\n")

    def debug(self, msg: str) -> None:
        self.print(self.paint(msg, "purple"), Verbosity.DEBUG)

    def info(self, msg: str) -> None:
        self.print(msg)

    def success(self, msg: str) -> None:
        self.print(self.paint(msg, "green", "bold"))

    def warning(self, msg: str) -> None:
        self.print(self.paint(msg, "yellow"), out=sys.stderr)

    def error(self, msg: str) -> None:
        self.print(self.paint(msg, "red", "bold"), Verbosity.QUIET, out=sys.stderr)

    def epoch(self, record: EpochRecord) -> None:
        """One line per evaluated epoch; a new best perplexity for its split is starred."""
        key = (record.stage, record.split)
        improved = record.perplexity < self.best.get(key, float("inf"))
        if improved:
            self.best[key] = record.perplexity
        ppl = self.paint(f"{record.perplexity:.4f}", "green" if improved else "yellow")
        mark = " *" if improved else ""
        self.print(
            f"{record.stage} epoch {record.epoch:>3} {record.split:<5} perplexity {ppl}{mark}"
            f"  lr {record.lr:.4g}  {record.seconds:.1f}s"
        )

    def replacements(self, changes: Sequence[Replacement]) -> None:
        """Changed sentences grouped by document, showing only the changed span."""
        for doc, group in groupby(sorted(changes, key=lambda c: (c.doc, c.pass_index, c.sentence)), lambda c: c.doc):
            rows = [self._replacement(change) for change in group]
            self.print("\n".join([self.paint(f"doc {doc}", "bold"), *rows]))

    def _replacement(self, change: Replacement) -> str:
        gain = self.paint(f"{change.gain:+.3f}", "green" if change.gain >= 0 else "red")
        diff = token_diff(
            change.old,
            change.new,
            self.paint("{", "cyan") + self.codes("red"),
            self.codes("end") + self.paint(" -> ", "cyan") + self.codes("green"),
            self.codes("end") + self.paint("}", "cyan"),
        )
        return f"  pass {change.pass_index} sentence {change.sentence}  {gain}  {diff}"

    def codes(self, name: str) -> str:
        return self.paint.codes[name]

    def report(self, rows: Sequence[tuple[str, str]], title: str | None = None) -> None:
        if not rows:
            return
        width = max(len(name) for name, _ in rows)
        lines = [f"{self.paint(name.ljust(width), 'cyan')}  {self.paint(value, 'bold')}" for name, value in rows]
        if title:
            lines.insert(0, self.paint(title, "bold"))
        self.print("\n".join(lines))
