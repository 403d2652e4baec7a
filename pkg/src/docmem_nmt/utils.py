from __future__ import annotations

import hashlib
from os.path import commonprefix
from typing import TYPE_CHECKING

if TYPE_CHECKING:
    from collections.abc import Sequence
    from pathlib import Path


def token_diff(
    old: Sequence[str],
    new: Sequence[str],
    diff_open: str = "{",
    diff_separator: str = " -> ",
    diff_close: str = "}",
) -> str:
    """Represent a change of translation highlighting only the changed span of tokens"""
    if list(old) == list(new):
        return " ".join(new)
    prefix = commonprefix((list(old), list(new)))
    old_rest, new_rest = list(old[len(prefix) :]), list(new[len(prefix) :])
    suffix = commonprefix((old_rest[::-1], new_rest[::-1]))[::-1]
    if suffix:
        old_rest, new_rest = old_rest[: -len(suffix)], new_rest[: -len(suffix)]
    changed = f"{diff_open}{' '.join(old_rest)}{diff_separator}{' '.join(new_rest)}{diff_close}"
    return " ".join([*prefix, changed, *suffix])


def git_blob_hash(data: bytes) -> str:
    """Content hash as computed by `git hash-object`."""
    return hashlib.sha1(b"blob %d\0" % len(data) + data, usedforsecurity=False).hexdigest()


def file_hash(path: Path) -> str:
    return git_blob_hash(path.read_bytes())
