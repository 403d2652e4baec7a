"""
Parameter checkpoints.

Layout: one ASCII header line `DOCMEM-CKPT <n>`, then `n` bytes of YAML manifest
(format version, kind, config echo and the tensor table), then the raw tensors as
little-endian float64 in row-major order, in manifest order.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Any

import numpy as np
import strictyaml as yaml
from packaging.version import InvalidVersion, Version

from docmem_nmt.errors import DataFormatError
from docmem_nmt.params import ParamSet

if TYPE_CHECKING:
    from collections.abc import Mapping
    from pathlib import Path

MAGIC = "DOCMEM-CKPT"
FORMAT_VERSION = Version("1.0")
DTYPE = np.dtype("<f8")

TENSOR_SCHEMA = yaml.Map(
    {
        "name": yaml.Str(),
        "shape": yaml.CommaSeparated(yaml.Int()),
        "offset": yaml.Int(),
        "count": yaml.Int(),
        "frozen": yaml.Bool(),
    }
)
MANIFEST_SCHEMA = yaml.Map(
    {
        "format": yaml.Str(),
        "kind": yaml.Str(),
        yaml.Optional("config"): yaml.MapPattern(yaml.Str(), yaml.Str()),
        "tensors": yaml.Seq(TENSOR_SCHEMA),
    }
)


@dataclass
class Checkpoint:
    kind: str
    params: ParamSet
    config: dict[str, str] = field(default_factory=dict)
    version: Version = FORMAT_VERSION


def _tensor_table(params: ParamSet) -> list[dict[str, Any]]:
    table: list[dict[str, Any]] = []
    offset = 0
    for name, array in params.items():
        if array.ndim == 0:
            msg = f"cannot checkpoint scalar tensor '{name}'"
            raise ValueError(msg)
        table.append(
            {
                "name": name,
                "shape": list(array.shape),
                "offset": offset,
                "count": int(array.size),
                "frozen": name in params.frozen,
            }
        )
        offset += array.size * DTYPE.itemsize
    return table


def dumps_checkpoint(params: ParamSet, kind: str, config: Mapping[str, Any] | None = None) -> bytes:
    manifest: dict[str, Any] = {"format": str(FORMAT_VERSION), "kind": kind}
    if config:
        manifest["config"] = {key: str(value) for key, value in config.items()}
    manifest["tensors"] = _tensor_table(params)
    text = yaml.as_document(manifest, MANIFEST_SCHEMA).as_yaml().encode("utf-8")
    payload = b"".join(np.ascontiguousarray(array, dtype=DTYPE).tobytes() for array in params.values())
    return f"{MAGIC} {len(text)}\n".encode("ascii") + text + payload


def save_checkpoint(path: Path, params: ParamSet, kind: str, config: Mapping[str, Any] | None = None) -> None:
    path.write_bytes(dumps_checkpoint(params, kind, config))


def _split(raw: bytes, label: str) -> tuple[str, bytes]:
    header, _, rest = raw.partition(b"\n")
    magic, _, size = header.decode("ascii", errors="replace").partition(" ")
    if magic != MAGIC or not size.isdigit():
        msg = "not a docmem-nmt checkpoint"
        raise DataFormatError(msg, path=label)
    length = int(size)
    if len(rest) < length:
        msg = "truncated checkpoint manifest"
        raise DataFormatError(msg, path=label)
    try:
        text = rest[:length].decode("utf-8")
    except UnicodeDecodeError as exc:
        msg = "checkpoint manifest is not valid UTF-8"
        raise DataFormatError(msg, path=label) from exc
    return text, rest[length:]


def _check_version(value: str, label: str) -> Version:
    try:
        version = Version(value)
    except InvalidVersion as exc:
        msg = f"invalid checkpoint format version {value!r}"
        raise DataFormatError(msg, path=label) from exc
    if version.major != FORMAT_VERSION.major:
        msg = f"unsupported checkpoint format {version}, this version reads {FORMAT_VERSION.major}.x"
        raise DataFormatError(msg, path=label)
    return version


def loads_checkpoint(raw: bytes, label: str = "<checkpoint>") -> Checkpoint:
    text, payload = _split(raw, label)
    try:
        manifest = yaml.load(text, MANIFEST_SCHEMA, label=label).data
    except (yaml.YAMLValidationError, yaml.StrictYAMLError) as exc:
        msg = f"invalid checkpoint manifest: {exc}"
        raise DataFormatError(msg, path=label) from exc
    version = _check_version(manifest["format"], label)

    params = ParamSet()
    frozen: list[str] = []
    for entry in manifest["tensors"]:
        name, shape, offset, count = entry["name"], tuple(entry["shape"]), entry["offset"], entry["count"]
        if int(np.prod(shape)) != count:
            msg = f"tensor '{name}': shape {shape} does not hold {count} values"
            raise DataFormatError(msg, path=label)
        if offset < 0 or offset + count * DTYPE.itemsize > len(payload):
            msg = f"truncated checkpoint payload at tensor '{name}'"
            raise DataFormatError(msg, path=label)
        values = np.frombuffer(payload, dtype=DTYPE, count=count, offset=offset)
        try:
            params.add(name, values.reshape(shape).astype(np.float64))
        except ValueError as exc:
            raise DataFormatError(str(exc), path=label) from exc
        if entry["frozen"]:
            frozen.append(name)
    params.freeze(frozen)
    return Checkpoint(manifest["kind"], params, dict(manifest.get("config", {})), version)


def load_checkpoint(path: Path) -> Checkpoint:
    return loads_checkpoint(path.read_bytes(), str(path))
