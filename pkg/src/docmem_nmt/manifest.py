"""
Run manifests: everything needed to reproduce a command's outputs.
"""

from __future__ import annotations

from typing import TYPE_CHECKING, Any

import strictyaml as yaml

from docmem_nmt import MANIFEST_FILENAME
from docmem_nmt.errors import DataFormatError
from docmem_nmt.utils import file_hash

if TYPE_CHECKING:
    from collections.abc import Mapping, Sequence
    from pathlib import Path

MANIFEST_SCHEMA = yaml.Map(
    {
        "command": yaml.Str(),
        "seed": yaml.Int(),
        "config": yaml.MapPattern(yaml.Str(), yaml.Str()),
        yaml.Optional("inputs"): yaml.Seq(yaml.Map({"path": yaml.Str(), "blob": yaml.Str()})),
        yaml.Optional("outputs"): yaml.Seq(yaml.Str()),
    }
)


def build_run_manifest(
    command: str,
    config: Mapping[str, Any],
    seed: int,
    inputs: Sequence[Path] = (),
    outputs: Sequence[str] = (),
) -> dict[str, Any]:
    manifest: dict[str, Any] = {
        "command": command,
        "seed": seed,
        "config": {key: str(value) for key, value in config.items()},
    }
    if inputs:
        manifest["inputs"] = [{"path": str(path), "blob": file_hash(path)} for path in inputs]
    if outputs:
        manifest["outputs"] = list(outputs)
    return manifest


def write_run_manifest(
    out_dir: Path,
    command: str,
    config: Mapping[str, Any],
    seed: int,
    inputs: Sequence[Path] = (),
    outputs: Sequence[str] = (),
) -> Path:
    """Write `manifest.yaml` into `out_dir`; input files are identified by their git blob hash."""
    path = out_dir / MANIFEST_FILENAME
    manifest = build_run_manifest(command, config, seed, inputs, outputs)
    path.write_text(yaml.as_document(manifest, MANIFEST_SCHEMA).as_yaml(), encoding="utf-8")
    return path


def read_run_manifest(path: Path) -> dict[str, Any]:
    try:
        data: dict[str, Any] = yaml.load(path.read_text(encoding="utf-8"), MANIFEST_SCHEMA, label=str(path)).data
    except (yaml.YAMLValidationError, yaml.StrictYAMLError) as exc:
        msg = f"invalid run manifest: {exc}"
        raise DataFormatError(msg, path=str(path)) from exc
    return data
