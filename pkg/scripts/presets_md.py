from __future__ import annotations

import importlib.util
import sys
from pathlib import Path
from typing import TYPE_CHECKING

if TYPE_CHECKING:
    from docmem_nmt.presets import PresetMapping

START_COMMENT = "<!-- GENERATED-PRESETS-LIST -->"
END_COMMENT = "<!-- END-GENERATED-PRESETS-LIST -->"


def presets_markdown(presets: PresetMapping) -> str:
    lines = [
        "<!-- @generated by scripts/presets_md.py -->",
        "| Preset | Hidden | Embedding | Alignment | LM hidden | Document GRU | Use |",
        "|---|---|---|---|---|---|---|",
    ]
    lines += [
        f"| `{name}` | {p['hidden']} | {p['embed']} | {p['align']} | {p['lm_hidden']} | {p['doc_hidden']} "
        f"| {p['description']} |"
        for name, p in presets.items()
    ]
    return "\n".join(lines)


def update_readme_with_presets_list() -> None:
    """
    Update the README file with the table of dimension presets.

    The content between the start and end comments is replaced. Exits with 1 when
    the README changed, so the script can run as a pre-commit hook.
    """
    readme_file = Path(__file__).resolve().parent.parent / "README.md"
    markdown_content = presets_markdown(import_presets())

    with readme_file.open("r+", encoding="utf-8") as f:
        readme_content = f.read()
        start_index = readme_content.find(START_COMMENT) + len(START_COMMENT)
        end_index = readme_content.find(END_COMMENT)
        updated_readme_content = (
            readme_content[:start_index] + "\n" + markdown_content + "\n" + readme_content[end_index:]
        )
        if updated_readme_content != readme_content:
            f.seek(0)
            f.write(updated_readme_content)
            f.truncate()
            print("Presets table has been updated in the README file.")  # noqa: T201
            sys.exit(1)


def import_presets() -> PresetMapping:
    """
    Load PRESETS from src/docmem_nmt/presets.py without importing the package.

    pre-commit may run this without the project environment (and numpy) installed.
    """
    presets_file = Path(__file__).resolve().parent.parent / "src/docmem_nmt/presets.py"
    spec = importlib.util.spec_from_file_location("presets", presets_file)
    assert spec is not None and spec.loader is not None
    module = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(module)
    presets: PresetMapping = module.PRESETS
    return presets


if __name__ == "__main__":
    update_readme_with_presets_list()
