from typing import TypeAlias, TypedDict


class DimPreset(TypedDict):
    hidden: int
    embed: int
    align: int
    lm_hidden: int
    doc_hidden: int
    description: str


PresetMapping: TypeAlias = dict[str, DimPreset]

DEFAULT_PRESET = "desk"

PRESETS: PresetMapping = {
    "tiny": {
        "hidden": 4,
        "embed": 4,
        "align": 4,
        "lm_hidden": 4,
        "doc_hidden": 4,
        "description": "gradient checks and unit tests",
    },
    "desk": {
        "hidden": 32,
        "embed": 32,
        "align": 16,
        "lm_hidden": 32,
        "doc_hidden": 32,
        "description": "synthetic corpus on a single CPU core",
    },
    "full": {
        "hidden": 512,
        "embed": 512,
        "align": 256,
        "lm_hidden": 512,
        "doc_hidden": 512,
        "description": "full-size models for real document corpora",
    },
}
