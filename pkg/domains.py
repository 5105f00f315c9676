from __future__ import annotations

from functools import lru_cache
from typing import Dict, Tuple

from faker import Faker

# A bundled slice of valid ICD-10 codes (chapter samples across A..Z).
# Used both as the `icd` column vocabulary and as the built-in "icd10" mask domain.
ICD10_CODES: Tuple[str, ...] = (
    "A00.0", "A01.1", "A09.0", "A15.0", "A37.0", "A41.9", "B01.9", "B02.9", "B18.1", "B20.3",
    "B34.9", "C00.2", "C00.6", "C18.7", "C34.1", "C50.9", "C61.0", "D50.0", "D51.3", "D64.9",
    "E03.9", "E10.9", "E11.9", "E66.9", "E78.5", "F10.2", "F20.0", "F32.9", "F41.1", "F71.1",
    "F71.8", "G20.0", "G29.3", "G30.1", "G35.0", "G40.9", "G43.9", "H10.9", "H25.9", "H40.9",
    "H66.9", "I10.0", "I21.9", "I25.1", "I48.0", "I50.9", "I63.9", "J06.9", "J18.9", "J44.9",
    "J45.9", "K21.9", "K29.7", "K35.8", "K52.9", "K80.2", "L03.9", "L20.9", "L40.0", "M10.9",
    "M17.9", "M25.5", "M54.5", "M79.1", "N18.9", "N39.0", "N40.0", "O80.0", "P07.3", "Q21.0",
    "R05.0", "R10.4", "R50.9", "R51.0", "S06.0", "S52.5", "S72.0", "T14.9", "T78.4", "V43.5",
    "W19.0", "X59.9", "Y83.9", "Z00.0", "Z23.0", "Z30.9", "Z51.1", "Z79.4", "Z87.8", "Z99.2",
)

# Lorem-style vocabulary for the generated `message` sentences.
# Neither keyword token nor any ICD code appears in this list.
SENTENCE_WORDS: Tuple[str, ...] = (
    "force", "food", "second", "direction", "note", "his", "finish", "case", "carry", "wish",
    "quickly", "industry", "international", "visit", "the", "politics", "mother", "resource",
    "charge", "fill", "that", "born", "here", "health", "ever", "nearly", "achieved", "role",
    "method", "must", "late", "why", "hold", "father", "everybody", "big", "according", "he",
    "move", "chance", "data", "under", "line", "left", "nation", "cut", "last", "old", "plan",
    "agree", "across", "story", "team", "write", "sense", "market", "whole", "point", "deal",
    "close", "room", "report", "figure", "state", "around", "simple", "focus", "trade", "guess",
    "value", "happen", "budget", "leader", "speak", "camera", "drive", "north", "paper", "voice",
    "walk", "water", "wonder", "young", "level", "model", "region", "record", "season", "south",
    "table", "tough", "usually", "check", "common", "could", "daughter", "east", "energy", "fight",
    "green", "heart", "image", "job", "kind", "light", "major", "music", "office", "owner",
    "piece", "quality", "reason", "scene", "skill", "sound", "stage", "system", "test", "theory",
    "travel", "view", "west", "wind", "word", "yard", "yet", "would", "about", "after",
)

# Default sensitive keyword tokens. The rare one is emitted with p=0.01, the frequent one with p=0.1.
RARE_KEYWORD = "RareKeyword"
FREQUENT_KEYWORD = "FrequentKeyword"

MARITAL_STATUS_HIERARCHY: Dict[str, str] = {
    "Single": "Not Married",
    "Divorced": "Not Married",
    "Widowed": "Not Married",
    "Never Married": "Not Married",
    "Married": "Married",
    "Separated": "Married",
    "Civil Partnership": "Married",
}

BUILTIN_HIERARCHIES: Dict[str, Dict[str, str]] = {
    "marital_status": MARITAL_STATUS_HIERARCHY,
}

_SURROGATE_COUNT = 200
_SURROGATE_SEED = 20190601


@lru_cache(maxsize=None)
def builtin_domain(name: str) -> Tuple[str, ...]:
    """
    Surrogate values for a built-in mask domain.

    Generated once per process with a fixed Faker seed so every mount in a
    process (and every process on the same Faker release) sees the same table.
    Raises KeyError for unknown names.
    """
    if name == "icd10":
        return ICD10_CODES

    fake = Faker("en_US")
    fake.seed_instance(_SURROGATE_SEED)
    makers = {
        "email": fake.email,
        "name": fake.name,
        "city": fake.city,
    }
    if name not in makers:
        raise KeyError(name)
    make = makers[name]
    seen: Dict[str, None] = {}
    while len(seen) < _SURROGATE_COUNT:
        seen.setdefault(make(), None)
    return tuple(seen)


BUILTIN_DOMAIN_NAMES: Tuple[str, ...] = ("icd10", "email", "name", "city")
