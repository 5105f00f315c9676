from __future__ import annotations

import csv
import random
from typing import Callable, List, Tuple

import pandas as pd
from faker import Faker
from pydantic import BaseModel, Field, model_validator

from domains import FREQUENT_KEYWORD, ICD10_CODES, RARE_KEYWORD, SENTENCE_WORDS
from matcher import scan
from policy_io import validate_policy
from policy_models import PolicySpec
from spans import count_by_rule

CSV_COLUMNS = ["id", "icd", "amount", "message"]

# Patterns used to assess a generated file after the fact.
ICD_REGEX = r"\b[A-Z]\d{2}\.\d\b"
EMAIL_REGEX = r"[\w.+-]+@[\w-]+(?:\.[\w-]+)*\.\w{2,4}"


class DatasetSpec(BaseModel):
    rows: int = Field(default=20_000, ge=0)
    seed: int = 0
    p_icd: float = Field(default=0.05, ge=0, le=1)
    p_kw1: float = Field(default=0.01, ge=0, le=1)
    p_kw2: float = Field(default=0.1, ge=0, le=1)
    p_email: float = Field(default=0.05, ge=0, le=1)
    amount_range: Tuple[float, float] = (1.0, 1000.0)
    kw1: str = RARE_KEYWORD
    kw2: str = FREQUENT_KEYWORD
    header: bool = True

    @model_validator(mode="after")
    def _range_valid(self) -> "DatasetSpec":
        lo, hi = self.amount_range
        if not 0 <= lo <= hi:
            raise ValueError("amount_range must be [lo, hi] with 0 <= lo <= hi.")
        if not self.kw1.strip() or not self.kw2.strip():
            raise ValueError("keyword tokens must not be blank.")
        return self


def _sentence_maker(fake: Faker, rng: random.Random) -> Callable[[], str]:
    words = list(SENTENCE_WORDS)

    def make() -> str:
        return fake.sentence(nb_words=rng.randint(3, 9), variable_nb_words=False, ext_word_list=words)

    return make


def build_frame(spec: DatasetSpec) -> pd.DataFrame:
    """
    One row per record: id, icd, amount, message.

    - icd: a bundled ICD-10 code with probability p_icd, else empty.
    - amount: uniform over amount_range, rendered "$123.45".
    - message: sentence, then kw1 / kw2 / an email (each independently with its
      probability), then another sentence.
    """
    fake = Faker("en_US")
    fake.seed_instance(spec.seed)
    rng = random.Random(spec.seed)
    sentence = _sentence_maker(fake, rng)
    lo, hi = spec.amount_range

    ids: List[int] = []
    icds: List[str] = []
    amounts: List[str] = []
    messages: List[str] = []
    for i in range(spec.rows):
        ids.append(i)
        icds.append(rng.choice(ICD10_CODES) if rng.random() < spec.p_icd else "")
        amounts.append(f"${rng.uniform(lo, hi):.2f}")

        parts = [sentence()]
        if rng.random() < spec.p_kw1:
            parts.append(spec.kw1)
        if rng.random() < spec.p_kw2:
            parts.append(spec.kw2)
        if rng.random() < spec.p_email:
            parts.append(fake.email())
        parts.append(sentence())
        messages.append(" ".join(parts))

    return pd.DataFrame({"id": ids, "icd": icds, "amount": amounts, "message": messages}, columns=CSV_COLUMNS)


def frame_to_csv(df: pd.DataFrame, *, header: bool = True) -> bytes:
    text = df.to_csv(index=False, header=header, quoting=csv.QUOTE_NONNUMERIC, lineterminator="\n")
    return text.encode("utf-8")


def generate(spec: DatasetSpec) -> bytes:
    if spec.rows == 0 and not spec.header:
        return b""
    return frame_to_csv(build_frame(spec), header=spec.header)


def calibration_policy(spec: DatasetSpec) -> PolicySpec:
    """One rule per generated feature, in the order icd, kw1, kw2, email."""
    return validate_policy(
        {
            "do_read": True,
            "do_write": False,
            "rules": [
                {"patterns": [{"type": "re", "spec": ICD_REGEX}], "transformation": {"type": "redact"}},
                {"patterns": [{"type": "dict", "spec": [spec.kw1]}], "transformation": {"type": "redact"}},
                {"patterns": [{"type": "dict", "spec": [spec.kw2]}], "transformation": {"type": "redact"}},
                {"patterns": [{"type": "re", "spec": EMAIL_REGEX}], "transformation": {"type": "redact"}},
            ],
        }
    )


def measure_match_rate(data: bytes, policy: PolicySpec) -> List[int]:
    """Scan hits per rule across the whole file."""
    return count_by_rule(scan(data, policy), len(policy.rules))
