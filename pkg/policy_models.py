from __future__ import annotations

from typing import Annotated, Any, Dict, List, Literal, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, PrivateAttr, StrictBool, field_validator, model_validator

DEFAULT_MAX_MATCH_BYTES = 1024


class _StrictModel(BaseModel):
    # Unknown keys in a security policy are rejected rather than ignored.
    model_config = ConfigDict(extra="forbid", frozen=True)


class RegexPattern(_StrictModel):
    type: Literal["re"]
    spec: str

    @field_validator("spec")
    @classmethod
    def _spec_not_empty(cls, v: str) -> str:
        if not v:
            raise ValueError("regex spec must not be empty.")
        return v


class DictPattern(_StrictModel):
    """Lookup-table pattern. Terms are literal; matching is on their UTF-8 bytes."""

    type: Literal["dict"]
    spec: List[str] = Field(min_length=1)
    case_sensitive: StrictBool = False
    word_boundary: StrictBool = True

    @field_validator("spec")
    @classmethod
    def _terms_not_empty(cls, v: List[str]) -> List[str]:
        for i, term in enumerate(v):
            if term == "":
                raise ValueError(f"dictionary term {i} is empty.")
        return v


Pattern = Annotated[Union[RegexPattern, DictPattern], Field(discriminator="type")]


class RedactTransform(_StrictModel):
    type: Literal["redact"]
    char: str = "*"

    @field_validator("char")
    @classmethod
    def _single_byte(cls, v: str) -> str:
        if len(v.encode("utf-8")) != 1:
            raise ValueError("char must be a single byte (one ASCII character).")
        return v


class MaskTransform(_StrictModel):
    type: Literal["mask"]
    domain: str
    # Inline surrogate table. `source` names a JSON sidecar (list of strings)
    # and is folded into `values` when the policy is loaded.
    values: Optional[List[str]] = None
    source: Optional[str] = None

    @field_validator("domain")
    @classmethod
    def _domain_not_empty(cls, v: str) -> str:
        v = (v or "").strip()
        if not v:
            raise ValueError("domain is required.")
        return v


class GeneralizeTransform(_StrictModel):
    type: Literal["generalize"]
    # Either an inline value -> parent mapping, or the name of a built-in
    # hierarchy / path to a JSON sidecar. Names are resolved at load time.
    hierarchy: Union[Dict[str, str], str]
    domain: Optional[str] = None

    @field_validator("hierarchy")
    @classmethod
    def _hierarchy_not_empty(cls, v: Union[Dict[str, str], str]) -> Union[Dict[str, str], str]:
        if isinstance(v, str):
            v = v.strip()
        if not v:
            raise ValueError("hierarchy must be a non-empty mapping (or a table name).")
        return v


class DiffPrivTransform(_StrictModel):
    type: Literal["diff_priv"]
    mechanism: Literal["laplace"] = "laplace"
    epsilon: float = Field(alias="e", gt=0)
    # Recorded but unused: Laplace noise is (e, 0)-DP.
    delta: float = Field(default=0.0, alias="d", ge=0, lt=1)
    clamp: Optional[Tuple[float, float]] = None

    @field_validator("clamp")
    @classmethod
    def _clamp_ordered(cls, v: Optional[Tuple[float, float]]) -> Optional[Tuple[float, float]]:
        if v is None:
            return None
        lo, hi = v
        if not lo < hi:
            raise ValueError("clamp must be [lo, hi] with lo < hi.")
        return v

    @property
    def sensitivity(self) -> float:
        if self.clamp is None:
            return 1.0
        return float(self.clamp[1] - self.clamp[0])

    @property
    def scale(self) -> float:
        return self.sensitivity / self.epsilon


Transformation = Annotated[
    Union[RedactTransform, MaskTransform, GeneralizeTransform, DiffPrivTransform],
    Field(discriminator="type"),
]


class Rule(_StrictModel):
    patterns: List[Pattern] = Field(min_length=1)
    transformation: Transformation


class PolicySpec(_StrictModel):
    """
    A parsed behaviour-specification file.

    Rules:
    - Rule order is significant (lower index wins ties in the matcher).
    - An empty rule list is a pure passthrough policy.
    - Compiled matchers are attached by `policy_io.parse_policy` and are not
      part of the serialized form.
    """

    do_read: StrictBool
    do_write: StrictBool
    rules: List[Rule]

    _compiled: Any = PrivateAttr(default=None)
    _max_match_bytes: int = PrivateAttr(default=DEFAULT_MAX_MATCH_BYTES)

    @model_validator(mode="after")
    def _mask_domains_consistent(self) -> "PolicySpec":
        seen: Dict[str, List[str]] = {}
        for i, rule in enumerate(self.rules):
            t = rule.transformation
            if isinstance(t, MaskTransform) and t.values is not None:
                prev = seen.setdefault(t.domain, t.values)
                if prev != t.values:
                    raise ValueError(f"rules[{i}].transformation: domain '{t.domain}' is defined twice with different values.")
        return self

    @property
    def max_match_bytes(self) -> int:
        return self._max_match_bytes

    @property
    def compiled(self) -> Any:
        return self._compiled

    @property
    def is_empty(self) -> bool:
        return not self.rules
