from __future__ import annotations

import json
import logging
import re
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

from pydantic import ValidationError

from domains import BUILTIN_DOMAIN_NAMES, BUILTIN_HIERARCHIES
from matcher import PatternCompileError, compile_policy, compiled_for
from policy_models import (
    DEFAULT_MAX_MATCH_BYTES,
    GeneralizeTransform,
    MaskTransform,
    PolicySpec,
    Rule,
)

logger = logging.getLogger(__name__)

_JSON_ESCAPES = set('"\\/bfnrtu')
_TAGS = {"re", "dict", "redact", "mask", "generalize", "diff_priv"}


class PolicyError(ValueError):
    """Base class for everything that can go wrong loading a policy."""


class PolicySyntaxError(PolicyError):
    pass


class SchemaError(PolicyError):
    def __init__(self, path: str, message: str, errors: Optional[List[Dict[str, Any]]] = None):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path
        self.errors = errors or []


class PatternError(PolicyError):
    def __init__(self, rule_index: int, pattern_index: int, message: str):
        self.path = f"rules[{rule_index}].patterns[{pattern_index}]"
        super().__init__(f"{self.path}: {message}")
        self.rule_index = rule_index
        self.pattern_index = pattern_index


class UnknownDomain(PolicyError):
    def __init__(self, domain: str, where: str = ""):
        self.domain = domain
        prefix = f"{where}: " if where else ""
        super().__init__(f"{prefix}unknown value domain '{domain}' (give `values`, a `source` file, or one of: {', '.join(BUILTIN_DOMAIN_NAMES)}).")


def format_loc(loc: Sequence[Union[str, int]]) -> str:
    """('rules', 0, 'transformation', 'diff_priv', 'e') -> 'rules[0].transformation.e'"""
    out = ""
    prev: Union[str, int, None] = None
    for part in loc:
        if isinstance(part, int):
            out += f"[{part}]"
        elif part in _TAGS and (prev == "transformation" or isinstance(prev, int)):
            # Discriminated-union tag, not a field.
            pass
        else:
            out += f".{part}" if out else str(part)
        prev = part
    return out


def repair_backslashes(text: str) -> str:
    """
    Turn lone backslashes that do not start a JSON escape into literal ones.

    Hand-written regex policies often contain sequences such as `\\.` that JSON
    rejects. Valid escapes (including `\\\\`) are left as they are.
    """

    def _fix(m: re.Match) -> str:
        ch = m.group(1)
        if ch in _JSON_ESCAPES:
            return m.group(0)
        return "\\\\" + ch

    return re.sub(r"\\(.)", _fix, text, flags=re.DOTALL)


def _decode(raw: bytes) -> Any:
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as e:
        raise PolicySyntaxError(f"policy is not valid UTF-8 (byte {e.start}).") from e

    repaired = repair_backslashes(text)
    if repaired != text:
        logger.warning("policy contains invalid JSON escapes; treating lone backslashes as literal")
    try:
        return json.loads(repaired)
    except json.JSONDecodeError as e:
        raise PolicySyntaxError(f"malformed policy JSON at line {e.lineno}, column {e.colno}: {e.msg}") from e


def _load_sidecar(ref: str, base_dir: Optional[Path]) -> Any:
    path = Path(ref)
    if not path.is_absolute() and base_dir is not None:
        path = base_dir / path
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError as e:
        raise SchemaError("", f"sidecar table not found: {path}") from e
    except (OSError, UnicodeDecodeError, json.JSONDecodeError) as e:
        raise SchemaError("", f"cannot read sidecar table {path}: {e}") from e


def _resolve_mask(t: MaskTransform, where: str, base_dir: Optional[Path]) -> MaskTransform:
    if t.source is None:
        # An empty table names no surrogates, same as a domain that does not exist.
        if (t.values is None and t.domain not in BUILTIN_DOMAIN_NAMES) or t.values == []:
            raise UnknownDomain(t.domain, where)
        return t
    loaded = _load_sidecar(t.source, base_dir)
    if not isinstance(loaded, list) or not all(isinstance(v, str) for v in loaded):
        raise SchemaError(f"{where}.source", "sidecar must be a JSON list of strings.")
    if not loaded:
        raise UnknownDomain(t.domain, where)
    return t.model_copy(update={"values": loaded, "source": None})


def _resolve_hierarchy(t: GeneralizeTransform, rule_index: int, where: str, base_dir: Optional[Path]) -> GeneralizeTransform:
    if isinstance(t.hierarchy, dict):
        return t if t.domain else t.model_copy(update={"domain": f"rule{rule_index}"})

    name = t.hierarchy
    if name in BUILTIN_HIERARCHIES:
        table = dict(BUILTIN_HIERARCHIES[name])
        domain = t.domain or name
    else:
        loaded = _load_sidecar(name, base_dir)
        if not isinstance(loaded, dict) or not loaded or not all(isinstance(k, str) and isinstance(v, str) for k, v in loaded.items()):
            raise SchemaError(f"{where}.hierarchy", "sidecar must be a non-empty JSON object of string -> string.")
        table = loaded
        domain = t.domain or Path(name).stem
    return t.model_copy(update={"hierarchy": table, "domain": domain})


def _resolve_tables(policy: PolicySpec, base_dir: Optional[Path]) -> PolicySpec:
    rules: List[Rule] = []
    changed = False
    for i, rule in enumerate(policy.rules):
        t = rule.transformation
        where = f"rules[{i}].transformation"
        if isinstance(t, MaskTransform):
            new_t = _resolve_mask(t, where, base_dir)
        elif isinstance(t, GeneralizeTransform):
            new_t = _resolve_hierarchy(t, i, where, base_dir)
        else:
            new_t = t
        if new_t is not t:
            changed = True
            rule = rule.model_copy(update={"transformation": new_t})
        rules.append(rule)
    if not changed:
        return policy
    # Re-validate so cross-rule checks see the resolved tables.
    return PolicySpec.model_validate(policy.model_copy(update={"rules": rules}).model_dump(by_alias=True))


def validate_policy(data: Any, *, base_dir: Optional[Path] = None, max_match_bytes: int = DEFAULT_MAX_MATCH_BYTES) -> PolicySpec:
    """Validate an already-decoded policy object, resolve its tables, and compile its patterns."""
    if max_match_bytes < 1:
        raise ValueError("max_match_bytes must be >= 1.")
    try:
        policy = PolicySpec.model_validate(data)
        policy = _resolve_tables(policy, base_dir)
    except ValidationError as e:
        errors = e.errors()
        first = errors[0]
        raise SchemaError(format_loc(first["loc"]), first["msg"], errors) from e

    try:
        compiled = compile_policy(policy, max_match_bytes)
    except PatternCompileError as e:
        raise PatternError(e.rule_index, e.pattern_index, str(e)) from e
    policy._compiled = compiled
    policy._max_match_bytes = max_match_bytes
    return policy


def parse_policy(raw: bytes, *, base_dir: Optional[Path] = None, max_match_bytes: int = DEFAULT_MAX_MATCH_BYTES) -> PolicySpec:
    """
    Parse a behaviour-specification file.

    Rules:
    - Input must be UTF-8 JSON; invalid backslash escapes are repaired with a warning.
    - Unknown fields anywhere are rejected (SchemaError with a path like `rules[0].patterns`).
    - Sidecar tables (`source`, hierarchy file names) are loaded relative to
      `base_dir` and inlined, so the returned policy is self-contained.
    - Every pattern is compiled; the first rejected one raises PatternError.
    """
    return validate_policy(_decode(raw), base_dir=base_dir, max_match_bytes=max_match_bytes)


def load_policy(path: Union[str, Path], *, max_match_bytes: int = DEFAULT_MAX_MATCH_BYTES) -> PolicySpec:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as e:
        raise PolicyError(f"cannot read policy file {path}: {e.strerror or e}") from e
    return parse_policy(raw, base_dir=path.parent, max_match_bytes=max_match_bytes)


def empty_policy(*, do_read: bool = True, do_write: bool = True) -> PolicySpec:
    return validate_policy({"do_read": do_read, "do_write": do_write, "rules": []})


def serialize_policy(policy: PolicySpec) -> bytes:
    return policy.model_dump_json(by_alias=True, exclude_none=True, indent=2).encode("utf-8")


def max_pattern_extent(policy: PolicySpec) -> int:
    """Longest possible match in bytes (0 for an empty policy), capped at max_match_bytes."""
    return compiled_for(policy).extent
