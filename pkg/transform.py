from __future__ import annotations

import hashlib
import logging
import re
from dataclasses import dataclass, field, replace
from typing import Dict, Iterable, Mapping, Tuple

import numpy as np

from domains import builtin_domain
from policy_io import UnknownDomain
from policy_models import (
    DiffPrivTransform,
    GeneralizeTransform,
    MaskTransform,
    PolicySpec,
    RedactTransform,
)
from spans import MatchSpan

logger = logging.getLogger(__name__)

_NUMBER_RE = re.compile(r"^(\$?)([-+]?)(\d+)(?:\.(\d+))?$")


class TransformError(ValueError):
    pass


class NotNumeric(TransformError):
    pass


@dataclass(frozen=True)
class TransformContext:
    """Per-handle transform state. Tables are shared read-only across handles."""

    rng_seed: int = 0
    domain_tables: Mapping[str, Tuple[str, ...]] = field(default_factory=dict)
    hierarchy_tables: Mapping[str, Mapping[str, str]] = field(default_factory=dict)

    @classmethod
    def for_policy(cls, policy: PolicySpec, rng_seed: int = 0) -> "TransformContext":
        domains: Dict[str, Tuple[str, ...]] = {}
        hierarchies: Dict[str, Mapping[str, str]] = {}
        for rule in policy.rules:
            t = rule.transformation
            if isinstance(t, MaskTransform):
                if t.values is not None:
                    domains[t.domain] = tuple(t.values)
                else:
                    try:
                        domains[t.domain] = builtin_domain(t.domain)
                    except KeyError as e:
                        raise UnknownDomain(t.domain) from e
            elif isinstance(t, GeneralizeTransform) and isinstance(t.hierarchy, dict):
                hierarchies[t.domain or ""] = dict(t.hierarchy)
        return cls(rng_seed=rng_seed, domain_tables=domains, hierarchy_tables=hierarchies)

    def with_seed(self, rng_seed: int) -> "TransformContext":
        return replace(self, rng_seed=rng_seed)


def _seed_bytes(seed: int) -> bytes:
    return (seed & 0xFFFFFFFFFFFFFFFF).to_bytes(8, "little")


def _digest64(*parts: bytes) -> int:
    h = hashlib.blake2b(digest_size=8)
    for p in parts:
        h.update(len(p).to_bytes(4, "little"))
        h.update(p)
    return int.from_bytes(h.digest(), "little")


def fit(value: bytes, n: int) -> bytes:
    """Truncate to n bytes, or right-pad with spaces."""
    if len(value) >= n:
        return value[:n]
    return value + b" " * (n - len(value))


def redact(span_bytes: bytes, ch: bytes = b"*") -> bytes:
    return ch * len(span_bytes)


def mask(span_bytes: bytes, domain: str, ctx: TransformContext) -> bytes:
    table = ctx.domain_tables.get(domain)
    if not table:
        raise UnknownDomain(domain)
    idx = _digest64(_seed_bytes(ctx.rng_seed), span_bytes) % len(table)
    return fit(table[idx].encode("utf-8"), len(span_bytes))


def generalize(span_bytes: bytes, domain: str, ctx: TransformContext) -> bytes:
    table = ctx.hierarchy_tables.get(domain)
    if not table:
        raise UnknownDomain(domain)
    try:
        key = span_bytes.decode("utf-8")
    except UnicodeDecodeError:
        return redact(span_bytes)
    parent = table.get(key)
    if parent is None:
        return redact(span_bytes)
    return fit(parent.encode("utf-8"), len(span_bytes))


def laplace_noise(scale: float, seed: int, *key: int) -> float:
    """One Laplace(0, scale) draw, fully determined by (seed, key)."""
    entropy = [seed & 0xFFFFFFFFFFFFFFFF, *(k & 0xFFFFFFFFFFFFFFFF for k in key)]
    rng = np.random.default_rng(entropy)
    return float(rng.laplace(0.0, scale))


def dp_noise(span_bytes: bytes, spec: DiffPrivTransform, ctx: TransformContext, offset: int = 0) -> bytes:
    """
    Add Laplace(0, sensitivity/epsilon) noise to a decimal number.

    Rules:
    - Accepts an optional leading `$` and sign; the `$` is kept in the output.
    - The rendering keeps the input's number of fraction digits and is fitted
      to the input length. A noisy value that would not fit saturates at the
      largest (or smallest) value that does.
    - The draw is keyed by (handle seed, absolute offset, span bytes), so a
      re-read of the same region under the same handle is identical.
    """
    try:
        text = span_bytes.decode("ascii").strip()
    except UnicodeDecodeError as e:
        raise NotNumeric(f"not a decimal number: {span_bytes[:32]!r}") from e
    m = _NUMBER_RE.match(text)
    if m is None:
        raise NotNumeric(f"not a decimal number: {span_bytes[:32]!r}")

    dollar, sign, whole, frac = m.groups()
    decimals = len(frac) if frac else 0
    value = float(f"{sign}{whole}.{frac}" if frac else f"{sign}{whole}")
    if spec.clamp is not None:
        lo, hi = spec.clamp
        value = min(max(value, lo), hi)

    noisy = value + laplace_noise(spec.scale, ctx.rng_seed, offset, _digest64(span_bytes))
    lo, hi = _render_bounds(len(span_bytes) - len(dollar), decimals)
    # +0.0 turns a rounded -0.0 into 0.0 so no stray sign is rendered.
    noisy = min(max(round(noisy, decimals), lo), hi) + 0.0
    rendered = f"{noisy:.{decimals}f}"
    return fit((dollar + rendered).encode("ascii"), len(span_bytes))


def _render_bounds(width: int, decimals: int) -> Tuple[float, float]:
    """Smallest and largest values that render in `width` bytes with `decimals` fraction digits."""
    frac_width = decimals + 1 if decimals else 0
    step = 10.0 ** -decimals
    pos_digits = width - frac_width
    neg_digits = pos_digits - 1
    hi = 10.0 ** pos_digits - step
    lo = -(10.0 ** neg_digits - step) if neg_digits >= 1 else 0.0
    return round(lo, decimals), round(hi, decimals)


def transform_span(span_bytes: bytes, spec, ctx: TransformContext, offset: int = 0) -> bytes:
    if isinstance(spec, RedactTransform):
        return redact(span_bytes, spec.char.encode("ascii"))
    if isinstance(spec, MaskTransform):
        return mask(span_bytes, spec.domain, ctx)
    if isinstance(spec, GeneralizeTransform):
        return generalize(span_bytes, spec.domain or "", ctx)
    if isinstance(spec, DiffPrivTransform):
        return dp_noise(span_bytes, spec, ctx, offset)
    raise TransformError(f"unsupported transformation {type(spec).__name__}")


def apply(
    buffer: bytes,
    spans: Iterable[MatchSpan],
    policy: PolicySpec,
    ctx: TransformContext,
    base_offset: int = 0,
) -> bytes:
    """
    Replace every span by its rule's transformation output.

    Output length always equals input length. `base_offset` is the file offset
    of buffer[0]; it keys the differential-privacy draws. A span whose
    transformation fails is left unmodified and logged.
    """
    out = bytearray(buffer)
    for span in spans:
        spec = policy.rules[span.rule_index].transformation
        lo, hi = span.start, span.end
        if isinstance(spec, DiffPrivTransform) and span.capture is not None:
            lo, hi = span.capture
        original = bytes(out[lo:hi])
        try:
            replacement = transform_span(original, spec, ctx, base_offset + lo)
        except (TransformError, UnknownDomain) as e:
            logger.warning("rules[%d] left span at offset %d unchanged: %s", span.rule_index, base_offset + lo, e)
            continue
        out[lo:hi] = replacement
    return bytes(out)
