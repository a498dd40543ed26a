"""Tag pool construction: two-step aspect-then-tag prompting of the backend,
strict parsing of the reply, tag normalization, and pool persistence.

The tagging prompt asks the model to first name abstract aspects of a task
and then assign concrete tags under each aspect, replying with a final
``#Aspect2Tags#`` object. Only that object is consumed; the step-1 reasoning
is kept in the build report for audit.
"""

from __future__ import annotations

import ast
import json
import logging
import re
import unicodedata
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from .errors import ParseError, TagEvolError
from .gateway import (
    DEFAULT_MAX_TOKENS,
    DEFAULT_TEMPERATURE,
    BackendError,
    ChatRequest,
    Gateway,
    user_message,
)
from .records import InstructionRecord

log = logging.getLogger(__name__)

POOL_FORMAT_VERSION = 1

TAGGING_PROMPT = """\
You are a tagging system that provides useful tags for task intentions to distinguish tasks for a helpful AI assistant.
#Task {instruction}
Please follow the steps below to assign tags to the given task.
Step 1: Consider from which aspects that tags can be assigned to cover main features of the task and provide a brief explanation. Aspects need to be summarizing, such as 'Required skill'. etc. Please summarize this task with as few aspects as possible.
Step 2: Based on the #Aspect List# obtained in Step 1, assign core tags to the given task from each aspect.

Please reply strictly in the following format:
Step 1 #Aspect List and Explanation#:
Step 2 #Aspect2Tags#:

#Aspect2Tags#
{"xxx":[tag1, tag2, ...], "xxx":[tag1, tag2, ...], ...}
where xxx means aspect you get in step 1.
"""

_SLOT_RE = re.compile(r"\{(instruction|tag_list|budget|word_limit)\}")
_ASPECT2TAGS_RE = re.compile(r"#\s*aspect\s*2\s*tags\s*#", re.IGNORECASE)


class EmptyInstruction(TagEvolError):
    """A tagging prompt was requested for an empty instruction."""


class RejectedTag(TagEvolError):
    """Normalization left nothing usable (e.g. punctuation-only input)."""


class BuildFailed(TagEvolError):
    """Tag pool construction produced no usable tags."""


class PoolFormatError(TagEvolError):
    """A pool file is corrupted or has an unsupported format version."""


def fill_template(template: str, values: dict[str, str]) -> str:
    """Substitute named slots in a single pass, leaving all other text verbatim.

    Single-pass substitution means slot-like text inside the values can never
    be re-expanded, and literal braces elsewhere in the template survive.
    """
    return _SLOT_RE.sub(lambda match: values[match.group(1)], template)


def build_tagging_prompt(record: InstructionRecord | str) -> str:
    """Render the tagging prompt with the instruction substituted verbatim."""
    text = record.instruction if isinstance(record, InstructionRecord) else str(record)
    if not text.strip():
        raise EmptyInstruction("cannot tag an empty instruction")
    return fill_template(TAGGING_PROMPT, {"instruction": text})


def extract_balanced(text: str, open_char: str, close_char: str) -> str | None:
    """Return the first balanced ``open_char``...``close_char`` span, or None.

    Quotes (single and double) are respected so that brackets inside string
    literals do not affect the balance.
    """
    start = text.find(open_char)
    if start < 0:
        return None
    depth = 0
    quote: str | None = None
    i = start
    while i < len(text):
        ch = text[i]
        if quote is not None:
            if ch == "\\":
                i += 2
                continue
            if ch == quote:
                quote = None
        elif ch in "'\"":
            quote = ch
        elif ch == open_char:
            depth += 1
        elif ch == close_char:
            depth -= 1
            if depth == 0:
                return text[start : i + 1]
        i += 1
    return None


def _parse_object_literal(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        pass
    try:
        return ast.literal_eval(text)
    except (ValueError, SyntaxError) as err:
        raise ParseError("BadObject", f"cannot parse tag object: {err}") from err


def parse_tagging_response(text: str) -> dict[str, list[str]]:
    """Extract the aspect-to-tags map that follows the final ``#Aspect2Tags#`` marker.

    The marker match is case-insensitive and ignores surrounding markdown.
    Aspects whose tag list is empty are dropped; an empty result is an error.
    """
    markers = list(_ASPECT2TAGS_RE.finditer(text))
    if not markers:
        raise ParseError("MissingMarker", "no #Aspect2Tags# marker in reply")
    tail = text[markers[-1].end() :]
    object_text = extract_balanced(tail, "{", "}")
    if object_text is None:
        raise ParseError("BadObject", "no tag object after the final marker")
    parsed = _parse_object_literal(object_text)
    if not isinstance(parsed, dict):
        raise ParseError("BadObject", "tag payload is not an object")
    result: dict[str, list[str]] = {}
    for aspect, tags in parsed.items():
        if isinstance(tags, str):
            tags = [tags]
        if not isinstance(tags, (list, tuple)):
            continue
        cleaned = [str(t) for t in tags if isinstance(t, (str, int, float)) and str(t).strip()]
        if cleaned:
            result[str(aspect)] = cleaned
    if not result:
        raise ParseError("Empty", "no aspects with tags in reply")
    return result


def _is_edge_punct(ch: str) -> bool:
    return unicodedata.category(ch).startswith("P")


def normalize_tag(raw: str) -> str:
    """Canonical tag form: lowercase, single-spaced, edge punctuation stripped.

    Leading and trailing runs of punctuation and whitespace are removed
    together, so the result starts and ends on a word character and the
    function is idempotent. Raises :class:`RejectedTag` when nothing survives.
    """
    text = str(raw).lower()
    start, end = 0, len(text)
    while start < end and (text[start].isspace() or _is_edge_punct(text[start])):
        start += 1
    while end > start and (text[end - 1].isspace() or _is_edge_punct(text[end - 1])):
        end -= 1
    text = " ".join(text[start:end].split())
    if not text:
        raise RejectedTag(f"nothing left after normalizing {raw!r}")
    return text


@dataclass
class TagEntry:
    """One normalized tag under one normalized aspect, with bookkeeping."""

    tag: str
    aspect: str
    surface_forms: set[str] = field(default_factory=set)
    sources: set[str] = field(default_factory=set)
    count: int = 0


@dataclass
class TagPool:
    """Merged tag collection keyed by (aspect, tag)."""

    entries: dict[tuple[str, str], TagEntry] = field(default_factory=dict)
    model: str = ""
    built_from: dict | None = None

    def add(self, aspect: str, tag: str, surface: str, source: str) -> None:
        entry = self.entries.get((aspect, tag))
        if entry is None:
            entry = TagEntry(tag=tag, aspect=aspect)
            self.entries[(aspect, tag)] = entry
        entry.surface_forms.add(surface)
        entry.sources.add(source)
        entry.count += 1

    def distinct_tags(self) -> list[str]:
        """Distinct tag strings ignoring aspect, sorted; the sampling space."""
        return sorted({tag for (_, tag) in self.entries})

    @property
    def distinct_tag_count(self) -> int:
        return len({tag for (_, tag) in self.entries})

    @property
    def entry_count(self) -> int:
        return len(self.entries)


@dataclass
class TagPoolBuildReport:
    """Outcome of one pool build: per-record failures and step-1 audit text."""

    total_records: int = 0
    tagged_records: int = 0
    failures: list[dict] = field(default_factory=list)
    preambles: dict[str, str] = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "total_records": self.total_records,
            "tagged_records": self.tagged_records,
            "failures": self.failures,
            "preambles": self.preambles,
        }


def _reply_preamble(text: str) -> str:
    """Reply text before the final marker: the step-1 reasoning, kept for audit."""
    markers = list(_ASPECT2TAGS_RE.finditer(text))
    if not markers:
        return ""
    return text[: markers[-1].start()].strip()


def build_tag_pool(
    records: Sequence[InstructionRecord],
    gateway: Gateway,
    retries_per_record: int = 2,
    *,
    model: str,
    temperature: float = DEFAULT_TEMPERATURE,
    max_tokens: int = DEFAULT_MAX_TOKENS,
) -> tuple[TagPool, TagPoolBuildReport]:
    """Tag every record through the gateway and merge the results into a pool.

    Unparseable replies are retried with the identical prompt up to
    ``retries_per_record`` times; records that still fail are recorded in the
    report, not fatal. Merging runs single-threaded over results in input
    order, so the pool is deterministic for a deterministic backend.
    """
    records = list(records)
    if not records:
        raise BuildFailed("no records to tag")

    def tag_one(record: InstructionRecord):
        prompt = build_tagging_prompt(record)
        request = ChatRequest(
            model=model,
            messages=(user_message(prompt),),
            temperature=temperature,
            max_tokens=max_tokens,
        )
        last_error: Exception | None = None
        for _ in range(retries_per_record + 1):
            try:
                response = gateway.complete(request)
            except BackendError as err:
                # The gateway already retried transient failures; give up on this record.
                return record, None, "", str(err)
            try:
                parsed = parse_tagging_response(response.content)
            except ParseError as err:
                last_error = err
                continue
            return record, parsed, _reply_preamble(response.content), None
        return record, None, "", str(last_error)

    results = gateway.map_in_order(tag_one, records)

    pool = TagPool(model=model)
    report = TagPoolBuildReport(total_records=len(records))
    for record, parsed, preamble, error in results:
        if parsed is None:
            report.failures.append({"record_id": record.id, "error": error})
            continue
        report.tagged_records += 1
        if preamble:
            report.preambles[record.id] = preamble
        for aspect_raw, tags in parsed.items():
            try:
                aspect = normalize_tag(aspect_raw)
            except RejectedTag:
                continue
            for tag_raw in tags:
                try:
                    tag = normalize_tag(tag_raw)
                except RejectedTag:
                    continue
                pool.add(aspect, tag, surface=tag_raw, source=record.id)
    if not pool.entries:
        raise BuildFailed(
            f"no usable tags from {len(records)} records ({len(report.failures)} record failures)"
        )
    return pool, report


def save_pool(pool: TagPool, path: str | Path) -> None:
    """Persist a pool as JSON; sets become sorted lists so saves are stable."""
    entries = [
        {
            "tag": entry.tag,
            "aspect": entry.aspect,
            "surface_forms": sorted(entry.surface_forms),
            "sources": sorted(entry.sources),
            "count": entry.count,
        }
        for (_, _), entry in sorted(pool.entries.items())
    ]
    payload = {
        "version": POOL_FORMAT_VERSION,
        "model": pool.model,
        "built_from": pool.built_from,
        "entries": entries,
    }
    Path(path).write_text(
        json.dumps(payload, ensure_ascii=False, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def load_pool(path: str | Path) -> TagPool:
    """Load a pool saved by :func:`save_pool`; lossless round trip."""
    try:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as err:
        raise PoolFormatError(f"{path}: not valid JSON: {err}") from err
    if not isinstance(payload, dict):
        raise PoolFormatError(f"{path}: expected a JSON object")
    if payload.get("version") != POOL_FORMAT_VERSION:
        raise PoolFormatError(f"{path}: unsupported pool version {payload.get('version')!r}")
    pool = TagPool(model=payload.get("model", ""), built_from=payload.get("built_from"))
    try:
        for item in payload["entries"]:
            entry = TagEntry(
                tag=item["tag"],
                aspect=item["aspect"],
                surface_forms=set(item["surface_forms"]),
                sources=set(item["sources"]),
                count=int(item["count"]),
            )
            pool.entries[(entry.aspect, entry.tag)] = entry
    except (KeyError, TypeError, ValueError) as err:
        raise PoolFormatError(f"{path}: malformed pool entry: {err}") from err
    return pool
