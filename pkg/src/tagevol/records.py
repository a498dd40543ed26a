"""Instruction dataset records, JSONL persistence, merging and manifests.

Dataset files are UTF-8 with one JSON object per line. The only required
field is "instruction"; "id", "response" and "meta" are optional. Evolved
records additionally carry "parent_id", "round", "budget", "selected_tags",
"candidate_tags", "plan", "flags" and "raw_digest". Writes are deterministic:
the same record list always produces byte-identical files.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from .errors import TagEvolError

# Validation-flag codes stored on evolved records.
FLAG_SUBSET_SIZE_MISMATCH = "SubsetSizeMismatch"
FLAG_SUBSET_NOT_IN_CANDIDATES = "SubsetNotInCandidates"
FLAG_TAG_ALREADY_PRESENT = "TagAlreadyPresent"
FLAG_WORD_DELTA_OUT_OF_RANGE = "WordDeltaOutOfRange"
FLAG_FINAL_EQUALS_ORIGINAL = "FinalEqualsOriginal"
VALIDATION_FLAGS = (
    FLAG_SUBSET_SIZE_MISMATCH,
    FLAG_SUBSET_NOT_IN_CANDIDATES,
    FLAG_TAG_ALREADY_PRESENT,
    FLAG_WORD_DELTA_OUT_OF_RANGE,
    FLAG_FINAL_EQUALS_ORIGINAL,
)


class LoadError(TagEvolError):
    """A dataset file could not be read or a line is malformed."""

    def __init__(self, path, line: int, detail: str):
        self.path = str(path)
        self.line = line
        super().__init__(f"{path}:{line}: {detail}")


class DuplicateId(TagEvolError):
    """Two records in one dataset file carry the same id."""

    def __init__(self, path, line: int, record_id: str):
        self.path = str(path)
        self.line = line
        self.record_id = record_id
        super().__init__(f"{path}:{line}: duplicate record id {record_id!r}")


class WriteError(TagEvolError):
    """A dataset file could not be written."""


@dataclass(frozen=True)
class InstructionRecord:
    """One instruction with an optional response and open metadata."""

    id: str
    instruction: str
    response: str | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.id:
            raise ValueError("record id must be nonempty")
        if not self.instruction.strip():
            raise ValueError("instruction must be nonempty")


@dataclass(frozen=True, kw_only=True)
class EvolvedRecord(InstructionRecord):
    """An instruction produced by tag injection, with full provenance.

    Flags are advisory: a record violating a constraint is kept, with the
    violation named in ``flags``. The subset/budget coherence checks below
    are therefore conditional on the corresponding flag being absent.
    """

    parent_id: str
    round: int
    budget: int
    selected_tags: list = field(default_factory=list)
    candidate_tags: list = field(default_factory=list)
    plan: str = ""
    flags: list = field(default_factory=list)
    raw_digest: str = ""

    def __post_init__(self):
        super().__post_init__()
        if not self.parent_id:
            raise ValueError("parent_id must be nonempty")
        if self.round < 1:
            raise ValueError("round must be >= 1")
        if self.budget < 1:
            raise ValueError("budget must be >= 1")
        if FLAG_SUBSET_SIZE_MISMATCH not in self.flags and len(self.selected_tags) != self.budget:
            raise ValueError("selected tag count must equal budget unless flagged")
        if FLAG_SUBSET_NOT_IN_CANDIDATES not in self.flags and not set(self.selected_tags) <= set(self.candidate_tags):
            raise ValueError("selected tags must come from the candidate batch unless flagged")


_EVOLVED_MARKER_KEYS = ("parent_id", "round", "budget")


def record_from_json(obj: dict, *, default_id: str | None = None) -> InstructionRecord:
    """Build a record from one parsed JSONL object. Raises ValueError on schema problems."""
    instruction = obj.get("instruction")
    if not isinstance(instruction, str) or not instruction.strip():
        raise ValueError("missing or empty 'instruction' field")
    if "id" in obj:
        record_id = obj["id"]
        if not isinstance(record_id, str) or not record_id:
            raise ValueError("'id' must be a nonempty string")
    else:
        if default_id is None:
            raise ValueError("missing 'id' field")
        record_id = default_id
    response = obj.get("response")
    if response is not None and not isinstance(response, str):
        raise ValueError("'response' must be a string or null")
    meta = obj.get("meta", {})
    if not isinstance(meta, dict):
        raise ValueError("'meta' must be an object")

    if any(key in obj for key in _EVOLVED_MARKER_KEYS):
        missing = [key for key in _EVOLVED_MARKER_KEYS if key not in obj]
        if missing:
            raise ValueError(f"evolved record missing fields: {', '.join(missing)}")
        return EvolvedRecord(
            id=record_id,
            instruction=instruction,
            response=response,
            meta=meta,
            parent_id=str(obj["parent_id"]),
            round=int(obj["round"]),
            budget=int(obj["budget"]),
            selected_tags=list(obj.get("selected_tags") or []),
            candidate_tags=list(obj.get("candidate_tags") or []),
            plan=obj.get("plan") or "",
            flags=list(obj.get("flags") or []),
            raw_digest=obj.get("raw_digest") or "",
        )
    return InstructionRecord(id=record_id, instruction=instruction, response=response, meta=meta)


def record_to_json(record: InstructionRecord) -> dict:
    """Serialize a record to a JSON-ready dict with fixed field order."""
    payload: dict = {"id": record.id, "instruction": record.instruction, "response": record.response}
    if record.meta:
        payload["meta"] = record.meta
    if isinstance(record, EvolvedRecord):
        payload["parent_id"] = record.parent_id
        payload["round"] = record.round
        payload["budget"] = record.budget
        payload["selected_tags"] = record.selected_tags
        payload["candidate_tags"] = record.candidate_tags
        payload["plan"] = record.plan
        payload["flags"] = record.flags
        payload["raw_digest"] = record.raw_digest
    return payload


def load_dataset(path: str | Path) -> list[InstructionRecord]:
    """Read a JSONL dataset, assigning "<filename>:<line#>" ids where absent."""
    path = Path(path)
    if not path.is_file():
        raise LoadError(path, 0, "file does not exist")
    records: list[InstructionRecord] = []
    seen: set[str] = set()
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as err:
                raise LoadError(path, lineno, f"invalid JSON: {err.msg}") from err
            if not isinstance(obj, dict):
                raise LoadError(path, lineno, "expected a JSON object")
            try:
                record = record_from_json(obj, default_id=f"{path.name}:{lineno}")
            except ValueError as err:
                raise LoadError(path, lineno, str(err)) from err
            if record.id in seen:
                raise DuplicateId(path, lineno, record.id)
            seen.add(record.id)
            records.append(record)
    return records


def write_dataset(records: Sequence[InstructionRecord], path: str | Path) -> None:
    """Write records as JSONL; reruns with equal input are byte-identical."""
    path = Path(path)
    try:
        with path.open("w", encoding="utf-8", newline="\n") as fh:
            for record in records:
                fh.write(json.dumps(record_to_json(record), ensure_ascii=False))
                fh.write("\n")
    except OSError as err:
        raise WriteError(f"cannot write {path}: {err}") from err


def dedup_key(instruction: str) -> str:
    """Whitespace-normalized instruction text used for exact duplicate removal."""
    return " ".join(instruction.split())


def merge_rounds(
    rounds: Sequence[Sequence[InstructionRecord]],
    include_seed: bool = False,
    seed: Sequence[InstructionRecord] | None = None,
) -> list[InstructionRecord]:
    """Concatenate round datasets in order, then drop exact instruction duplicates.

    Duplicates are detected on whitespace-normalized instruction text; the
    earliest occurrence wins. Seed records are prepended only when
    ``include_seed`` is set.
    """
    ordered: list[InstructionRecord] = []
    if include_seed and seed:
        ordered.extend(seed)
    for round_records in rounds:
        ordered.extend(round_records)
    seen: set[str] = set()
    merged: list[InstructionRecord] = []
    for record in ordered:
        key = dedup_key(record.instruction)
        if key in seen:
            continue
        seen.add(key)
        merged.append(record)
    return merged


@dataclass(frozen=True)
class DatasetManifest:
    """Provenance sidecar for a written dataset file."""

    name: str
    sources: list[str]
    record_count: int
    rounds: list[dict]
    parameters: dict

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "sources": self.sources,
            "record_count": self.record_count,
            "rounds": self.rounds,
            "parameters": self.parameters,
        }


def build_manifest(
    name: str,
    sources: Sequence[str],
    records: Sequence[InstructionRecord],
    parameters: dict,
) -> DatasetManifest:
    """Summarize a record list into a manifest with a per-round breakdown."""
    buckets: dict[tuple, int] = {}
    for record in records:
        if isinstance(record, EvolvedRecord):
            key = (record.round, record.budget)
        else:
            key = (None, None)
        buckets[key] = buckets.get(key, 0) + 1
    rounds = [
        {"round": rnd, "budget": budget, "count": count}
        for (rnd, budget), count in sorted(
            buckets.items(), key=lambda item: (item[0][0] is not None, item[0][0] or 0, item[0][1] or 0)
        )
    ]
    manifest = DatasetManifest(
        name=name,
        sources=[str(s) for s in sources],
        record_count=len(records),
        rounds=rounds,
        parameters=dict(parameters),
    )
    assert manifest.record_count == sum(r["count"] for r in rounds), "round breakdown must cover all records"
    return manifest


def manifest_path(dataset_path: str | Path) -> Path:
    """Sidecar manifest location for a dataset file: <dataset>.manifest.json."""
    return Path(dataset_path).with_suffix(".manifest.json")


def write_manifest(manifest: DatasetManifest, path: str | Path) -> None:
    try:
        Path(path).write_text(
            json.dumps(manifest.to_json(), ensure_ascii=False, indent=2, sort_keys=True) + "\n",
            encoding="utf-8",
        )
    except OSError as err:
        raise WriteError(f"cannot write {path}: {err}") from err
