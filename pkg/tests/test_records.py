from __future__ import annotations

import json

import pytest
from hypothesis import given
from hypothesis import strategies as st

from tagevol.records import (
    DuplicateId,
    EvolvedRecord,
    InstructionRecord,
    LoadError,
    build_manifest,
    load_dataset,
    merge_rounds,
    record_to_json,
    write_dataset,
)


def _write_lines(path, lines):
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def test_load_returns_records_in_file_order(tmp_path):
    path = tmp_path / "seed.jsonl"
    _write_lines(
        path,
        [
            json.dumps({"id": "a", "instruction": "first task"}),
            json.dumps({"id": "b", "instruction": "second task"}),
        ],
    )
    records = load_dataset(path)
    assert [r.id for r in records] == ["a", "b"]
    assert records[0].instruction == "first task"


def test_load_error_carries_line_number(tmp_path):
    path = tmp_path / "seed.jsonl"
    _write_lines(
        path,
        [
            json.dumps({"instruction": "ok"}),
            json.dumps({"instruction": "ok too"}),
            "{not json",
        ],
    )
    with pytest.raises(LoadError) as excinfo:
        load_dataset(path)
    assert excinfo.value.line == 3


def test_missing_id_defaults_to_filename_and_line(tmp_path):
    path = tmp_path / "seed.jsonl"
    _write_lines(path, [json.dumps({"instruction": "no id here"})])
    records = load_dataset(path)
    assert records[0].id == "seed.jsonl:1"


def test_duplicate_explicit_id_rejected(tmp_path):
    path = tmp_path / "seed.jsonl"
    _write_lines(
        path,
        [
            json.dumps({"id": "dup", "instruction": "one"}),
            json.dumps({"id": "dup", "instruction": "two"}),
        ],
    )
    with pytest.raises(DuplicateId) as excinfo:
        load_dataset(path)
    assert excinfo.value.record_id == "dup"


def test_empty_instruction_is_a_load_error(tmp_path):
    path = tmp_path / "seed.jsonl"
    _write_lines(path, [json.dumps({"id": "x", "instruction": "   "})])
    with pytest.raises(LoadError):
        load_dataset(path)


def test_missing_file_is_a_load_error(tmp_path):
    with pytest.raises(LoadError):
        load_dataset(tmp_path / "absent.jsonl")


def test_blank_lines_are_skipped_but_still_counted(tmp_path):
    path = tmp_path / "seed.jsonl"
    path.write_text(
        json.dumps({"instruction": "first"}) + "\n\n" + json.dumps({"instruction": "second"}) + "\n",
        encoding="utf-8",
    )
    records = load_dataset(path)
    assert [r.id for r in records] == ["seed.jsonl:1", "seed.jsonl:3"]


def _sample_records():
    plain = InstructionRecord(id="s:1", instruction="count the words", response=None, meta={"lang": "en"})
    evolved = EvolvedRecord(
        id="s:1:round1",
        instruction="count the words and also the characters after removing punctuation first",
        response="forty two",
        parent_id="s:1",
        round=1,
        budget=2,
        selected_tags=["character counting", "punctuation removal"],
        candidate_tags=["character counting", "punctuation removal", "loops"],
        plan="add a second counting requirement",
        flags=[],
        raw_digest="0" * 64,
    )
    return [plain, evolved]


def test_write_then_load_round_trips(tmp_path):
    path = tmp_path / "out.jsonl"
    records = _sample_records()
    write_dataset(records, path)
    loaded = load_dataset(path)
    assert loaded == records
    assert isinstance(loaded[1], EvolvedRecord)


def test_writes_are_byte_identical(tmp_path):
    a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    records = _sample_records()
    write_dataset(records, a)
    write_dataset(records, b)
    assert a.read_bytes() == b.read_bytes()


def test_null_response_is_explicit(tmp_path):
    path = tmp_path / "out.jsonl"
    write_dataset([InstructionRecord(id="x", instruction="hello there")], path)
    line = path.read_text(encoding="utf-8").strip()
    assert '"response": null' in line


def test_field_order_is_fixed():
    payload = record_to_json(_sample_records()[1])
    assert list(payload)[:3] == ["id", "instruction", "response"]
    assert list(payload)[3:] == [
        "parent_id",
        "round",
        "budget",
        "selected_tags",
        "candidate_tags",
        "plan",
        "flags",
        "raw_digest",
    ]


def _mk(i, text):
    return InstructionRecord(id=f"r:{i}", instruction=text)


def test_merge_drops_exact_duplicates_keeping_earliest():
    r1 = [_mk(1, "alpha task"), _mk(2, "beta task")]
    r2 = [_mk(3, "beta task"), _mk(4, "gamma task")]
    merged = merge_rounds([r1, r2])
    assert [r.instruction for r in merged] == ["alpha task", "beta task", "gamma task"]
    assert merged[1].id == "r:2"


def test_merge_normalizes_whitespace_for_dedup():
    merged = merge_rounds([[_mk(1, "alpha   task")], [_mk(2, " alpha task ")]])
    assert len(merged) == 1


def test_merge_of_three_distinct_rounds_keeps_everything():
    rounds = [[_mk(f"{k}{i}", f"round {k} item {i}") for i in range(5)] for k in range(3)]
    assert len(merge_rounds(rounds)) == 15


def test_merge_empty_rounds_yields_empty():
    assert merge_rounds([]) == []


def test_merge_prepends_seed_only_when_asked():
    seed = [_mk("s", "seed task")]
    rounds = [[_mk(1, "evolved task")]]
    assert len(merge_rounds(rounds, seed=seed)) == 1
    merged = merge_rounds(rounds, include_seed=True, seed=seed)
    assert [r.id for r in merged] == ["r:s", "r:1"]


def test_merge_is_idempotent():
    rounds = [[_mk(1, "one"), _mk(2, "two")], [_mk(3, "one"), _mk(4, "three")]]
    merged = merge_rounds(rounds)
    assert merge_rounds([merged, merged]) == merged


@given(st.lists(st.text(min_size=1).filter(lambda s: s.strip()), min_size=0, max_size=20))
def test_merge_output_has_no_duplicate_keys(texts):
    records = [InstructionRecord(id=f"h:{i}", instruction=t) for i, t in enumerate(texts)]
    merged = merge_rounds([records])
    keys = [" ".join(r.instruction.split()) for r in merged]
    assert len(keys) == len(set(keys))


def test_manifest_breakdown_covers_all_records():
    seed = _mk("s", "seed task")
    evolved = EvolvedRecord(
        id="e",
        instruction="evolved task text",
        parent_id="r:s",
        round=2,
        budget=3,
        selected_tags=["a", "b", "c"],
        candidate_tags=["a", "b", "c", "d"],
    )
    manifest = build_manifest("demo", ["seed.jsonl"], [seed, evolved, evolved], {"rng_seed": 7})
    assert manifest.record_count == 3
    assert sum(r["count"] for r in manifest.rounds) == 3
    by_round = {r["round"]: r for r in manifest.rounds}
    assert by_round[None]["count"] == 1
    assert by_round[2] == {"round": 2, "budget": 3, "count": 2}


def test_evolved_record_coherence_enforced_unless_flagged():
    with pytest.raises(ValueError):
        EvolvedRecord(
            id="e",
            instruction="text here",
            parent_id="p",
            round=1,
            budget=2,
            selected_tags=["only one"],
            candidate_tags=["only one", "other"],
        )
    flagged = EvolvedRecord(
        id="e",
        instruction="text here",
        parent_id="p",
        round=1,
        budget=2,
        selected_tags=["only one"],
        candidate_tags=["only one", "other"],
        flags=["SubsetSizeMismatch"],
    )
    assert flagged.flags == ["SubsetSizeMismatch"]
