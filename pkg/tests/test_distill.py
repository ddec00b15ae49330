import json
import random

import pytest

from ragstar.distill import (
    DistillRecord,
    StepRecord,
    export_dataset,
    interleave,
    manifest_path,
    parse_cot,
    run_pipeline,
    sample_and_label,
    synthesize_steps,
)
from ragstar.evaluation import QAExample, load_dataset
from ragstar.history import ReasoningHistory
from ragstar.policy import ScriptedBackend
from ragstar.verifier import LLMJudge

from conftest import LIFEHITS, QUESTION

THREE = ("Step 1: Who is the director of Life Hits?\nAnswer 1: Christian E. Christiansen\n"
         "Step 2: When was Christian E. Christiansen born?\nAnswer 2: 1998\n"
         "Step 3: Who is the director of Harbor Lights?\nAnswer 3: Maury Dexter\nFinal answer: Life Hits")


def fixed_judge(query="LABEL: CONSISTENT", answer="LABEL: ALIGNED"):
    return LLMJudge(ScriptedBackend([{"task": "judge-query", "replies": [query]},
                                     {"task": "judge-answer", "replies": [answer]}]))


class TestParseCot:
    def test_cumulative_histories(self):
        steps = parse_cot(QUESTION, THREE)
        assert [len(s.history.steps) for s in steps] == [0, 1, 2]
        assert steps[2].history.steps[1].answer == "1998"
        assert steps[2].sub_query == "Who is the director of Harbor Lights?"
        assert all(s.history.question == QUESTION for s in steps)

    def test_single_step(self):
        steps = parse_cot("q", "Step 1: Who?\nAnswer 1: Me")
        assert len(steps) == 1 and steps[0].history.steps == ()

    @pytest.mark.parametrize("text", [
        "no markers here",
        "Step 1: a\nAnswer 1: b\nStep 3: c\nAnswer 3: d",
        "Step 1: a\nStep 2: b\nAnswer 1: x",
    ])
    def test_malformed(self, text):
        with pytest.raises(ValueError):
            parse_cot("q", text)

    def test_synthesize_skips_unparseable(self, policy):
        assert synthesize_steps(QAExample("q2", "What is the capital of Denmark?", ["Copenhagen"]), policy) == []
        assert len(synthesize_steps(QAExample("q1", QUESTION, ["Life Hits"]), policy)) == 3


class TestSampleAndLabel:
    def test_seeded_choice(self, retriever):
        steps = parse_cot(QUESTION, THREE)
        picks = {sample_and_label(steps, fixed_judge(), retriever, f"s{i}").step_index for i in range(30)}
        assert picks == {0, 1, 2}
        a = sample_and_label(steps, fixed_judge(), retriever, "fixed")
        b = sample_and_label(steps, fixed_judge(), retriever, "fixed")
        assert a.step_index == b.step_index == random.Random("fixed").randrange(3)

    def test_conflict_record(self, judge, retriever):
        steps = parse_cot(QUESTION, THREE)
        seed = next(s for s in range(100) if random.Random(s).randrange(3) == 1)
        rec = sample_and_label(steps, judge, retriever, seed, source="toy", example_id="q1")
        assert (rec.r_q, rec.r_a, rec.refined_answer) == (1, 2, "1972")
        assert rec.target() == "QUERY: CONSISTENT\nANSWER: CONFLICT\nREFINED: 1972"
        assert "Answer 1: Christian E. Christiansen" in rec.prompt()
        assert "d2" in [d.id for d in rec.documents]

    def test_unparseable_judge_filtered(self, retriever):
        steps = parse_cot("q", "Step 1: Who?\nAnswer 1: Me")
        assert sample_and_label(steps, fixed_judge(query="dunno"), retriever, 0) is None

    def test_conflict_without_refined_filtered(self, retriever):
        steps = parse_cot(QUESTION, THREE)
        assert sample_and_label(steps, fixed_judge(answer="LABEL: CONFLICT"), retriever, 0) is None


def test_record_invariant():
    with pytest.raises(ValueError):
        DistillRecord("q", ReasoningHistory("q"), "s", "a", 1, 2, None, "", "src")


def test_interleave_round_robin():
    a = [QAExample(f"a{i}", "q", ["x"]) for i in range(3)]
    b = [QAExample(f"b{i}", "q", ["x"]) for i in range(1)]
    merged = interleave({"A": a, "B": b}, seed=1)
    assert [name for name, _ in merged] == ["A", "B", "A", "A"]
    assert sorted(e.id for _, e in merged if _ == "A") == ["a0", "a1", "a2"]
    assert merged == interleave({"A": a, "B": b}, seed=1)


def test_pipeline_and_export(tmp_path, policy, judge, retriever):
    examples = load_dataset(LIFEHITS / "dataset.jsonl")
    result = run_pipeline({"lifehits": examples}, policy, judge, retriever, seed=0)
    assert result.skipped == 1  # the Denmark solution has no step markers
    assert len(result.records) + result.filtered + result.skipped == len(examples)
    again = run_pipeline({"lifehits": examples}, policy, judge, retriever, seed=0, jobs=3)
    assert [r.target() for r in again.records] == [r.target() for r in result.records]

    out = tmp_path / "rm.jsonl"
    manifest = export_dataset(result.records, out, filtered=result.filtered, skipped=result.skipped)
    rows = [json.loads(line) for line in out.read_text().splitlines()]
    assert len(rows) == manifest["records"] == len(result.records)
    assert set(rows[0]) >= {"input", "target", "source", "r_q", "r_a"}
    on_disk = json.loads(manifest_path(out).read_text())
    assert on_disk["skipped"] == 1 and sum(on_disk["r_a"].values()) == len(rows)

    export_dataset(result.records, tmp_path / "chat.jsonl", "chat")
    chat = json.loads((tmp_path / "chat.jsonl").read_text().splitlines()[0])
    assert [m["role"] for m in chat["messages"]] == ["user", "assistant"]


def test_export_rejects_format(tmp_path):
    with pytest.raises(ValueError):
        export_dataset([], tmp_path / "x.jsonl", "parquet")


def test_empty_export(tmp_path):
    manifest = export_dataset([], tmp_path / "x.jsonl")
    assert manifest["records"] == 0 and (tmp_path / "x.jsonl").read_text() == ""
