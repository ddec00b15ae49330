"""Synthesis of judge-labelled reasoning steps for reward-model fine-tuning."""

import json
import logging
import random
import re
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

from ragstar import templates
from ragstar.evaluation import QAExample
from ragstar.exceptions import JudgeParseError
from ragstar.history import ReasoningHistory
from ragstar.policy import SUBQUERY_SAMPLING, PolicyBackend, SamplingParams
from ragstar.retrieval import Document, RetrievedSet
from ragstar.verifier import ANSWER_LABELS, QUERY_LABELS, _judge_answer, _judge_query, render_documents

logger = logging.getLogger(__name__)

_STEP = re.compile(r"^\s*Step\s+(\d+)\s*[:.]\s*(.+?)\s*$", re.I)
_ANSWER = re.compile(r"^\s*Answer\s+(\d+)\s*[:.]\s*(.+?)\s*$", re.I)

_QUERY_NAMES = {v: k for k, v in QUERY_LABELS.items()}
_ANSWER_NAMES = {v: k for k, v in ANSWER_LABELS.items()}

EXPORT_FORMATS = ("jsonl", "chat")


@dataclass(frozen=True)
class StepRecord:
    history: ReasoningHistory
    sub_query: str
    answer: str


@dataclass
class DistillRecord:
    question: str
    history: ReasoningHistory
    sub_query: str
    answer: str
    r_q: int
    r_a: int
    refined_answer: Optional[str]
    rationale: str
    source: str
    example_id: str = ""
    step_index: int = 0
    documents: List[Document] = field(default_factory=list)

    def __post_init__(self):
        if self.r_q not in (0, 1) or self.r_a not in (1, 2, 3):
            raise ValueError("labels out of range")
        if (self.refined_answer is not None) != (self.r_a == 2):
            raise ValueError("refined answer must be present exactly when r_a == 2")

    def prompt(self) -> str:
        return templates.render(
            "reward_model",
            question=self.question,
            history=self.history.render(),
            sub_query=self.sub_query,
            answer=self.answer,
            documents=render_documents(self.documents),
        )

    def target(self) -> str:
        lines = [f"QUERY: {_QUERY_NAMES[self.r_q]}", f"ANSWER: {_ANSWER_NAMES[self.r_a]}"]
        if self.refined_answer is not None:
            lines.append(f"REFINED: {self.refined_answer}")
        return "\n".join(lines)


def parse_cot(question: str, text: str) -> List[StepRecord]:
    """Split a numbered ``Step i`` / ``Answer i`` solution into cumulative step records."""
    queries, answers = {}, {}
    for line in text.splitlines():
        m = _STEP.match(line)
        if m:
            queries.setdefault(int(m.group(1)), m.group(2))
            continue
        m = _ANSWER.match(line)
        if m:
            answers.setdefault(int(m.group(1)), m.group(2))
    if not queries:
        raise ValueError("no step markers found")
    numbers = sorted(queries)
    if numbers != list(range(1, len(numbers) + 1)):
        raise ValueError(f"steps are not numbered 1..n: {numbers}")
    missing = [n for n in numbers if n not in answers]
    if missing:
        raise ValueError(f"steps without answers: {missing}")

    records, history = [], ReasoningHistory(question)
    for n in numbers:
        records.append(StepRecord(history, queries[n], answers[n]))
        history = history.extend(queries[n], answers[n])
    return records


def synthesize_steps(
    example: QAExample, policy: PolicyBackend, params: SamplingParams = SUBQUERY_SAMPLING
) -> List[StepRecord]:
    """Ask the policy for a numbered solution; an unparseable one yields no steps."""
    text = policy.generate(templates.render("cot", question=example.question), params)
    try:
        return parse_cot(example.question, text)
    except ValueError as err:
        logger.warning("example %s: skipping unparseable solution (%s)", example.id, err)
        return []


def sample_and_label(
    steps: Sequence[StepRecord],
    judge,
    retriever,
    rng_seed,
    k: int = 5,
    source: str = "",
    example_id: str = "",
) -> Optional[DistillRecord]:
    """Label one uniformly drawn step; ``None`` when the judge breaks the format."""
    index = random.Random(rng_seed).randrange(len(steps))
    step = steps[index]
    docs = retriever(step.sub_query, k) if retriever is not None else RetrievedSet(step.sub_query, k)
    try:
        r_q, query_note = _judge_query(step.history, step.sub_query, judge)
        judged = _judge_answer(step.sub_query, step.answer, docs, judge)
    except JudgeParseError as err:
        logger.info("example %s: judge output filtered (%s)", example_id, err)
        return None
    if "conflict_without_refinement" in judged.flags:
        logger.info("example %s: conflict label without a refined answer, filtered", example_id)
        return None
    return DistillRecord(
        question=step.history.question,
        history=step.history,
        sub_query=step.sub_query,
        answer=step.answer,
        r_q=r_q,
        r_a=judged.r_a,
        refined_answer=judged.refined,
        rationale=f"query: {query_note}\nanswer: {judged.rationale}",
        source=source,
        example_id=example_id,
        step_index=index,
        documents=docs.documents,
    )


def interleave(datasets: Dict[str, Sequence[QAExample]], seed: int = 0) -> List[Tuple[str, QAExample]]:
    """Shuffle each dataset with ``seed`` and merge them round-robin."""
    queues = []
    for name, examples in datasets.items():
        items = list(examples)
        random.Random(f"{seed}:{name}").shuffle(items)
        queues.append((name, items))
    merged = []
    for i in range(max((len(items) for _, items in queues), default=0)):
        for name, items in queues:
            if i < len(items):
                merged.append((name, items[i]))
    return merged


@dataclass
class DistillResult:
    records: List[DistillRecord]
    filtered: int = 0
    skipped: int = 0


def run_pipeline(
    datasets: Dict[str, Sequence[QAExample]],
    policy: PolicyBackend,
    judge,
    retriever,
    seed: int = 0,
    params: SamplingParams = SUBQUERY_SAMPLING,
    k: int = 5,
    jobs: int = 1,
) -> DistillResult:
    """At most one labelled record per source example, in interleaved input order."""
    work = interleave(datasets, seed)

    def one(item):
        source, example = item
        steps = synthesize_steps(example, policy, params)
        if not steps:
            return "skipped", None
        record = sample_and_label(steps, judge, retriever, f"{seed}:{source}:{example.id}", k, source, example.id)
        return ("filtered", None) if record is None else ("ok", record)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(one, work))
    else:
        outcomes = [one(item) for item in work]
    result = DistillResult([r for status, r in outcomes if status == "ok"])
    result.filtered = sum(status == "filtered" for status, _ in outcomes)
    result.skipped = sum(status == "skipped" for status, _ in outcomes)
    return result


def manifest_for(records: Sequence[DistillRecord], **extra) -> dict:
    r_q = Counter(str(r.r_q) for r in records)
    r_a = Counter(str(r.r_a) for r in records)
    manifest = {
        "records": len(records),
        "r_q": {label: r_q.get(label, 0) for label in ("0", "1")},
        "r_a": {label: r_a.get(label, 0) for label in ("1", "2", "3")},
        "sources": dict(sorted(Counter(r.source for r in records).items())),
    }
    manifest.update(extra)
    return manifest


def manifest_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.stem + ".manifest.json")


def export_dataset(records: Sequence[DistillRecord], path, format: str = "jsonl", **extra) -> dict:
    """Write instruction pairs as JSON lines plus a ``<stem>.manifest.json`` summary."""
    if format not in EXPORT_FORMATS:
        raise ValueError(f"format must be one of {EXPORT_FORMATS}")
    path = Path(path)
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            meta = {"source": rec.source, "example_id": rec.example_id, "r_q": rec.r_q, "r_a": rec.r_a}
            if format == "chat":
                row = {"messages": [{"role": "user", "content": rec.prompt()},
                                    {"role": "assistant", "content": rec.target()}], **meta}
            else:
                row = {"input": rec.prompt(), "target": rec.target(), **meta}
            fh.write(json.dumps(row, ensure_ascii=False) + "\n")
    manifest = manifest_for(records, format=format, **extra)
    manifest_path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest
