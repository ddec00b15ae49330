"""Retrieval-augmented verification of planned steps.

A step is scored twice by a judge model. The query reward is 1 when the
sub-query is a consistent continuation of the history and 0 otherwise. The
answer reward grades the deduced answer against retrieved documents: 1 when
the documents cannot verify it, 2 when they contradict it (a refined answer
taken from the documents comes back with the verdict), 3 when they support
it. The node reward is their product.

Judges end their replies with ``LABEL: <token>`` and, on conflict, a
``REFINED: <answer>`` line.
"""

import re
from dataclasses import dataclass, field
from typing import List, Optional, Protocol, Sequence, Tuple

from ragstar import templates
from ragstar.exceptions import ContractError, JudgeParseError
from ragstar.history import ReasoningHistory
from ragstar.policy import PolicyBackend, SamplingParams
from ragstar.retrieval import Document, RetrievedSet

QUERY_LABELS = {"CONSISTENT": 1, "INCONSISTENT": 0}
ANSWER_LABELS = {"UNVERIFIED": 1, "CONFLICT": 2, "ALIGNED": 3}

JUDGE_SAMPLING = SamplingParams(temperature=0.0, top_p=1.0, max_tokens=256)

_LABEL_LINE = re.compile(r"\bLABEL\s*[:=]\s*[*_`\"'\[]*\s*([A-Za-z_]+)", re.I)
_REFINED_LINE = re.compile(r"^\W*REFINED\s*[:=]\s*(.*?)\s*$", re.I)


class JudgeBackend(Protocol):
    backend_id: str

    def judge_query(self, history: ReasoningHistory, sub_query: str, reask: bool = False) -> str:
        ...

    def judge_answer(
        self, sub_query: str, answer: str, documents: Sequence[Document], reask: bool = False
    ) -> str:
        ...


def render_documents(documents: Sequence[Document]) -> str:
    if not documents:
        return "(no documents)"
    return "\n".join(f"[{i}] {d.title}: {d.text}" for i, d in enumerate(documents, 1))


class LLMJudge:
    """Judge that renders the judge templates and queries a policy-style backend."""

    def __init__(self, backend: PolicyBackend, params: SamplingParams = JUDGE_SAMPLING):
        self.backend = backend
        self.params = params

    @property
    def backend_id(self) -> str:
        return self.backend.backend_id

    def _ask(self, prompt: str, reask: bool) -> str:
        if reask:
            prompt = f"{prompt}\n{templates.load_template('reask')}"
        return self.backend.generate(prompt, self.params)

    def judge_query(self, history, sub_query, reask=False):
        prompt = templates.render(
            "judge_query", question=history.question, history=history.render(), sub_query=sub_query
        )
        return self._ask(prompt, reask)

    def judge_answer(self, sub_query, answer, documents, reask=False):
        prompt = templates.render(
            "judge_answer", sub_query=sub_query, answer=answer, documents=render_documents(documents)
        )
        return self._ask(prompt, reask)


def parse_label(text: str, allowed) -> Optional[str]:
    """Extract the judge label from ``text``.

    The last line carrying a ``LABEL:`` marker decides. Without any marker a
    final line consisting of nothing but an allowed token is accepted.
    Returns ``None`` when no allowed label can be found.
    """
    allowed = {a.upper() for a in allowed}
    lines = [line.strip() for line in text.splitlines() if line.strip()]
    for line in reversed(lines):
        matches = _LABEL_LINE.findall(line)
        if matches:
            token = matches[-1].upper()
            return token if token in allowed else None
    if lines:
        bare = re.sub(r"[^A-Za-z_]", "", lines[-1]).upper()
        if bare in allowed:
            return bare
    return None


def parse_refined(text: str) -> Optional[str]:
    for line in reversed(text.splitlines()):
        match = _REFINED_LINE.match(line)
        if match:
            value = match.group(1).strip().strip("*`\"'").strip()
            return value or None
    return None


def _judge_query(history, sub_query, judge) -> Tuple[int, str]:
    reply = judge.judge_query(history, sub_query)
    label = parse_label(reply, QUERY_LABELS)
    if label is None:
        reply = judge.judge_query(history, sub_query, reask=True)
        label = parse_label(reply, QUERY_LABELS)
    if label is None:
        raise JudgeParseError(f"no query label in judge reply: {reply[-200:]!r}")
    return QUERY_LABELS[label], reply.strip()


@dataclass(frozen=True)
class AnswerJudgement:
    r_a: int
    refined: Optional[str]
    rationale: str = ""
    flags: Tuple[str, ...] = ()


def _judge_answer(sub_query, answer, docs, judge) -> AnswerJudgement:
    documents = docs.documents if isinstance(docs, RetrievedSet) else list(docs or ())
    if not documents:
        return AnswerJudgement(1, None, "no documents retrieved", ("no_documents",))
    reply = judge.judge_answer(sub_query, answer, documents)
    label = parse_label(reply, ANSWER_LABELS)
    if label is None:
        reply = judge.judge_answer(sub_query, answer, documents, reask=True)
        label = parse_label(reply, ANSWER_LABELS)
    if label is None:
        raise JudgeParseError(f"no answer label in judge reply: {reply[-200:]!r}")
    if label == "CONFLICT":
        refined = parse_refined(reply)
        if refined is None:
            return AnswerJudgement(1, None, reply.strip(), ("conflict_without_refinement",))
        return AnswerJudgement(2, refined, reply.strip())
    return AnswerJudgement(ANSWER_LABELS[label], None, reply.strip())


def score_query(history: ReasoningHistory, sub_query: str, judge: JudgeBackend) -> int:
    """Query reward in {0, 1}; raises :class:`JudgeParseError` after one failed re-ask."""
    return _judge_query(history, sub_query, judge)[0]


def score_answer(sub_query: str, answer: str, docs, judge: JudgeBackend) -> Tuple[int, Optional[str]]:
    """Answer reward in {1, 2, 3} and the refined answer (only for 2).

    With no documents the answer is unverifiable and the judge is not called.
    """
    judgement = _judge_answer(sub_query, answer, docs, judge)
    return judgement.r_a, judgement.refined


def combine(r_q: int, r_a: int) -> float:
    if isinstance(r_q, bool) or r_q not in (0, 1):
        raise ContractError(f"r_q must be 0 or 1, got {r_q!r}")
    if isinstance(r_a, bool) or r_a not in (1, 2, 3):
        raise ContractError(f"r_a must be 1, 2 or 3, got {r_a!r}")
    return float(r_a * r_q)


@dataclass(frozen=True)
class Ablations:
    """Switches that remove one component of verification."""

    query_reward: bool = True
    answer_reward: bool = True
    retrieval: bool = True
    refine: bool = True


@dataclass(frozen=True)
class Verdict:
    r_q: int
    r_a: int
    refined_answer: Optional[str]
    rationale: str
    reward: float
    flags: Tuple[str, ...] = field(default_factory=tuple)

    def __post_init__(self):
        if self.reward != combine(self.r_q, self.r_a):
            raise ContractError("reward must equal r_a * r_q")
        if (self.refined_answer is not None) != (self.r_a == 2):
            raise ContractError("a refined answer is present exactly when r_a == 2")


def verify(
    history: ReasoningHistory,
    sub_query: str,
    answer: str,
    docs,
    judge: JudgeBackend,
    ablations: Ablations = Ablations(),
    answer_query: Optional[str] = None,
) -> Verdict:
    """Score one expanded step; both rewards are always computed.

    ``answer_query`` is the question the answer is checked against when it
    differs from ``sub_query`` (a final answer is checked against the
    original question).
    """
    flags: List[str] = []
    notes = []
    if ablations.query_reward:
        try:
            r_q, note = _judge_query(history, sub_query, judge)
        except JudgeParseError as err:
            r_q, note = 0, str(err)
            flags.append("query_parse_failure")
    else:
        r_q, note = 1, "query reward disabled"
    notes.append(f"query: {note}")

    if ablations.answer_reward:
        try:
            judged = _judge_answer(
                answer_query or sub_query, answer, docs if ablations.retrieval else (), judge
            )
        except JudgeParseError as err:
            judged = AnswerJudgement(1, None, str(err), ("answer_parse_failure",))
        r_a, refined = judged.r_a, judged.refined
        flags.extend(judged.flags)
        notes.append(f"answer: {judged.rationale}")
    else:
        r_a, refined = 3, None
        notes.append("answer: answer reward disabled")

    return Verdict(r_q, r_a, refined, "\n".join(notes), combine(r_q, r_a), tuple(flags))
