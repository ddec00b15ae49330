"""Policy model access: prompt rendering, sub-query planning, answer deduction."""

import json
import re
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import List, Optional, Protocol, Sequence

from ragstar import templates
from ragstar.exceptions import ContractError, DegenerateGenerationError
from ragstar.history import ReasoningHistory

FINAL_MARKER = "FINAL:"

_LABEL_PREFIX = re.compile(r"^(?:next\s+)?(?:sub-?query|answer|final answer)\s*\d*\s*:\s*", re.I)


@dataclass(frozen=True)
class SamplingParams:
    temperature: float = 1.0
    top_p: float = 1.0
    seed: Optional[int] = None
    max_tokens: int = 128

    def __post_init__(self):
        if self.temperature < 0:
            raise ContractError("temperature must be non-negative")
        if not 0 < self.top_p <= 1:
            raise ContractError("top_p must lie in (0, 1]")
        if self.max_tokens < 1:
            raise ContractError("max_tokens must be positive")


# sub-query and answer sampling defaults used by the search
SUBQUERY_SAMPLING = SamplingParams(temperature=1.0, top_p=1.0)
ANSWER_SAMPLING = SamplingParams(temperature=0.9, top_p=1.0)


class PolicyBackend(Protocol):
    backend_id: str

    def generate(self, prompt: str, sampling: SamplingParams) -> str:
        ...


class ScriptedBackend:
    """Deterministic backend that answers prompts from a list of rules.

    Each rule is a mapping with optional ``task`` (matched against the
    ``[task: ...]`` header of the prompt), optional ``contains`` (substrings
    that must all occur in the prompt) and ``replies``. The matching rule with
    the most ``contains`` entries wins, earlier rules winning ties. Reply
    ``i`` is chosen as ``replies[seed % len(replies)]``, so the output is a
    pure function of prompt and sampling parameters.

    Every prompt is recorded in :attr:`prompts` for inspection.
    """

    backend_id = "scripted"

    def __init__(self, rules: Sequence[dict], default: Optional[str] = None):
        self.rules = [dict(rule) for rule in rules]
        for rule in self.rules:
            if not rule.get("replies"):
                raise ContractError(f"scripted rule without replies: {rule!r}")
        self.default = default
        self.prompts: List[str] = []
        self._lock = threading.Lock()

    def __getstate__(self):
        state = self.__dict__.copy()
        del state["_lock"]
        return state

    def __setstate__(self, state):
        self.__dict__.update(state)
        self._lock = threading.Lock()

    @classmethod
    def from_file(cls, path) -> "ScriptedBackend":
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
        return cls(data["rules"], default=data.get("default"))

    def _match(self, prompt: str) -> Optional[dict]:
        best, best_key = None, -1
        for rule in self.rules:
            task = rule.get("task")
            if task is not None and f"[task: {task}]" not in prompt:
                continue
            contains = rule.get("contains", [])
            if all(part in prompt for part in contains) and len(contains) > best_key:
                best, best_key = rule, len(contains)
        return best

    def generate(self, prompt: str, sampling: SamplingParams) -> str:
        with self._lock:
            self.prompts.append(prompt)
        rule = self._match(prompt)
        if rule is None:
            return self.default or ""
        replies = rule["replies"]
        return replies[(sampling.seed or 0) % len(replies)]


@dataclass(frozen=True)
class SubQuery:
    """A planned sub-query, or the terminal marker carrying a final answer."""

    text: str
    final_answer: Optional[str] = None

    @property
    def terminal(self) -> bool:
        return self.final_answer is not None


def _first_line(text: str) -> str:
    for line in text.splitlines():
        line = line.strip()
        if line:
            return _LABEL_PREFIX.sub("", line).strip()
    return ""


def parse_subquery(text: str) -> Optional[SubQuery]:
    """Parse one planner sample; ``None`` when the sample is empty."""
    for line in text.splitlines():
        line = line.strip()
        if line.upper().startswith(FINAL_MARKER):
            answer = " ".join(line[len(FINAL_MARKER):].split())
            if answer:
                return SubQuery(f"{FINAL_MARKER} {answer}", final_answer=answer)
    query = " ".join(_first_line(text).split())
    return SubQuery(query) if query else None


def render_plan_prompt(history: ReasoningHistory) -> str:
    return templates.render("plan", question=history.question, history=history.render())


def render_answer_prompt(history: ReasoningHistory, sub_query: str) -> str:
    return templates.render(
        "answer", question=history.question, history=history.render(), sub_query=sub_query
    )


def render_finalize_prompt(history: ReasoningHistory) -> str:
    return templates.render("finalize", question=history.question, history=history.render())


def plan_subqueries(
    backend: PolicyBackend,
    history: ReasoningHistory,
    m_q: int,
    params: SamplingParams = SUBQUERY_SAMPLING,
    max_workers: int = 1,
) -> List[SubQuery]:
    """Sample ``m_q`` next sub-queries and drop empty or duplicate samples.

    Sample ``i`` runs with seed ``params.seed + i`` (base 0 when unset) so
    repeated sampling differs per draw while staying reproducible.
    """
    if m_q < 1:
        raise ContractError("m_q must be >= 1")
    prompt = render_plan_prompt(history)
    base = params.seed or 0
    draws = [replace(params, seed=base + i) for i in range(m_q)]
    if max_workers > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            samples = list(pool.map(lambda p: backend.generate(prompt, p), draws))
    else:
        samples = [backend.generate(prompt, p) for p in draws]

    planned, seen = [], set()
    for sample in samples:
        query = parse_subquery(sample)
        if query is None:
            continue
        if query.text not in seen:
            seen.add(query.text)
            planned.append(query)
    if not planned:
        raise DegenerateGenerationError(f"all {m_q} sub-query samples were empty")
    return planned


def _clean_answer(text: str, params: SamplingParams, what: str) -> str:
    answer = _first_line(text)
    if not answer:
        raise DegenerateGenerationError(f"empty {what}")
    # a rough character budget: generous multiple of the token limit
    if len(answer) > 8 * params.max_tokens:
        raise DegenerateGenerationError(f"{what} exceeds the length budget")
    return answer


def deduce_answer(
    backend: PolicyBackend,
    history: ReasoningHistory,
    sub_query: str,
    params: SamplingParams = ANSWER_SAMPLING,
) -> str:
    """Answer ``sub_query`` from the model's own knowledge; no documents are shown."""
    if sub_query.upper().startswith(FINAL_MARKER):
        raise ContractError("cannot deduce an answer for the terminal marker")
    prompt = render_answer_prompt(history, sub_query)
    return _clean_answer(backend.generate(prompt, params), params, "answer")


def finalize_answer(
    backend: PolicyBackend,
    history: ReasoningHistory,
    params: SamplingParams = ANSWER_SAMPLING,
) -> str:
    prompt = render_finalize_prompt(history)
    return _clean_answer(backend.generate(prompt, params), params, "final answer")
