from dataclasses import dataclass, field
from typing import List, Tuple


@dataclass(frozen=True)
class Step:
    sub_query: str
    answer: str


@dataclass(frozen=True)
class ReasoningHistory:
    """The original question followed by the sub-query/answer pairs of one path."""

    question: str
    steps: Tuple[Step, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "steps", tuple(self.steps))
        for step in self.steps:
            if not step.answer or not step.answer.strip():
                raise ValueError(f"empty answer for sub-query {step.sub_query!r}")

    def __len__(self):
        return len(self.steps)

    def extend(self, sub_query: str, answer: str) -> "ReasoningHistory":
        return ReasoningHistory(self.question, self.steps + (Step(sub_query, answer),))

    def pairs(self) -> List[Tuple[str, str]]:
        return [(s.sub_query, s.answer) for s in self.steps]

    def render(self) -> str:
        if not self.steps:
            return "(no steps yet)"
        lines = []
        for i, step in enumerate(self.steps, 1):
            lines.append(f"Sub-query {i}: {step.sub_query}")
            lines.append(f"Answer {i}: {step.answer}")
        return "\n".join(lines)

    def to_dict(self) -> dict:
        return {"question": self.question, "steps": [[s.sub_query, s.answer] for s in self.steps]}

    @classmethod
    def from_dict(cls, data: dict) -> "ReasoningHistory":
        return cls(data["question"], tuple(Step(q, a) for q, a in data.get("steps", [])))
