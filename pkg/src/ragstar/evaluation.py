"""QA datasets, answer metrics (EM, Cover EM, F1) and score reports."""

import json
import logging
import random
import re
import unicodedata
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, List, Optional, Sequence

from ragstar.exceptions import CorpusError

logger = logging.getLogger(__name__)

_ARTICLES = re.compile(r"\b(a|an|the)\b")


def normalize(text: str) -> str:
    """Lowercase, drop punctuation, drop English articles, collapse whitespace."""
    text = text.lower()
    text = "".join(ch for ch in text if not unicodedata.category(ch).startswith("P"))
    text = _ARTICLES.sub(" ", text)
    return " ".join(text.split())


def exact_match(prediction: str, golds: Sequence[str]) -> int:
    pred = normalize(prediction)
    return int(any(pred == normalize(g) for g in golds))


def cover_exact_match(prediction: str, golds: Sequence[str]) -> int:
    """1 when some normalized gold occurs as a contiguous token span of the prediction."""
    pred = normalize(prediction).split()
    for gold in golds:
        g = normalize(gold).split()
        if not g:
            # an empty gold is only covered by an empty prediction, as in EM
            if not pred:
                return 1
            continue
        for start in range(len(pred) - len(g) + 1):
            if pred[start:start + len(g)] == g:
                return 1
    return 0


def _f1(pred_tokens: List[str], gold_tokens: List[str]) -> float:
    if not pred_tokens and not gold_tokens:
        return 1.0
    if not pred_tokens or not gold_tokens:
        return 0.0
    common = sum((Counter(pred_tokens) & Counter(gold_tokens)).values())
    if common == 0:
        return 0.0
    precision = common / len(pred_tokens)
    recall = common / len(gold_tokens)
    return 2 * precision * recall / (precision + recall)


def f1(prediction: str, golds: Sequence[str]) -> float:
    pred = normalize(prediction).split()
    return max((_f1(pred, normalize(g).split()) for g in golds), default=0.0)


@dataclass(frozen=True)
class QAExample:
    id: str
    question: str
    gold_answers: List[str]


def load_dataset(path) -> List[QAExample]:
    """Read ``{id, question, answer | answers}`` JSON lines."""
    examples = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as err:
                raise CorpusError(f"invalid JSON ({err.msg})", lineno) from None
            if "question" not in record:
                raise CorpusError("missing field 'question'", lineno)
            answers = record.get("answers", record.get("answer"))
            if isinstance(answers, str):
                answers = [answers]
            if not answers:
                raise CorpusError("missing field 'answer' or 'answers'", lineno)
            examples.append(
                QAExample(str(record.get("id", lineno)), record["question"], [str(a) for a in answers])
            )
    return examples


def subsample(examples: Sequence[QAExample], limit: Optional[int], seed: int = 0) -> List[QAExample]:
    """Seeded random subset, kept in dataset order."""
    if limit is None or limit >= len(examples):
        return list(examples)
    picked = sorted(random.Random(seed).sample(range(len(examples)), limit))
    return [examples[i] for i in picked]


@dataclass
class ExampleScore:
    id: str
    prediction: str
    em: int
    cover_em: int
    f1: float
    error: Optional[str] = None


@dataclass
class ScoreReport:
    name: str
    records: List[ExampleScore] = field(default_factory=list)
    settings: dict = field(default_factory=dict)

    def _mean(self, attr) -> float:
        if not self.records:
            return 0.0
        return round(100 * sum(getattr(r, attr) for r in self.records) / len(self.records), 1)

    @property
    def em(self) -> float:
        return self._mean("em")

    @property
    def cover_em(self) -> float:
        return self._mean("cover_em")

    @property
    def f1(self) -> float:
        return self._mean("f1")

    @property
    def failures(self) -> int:
        return sum(r.error is not None for r in self.records)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "settings": self.settings,
            "aggregates": {"em": self.em, "cover_em": self.cover_em, "f1": self.f1,
                           "count": len(self.records), "failures": self.failures},
            "records": [asdict(r) for r in self.records],
        }

    def to_table(self) -> str:
        rows = [("Dataset", "EM", "CEM", "F1"), (self.name, f"{self.em:.1f}", f"{self.cover_em:.1f}", f"{self.f1:.1f}")]
        widths = [max(len(row[i]) for row in rows) for i in range(4)]
        lines = ["  ".join(cell.ljust(widths[0]) if i == 0 else cell.rjust(widths[i]) for i, cell in enumerate(row)) for row in rows]
        lines.insert(1, "  ".join("-" * w for w in widths))
        return "\n".join(lines) + "\n"


def score_example(example: QAExample, prediction: str) -> ExampleScore:
    golds = example.gold_answers
    return ExampleScore(example.id, prediction, exact_match(prediction, golds),
                        cover_exact_match(prediction, golds), f1(prediction, golds))


def evaluate(
    examples: Sequence[QAExample],
    answer_fn: Callable[[str], str],
    name: str = "dataset",
    jobs: int = 1,
    settings: Optional[dict] = None,
) -> ScoreReport:
    """Answer every example and score it; a failed example scores zero and keeps its error."""

    def run(example):
        try:
            return score_example(example, answer_fn(example.question))
        except Exception as err:  # noqa: BLE001 - one bad example must not sink the run
            logger.error("example %s failed: %s", example.id, err)
            return ExampleScore(example.id, "", 0, 0, 0.0, error=f"{type(err).__name__}: {err}")

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            records = list(pool.map(run, examples))
    else:
        records = [run(e) for e in examples]
    records.sort(key=lambda r: r.id)
    return ScoreReport(name, records, dict(settings or {}))
