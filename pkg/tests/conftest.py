import json
from pathlib import Path

import pytest

from ragstar.policy import ScriptedBackend
from ragstar.retrieval import Retriever, build_index
from ragstar.search import SearchConfig
from ragstar.verifier import LLMJudge

FIXTURES = Path(__file__).parent / "fixtures"
LIFEHITS = FIXTURES / "lifehits"
QUESTION = "Which film has the director born later, Life Hits or Harbor Lights?"


def load_policy():
    return ScriptedBackend.from_file(LIFEHITS / "policy.json")


def load_judge():
    return LLMJudge(ScriptedBackend.from_file(LIFEHITS / "judge.json"))


@pytest.fixture
def policy():
    return load_policy()


@pytest.fixture
def judge():
    return load_judge()


@pytest.fixture(scope="session")
def index_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("lifehits_index")
    build_index(LIFEHITS / "corpus.jsonl", out)
    return out


@pytest.fixture(scope="session")
def retriever():
    return Retriever(build_index(LIFEHITS / "corpus.jsonl"), k=5)


@pytest.fixture
def fixture_config():
    return SearchConfig(max_simulations=5)


def write_jsonl(path, rows):
    with open(path, "w") as fh:
        for row in rows:
            fh.write(json.dumps(row) + "\n")
    return path


def trace_summary(tree) -> str:
    """Canonical per-node summary of a search tree, comparable byte for byte."""
    from fractions import Fraction

    rows = []
    for node in sorted(tree.nodes.values(), key=lambda n: n.id):
        rows.append({
            "id": node.id,
            "parent": node.parent,
            "sub_query": node.sub_query,
            "answer": node.answer,
            "N": node.visits,
            "V": str(Fraction(node.value).limit_denominator(1000)),
            "reward": None if node.reward is None else int(node.reward),
            "r_q": node.r_q,
            "r_a": node.r_a,
            "refined": node.refined,
            "terminal": node.terminal,
        })
    return json.dumps(rows, indent=2, sort_keys=True)


def reference_summary() -> str:
    with open(LIFEHITS / "reference_trace.json") as fh:
        return json.dumps(json.load(fh), indent=2, sort_keys=True)


# criterion number -> (title, "PASS" | "FAIL", detail); filled by test_acceptance.py
ACCEPTANCE_RESULTS = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_RESULTS):
        title, status, detail = ACCEPTANCE_RESULTS[number]
        terminalreporter.write_line(f"[{status}] {number}. {title}" + (f" ({detail})" if detail else ""))
