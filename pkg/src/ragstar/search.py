"""The search loop: select, expand, verify, backpropagate."""

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, List, Optional, Tuple

from ragstar.exceptions import ContractError, DegenerateGenerationError, TransportError
from ragstar.policy import (
    ANSWER_SAMPLING,
    SUBQUERY_SAMPLING,
    PolicyBackend,
    SamplingParams,
    SubQuery,
    deduce_answer,
    finalize_answer,
    plan_subqueries,
)
from ragstar.retrieval import RetrievedSet
from ragstar.tree import TIE_BREAK_RULES, SearchNode, SearchTree, backpropagate, extract_history, select_path
from ragstar.verifier import Ablations, JudgeBackend, Verdict, verify

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SearchConfig:
    max_simulations: int = 50
    max_depth: int = 6
    w: float = 0.2
    m_q: int = 3
    k_docs: int = 5
    subquery_sampling: SamplingParams = SUBQUERY_SAMPLING
    answer_sampling: SamplingParams = ANSWER_SAMPLING
    ablations: Ablations = Ablations()
    seed: int = 0
    tie_break: str = "first"
    # stop as soon as some terminal node earned the top reward
    early_stop: bool = False
    # retrieve with "<question> <sub-query>" instead of the sub-query alone
    prepend_question: bool = False
    workers: int = 1

    def __post_init__(self):
        if self.max_simulations < 0:
            raise ContractError("max_simulations must be >= 0")
        for name in ("max_depth", "m_q", "k_docs", "workers"):
            if getattr(self, name) < 1:
                raise ContractError(f"{name} must be >= 1")
        if self.w < 0:
            raise ContractError("w must be non-negative")
        if self.tie_break not in TIE_BREAK_RULES:
            raise ContractError(f"tie_break must be one of {TIE_BREAK_RULES}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "SearchConfig":
        data = dict(data)
        for key in ("subquery_sampling", "answer_sampling"):
            if isinstance(data.get(key), dict):
                data[key] = SamplingParams(**data[key])
        if isinstance(data.get("ablations"), dict):
            data["ablations"] = Ablations(**data["ablations"])
        return cls(**data)


@dataclass
class RunResult:
    final_answer: str
    best_path: List[int]
    tree: SearchTree
    simulations_used: int
    wall_time: float
    timings: dict = field(default_factory=dict)

    def trace(self, metadata: Optional[dict] = None) -> str:
        meta = {"final_answer": self.final_answer, "best_path": self.best_path,
                "simulations_used": self.simulations_used}
        meta.update(metadata or {})
        return self.tree.to_json(meta)


Retrieve = Callable[[str, int], RetrievedSet]


@dataclass
class _Candidate:
    query: SubQuery
    answer: str
    docs: RetrievedSet
    verdict: Verdict


def _build_candidate(query, history, config, policy, judge, retriever) -> _Candidate:
    if query.terminal:
        answer = query.final_answer
        # the final answer addresses the original question
        answer_query = history.question
    else:
        answer = deduce_answer(policy, history, query.text, replace(config.answer_sampling, seed=config.seed))
        answer_query = query.text
    search_text = answer_query
    if config.prepend_question and not query.terminal:
        search_text = f"{history.question} {query.text}"
    if config.ablations.retrieval and retriever is not None:
        docs = retriever(search_text, config.k_docs)
    else:
        docs = RetrievedSet(search_text, config.k_docs)
    verdict = verify(history, query.text, answer, docs, judge, config.ablations, answer_query=answer_query)
    return _Candidate(query, answer, docs, verdict)


def expand(
    tree: SearchTree,
    node_id: int,
    config: SearchConfig,
    policy: PolicyBackend,
    judge: JudgeBackend,
    retriever: Optional[Retrieve],
) -> List[int]:
    """Grow up to ``m_q`` verified children under ``node_id`` and backpropagate each."""
    history = extract_history(tree, node_id)
    try:
        planned = plan_subqueries(
            policy, history, config.m_q,
            replace(config.subquery_sampling, seed=config.seed), max_workers=config.workers,
        )
    except DegenerateGenerationError as err:
        logger.warning("node %d: planning produced nothing (%s)", node_id, err)
        return []
    planned = planned[: tree.capacity - len(tree[node_id].children)]

    def attempt(query):
        try:
            return _build_candidate(query, history, config, policy, judge, retriever)
        except DegenerateGenerationError as err:
            logger.warning("node %d: dropping sub-query %r (%s)", node_id, query.text, err)
            return None

    try:
        if config.workers > 1 and len(planned) > 1:
            with ThreadPoolExecutor(max_workers=config.workers) as pool:
                candidates = list(pool.map(attempt, planned))
        else:
            candidates = [attempt(q) for q in planned]
    except TransportError as err:
        raise TransportError(f"expanding node {node_id} of {tree.question!r}: {err}") from err

    added = []
    # committed in sampling order so concurrent runs build identical trees
    for cand in candidates:
        if cand is None:
            continue
        child = tree.add_child(node_id, cand.query.text, cand.answer, terminal=cand.query.terminal)
        verdict = cand.verdict
        child.r_q, child.r_a, child.reward = verdict.r_q, verdict.r_a, verdict.reward
        child.rationale = verdict.rationale
        child.flags = list(verdict.flags)
        child.doc_ids = cand.docs.ids
        if verdict.refined_answer is not None:
            if config.ablations.refine:
                tree.refine(child.id, verdict.refined_answer)
            else:
                child.flags.append("refinement_disabled")
        backpropagate(tree, child.id, verdict.reward)
        added.append(child.id)
    return added


def _rank_key(node: SearchNode) -> Tuple:
    return (-node.value, -node.visits, node.depth, node.id)


def extract_final(tree: SearchTree, policy: PolicyBackend, config: SearchConfig) -> Tuple[str, List[int]]:
    """Best terminal answer, or a finalized answer from the best leaf when none exists."""
    terminals = [n for n in tree.nodes.values() if n.terminal]
    if terminals:
        best = min(terminals, key=_rank_key)
        return best.answer, tree.path_to(best.id)
    leaves = tree.leaves()
    best_id = min(leaves, key=_rank_key).id if leaves else tree.root_id
    history = extract_history(tree, best_id)
    answer = finalize_answer(policy, history, replace(config.answer_sampling, seed=config.seed))
    return answer, tree.path_to(best_id)


def _should_stop(tree: SearchTree, config: SearchConfig) -> bool:
    if not tree.expandable(config.max_depth):
        return True
    if config.early_stop:
        return any(n.terminal and n.reward == 3 for n in tree.nodes.values())
    return False


def run_search(
    question: str,
    config: SearchConfig,
    policy: PolicyBackend,
    judge: JudgeBackend,
    retriever: Optional[Retrieve] = None,
) -> RunResult:
    """Answer ``question`` by tree search over sub-query/answer states.

    Each iteration descends by UCT to a frontier node. An expandable frontier
    gets up to ``m_q`` new children, each verified and backpropagated on its
    own. A terminal or depth-capped frontier has its stored reward
    backpropagated again. The loop ends when the budget is spent or no node
    can be expanded any more.
    """
    started = time.perf_counter()
    tree = SearchTree(question, capacity=config.m_q)
    used = 0
    while used < config.max_simulations and not _should_stop(tree, config):
        used += 1
        path = select_path(tree, config.w, config.tie_break)
        node = tree[path[-1]]
        if node.has_capacity(tree.capacity) and node.depth < config.max_depth:
            expand(tree, node.id, config, policy, judge, retriever)
        elif not node.is_root:
            backpropagate(tree, node.id, node.reward or 0.0)
    search_time = time.perf_counter() - started
    answer, best_path = extract_final(tree, policy, config)
    wall = time.perf_counter() - started
    return RunResult(answer, best_path, tree, used, wall, {"search": search_time, "total": wall})


def bookkeeping_ok(tree: SearchTree) -> bool:
    """Root visits equal the sum of its children's visits; no node has fewer
    visits than its children combined."""
    root = tree.root
    if root.visits != sum(tree[c].visits for c in root.children):
        return False
    return all(n.visits >= sum(tree[c].visits for c in n.children) for n in tree.nodes.values())

