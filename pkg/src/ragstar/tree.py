"""Search tree storage, UCT scoring, selection and backpropagation."""

import json
import math
from dataclasses import asdict, dataclass, field, fields
from typing import Dict, List, Optional

from ragstar.exceptions import ContractError, TreeIntegrityError
from ragstar.history import ReasoningHistory, Step

UNVISITED = math.inf

TRACE_FORMAT = "ragstar-trace"
TRACE_VERSION = 1

TIE_BREAK_RULES = ("first", "last")


@dataclass
class SearchNode:
    id: int
    sub_query: str
    parent: Optional[int] = None
    children: List[int] = field(default_factory=list)
    answer: Optional[str] = None
    refined: bool = False
    original_answer: Optional[str] = None
    visits: int = 0
    value: float = 0.0
    reward: Optional[float] = None
    depth: int = 0
    terminal: bool = False
    # set once an expansion has produced at least one child
    expanded: bool = False
    r_q: Optional[int] = None
    r_a: Optional[int] = None
    doc_ids: List[str] = field(default_factory=list)
    flags: List[str] = field(default_factory=list)
    rationale: str = ""

    @property
    def is_root(self) -> bool:
        return self.parent is None

    def has_capacity(self, capacity: int) -> bool:
        return not self.terminal and not self.expanded and len(self.children) < capacity


class SearchTree:
    """Id-indexed tree of :class:`SearchNode` rooted at the original question.

    ``capacity`` is the maximum number of children per node (the number of
    sub-queries sampled per expansion).
    """

    def __init__(self, question: str, capacity: int = 3):
        if capacity < 1:
            raise ContractError("capacity must be >= 1")
        self.capacity = capacity
        self.root_id = 0
        self.simulation_count = 0
        self.nodes: Dict[int, SearchNode] = {0: SearchNode(id=0, sub_query=question)}
        self._next_id = 1

    @property
    def root(self) -> SearchNode:
        return self.nodes[self.root_id]

    @property
    def question(self) -> str:
        return self.root.sub_query

    def __len__(self):
        return len(self.nodes)

    def __getitem__(self, node_id: int) -> SearchNode:
        try:
            return self.nodes[node_id]
        except KeyError:
            raise KeyError(f"unknown node id {node_id!r}") from None

    def add_child(
        self,
        parent_id: int,
        sub_query: str,
        answer: Optional[str],
        terminal: bool = False,
    ) -> SearchNode:
        parent = self[parent_id]
        if parent.terminal:
            raise TreeIntegrityError(f"terminal node {parent_id} cannot have children")
        if len(parent.children) >= self.capacity:
            raise TreeIntegrityError(f"node {parent_id} already has {self.capacity} children")
        node = SearchNode(
            id=self._next_id,
            sub_query=sub_query,
            parent=parent_id,
            answer=answer,
            depth=parent.depth + 1,
            terminal=terminal,
        )
        self._next_id += 1
        self.nodes[node.id] = node
        parent.children.append(node.id)
        parent.expanded = True
        return node

    def refine(self, node_id: int, new_answer: str) -> None:
        node = self[node_id]
        if not node.refined:
            node.original_answer = node.answer
        node.answer = new_answer
        node.refined = True

    def path_to(self, node_id: int) -> List[int]:
        path = []
        current: Optional[int] = node_id
        while current is not None:
            path.append(current)
            current = self[current].parent
            if len(path) > len(self.nodes):
                raise TreeIntegrityError("cycle detected while walking to the root")
        path.reverse()
        return path

    def leaves(self) -> List[SearchNode]:
        return [n for n in self.nodes.values() if not n.children and not n.is_root]

    def expandable(self, max_depth: int) -> List[SearchNode]:
        return [
            n for n in self.nodes.values() if n.has_capacity(self.capacity) and n.depth < max_depth
        ]

    def validate(self) -> None:
        roots = [n for n in self.nodes.values() if n.parent is None]
        if len(roots) != 1 or roots[0].id != self.root_id:
            raise TreeIntegrityError("tree must have exactly one root")
        if self.root.depth != 0:
            raise TreeIntegrityError("root depth must be 0")
        for node in self.nodes.values():
            if node.visits < 0:
                raise TreeIntegrityError(f"node {node.id} has negative visits")
            if node.visits == 0 and node.value != 0:
                raise TreeIntegrityError(f"unvisited node {node.id} has a non-zero value")
            if len(node.children) > self.capacity:
                raise TreeIntegrityError(f"node {node.id} exceeds the child capacity")
            if node.terminal and node.children:
                raise TreeIntegrityError(f"terminal node {node.id} has children")
            for child_id in node.children:
                child = self[child_id]
                if child.parent != node.id:
                    raise TreeIntegrityError(f"child {child_id} does not point back to {node.id}")
                if child.depth != node.depth + 1:
                    raise TreeIntegrityError(f"depth law broken at node {child_id}")
            if node.parent is not None and node.id not in self[node.parent].children:
                raise TreeIntegrityError(f"parent of {node.id} does not list it")
        seen = set()
        stack = [self.root_id]
        while stack:
            current = stack.pop()
            if current in seen:
                raise TreeIntegrityError("cycle detected")
            seen.add(current)
            stack.extend(self[current].children)
        if seen != set(self.nodes):
            raise TreeIntegrityError("unreachable nodes present")

    def to_dict(self, metadata: Optional[dict] = None) -> dict:
        return {
            "format": TRACE_FORMAT,
            "version": TRACE_VERSION,
            "root_id": self.root_id,
            "capacity": self.capacity,
            "simulation_count": self.simulation_count,
            "metadata": metadata or {},
            "nodes": [asdict(self.nodes[k]) for k in sorted(self.nodes)],
        }

    def to_json(self, metadata: Optional[dict] = None) -> str:
        return json.dumps(self.to_dict(metadata), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict) -> "SearchTree":
        if data.get("format") != TRACE_FORMAT:
            raise TreeIntegrityError("not a search trace document")
        names = {f.name for f in fields(SearchNode)}
        nodes = {rec["id"]: SearchNode(**{k: v for k, v in rec.items() if k in names}) for rec in data["nodes"]}
        tree = cls(nodes[data["root_id"]].sub_query, data["capacity"])
        tree.root_id = data["root_id"]
        tree.nodes = nodes
        tree.simulation_count = data["simulation_count"]
        tree._next_id = max(nodes) + 1
        tree.validate()
        return tree

    def to_dot(self) -> str:
        def esc(text):
            return str(text).replace("\\", "\\\\").replace('"', '\\"')

        lines = ["digraph search_tree {", "  node [shape=box, fontsize=10];"]
        for node_id in sorted(self.nodes):
            n = self.nodes[node_id]
            label = [esc(n.sub_query)]
            if n.answer is not None:
                answer = esc(n.answer)
                if n.refined:
                    answer = f"{esc(n.original_answer)} -> {answer}"
                label.append(f"A: {answer}")
            label.append(f"N={n.visits} V={n.value:.3f} r={n.reward}")
            style = ', style=bold' if n.terminal else ""
            text = "\\n".join(label)
            lines.append(f'  n{node_id} [label="{text}"{style}];')
        for node_id in sorted(self.nodes):
            for child_id in self.nodes[node_id].children:
                lines.append(f"  n{node_id} -> n{child_id};")
        lines.append("}")
        return "\n".join(lines) + "\n"


def uct_score(node: SearchNode, parent_visits: int, w: float) -> float:
    """UCT value of a child node; unvisited nodes score ``UNVISITED`` (infinity)."""
    if node.is_root:
        raise ContractError("the root has no UCT score")
    if parent_visits < 1:
        raise ContractError("parent_visits must be >= 1 for a parent with children")
    if w < 0:
        raise ContractError("w must be non-negative")
    if node.visits == 0:
        return UNVISITED
    return node.value + w * math.sqrt(math.log(parent_visits) / node.visits)


def select_path(tree: SearchTree, w: float, tie_break: str = "first") -> List[int]:
    """Descend from the root by maximal UCT until reaching a frontier node.

    A frontier node is terminal, still has spare child capacity, or has no
    children. Among equal scores, ``tie_break="first"`` keeps the earliest
    created child and ``"last"`` the latest.
    """
    if tie_break not in TIE_BREAK_RULES:
        raise ContractError(f"tie_break must be one of {TIE_BREAK_RULES}")
    node = tree.root
    path = [node.id]
    while not node.terminal and node.children and not node.has_capacity(tree.capacity):
        # a parent that has children has been visited at least once in a live
        # search; guard hand-built trees so the log stays defined
        parent_visits = max(node.visits, 1)
        best, best_score = None, -math.inf
        for child_id in node.children:
            score = uct_score(tree[child_id], parent_visits, w)
            if score > best_score or (score == best_score and tie_break == "last"):
                best, best_score = child_id, score
        node = tree[best]
        path.append(node.id)
    return path


def backpropagate(tree: SearchTree, leaf_id: int, reward: float) -> SearchTree:
    """Fold ``reward`` into visit counts and running means from the root to ``leaf_id``."""
    for node_id in tree.path_to(leaf_id):
        node = tree[node_id]
        visits = node.visits + 1
        node.value = (node.value * node.visits + reward) / visits
        node.visits = visits
    tree.simulation_count += 1
    return tree


def extract_history(tree: SearchTree, node_id: int) -> ReasoningHistory:
    steps = []
    for path_id in tree.path_to(node_id)[1:]:
        node = tree[path_id]
        if node.answer is None or not node.answer.strip():
            raise TreeIntegrityError(f"node {path_id} on the path has no answer")
        steps.append(Step(node.sub_query, node.answer))
    return ReasoningHistory(tree.question, tuple(steps))
