"""Multi-hop question answering by tree search with retrieval-augmented verification."""

__version__ = "0.1.0"

from ragstar.estimator import BM25Retriever, RAGStar  # noqa: E402
from ragstar.history import ReasoningHistory, Step  # noqa: E402
from ragstar.policy import SamplingParams, ScriptedBackend  # noqa: E402
from ragstar.search import RunResult, SearchConfig, extract_final, run_search  # noqa: E402
from ragstar.verifier import Ablations, LLMJudge, Verdict, verify  # noqa: E402

__all__ = [
    "Ablations",
    "BM25Retriever",
    "LLMJudge",
    "RAGStar",
    "ReasoningHistory",
    "RunResult",
    "SamplingParams",
    "ScriptedBackend",
    "SearchConfig",
    "Step",
    "Verdict",
    "extract_final",
    "run_search",
    "verify",
]
