"""scikit-learn style front ends: fit on a corpus, then retrieve or answer."""

from typing import List

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ragstar.evaluation import exact_match
from ragstar.policy import SamplingParams
from ragstar.retrieval import DEFAULT_B, DEFAULT_K1, BM25Index, Retriever, RetrievedSet
from ragstar.search import RunResult, SearchConfig, run_search
from ragstar.utils.validation import check_documents, check_non_negative, check_positive_int, check_questions
from ragstar.verifier import Ablations


class BM25Retriever(TransformerMixin, BaseEstimator):
    """BM25 retrieval as a transformer: questions in, ranked document sets out."""

    def __init__(self, k=5, k1=DEFAULT_K1, b=DEFAULT_B):
        self.k = k
        self.k1 = k1
        self.b = b

    def fit(self, X, y=None):
        check_positive_int(self.k, "k")
        check_non_negative(self.k1, "k1")
        check_non_negative(self.b, "b")
        self.index_ = BM25Index(check_documents(X), k1=self.k1, b=self.b)
        self.n_documents_ = self.index_.num_docs
        return self

    @classmethod
    def from_index(cls, index: BM25Index, k=5) -> "BM25Retriever":
        est = cls(k=k, k1=index.k1, b=index.b)
        est.index_ = index
        est.n_documents_ = index.num_docs
        return est

    def retrieve(self, query: str, k=None) -> RetrievedSet:
        check_is_fitted(self, "index_")
        return Retriever(self.index_, self.k)(query, k)

    def transform(self, X) -> List[RetrievedSet]:
        return [self.retrieve(q) for q in check_questions(X)]

    def __call__(self, query, k=None):
        return self.retrieve(query, k)


class RAGStar(BaseEstimator):
    """Tree-search question answering with retrieval-augmented verification.

    ``fit`` indexes a corpus (or adopts a prebuilt index); ``predict`` runs
    one search per question and returns the final answers. The full search
    results of the last ``predict`` call are kept in ``results_``.
    """

    def __init__(
        self,
        policy=None,
        judge=None,
        max_simulations=50,
        max_depth=6,
        w=0.2,
        m_q=3,
        k_docs=5,
        seed=0,
        tie_break="first",
        early_stop=False,
        prepend_question=False,
        workers=1,
        query_reward=True,
        answer_reward=True,
        use_retrieval=True,
        refine=True,
        reranker=None,
    ):
        self.policy = policy
        self.judge = judge
        self.max_simulations = max_simulations
        self.max_depth = max_depth
        self.w = w
        self.m_q = m_q
        self.k_docs = k_docs
        self.seed = seed
        self.tie_break = tie_break
        self.early_stop = early_stop
        self.prepend_question = prepend_question
        self.workers = workers
        self.query_reward = query_reward
        self.answer_reward = answer_reward
        self.use_retrieval = use_retrieval
        self.refine = refine
        self.reranker = reranker

    def _search_config(self) -> SearchConfig:
        return SearchConfig(
            max_simulations=self.max_simulations,
            max_depth=check_positive_int(self.max_depth, "max_depth"),
            w=check_non_negative(self.w, "w"),
            m_q=check_positive_int(self.m_q, "m_q"),
            k_docs=check_positive_int(self.k_docs, "k_docs"),
            seed=self.seed,
            tie_break=self.tie_break,
            early_stop=self.early_stop,
            prepend_question=self.prepend_question,
            workers=check_positive_int(self.workers, "workers"),
            ablations=Ablations(self.query_reward, self.answer_reward, self.use_retrieval, self.refine),
            subquery_sampling=SamplingParams(temperature=1.0, top_p=1.0),
            answer_sampling=SamplingParams(temperature=0.9, top_p=1.0),
        )

    def fit(self, X, y=None):
        if self.policy is None or self.judge is None:
            raise ValueError("RAGStar needs both a policy and a judge backend")
        if isinstance(X, BM25Index):
            index = X
        elif isinstance(X, BM25Retriever):
            check_is_fitted(X, "index_")
            index = X.index_
        else:
            index = BM25Index(check_documents(X))
        self.config_ = self._search_config()
        self.retriever_ = Retriever(index, k=self.config_.k_docs, reranker=self.reranker)
        return self

    def search(self, question: str) -> RunResult:
        check_is_fitted(self, "retriever_")
        return run_search(question, self.config_, self.policy, self.judge, self.retriever_)

    def predict(self, X) -> np.ndarray:
        questions = check_questions(X)
        self.results_ = [self.search(q) for q in questions]
        return np.asarray([r.final_answer for r in self.results_], dtype=object)

    def score(self, X, y) -> float:
        """Mean exact match; each target may be one answer or a list of answers."""
        predictions = self.predict(X)
        golds = [[t] if isinstance(t, str) else list(t) for t in y]
        return float(np.mean([exact_match(p, g) for p, g in zip(predictions, golds)]))
