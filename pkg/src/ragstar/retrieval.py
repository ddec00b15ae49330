"""Lexical BM25 index over a JSON-lines corpus, with an optional embedding re-ranker.

Index directory layout::

    meta.json       format magic, version, BM25 parameters, corpus statistics
    docs.jsonl      one {"id", "title", "text"} record per line, in index order
    postings.json   {"lengths": [...], "postings": {term: [[doc_index, tf], ...]}}
"""

import json
import math
import os
import unicodedata
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import httpx
import numpy as np

from ragstar.backends import DEFAULT_API_KEY_ENV, post_json
from ragstar.exceptions import ContractError, CorpusError, IndexFormatError

INDEX_MAGIC = "ragstar-bm25"
INDEX_VERSION = 1
DEFAULT_K1 = 1.2
DEFAULT_B = 0.75


@dataclass(frozen=True)
class Document:
    id: str
    title: str
    text: str

    def to_dict(self) -> dict:
        return {"id": self.id, "title": self.title, "text": self.text}


@dataclass(frozen=True)
class ScoredDocument:
    document: Document
    score: float


@dataclass(frozen=True)
class RetrievedSet:
    query: str
    k: int
    items: Tuple[ScoredDocument, ...] = field(default_factory=tuple)

    def __len__(self):
        return len(self.items)

    def __iter__(self):
        return iter(self.items)

    @property
    def documents(self) -> List[Document]:
        return [item.document for item in self.items]

    @property
    def ids(self) -> List[str]:
        return [item.document.id for item in self.items]


def tokenize(text: str) -> List[str]:
    """Casefold, turn every Unicode punctuation character into a space, split."""
    chars = [" " if unicodedata.category(ch).startswith("P") else ch for ch in text.casefold()]
    return "".join(chars).split()


def document_tokens(doc: Document) -> List[str]:
    return tokenize(f"{doc.title} {doc.text}")


def read_corpus(path) -> List[Document]:
    """Read and validate a JSON-lines corpus; errors name the offending line."""
    docs, seen = [], {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as err:
                raise CorpusError(f"invalid JSON ({err.msg})", lineno) from None
            if not isinstance(record, dict):
                raise CorpusError("record is not a JSON object", lineno)
            for key in ("id", "text"):
                if key not in record:
                    raise CorpusError(f"missing field {key!r}", lineno)
            doc_id, text = str(record["id"]), record["text"]
            if not isinstance(text, str) or not text.strip():
                raise CorpusError("field 'text' must be a non-empty string", lineno)
            if doc_id in seen:
                raise CorpusError(f"duplicate id {doc_id!r} (first seen on line {seen[doc_id]})", lineno)
            seen[doc_id] = lineno
            docs.append(Document(doc_id, str(record.get("title", "")), text))
    return docs


class BM25Index:
    """Immutable inverted index; safe to query from many threads."""

    def __init__(self, documents: Sequence[Document], k1: float = DEFAULT_K1, b: float = DEFAULT_B):
        ids = [d.id for d in documents]
        if len(set(ids)) != len(ids):
            raise CorpusError("duplicate document ids")
        self.documents = list(documents)
        self.k1 = k1
        self.b = b
        self.lengths: List[int] = []
        postings: Dict[str, List[List[int]]] = {}
        for i, doc in enumerate(self.documents):
            counts = Counter(document_tokens(doc))
            self.lengths.append(sum(counts.values()))
            for term, tf in counts.items():
                postings.setdefault(term, []).append([i, tf])
        self.postings = postings
        self._finish()

    def _finish(self):
        n = len(self.documents)
        self.avgdl = sum(self.lengths) / n if n else 0.0
        self.idf = {
            term: math.log(1.0 + (n - len(plist) + 0.5) / (len(plist) + 0.5))
            for term, plist in self.postings.items()
        }

    @property
    def num_docs(self) -> int:
        return len(self.documents)

    @property
    def vocabulary(self) -> set:
        return set(self.postings)

    def scores(self, query: str) -> Dict[int, float]:
        acc: Dict[int, float] = {}
        for term in set(tokenize(query)):
            plist = self.postings.get(term)
            if not plist:
                continue
            idf = self.idf[term]
            for doc_index, tf in plist:
                norm = self.k1 * (1 - self.b + self.b * self.lengths[doc_index] / self.avgdl)
                acc[doc_index] = acc.get(doc_index, 0.0) + idf * tf * (self.k1 + 1) / (tf + norm)
        return acc

    def save(self, directory) -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        meta = {
            "magic": INDEX_MAGIC,
            "version": INDEX_VERSION,
            "k1": self.k1,
            "b": self.b,
            "num_docs": self.num_docs,
            "vocab_size": len(self.postings),
            "avgdl": self.avgdl,
        }
        with open(directory / "docs.jsonl", "w", encoding="utf-8") as fh:
            for doc in self.documents:
                fh.write(json.dumps(doc.to_dict(), ensure_ascii=False) + "\n")
        with open(directory / "postings.json", "w", encoding="utf-8") as fh:
            json.dump({"lengths": self.lengths, "postings": self.postings}, fh, sort_keys=True)
        # meta last, so a half-written directory is rejected on load
        (directory / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True))
        return directory

    @classmethod
    def load(cls, directory) -> "BM25Index":
        directory = Path(directory)
        try:
            meta = json.loads((directory / "meta.json").read_text())
        except FileNotFoundError:
            raise IndexFormatError(f"{directory}: no index found") from None
        except json.JSONDecodeError as err:
            raise IndexFormatError(f"{directory}: unreadable meta.json ({err})") from None
        if meta.get("magic") != INDEX_MAGIC:
            raise IndexFormatError(f"{directory}: not a BM25 index")
        if meta.get("version") != INDEX_VERSION:
            raise IndexFormatError(
                f"{directory}: index version {meta.get('version')} != {INDEX_VERSION}; rebuild it"
            )
        index = cls.__new__(cls)
        index.k1, index.b = meta["k1"], meta["b"]
        with open(directory / "docs.jsonl", encoding="utf-8") as fh:
            index.documents = [Document(**json.loads(line)) for line in fh if line.strip()]
        data = json.loads((directory / "postings.json").read_text())
        index.lengths = data["lengths"]
        index.postings = data["postings"]
        if len(index.documents) != meta["num_docs"] or len(index.lengths) != meta["num_docs"]:
            raise IndexFormatError(f"{directory}: document count does not match meta.json")
        index._finish()
        return index


def build_index(corpus_path, out_dir=None, k1: float = DEFAULT_K1, b: float = DEFAULT_B) -> BM25Index:
    if not os.path.exists(corpus_path):
        raise FileNotFoundError(corpus_path)
    index = BM25Index(read_corpus(corpus_path), k1=k1, b=b)
    if out_dir is not None:
        index.save(out_dir)
    return index


def retrieve(index: BM25Index, query: str, k: int) -> RetrievedSet:
    """Top-``k`` documents with a positive BM25 score; ties go to the smaller id."""
    if k < 1:
        raise ContractError("k must be positive")
    scored = index.scores(query)
    ranked = sorted(
        ((score, index.documents[i]) for i, score in scored.items() if score > 0),
        key=lambda pair: (-pair[0], pair[1].id),
    )
    items = tuple(ScoredDocument(doc, score) for score, doc in ranked[:k])
    return RetrievedSet(query=query, k=k, items=items)


class EmbeddingReranker:
    """Cosine re-ranking of lexical candidates through a remote embeddings endpoint."""

    def __init__(
        self,
        base_url: str,
        model: str,
        api_key_env: str = DEFAULT_API_KEY_ENV,
        candidates: int = 50,
        timeout: float = 30.0,
        attempts: int = 3,
        transport: Optional[httpx.BaseTransport] = None,
    ):
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.api_key_env = api_key_env
        self.candidates = candidates
        self.attempts = attempts
        self._client = httpx.Client(timeout=timeout, transport=transport)

    def embed(self, texts: List[str]) -> np.ndarray:
        headers = {}
        token = os.environ.get(self.api_key_env)
        if token:
            headers["Authorization"] = f"Bearer {token}"
        data = post_json(
            self._client,
            f"{self.base_url}/embeddings",
            {"model": self.model, "input": texts},
            headers,
            attempts=self.attempts,
        )
        rows = sorted(data["data"], key=lambda row: row.get("index", 0))
        return np.asarray([row["embedding"] for row in rows], dtype=float)

    def rerank(self, candidates: RetrievedSet, k: int) -> RetrievedSet:
        if not candidates.items:
            return RetrievedSet(candidates.query, k)
        docs = candidates.documents
        vectors = self.embed([candidates.query] + [f"{d.title} {d.text}" for d in docs])
        norms = np.linalg.norm(vectors, axis=1)
        norms[norms == 0] = 1.0
        unit = vectors / norms[:, None]
        sims = unit[1:] @ unit[0]
        order = sorted(range(len(docs)), key=lambda i: (-sims[i], docs[i].id))
        items = tuple(ScoredDocument(docs[i], float(sims[i])) for i in order[:k])
        return RetrievedSet(candidates.query, k, items)


class Retriever:
    """Index plus retrieval policy used by the search and the distillation pipeline."""

    def __init__(self, index: BM25Index, k: int = 5, reranker: Optional[EmbeddingReranker] = None):
        if k < 1:
            raise ContractError("k must be positive")
        self.index = index
        self.k = k
        self.reranker = reranker

    def __call__(self, query: str, k: Optional[int] = None) -> RetrievedSet:
        k = k or self.k
        if self.reranker is None:
            return retrieve(self.index, query, k)
        pool = retrieve(self.index, query, max(k, self.reranker.candidates))
        return self.reranker.rerank(pool, k)

    def batch(self, queries: Iterable[str], k: Optional[int] = None) -> List[RetrievedSet]:
        return [self(q, k) for q in queries]
