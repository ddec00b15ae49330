"""Input checks shared by the estimators and the CLI."""

import numbers
from pathlib import Path
from typing import List

import numpy as np

from ragstar.exceptions import ContractError
from ragstar.retrieval import Document, read_corpus


def check_positive_int(value, name: str) -> int:
    if isinstance(value, bool) or not isinstance(value, numbers.Integral) or value < 1:
        raise ContractError(f"{name} must be a positive integer, got {value!r}")
    return int(value)


def check_non_negative(value, name: str) -> float:
    if isinstance(value, bool) or not isinstance(value, numbers.Real) or not value >= 0:
        raise ContractError(f"{name} must be a non-negative number, got {value!r}")
    return float(value)


def check_questions(X) -> List[str]:
    """Accept one question, a list of questions or a 1-D array/Series of them."""
    if isinstance(X, str):
        return [X]
    arr = np.asarray(X, dtype=object)
    if arr.ndim == 2 and arr.shape[1] == 1:
        arr = arr[:, 0]
    if arr.ndim != 1:
        raise ContractError(f"expected a 1-D sequence of questions, got shape {arr.shape}")
    bad = [q for q in arr if not isinstance(q, str) or not q.strip()]
    if bad:
        raise ContractError(f"questions must be non-empty strings, got {bad[0]!r}")
    return [str(q) for q in arr]


def check_documents(X) -> List[Document]:
    """Accept a corpus path, Documents, ``{id, title, text}`` dicts or plain strings."""
    if isinstance(X, (str, Path)) and Path(X).exists():
        return read_corpus(X)
    docs = []
    for i, item in enumerate(X):
        if isinstance(item, Document):
            docs.append(item)
        elif isinstance(item, dict):
            if "text" not in item:
                raise ContractError(f"document {i} has no 'text'")
            docs.append(Document(str(item.get("id", i)), str(item.get("title", "")), item["text"]))
        elif isinstance(item, str):
            docs.append(Document(str(i), "", item))
        else:
            raise ContractError(f"cannot interpret document {i}: {item!r}")
    return docs
