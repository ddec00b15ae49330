"""Versioned prompt templates shipped as package data."""

from functools import lru_cache
from importlib import resources

PLACEHOLDERS = ("question", "history", "sub_query", "answer", "documents")


@lru_cache(maxsize=None)
def load_template(name: str, version: int = 1) -> str:
    path = resources.files("ragstar.prompts").joinpath(f"{name}_v{version}.txt")
    return path.read_text(encoding="utf-8")


def render(name: str, version: int = 1, **values) -> str:
    unknown = set(values) - set(PLACEHOLDERS)
    if unknown:
        raise KeyError(f"unknown placeholders: {sorted(unknown)}")
    return load_template(name, version).format_map(values)
