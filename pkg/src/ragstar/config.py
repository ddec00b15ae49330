"""TOML run configuration: typed sections per module, CLI overrides on top.

Precedence, lowest to highest: built-in defaults, config file, command-line
flags. API tokens are never read from here; backends take the *name* of the
environment variable holding the token.
"""

import copy
from pathlib import Path
from typing import Any, Dict, Optional

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from ragstar.backends import DEFAULT_API_KEY_ENV, ChatBackend
from ragstar.exceptions import ConfigError
from ragstar.policy import ScriptedBackend, SamplingParams
from ragstar.retrieval import BM25Index, EmbeddingReranker, Retriever
from ragstar.search import SearchConfig
from ragstar.verifier import Ablations, LLMJudge

_BACKEND = {
    "backend": "scripted",
    "script": "",
    "base_url": "http://localhost:8000/v1",
    "model": "",
    "api_key_env": DEFAULT_API_KEY_ENV,
    "timeout": 60.0,
    "attempts": 3,
}

DEFAULTS: Dict[str, Dict[str, Any]] = {
    "search": {
        "max_simulations": 50,
        "max_depth": 6,
        "w": 0.2,
        "m_q": 3,
        "k_docs": 5,
        "seed": 0,
        "tie_break": "first",
        "early_stop": False,
        "prepend_question": False,
        "workers": 1,
    },
    "sampling.subquery": {"temperature": 1.0, "top_p": 1.0, "max_tokens": 128},
    "sampling.answer": {"temperature": 0.9, "top_p": 1.0, "max_tokens": 128},
    "ablations": {"query_reward": True, "answer_reward": True, "retrieval": True, "refine": True},
    "policy": dict(_BACKEND),
    "judge": dict(_BACKEND, temperature=0.0, max_tokens=256),
    "retrieval": {
        "index": "",
        "reranker": False,
        "embedding_url": "",
        "embedding_model": "",
        "candidates": 50,
    },
    "eval": {"jobs": 1, "limit": 0},
}

PATH_KEYS = {("policy", "script"), ("judge", "script"), ("retrieval", "index")}


def _flatten(data: dict, prefix: str = "") -> Dict[str, Any]:
    flat = {}
    for key, value in data.items():
        name = f"{prefix}.{key}" if prefix else key
        if isinstance(value, dict):
            flat.update(_flatten(value, name))
        else:
            flat[name] = value
    return flat


def _coerce(key: str, value: Any, default: Any) -> Any:
    if isinstance(default, bool):
        if isinstance(value, bool):
            return value
        if isinstance(value, str) and value.lower() in ("true", "false", "1", "0", "yes", "no"):
            return value.lower() in ("true", "1", "yes")
    elif isinstance(default, int):
        if isinstance(value, int) and not isinstance(value, bool):
            return value
        if isinstance(value, str) and value.strip().lstrip("-").isdigit():
            return int(value)
    elif isinstance(default, float):
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            return float(value)
        if isinstance(value, str):
            try:
                return float(value)
            except ValueError:
                pass
    elif isinstance(value, str):
        return value
    raise ConfigError(f"{key}: expected {type(default).__name__}, got {value!r}", key)


def set_value(settings: dict, dotted: str, value: Any) -> None:
    section, _, key = dotted.rpartition(".")
    if section not in settings or key not in settings[section]:
        raise ConfigError(f"unknown config key {dotted!r}", dotted)
    settings[section][key] = _coerce(dotted, value, DEFAULTS[section][key])


def load_settings(path=None, overrides: Optional[Dict[str, Any]] = None) -> dict:
    """Merge defaults, the TOML file at ``path`` and dotted-key ``overrides``."""
    settings = copy.deepcopy(DEFAULTS)
    if path is not None:
        path = Path(path)
        try:
            with open(path, "rb") as fh:
                data = tomllib.load(fh)
        except tomllib.TOMLDecodeError as err:
            raise ConfigError(f"{path}: {err}") from None
        for dotted, value in _flatten(data).items():
            set_value(settings, dotted, value)
        for section, key in PATH_KEYS:
            value = settings[section][key]
            if value and not Path(value).is_absolute():
                settings[section][key] = str(path.parent / value)
    for dotted, value in (overrides or {}).items():
        if value is not None:
            set_value(settings, dotted, value)
    return settings


def search_config(settings: dict) -> SearchConfig:
    return SearchConfig(
        subquery_sampling=SamplingParams(**settings["sampling.subquery"]),
        answer_sampling=SamplingParams(**settings["sampling.answer"]),
        ablations=Ablations(**settings["ablations"]),
        **settings["search"],
    )


def _backend(section: str, block: dict):
    kind = block["backend"]
    if kind == "scripted":
        if not block["script"]:
            raise ConfigError(f"{section}.script is required for the scripted backend", f"{section}.script")
        return ScriptedBackend.from_file(block["script"])
    if kind == "chat":
        if not block["model"]:
            raise ConfigError(f"{section}.model is required for the chat backend", f"{section}.model")
        return ChatBackend(
            block["base_url"], block["model"], api_key_env=block["api_key_env"],
            timeout=block["timeout"], attempts=block["attempts"],
        )
    raise ConfigError(f"{section}.backend must be 'scripted' or 'chat', got {kind!r}", f"{section}.backend")


def build_policy(settings: dict):
    return _backend("policy", settings["policy"])


def build_judge(settings: dict) -> LLMJudge:
    block = settings["judge"]
    params = SamplingParams(temperature=block["temperature"], top_p=1.0, max_tokens=block["max_tokens"])
    return LLMJudge(_backend("judge", block), params)


def build_retriever(settings: dict, index_path=None) -> Retriever:
    block = settings["retrieval"]
    index_path = index_path or block["index"]
    if not index_path:
        raise ConfigError("no index given (--index or retrieval.index)", "retrieval.index")
    reranker = None
    if block["reranker"]:
        reranker = EmbeddingReranker(
            block["embedding_url"], block["embedding_model"],
            api_key_env=settings["judge"]["api_key_env"], candidates=block["candidates"],
        )
    return Retriever(BM25Index.load(index_path), k=settings["search"]["k_docs"], reranker=reranker)
