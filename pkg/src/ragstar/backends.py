"""HTTP chat-completions backend with retries and exponential backoff."""

import logging
import os
import time
from typing import Callable, Optional

import httpx

from ragstar.exceptions import ContractError, TransportError

logger = logging.getLogger(__name__)

DEFAULT_API_KEY_ENV = "RAGSTAR_API_KEY"
RETRY_STATUS = {408, 409, 429, 500, 502, 503, 504}


def post_json(
    client: httpx.Client,
    url: str,
    body: dict,
    headers: dict,
    attempts: int = 3,
    backoff: float = 0.5,
    sleep: Callable[[float], None] = time.sleep,
) -> dict:
    """POST ``body`` and return the decoded JSON reply, retrying transient failures."""
    if attempts < 1:
        raise ContractError("attempts must be >= 1")
    last_error = None
    for attempt in range(attempts):
        try:
            response = client.post(url, json=body, headers=headers)
        except httpx.HTTPError as err:
            last_error = f"{type(err).__name__}: {err}"
        else:
            if response.status_code < 400:
                try:
                    return response.json()
                except ValueError as err:
                    last_error = f"invalid JSON reply: {err}"
            elif response.status_code in RETRY_STATUS:
                last_error = f"HTTP {response.status_code}"
            else:
                raise TransportError(f"{url}: HTTP {response.status_code}: {response.text[:200]}")
        if attempt + 1 < attempts:
            delay = backoff * 2**attempt
            logger.warning("request to %s failed (%s), retrying in %.2fs", url, last_error, delay)
            sleep(delay)
    raise TransportError(f"{url}: giving up after {attempts} attempts ({last_error})")


class ChatBackend:
    """Remote model speaking the chat-completions wire format.

    The API token is read from the environment variable named by
    ``api_key_env`` and never from configuration files.
    """

    def __init__(
        self,
        base_url: str,
        model: str,
        api_key_env: str = DEFAULT_API_KEY_ENV,
        timeout: float = 60.0,
        attempts: int = 3,
        backoff: float = 0.5,
        transport: Optional[httpx.BaseTransport] = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.api_key_env = api_key_env
        self.attempts = attempts
        self.backoff = backoff
        self._sleep = sleep
        self._client = httpx.Client(timeout=timeout, transport=transport)

    @property
    def backend_id(self) -> str:
        return f"chat:{self.model}@{self.base_url}"

    def _headers(self) -> dict:
        headers = {"Content-Type": "application/json"}
        token = os.environ.get(self.api_key_env)
        if token:
            headers["Authorization"] = f"Bearer {token}"
        return headers

    def request_body(self, prompt: str, sampling) -> dict:
        body = {
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": sampling.temperature,
            "top_p": sampling.top_p,
            "max_tokens": sampling.max_tokens,
        }
        if sampling.seed is not None:
            body["seed"] = sampling.seed
        return body

    def generate(self, prompt: str, sampling) -> str:
        data = post_json(
            self._client,
            f"{self.base_url}/chat/completions",
            self.request_body(prompt, sampling),
            self._headers(),
            attempts=self.attempts,
            backoff=self.backoff,
            sleep=self._sleep,
        )
        try:
            return data["choices"][0]["message"]["content"] or ""
        except (KeyError, IndexError, TypeError) as err:
            raise TransportError(f"malformed chat completion reply: {data!r:.200}") from err

    def __deepcopy__(self, memo):
        # configuration is immutable and the HTTP client is thread-safe
        return self

    def close(self):
        self._client.close()
