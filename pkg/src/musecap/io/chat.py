"""Chat-completion clients, retry policy and audit log.

Chaining and judging both send one prompt and read back one completion.
Clients implement ``complete(prompt) -> str``; ``complete_with_retry`` wraps
any client with exponential-backoff retries on transport failures.
"""

import json
import logging
import os
import threading
import time
from collections.abc import Callable
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Protocol

import requests
from tenacity import RetryError, Retrying, retry_if_exception_type, stop_after_attempt, wait_exponential

from musecap.errors import ChainError, ConfigError, TransportError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ChatSettings:
    """Endpoint and retry settings for an OpenAI-compatible chat service."""

    endpoint: str = "https://api.openai.com/v1"
    api_key_env: str = "OPENAI_API_KEY"
    model: str = "gpt-4"
    timeout_s: float = 60.0
    max_attempts: int = 3
    backoff_s: float = 1.0
    temperature: float = 0.0

    def __post_init__(self) -> None:
        if self.max_attempts < 1:
            raise ConfigError("must be >= 1", field="chat.max_attempts")
        if self.timeout_s <= 0:
            raise ConfigError("must be > 0", field="chat.timeout_s")
        if self.backoff_s < 0:
            raise ConfigError("must be >= 0", field="chat.backoff_s")


class ChatClient(Protocol):
    """Sends a prompt and returns the completion text."""

    def complete(self, prompt: str) -> str: ...


class EchoClient:
    """Test double that returns the prompt unchanged."""

    model = "echo"

    def complete(self, prompt: str) -> str:
        return prompt


class OpenAICompatibleClient:
    """``POST {endpoint}/chat/completions`` with a bearer token from the environment."""

    def __init__(self, settings: ChatSettings, session: requests.Session | None = None):
        """Initialize client.

        Args:
            settings: Endpoint, model and timeout
            session: Optional requests session (tests inject one)

        Raises:
            ConfigError: If the API key environment variable is unset
        """
        api_key = os.environ.get(settings.api_key_env)
        if not api_key:
            raise ConfigError(f"environment variable {settings.api_key_env} is not set", field="chat.api_key_env")
        self.settings = settings
        self.model = settings.model
        self._api_key = api_key
        self._session = session or requests.Session()

    def complete(self, prompt: str) -> str:
        """Send one user message and return the first choice's content.

        Raises:
            TransportError: On connection errors, timeouts, HTTP 429 and 5xx
            ChainError: On other HTTP errors or a malformed response body
        """
        url = self.settings.endpoint.rstrip("/") + "/chat/completions"
        payload = {
            "model": self.settings.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": self.settings.temperature,
        }
        headers = {"Authorization": f"Bearer {self._api_key}", "Content-Type": "application/json"}
        try:
            response = self._session.post(url, json=payload, headers=headers, timeout=self.settings.timeout_s)
        except (requests.ConnectionError, requests.Timeout) as e:
            raise TransportError(f"chat request to {url} failed: {e}") from e

        if response.status_code == 429 or response.status_code >= 500:
            raise TransportError(f"chat service returned HTTP {response.status_code}")
        if response.status_code >= 400:
            raise ChainError(f"chat service returned HTTP {response.status_code}: {response.text[:200]}")
        try:
            return str(response.json()["choices"][0]["message"]["content"] or "")
        except (ValueError, KeyError, IndexError, TypeError) as e:
            raise ChainError(f"malformed chat response: {e}") from e


class AuditLog:
    """Appends one JSON object per completed chat call to a JSONL file."""

    def __init__(self, path: Path | str):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()

    def record(self, prompt: str, completion: str, requested_at: datetime, completed_at: datetime, attempts: int, model: str | None = None) -> None:
        entry = {
            "prompt": prompt,
            "completion": completion,
            "requested_at": requested_at.isoformat(),
            "completed_at": completed_at.isoformat(),
            "attempts": attempts,
            "model": model,
        }
        with self._lock, open(self.path, "a", encoding="utf-8") as f:
            f.write(json.dumps(entry, ensure_ascii=False) + "\n")

    def entries(self) -> list[dict]:
        if not self.path.exists():
            return []
        with open(self.path, encoding="utf-8") as f:
            return [json.loads(line) for line in f if line.strip()]


def complete_with_retry(
    client: ChatClient,
    prompt: str,
    settings: ChatSettings | None = None,
    audit_log: AuditLog | None = None,
    sleep: Callable[[float], None] = time.sleep,
) -> str:
    """Call ``client.complete`` with exponential backoff on ``TransportError``.

    Args:
        client: Chat client
        prompt: Prompt text
        settings: Attempt count and backoff base (defaults: 3 attempts, 1 s)
        audit_log: Optional log receiving the successful request/response pair
        sleep: Sleep function between attempts

    Returns:
        The completion text (not stripped)

    Raises:
        ChainError: After the final failed attempt, on non-retryable errors or on a blank completion
    """
    settings = settings or ChatSettings()
    requested_at = datetime.now(timezone.utc)
    attempts = 0
    completion = ""
    retrying = Retrying(
        stop=stop_after_attempt(settings.max_attempts),
        wait=wait_exponential(multiplier=settings.backoff_s, min=settings.backoff_s, max=30 * max(settings.backoff_s, 1.0)),
        retry=retry_if_exception_type(TransportError),
        sleep=sleep,
    )
    try:
        for attempt in retrying:
            with attempt:
                attempts = attempt.retry_state.attempt_number
                logger.info(f"Chat request attempt {attempts}/{settings.max_attempts}")
                try:
                    completion = client.complete(prompt)
                except TransportError as e:
                    logger.warning(f"Chat request attempt {attempts}/{settings.max_attempts} failed: {e}")
                    raise
    except RetryError as e:
        raise ChainError(f"chat service failed after {attempts} attempts: {e.last_attempt.exception()}") from e

    if not completion.strip():
        raise ChainError("chat service returned an empty completion")
    if audit_log is not None:
        audit_log.record(prompt, completion, requested_at, datetime.now(timezone.utc), attempts, getattr(client, "model", None))
    return completion


def build_client(kind: str, settings: ChatSettings) -> ChatClient:
    """``"echo"`` for the identity test double, ``"http"`` for the real service."""
    if kind == "echo":
        return EchoClient()
    if kind == "http":
        return OpenAICompatibleClient(settings)
    raise ConfigError(f"unknown chat client '{kind}'", field="chat.client")
