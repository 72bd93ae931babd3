"""Text generator access: live OpenAI-style HTTP backend and a JSON Lines replay store.

The store holds one exchange per line. A sidecar file (``<store>.sha256``)
holds the SHA-256 of every raw line, so ``verify`` catches edits to responses
and timestamps as well as to requests.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import threading
import time
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Iterator, Optional, Union

import httpx

from .prompting import Mode

log = logging.getLogger(__name__)

API_KEY_ENV = "CLINEX_API_KEY"
API_BASE_ENV = "CLINEX_API_BASE"
DEFAULT_API_BASE = "https://api.openai.com/v1"
EDIT_ENGINE = "text-davinci-edit-001"
COMPLETION_ENGINE = "text-davinci-002"

STORE_FIELDS = ("digest", "mode", "engine", "prompt", "instruction", "temperature",
                "max_tokens", "response", "recorded_at")


class GatewayError(RuntimeError):
    pass


class ReplayMiss(GatewayError):
    def __init__(self, digest: str):
        super().__init__(f"no recorded exchange for request {digest}")
        self.digest = digest


class ApiError(GatewayError):
    def __init__(self, status: int, body: str):
        super().__init__(f"API returned {status}: {body[:200]}")
        self.status = status
        self.body = body


class LlmTimeout(GatewayError):
    pass


class StoreError(GatewayError):
    """Unreadable or malformed replay store; message names the path and line."""


@dataclass(frozen=True)
class LlmRequest:
    mode: Mode
    prompt: str
    engine: str
    temperature: float = 0.0
    max_tokens: int = 256
    instruction: Optional[str] = None

    def __post_init__(self):
        if self.mode is Mode.EDIT and self.instruction is None:
            raise ValueError("edit requests need an instruction")
        if self.mode is Mode.COMPLETION and self.instruction is not None:
            raise ValueError("completion requests take no instruction")

    def canonical(self) -> bytes:
        payload = [
            ["mode", self.mode.value],
            ["engine", self.engine],
            ["prompt", self.prompt],
            ["instruction", self.instruction],
            ["temperature", float(self.temperature)],
            ["max_tokens", int(self.max_tokens)],
        ]
        return json.dumps(payload, ensure_ascii=False, separators=(",", ":")).encode("utf-8")

    @property
    def digest(self) -> str:
        return hashlib.sha256(self.canonical()).hexdigest()


@dataclass(frozen=True)
class LlmExchange:
    request: LlmRequest
    response_text: str
    recorded_at: str

    @property
    def request_digest(self) -> str:
        return self.request.digest

    def to_line(self) -> str:
        r = self.request
        row = {
            "digest": r.digest,
            "mode": r.mode.value,
            "engine": r.engine,
            "prompt": r.prompt,
            "instruction": r.instruction,
            "temperature": float(r.temperature),
            "max_tokens": int(r.max_tokens),
            "response": self.response_text,
            "recorded_at": self.recorded_at,
        }
        return json.dumps(row, ensure_ascii=False, separators=(",", ":"))

    @classmethod
    def from_row(cls, row: dict) -> "LlmExchange":
        missing = [f for f in STORE_FIELDS if f not in row]
        if missing:
            raise ValueError(f"missing fields {missing}")
        request = LlmRequest(
            mode=Mode(row["mode"]),
            prompt=row["prompt"],
            engine=row["engine"],
            temperature=float(row["temperature"]),
            max_tokens=int(row["max_tokens"]),
            instruction=row["instruction"],
        )
        return cls(request, row["response"], row["recorded_at"])


def utc_now() -> str:
    return datetime.now(timezone.utc).replace(microsecond=0).isoformat().replace("+00:00", "Z")


def record(request: LlmRequest, response: str, recorded_at: Optional[str] = None) -> LlmExchange:
    return LlmExchange(request, response, recorded_at or utc_now())


def _line_hash(line: str) -> str:
    return hashlib.sha256(line.encode("utf-8")).hexdigest()


class ReplayStore:
    """Append-only exchange store; the last exchange written for a digest wins."""

    def __init__(self, path: Union[str, Path], mode: str = "read"):
        if mode not in ("read", "append"):
            raise ValueError(f"store mode must be 'read' or 'append', not {mode!r}")
        self.path = Path(path)
        self.mode = mode
        self._lock = threading.Lock()
        self._index: dict[str, LlmExchange] = {}
        self._count = 0
        if self.path.exists():
            for _, exchange in self._read():
                self._index[exchange.request_digest] = exchange
                self._count += 1
        elif mode == "read":
            raise StoreError(f"{self.path}: replay store does not exist")
        if mode == "append":
            try:
                self.path.parent.mkdir(parents=True, exist_ok=True)
                self.path.touch(exist_ok=True)
                self.checksum_path.touch(exist_ok=True)
            except OSError as exc:
                raise StoreError(f"{self.path}: not writable: {exc}") from exc

    @property
    def checksum_path(self) -> Path:
        return self.path.with_name(self.path.name + ".sha256")

    def _read(self) -> Iterator[tuple[int, LlmExchange]]:
        try:
            raw = self.path.read_bytes()
        except OSError as exc:
            raise StoreError(f"{self.path}: {exc}") from exc
        for lineno, line in enumerate(raw.splitlines(), 1):
            if not line.strip():
                continue
            try:
                row = json.loads(line.decode("utf-8"))
                exchange = LlmExchange.from_row(row)
            except (UnicodeDecodeError, json.JSONDecodeError, ValueError, TypeError, KeyError) as exc:
                raise StoreError(f"{self.path}:{lineno}: corrupt store line: {exc}") from exc
            yield lineno, exchange

    def __len__(self) -> int:
        return self._count

    def __contains__(self, digest: str) -> bool:
        return digest in self._index

    def lookup(self, request: LlmRequest) -> str:
        exchange = self._index.get(request.digest)
        if exchange is None:
            raise ReplayMiss(request.digest)
        return exchange.response_text

    def exchanges(self) -> list[LlmExchange]:
        return [e for _, e in self._read()]

    def append(self, exchange: LlmExchange) -> None:
        if self.mode != "append":
            raise StoreError(f"{self.path}: opened read-only")
        line = exchange.to_line()
        with self._lock:
            try:
                with self.path.open("a", encoding="utf-8", newline="\n") as fh:
                    fh.write(line + "\n")
                with self.checksum_path.open("a", encoding="utf-8", newline="\n") as fh:
                    fh.write(_line_hash(line) + "\n")
            except OSError as exc:
                raise StoreError(f"{self.path}: {exc}") from exc
            self._index[exchange.request_digest] = exchange
            self._count += 1


def open_store(path, mode: str = "read") -> ReplayStore:
    return ReplayStore(path, mode)


def verify_store(path) -> list[str]:
    """Every integrity problem in a store file; empty when intact.

    Checks that each line parses, that each digest matches its request fields,
    and that each raw line matches the checksum sidecar.
    """
    path = Path(path)
    problems: list[str] = []
    try:
        lines = path.read_bytes().split(b"\n")
    except OSError as exc:
        return [f"{path}: {exc}"]
    if lines and lines[-1] == b"":
        lines.pop()
    for lineno, raw in enumerate(lines, 1):
        try:
            row = json.loads(raw.decode("utf-8"))
            exchange = LlmExchange.from_row(row)
        except (UnicodeDecodeError, json.JSONDecodeError, ValueError, TypeError, KeyError) as exc:
            problems.append(f"line {lineno}: unreadable: {exc}")
            continue
        if row["digest"] != exchange.request_digest:
            problems.append(f"line {lineno}: digest mismatch ({row['digest'][:12]} recorded, "
                            f"{exchange.request_digest[:12]} computed)")
    sidecar = path.with_name(path.name + ".sha256")
    if not sidecar.exists():
        problems.append(f"{sidecar}: checksum file missing")
        return problems
    try:
        sums = sidecar.read_text(encoding="utf-8").split("\n")
    except (OSError, UnicodeDecodeError) as exc:
        return problems + [f"{sidecar}: {exc}"]
    if sums and sums[-1] == "":
        sums.pop()
    if len(sums) != len(lines):
        problems.append(f"{sidecar}: {len(sums)} checksums for {len(lines)} lines")
    for lineno, (raw, expected) in enumerate(zip(lines, sums), 1):
        if hashlib.sha256(raw).hexdigest() != expected.strip():
            problems.append(f"line {lineno}: checksum mismatch")
    return problems


# --- backends ---------------------------------------------------------------

class ReplayBackend:
    def __init__(self, store: ReplayStore):
        self.store = store

    def generate(self, request: LlmRequest) -> str:
        return self.store.lookup(request)


RETRY_STATUS = frozenset((429, 500, 502, 503, 504))


class LiveBackend:
    """OpenAI-compatible completions/edits client with bounded retries and in-flight cap."""

    def __init__(
        self,
        api_key: str,
        base_url: str = DEFAULT_API_BASE,
        *,
        max_attempts: int = 3,
        backoff: float = 1.0,
        max_in_flight: int = 4,
        timeout: float = 60.0,
        client: Optional[httpx.Client] = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.base_url = base_url.rstrip("/")
        self.max_attempts = max_attempts
        self.backoff = backoff
        self._sleep = sleep
        self._slots = threading.BoundedSemaphore(max_in_flight)
        self._client = client or httpx.Client(timeout=timeout)
        self._headers = {"Authorization": f"Bearer {api_key}"}

    @classmethod
    def from_env(cls, **kwargs) -> "LiveBackend":
        key = os.environ.get(API_KEY_ENV)
        if not key:
            raise GatewayError(f"{API_KEY_ENV} is not set")
        return cls(key, os.environ.get(API_BASE_ENV) or DEFAULT_API_BASE, **kwargs)

    @staticmethod
    def body(request: LlmRequest) -> tuple[str, dict]:
        if request.mode is Mode.EDIT:
            payload = {"model": request.engine, "input": request.prompt,
                       "instruction": request.instruction, "temperature": request.temperature}
            if request.max_tokens:
                payload["max_tokens"] = request.max_tokens
            return "/edits", payload
        return "/completions", {"model": request.engine, "prompt": request.prompt,
                                "temperature": request.temperature, "max_tokens": request.max_tokens}

    def generate(self, request: LlmRequest) -> str:
        endpoint, payload = self.body(request)
        url = self.base_url + endpoint
        last: Optional[Exception] = None
        with self._slots:
            for attempt in range(self.max_attempts):
                if attempt:
                    self._sleep(self.backoff * 2 ** (attempt - 1))
                try:
                    resp = self._client.post(url, json=payload, headers=self._headers)
                except httpx.TimeoutException as exc:
                    last = LlmTimeout(f"{url}: {exc}")
                    log.warning("timeout on attempt %d for %s", attempt + 1, request.digest[:12])
                    continue
                if resp.status_code in RETRY_STATUS:
                    last = ApiError(resp.status_code, resp.text)
                    log.warning("status %d on attempt %d", resp.status_code, attempt + 1)
                    continue
                if resp.status_code != 200:
                    raise ApiError(resp.status_code, resp.text)
                try:
                    return resp.json()["choices"][0]["text"]
                except (ValueError, KeyError, IndexError, TypeError) as exc:
                    raise ApiError(resp.status_code, f"unexpected response body: {resp.text[:200]}") from exc
        assert last is not None
        raise last


class RecordingBackend:
    """Wraps a backend and appends every successful exchange to a store."""

    def __init__(self, inner, store: ReplayStore, clock: Callable[[], str] = utc_now):
        self.inner = inner
        self.store = store
        self.clock = clock

    def generate(self, request: LlmRequest) -> str:
        response = self.inner.generate(request)
        self.store.append(record(request, response, self.clock()))
        return response
