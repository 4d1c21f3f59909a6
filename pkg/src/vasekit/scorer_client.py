"""JSON-over-HTTP client for an external embedding service.

Wire protocol::

    POST {base}/v1/embed    {"texts": [str], "normalize": bool}
                         -> {"vectors": [[float]], "dimension": int, "model": str}
    GET  {base}/v1/health -> {"dimension": int, "model": str}

429 and 5xx responses, timeouts and connection failures are retried with
jittered exponential backoff; any other non-2xx status fails immediately.
"""

from __future__ import annotations

import logging
import random
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Mapping, Sequence

import httpx
import numpy as np

from .exceptions import InvalidConfig, ProtocolError, TransportError

logger = logging.getLogger(__name__)

SCORER_URL_ENV = "VASEKIT_SCORER_URL"


@dataclass(frozen=True)
class ScorerEndpointConfig:
    base_url: str = "http://127.0.0.1:8080"
    timeout_ms: float = 10_000
    max_batch_size: int = 64
    max_retries: int = 3
    backoff_base_ms: float = 250
    jitter: float = 0.2
    max_in_flight: int = 4
    normalize: bool = False
    bearer_token: str | None = None

    def validate(self) -> "ScorerEndpointConfig":
        if not self.base_url:
            raise InvalidConfig("scorer base_url is empty")
        if not self.timeout_ms > 0:
            raise InvalidConfig("timeout_ms must be > 0")
        if self.max_batch_size < 1:
            raise InvalidConfig("max_batch_size must be >= 1")
        if self.max_retries < 0:
            raise InvalidConfig("max_retries must be >= 0")
        if self.backoff_base_ms < 0 or not 0 <= self.jitter <= 1:
            raise InvalidConfig("backoff_base_ms must be >= 0 and jitter in [0, 1]")
        if self.max_in_flight < 1:
            raise InvalidConfig("max_in_flight must be >= 1")
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, obj: Mapping) -> "ScorerEndpointConfig":
        unknown = set(obj) - set(cls.__dataclass_fields__)
        if unknown:
            raise InvalidConfig(f"unknown scorer config keys {sorted(unknown)}")
        return cls(**obj)


@dataclass(frozen=True)
class ServiceDescriptor:
    dimension: int
    model: str


@dataclass
class ClientStats:
    requests: int = 0
    retries: int = 0
    failures: int = 0
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    def bump(self, **deltas: int) -> None:
        with self._lock:
            for name, d in deltas.items():
                setattr(self, name, getattr(self, name) + d)


def _retryable(status: int) -> bool:
    return status == 429 or 500 <= status <= 599


class ScorerClient:
    """Thread-safe client; one instance may serve many concurrent callers.

    Requests in flight across all callers never exceed ``cfg.max_in_flight``.
    """

    def __init__(
        self,
        cfg: ScorerEndpointConfig | None = None,
        *,
        sleep: Callable[[float], None] = time.sleep,
        rng: random.Random | None = None,
        transport: httpx.BaseTransport | None = None,
    ):
        self.cfg = (cfg or ScorerEndpointConfig()).validate()
        headers = {"Authorization": f"Bearer {self.cfg.bearer_token}"} if self.cfg.bearer_token else None
        self._http = httpx.Client(
            base_url=self.cfg.base_url.rstrip("/"),
            timeout=self.cfg.timeout_ms / 1000.0,
            headers=headers,
            transport=transport,
            limits=httpx.Limits(max_connections=self.cfg.max_in_flight),
        )
        self._slots = threading.BoundedSemaphore(self.cfg.max_in_flight)
        self._sleep = sleep
        self._rng = rng or random.Random()
        self._rng_lock = threading.Lock()
        self.stats = ClientStats()

    def close(self) -> None:
        self._http.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def _backoff(self, attempt: int) -> float:
        with self._rng_lock:
            u = self._rng.uniform(-1.0, 1.0)
        base = self.cfg.backoff_base_ms / 1000.0 * (2 ** attempt)
        return max(0.0, base * (1.0 + self.cfg.jitter * u))

    def _request(self, method: str, path: str, payload: dict | None = None) -> dict:
        last = "no attempt made"
        for attempt in range(self.cfg.max_retries + 1):
            if attempt:
                self.stats.bump(retries=1)
                self._sleep(self._backoff(attempt - 1))
            self.stats.bump(requests=1)
            try:
                with self._slots:
                    resp = self._http.request(method, path, json=payload)
            except httpx.TransportError as exc:
                last = f"{type(exc).__name__}: {exc}"
                logger.debug("%s %s failed (attempt %d): %s", method, path, attempt + 1, last)
                continue
            if resp.is_success:
                try:
                    body = resp.json()
                except ValueError:
                    raise ProtocolError(f"{method} {path}: response is not JSON") from None
                if not isinstance(body, dict):
                    raise ProtocolError(f"{method} {path}: expected a JSON object")
                return body
            if not _retryable(resp.status_code):
                self.stats.bump(failures=1)
                raise TransportError(f"{method} {path}: HTTP {resp.status_code}", status=resp.status_code)
            last = f"HTTP {resp.status_code}"
        self.stats.bump(failures=1)
        raise TransportError(f"{method} {path}: giving up after {self.cfg.max_retries + 1} attempts ({last})")

    def health_check(self) -> ServiceDescriptor:
        body = self._request("GET", "/v1/health")
        dim = body.get("dimension")
        if not isinstance(dim, int) or isinstance(dim, bool) or dim < 1:
            raise ProtocolError(f"health descriptor has no valid dimension: {body!r}")
        return ServiceDescriptor(dim, str(body.get("model", "")))

    def _embed_batch(self, texts: Sequence[str]) -> tuple[int, np.ndarray]:
        body = self._request("POST", "/v1/embed", {"texts": list(texts), "normalize": self.cfg.normalize})
        vectors, dim = body.get("vectors"), body.get("dimension")
        if not isinstance(vectors, list) or not isinstance(dim, int) or isinstance(dim, bool):
            raise ProtocolError("embed response needs 'vectors' (list) and 'dimension' (int)")
        if len(vectors) != len(texts):
            raise ProtocolError(f"sent {len(texts)} texts but received {len(vectors)} vectors")
        try:
            arr = np.asarray(vectors, dtype=np.float64)
        except (TypeError, ValueError):
            raise ProtocolError("vectors are not a numeric matrix") from None
        if arr.ndim != 2 or arr.shape[1] != dim:
            raise ProtocolError(f"vectors do not match the advertised dimension {dim}")
        if not np.all(np.isfinite(arr)):
            raise ProtocolError("vectors contain non-finite values")
        return dim, arr

    def fetch_embeddings(self, texts: Sequence[str]) -> list[np.ndarray]:
        """Embed ``texts`` in order, one POST per batch of at most ``max_batch_size``.

        Either every vector is returned or an error is raised; never a partial list.
        """
        texts = list(texts)
        if not texts:
            raise ValueError("fetch_embeddings needs at least one text")
        size = self.cfg.max_batch_size
        batches = [texts[i : i + size] for i in range(0, len(texts), size)]
        if len(batches) == 1:
            results = [self._embed_batch(batches[0])]
        else:
            with ThreadPoolExecutor(max_workers=min(self.cfg.max_in_flight, len(batches))) as pool:
                futures = [pool.submit(self._embed_batch, b) for b in batches]
                results = [f.result() for f in futures]
        first_dim = results[0][0]
        for k, (dim, _) in enumerate(results[1:], start=1):
            if dim != first_dim:
                raise ProtocolError(f"batch 0 returned dimension {first_dim} but batch {k} returned {dim}")
        return [row for _, arr in results for row in arr]


def fetch_embeddings(texts: Sequence[str], cfg: ScorerEndpointConfig) -> list[np.ndarray]:
    with ScorerClient(cfg) as client:
        return client.fetch_embeddings(texts)


def health_check(cfg: ScorerEndpointConfig) -> ServiceDescriptor:
    with ScorerClient(cfg) as client:
        return client.health_check()


class RemoteProvider:
    """Similarity provider backed by the external embedding service."""

    name = "remote"
    deterministic = False

    def __init__(self, cfg: ScorerEndpointConfig | ScorerClient):
        self.client = cfg if isinstance(cfg, ScorerClient) else ScorerClient(cfg)
        self._dimension: int | None = None

    @property
    def dimension(self) -> int:
        if self._dimension is None:
            self._dimension = self.client.health_check().dimension
        return self._dimension

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        if not texts:
            return np.zeros((0, self.dimension))
        rows = self.client.fetch_embeddings(texts)
        out = np.vstack(rows)
        if self._dimension is None:
            self._dimension = out.shape[1]
        elif out.shape[1] != self._dimension:
            raise ProtocolError(f"service dimension changed from {self._dimension} to {out.shape[1]}")
        return out
