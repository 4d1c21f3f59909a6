import random
import threading
import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from vasekit.exceptions import InvalidConfig, ProtocolError, TransportError
from vasekit.scorer_client import (
    RemoteProvider,
    ScorerClient,
    ScorerEndpointConfig,
    fetch_embeddings,
    health_check,
)


def cfg_for(server, **kw):
    base = {"base_url": server.url, "backoff_base_ms": 1, "timeout_ms": 2000}
    return ScorerEndpointConfig(**{**base, **kw})


def index_echo(texts):
    # Each vector carries the text itself, so order can be checked after batching.
    return {"vectors": [[float(t.split("-")[1]), 0.0] for t in texts], "dimension": 2, "model": "echo"}


def test_batching_and_order(mock_scorer):
    out = fetch_embeddings(["a", "bb", "ccc"], cfg_for(mock_scorer, max_batch_size=2))
    assert len(mock_scorer.embed_requests) == 2
    # Batches travel concurrently, so only the set of requests is fixed.
    assert sorted(req[2]["texts"] for req in mock_scorer.embed_requests) == [["a", "bb"], ["ccc"]]
    assert [v[0] for v in out] == [1.0, 2.0, 3.0]


@settings(max_examples=15, deadline=None, suppress_health_check=[HealthCheck.function_scoped_fixture])
@given(st.integers(1, 40), st.integers(1, 7))
def test_order_property(mock_scorer, n, batch):
    mock_scorer.script = [(200, index_echo)] * 100
    texts = [f"t-{k}" for k in range(n)]
    out = fetch_embeddings(texts, cfg_for(mock_scorer, max_batch_size=batch))
    assert [v[0] for v in out] == list(range(n))


def test_retry_on_500(mock_scorer):
    mock_scorer.script = [(500, {"error": "busy"})]
    with ScorerClient(cfg_for(mock_scorer)) as client:
        out = client.fetch_embeddings(["x"])
        assert client.stats.retries == 1
        assert client.stats.failures == 0
    assert len(out) == 1 and len(mock_scorer.embed_requests) == 2


def test_retried_result_equals_single_success(mock_scorer):
    clean = fetch_embeddings(["a", "b"], cfg_for(mock_scorer))
    mock_scorer.script = [(503, {}), (429, {})]
    retried = fetch_embeddings(["a", "b"], cfg_for(mock_scorer))
    assert all(np.array_equal(x, y) for x, y in zip(clean, retried))


def test_retries_exhausted(mock_scorer):
    mock_scorer.script = [(500, {})] * 3
    with ScorerClient(cfg_for(mock_scorer, max_retries=2)) as client:
        with pytest.raises(TransportError):
            client.fetch_embeddings(["x"])
        assert client.stats.retries == 2 and client.stats.failures == 1


def test_client_error_is_fatal(mock_scorer):
    mock_scorer.script = [(400, {"error": "bad"})]
    with pytest.raises(TransportError) as info:
        fetch_embeddings(["x"], cfg_for(mock_scorer))
    assert info.value.status == 400
    assert len(mock_scorer.embed_requests) == 1


def test_cross_batch_dimension_mismatch(mock_scorer):
    def dim(d):
        return lambda texts: {"vectors": [[0.5] * d for _ in texts], "dimension": d, "model": "m"}

    mock_scorer.script = [(200, dim(512)), (200, dim(768))]
    # One in-flight slot keeps the batches in script order.
    with pytest.raises(ProtocolError) as info:
        fetch_embeddings(["a", "b", "c"], cfg_for(mock_scorer, max_batch_size=2, max_in_flight=1))
    assert "512" in str(info.value) and "768" in str(info.value)


@pytest.mark.parametrize("body", [
    {"vectors": [[1.0, 2.0]], "dimension": 3},
    {"vectors": [], "dimension": 2},
    {"dimension": 2},
    {"vectors": [["x", "y"]], "dimension": 2},
    b"not json",
])
def test_malformed_responses(mock_scorer, body):
    mock_scorer.script = [(200, body)]
    with pytest.raises(ProtocolError):
        fetch_embeddings(["a"], cfg_for(mock_scorer))


def test_health(mock_scorer):
    desc = health_check(cfg_for(mock_scorer))
    assert (desc.dimension, desc.model) == (512, "mock-encoder")
    mock_scorer.health = {"model": "no-dim"}
    with pytest.raises(ProtocolError):
        health_check(cfg_for(mock_scorer))


def test_unreachable_host():
    cfg = ScorerEndpointConfig(base_url="http://127.0.0.1:9", timeout_ms=200, max_retries=2, backoff_base_ms=1)
    start = time.monotonic()
    with pytest.raises(TransportError):
        health_check(cfg)
    assert time.monotonic() - start < 3 * 0.2 + 1.0


def test_concurrency_cap(mock_scorer):
    mock_scorer.delay = 0.01
    with ScorerClient(cfg_for(mock_scorer, max_in_flight=3, max_batch_size=2)) as client:
        with ThreadPoolExecutor(max_workers=16) as pool:
            results = list(pool.map(lambda k: client.fetch_embeddings([f"{k}", "a", "b"]), range(100)))
    assert len(results) == 100 and all(len(r) == 3 for r in results)
    assert 1 < mock_scorer.max_in_flight <= 3


def test_backoff_is_jittered_exponential():
    sleeps = []
    client = ScorerClient(ScorerEndpointConfig(backoff_base_ms=100, jitter=0.2), sleep=sleeps.append,
                          rng=random.Random(0))
    delays = [client._backoff(a) for a in range(4)]
    for a, d in enumerate(delays):
        assert 0.1 * 2**a * 0.8 <= d <= 0.1 * 2**a * 1.2
    client.close()


def test_sleep_hook_used_between_attempts(mock_scorer):
    mock_scorer.script = [(500, {}), (500, {})]
    sleeps = []
    with ScorerClient(cfg_for(mock_scorer), sleep=sleeps.append) as client:
        client.fetch_embeddings(["x"])
    assert len(sleeps) == 2 and sleeps[1] > sleeps[0] * 1.2


@pytest.mark.parametrize("kw", [{"max_batch_size": 0}, {"max_retries": -1}, {"timeout_ms": 0},
                                {"max_in_flight": 0}, {"jitter": 2}])
def test_invalid_config(kw):
    with pytest.raises(InvalidConfig):
        ScorerEndpointConfig(**kw).validate()
    with pytest.raises(InvalidConfig):
        ScorerEndpointConfig.from_dict({"retries": 1})


def test_bearer_token_header(mock_scorer):
    seen = []
    orig = mock_scorer.handle

    def spy(method, path, body):
        seen.append(threading.current_thread().name)
        return orig(method, path, body)

    mock_scorer.handle = spy
    with ScorerClient(cfg_for(mock_scorer, bearer_token="s3cret")) as client:
        assert client._http.headers["Authorization"] == "Bearer s3cret"
        client.fetch_embeddings(["a"])
    assert seen


def test_remote_provider(mock_scorer):
    provider = RemoteProvider(cfg_for(mock_scorer))
    out = provider.embed(["ab", "c"])
    assert out.shape == (2, 4)
    assert provider.dimension == 4
    assert provider.embed([]).shape == (0, 4)
