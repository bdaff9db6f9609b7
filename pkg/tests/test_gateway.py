"""Gateway policy and mock provider contracts."""

import math
import threading

import pytest

from seedforge.errors import (ConfigError, ProtocolError,
                              RetryableProviderError, ValidationError)
from seedforge.gateway import Gateway, GatewayStats
from seedforge.gateway.cache import ResponseCache, request_key
from seedforge.gateway.mock import (FlakyProvider, MockEmbedder,
                                    MockParaphraser, MockTranslator,
                                    ScriptedTextGenerator)
from seedforge.gateway.ratelimit import RateLimiter
from seedforge.gateway.types import GenRequest, ProviderBudget


def _cosine(a, b):
    dot = sum(x * y for x, y in zip(a.values, b.values))
    na = math.sqrt(sum(x * x for x in a.values))
    nb = math.sqrt(sum(x * x for x in b.values))
    return dot / (na * nb)


class TestMockProviders:
    def test_translator_tags_target_language(self):
        t = MockTranslator()
        assert t.translate("x", "th", "en") == "en⟨x⟩"

    def test_round_trip_is_visibly_degraded(self):
        t = MockTranslator()
        once = t.translate("ข้อความ", "th", "en")
        back = t.translate(once, "en", "th")
        assert back == "th⟨en⟨ข้อความ⟩⟩"
        assert back != "ข้อความ"

    def test_embedder_identical_text_identical_vector(self):
        e = MockEmbedder(dim=64)
        a, b = e.embed_batch(["สวัสดี ชาวโลก", "สวัสดี ชาวโลก"])
        assert a.values == b.values
        # and across instances: no hidden state
        c = MockEmbedder(dim=64).embed_batch(["สวัสดี ชาวโลก"])[0]
        assert c.values == a.values

    def test_embedder_one_word_edit_stays_close(self):
        e = MockEmbedder()
        words = [f"word{i}" for i in range(30)]
        edited = words[:-1] + ["changed"]
        a, b = e.embed_batch([" ".join(words), " ".join(edited)])
        assert 0.9 < _cosine(a, b) < 1.0

    def test_embedder_unrelated_texts_far_apart(self):
        e = MockEmbedder()
        a, b = e.embed_batch(["alpha beta gamma delta",
                              "หนึ่ง สอง สาม สี่"])
        assert abs(_cosine(a, b)) < 0.5

    def test_embedder_vectors_unit_norm(self):
        e = MockEmbedder(dim=32)
        (v,) = e.embed_batch(["a b c"])
        assert math.isclose(sum(x * x for x in v.values), 1.0,
                            rel_tol=1e-9)

    def test_paraphraser_count_and_distinctness(self):
        p = MockParaphraser(seed=1)
        out = p.paraphrase("hello world", 4)
        assert len(out) == 4
        assert len(set(out)) == 4
        assert all(v.startswith("hello world ") for v in out)
        assert all(v != "hello world" for v in out)

    def test_paraphraser_seed_changes_variants(self):
        a = MockParaphraser(seed=1).paraphrase("x", 2)
        b = MockParaphraser(seed=2).paraphrase("x", 2)
        assert a != b
        assert a == MockParaphraser(seed=1).paraphrase("x", 2)


class TestGatewayOperations:
    def test_complete_deterministic_for_same_request(self, gateway):
        req = GenRequest(prompt="tell me something", temperature=0.8,
                         seed=5)
        assert gateway.complete(req) == gateway.complete(req)

    def test_complete_varies_with_seed(self, gateway):
        a = gateway.complete(GenRequest(prompt="p", temperature=0.8, seed=1))
        b = gateway.complete(GenRequest(prompt="p", temperature=0.8, seed=2))
        assert a != b

    def test_embed_preserves_order_across_batches(self, gateway):
        texts = [f"text number {i}" for i in range(150)]
        vectors = gateway.embed(texts)
        assert len(vectors) == 150
        single = gateway.embed([texts[137]])[0]
        assert vectors[137].values == single.values

    def test_embed_rejects_empty_text(self, gateway):
        with pytest.raises(ValidationError, match="#1"):
            gateway.embed(["ok", "   "])

    def test_translate_rejects_unknown_pair(self, gateway):
        with pytest.raises(ConfigError, match="de->fr"):
            gateway.translate("x", "de", "fr")

    def test_translate_rejects_empty_text(self, gateway):
        with pytest.raises(ValidationError):
            gateway.translate("", "th", "en")

    def test_paraphrase_count_mismatch_is_protocol_error(self, gateway):
        class Short(MockParaphraser):
            def paraphrase(self, text, count, controls=None):
                return super().paraphrase(text, count - 1, controls)

        gateway.paraphraser = Short()
        with pytest.raises(ProtocolError, match="asked for 3"):
            gateway.paraphrase("x", 3)

    def test_paraphrase_echo_is_protocol_error(self, gateway):
        class Echo(MockParaphraser):
            def paraphrase(self, text, count, controls=None):
                return [text] * count

        gateway.paraphraser = Echo()
        with pytest.raises(ProtocolError, match="echoed"):
            gateway.paraphrase("x", 2)

    def test_mixed_embedding_dimensions_rejected(self, gateway):
        class Mixed(MockEmbedder):
            def embed_batch(self, texts):
                out = []
                for i, text in enumerate(texts):
                    dim = 8 if i % 2 == 0 else 16
                    out.append(MockEmbedder(dim=dim).embed_batch([text])[0])
                return out

        gateway.embedder = Mixed()
        with pytest.raises(ProtocolError, match="mixed"):
            gateway.embed(["a", "b"])

    def test_wiki_search_validates_arguments(self, gateway):
        with pytest.raises(ValidationError):
            gateway.wiki_search("  ")
        with pytest.raises(ValidationError):
            gateway.wiki_search("ok", limit=0)


class TestRetryPolicy:
    def _gateway_with_flaky_translator(self, failures, retry_limit):
        sleeps = []
        gw = Gateway.mock(budget=ProviderBudget(
            requests_per_minute=10**9, retry_limit=retry_limit))
        gw._sleep = sleeps.append
        gw.translator = FlakyProvider(MockTranslator(), failures=failures)
        return gw, sleeps

    def test_transient_failures_are_retried(self):
        gw, sleeps = self._gateway_with_flaky_translator(
            failures=2, retry_limit=3)
        assert gw.translate("x", "th", "en") == "en⟨x⟩"
        assert len(sleeps) == 2
        assert gw.stats.snapshot()["retries"] == 2

    def test_retry_budget_exhaustion_raises(self):
        gw, _ = self._gateway_with_flaky_translator(
            failures=10, retry_limit=2)
        with pytest.raises(RetryableProviderError):
            gw.translate("x", "th", "en")

    def test_backoff_grows_per_attempt(self):
        gw, sleeps = self._gateway_with_flaky_translator(
            failures=3, retry_limit=5)
        gw.translate("x", "th", "en")
        # base 0.5 doubling, jittered by a factor in [0.5, 1.5)
        assert len(sleeps) == 3
        for i, delay in enumerate(sleeps):
            base = 0.5 * (2 ** i)
            assert base * 0.5 <= delay < base * 1.5


class TestRateLimiter:
    def test_window_bound_is_exact(self):
        clock = [0.0]
        sleeps = []

        def sleep(s):
            sleeps.append(s)
            clock[0] += s

        limiter = RateLimiter(3, clock=lambda: clock[0], sleep=sleep)
        for _ in range(3):
            limiter.acquire()
        assert limiter.in_window() == 3
        assert sleeps == []
        limiter.acquire()  # fourth must wait for the window to move
        assert sleeps and sleeps[0] == pytest.approx(60.0)

    def test_old_stamps_expire(self):
        clock = [0.0]
        limiter = RateLimiter(2, clock=lambda: clock[0],
                              sleep=lambda s: None)
        limiter.acquire()
        limiter.acquire()
        clock[0] = 61.0
        limiter.acquire()  # no sleep needed: first two expired
        assert limiter.in_window() == 1


class TestCache:
    def test_response_cache_round_trip(self, tmp_path):
        cache = ResponseCache(tmp_path)
        key = request_key("prov", "op", {"a": 1, "b": [2, 3]})
        assert cache.get(key) is None
        cache.put(key, {"payload": {"x": "ค่า"}})
        assert cache.get(key) == {"payload": {"x": "ค่า"}}

    def test_request_key_is_order_insensitive(self):
        a = request_key("p", "op", {"a": 1, "b": 2})
        b = request_key("p", "op", {"b": 2, "a": 1})
        assert a == b
        assert a != request_key("p", "op", {"a": 1, "b": 3})

    def test_gateway_cache_short_circuits_provider(self, tmp_path):
        gw = Gateway.mock(cache_dir=tmp_path)
        req = GenRequest(prompt="echo:hello", temperature=0.1, seed=0)
        assert gw.complete(req) == "hello"
        assert gw.complete(req) == "hello"
        stats = gw.stats.snapshot()
        assert stats["provider_calls"]["complete"] == 1
        assert stats["cache_hits"]["complete"] == 1

    def test_cache_persists_across_gateways(self, tmp_path):
        # Cache keys include the provider id, so the second gateway's
        # generator must present the same identity as the first.
        class Dead(ScriptedTextGenerator):
            @property
            def provider_id(self):
                return "mock:gen"

        gw1 = Gateway.mock(cache_dir=tmp_path)
        gw1.complete(GenRequest(prompt="echo:x", temperature=0.1, seed=0))
        gw2 = Gateway.mock(cache_dir=tmp_path)
        gw2.generator = Dead([])  # raises if actually called
        out = gw2.complete(GenRequest(prompt="echo:x", temperature=0.1,
                                      seed=0))
        assert out == "x"


class TestConcurrency:
    def test_semaphore_bounds_in_flight_calls(self):
        active = []
        peak = []
        lock = threading.Lock()

        class SlowEmbedder(MockEmbedder):
            def embed_batch(self, texts):
                with lock:
                    active.append(1)
                    peak.append(len(active))
                out = super().embed_batch(texts)
                with lock:
                    active.pop()
                return out

        gw = Gateway.mock(budget=ProviderBudget(
            requests_per_minute=10**9, max_concurrent=2))
        gw.embedder = SlowEmbedder()
        threads = [threading.Thread(
            target=lambda i=i: gw.embed([f"text {i}"])) for i in range(12)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert max(peak) <= 2

    def test_stats_are_thread_safe(self):
        stats = GatewayStats()
        threads = [threading.Thread(
            target=lambda: [stats.count_call("op", 1) for _ in range(500)])
            for _ in range(8)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert stats.snapshot()["provider_calls"]["op"] == 4000
