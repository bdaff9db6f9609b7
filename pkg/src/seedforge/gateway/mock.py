"""Deterministic in-process providers.

Every mock is a pure function of (request, seed): identical inputs yield
byte-identical outputs, with no network, no clock, and no shared mutable
state. The text generator recognizes the pipeline's own prompt shapes and
answers with well-formed payloads, so a full dataset build can run offline.

ScriptedTextGenerator and FlakyProvider are test doubles for driving parser
retry paths and transport retry paths; they live here because they are part
of the package's public testing surface.
"""

from __future__ import annotations

import hashlib
import json
import random
import re
import threading

from seedforge.errors import RetryableProviderError, ValidationError
from seedforge.gateway.providers import (Embedder, Paraphraser, TextGenerator,
                                         Translator, WikiClient)
from seedforge.gateway.types import EmbeddingVector, GenRequest, WikiArticleRef
from seedforge.seeding import derive_seed

_SYLLABLES = (
    "ka", "ri", "to", "na", "sel", "mor", "vin", "dra", "lu", "pek",
    "sha", "om", "tir", "ban", "qua", "zel", "fi", "gor", "hem", "ja",
    "kro", "lim", "nu", "pra", "sto", "tul", "ver", "wi", "xan", "yor",
    "bi", "cho", "dal", "eri", "fol", "gra", "hul", "iv", "jen", "kol",
)


def _word(rng: random.Random) -> str:
    return "".join(rng.choice(_SYLLABLES) for _ in range(rng.randint(2, 3)))


def _phrase(rng: random.Random, n_words: int) -> str:
    return " ".join(_word(rng) for _ in range(n_words))


def _sentence(rng: random.Random) -> str:
    return _phrase(rng, rng.randint(6, 11)).capitalize() + "."


def _paragraph(rng: random.Random, n_sentences: int) -> str:
    return " ".join(_sentence(rng) for _ in range(n_sentences))


def _request_digest(request: GenRequest) -> int:
    body = json.dumps(
        {"prompt": request.prompt, "temperature": request.temperature,
         "max_tokens": request.max_tokens, "seed": request.seed},
        sort_keys=True, ensure_ascii=False)
    return int.from_bytes(
        hashlib.sha256(body.encode("utf-8")).digest()[:8], "big")


class MockTextGenerator(TextGenerator):
    """Prompt-shape-aware deterministic completion provider."""

    remote = False

    @property
    def provider_id(self) -> str:
        return "mock:gen"

    def complete(self, request: GenRequest) -> str:
        rng = random.Random(_request_digest(request))
        prompt = request.prompt
        if prompt.startswith("echo:"):
            return prompt[len("echo:"):]
        if "completely random topics" in prompt:
            return self._topics(rng, prompt)
        if re.match(r"Generate \d+ questions", prompt):
            return self._closed_qa(rng, prompt)
        if prompt.startswith("Generate a concise summary"):
            return self._summary(rng, prompt)
        if prompt.startswith("Generate a conversation"):
            return self._conversation(rng)
        if prompt.startswith("Generate a multiple-choice question"):
            return self._multiple_choice(rng)
        return _paragraph(rng, rng.randint(3, 6))

    def _topics(self, rng: random.Random, prompt: str) -> str:
        m = re.search(r"generate (\d+) completely random topics", prompt)
        count = int(m.group(1)) if m else 20
        topics = []
        seen = set()
        while len(topics) < count:
            topic = _phrase(rng, rng.randint(2, 4))
            if topic not in seen:
                seen.add(topic)
                topics.append(topic)
        return json.dumps(topics, ensure_ascii=False)

    def _closed_qa(self, rng: random.Random, prompt: str) -> str:
        m = re.match(r"Generate (\d+) questions", prompt)
        count = int(m.group(1)) if m else 5
        pairs = [
            {"question": _phrase(rng, rng.randint(4, 7)).capitalize() + "?",
             "answer": _sentence(rng)}
            for _ in range(count)
        ]
        return json.dumps(pairs, ensure_ascii=False)

    def _summary(self, rng: random.Random, prompt: str) -> str:
        m = re.search(r"concise summary in (.+?) format", prompt)
        style = m.group(1) if m else "paragraphs"
        payload = {
            "summary": _paragraph(rng, 2),
            "instruction": (f"Please summarize in {style} format the "
                            f"following text passage"),
        }
        return json.dumps(payload, ensure_ascii=False)

    def _conversation(self, rng: random.Random) -> str:
        user = _phrase(rng, rng.randint(5, 9)).capitalize() + "?"
        reply = _paragraph(rng, 2)
        return f"Input: {user} Output: {reply}"

    def _multiple_choice(self, rng: random.Random) -> str:
        question = _phrase(rng, rng.randint(5, 8)).capitalize() + "?"
        for _ in range(20):
            choices = [_phrase(rng, 2) for _ in range(4)]
            distinct = len(set(choices)) == 4 and not any(
                a in b for a in choices for b in choices if a is not b)
            if distinct:
                break
        explanation = _sentence(rng)
        reasoning = _sentence(rng)
        lines = [f"Question: {question}", "Choices:"]
        lines += [f"- {c}" for c in choices]
        lines.append(f"Answer: {explanation} {reasoning} "
                     f"The correct answer is {choices[0]}.")
        return "\n".join(lines)


class MockEmbedder(Embedder):
    """Signed bag-of-words feature hashing, L2 normalized.

    Identical texts map to identical vectors; texts sharing most words land
    near cosine 1, unrelated texts near 0. Deterministic with no seed at all,
    which is exactly what a cache-transparent embedding provider looks like.
    """

    remote = False
    batch_size = 64

    def __init__(self, dim: int = 256):
        self._dim = dim

    @property
    def provider_id(self) -> str:
        return f"mock:embed:{self._dim}"

    @property
    def dimension(self) -> int:
        return self._dim

    def _vector(self, text: str) -> EmbeddingVector:
        values = [0.0] * self._dim
        words = text.split()
        if not words:
            raise ValidationError("cannot embed whitespace-only text")
        for word in words:
            h = int.from_bytes(
                hashlib.sha256(word.encode("utf-8")).digest()[:8], "big")
            sign = 1.0 if h & 1 else -1.0
            values[(h >> 1) % self._dim] += sign
        norm = sum(v * v for v in values) ** 0.5
        if norm == 0.0:
            # Hash signs cancelled out; nudge one bucket so the vector stays
            # usable for cosine similarity.
            values[0] = 1.0
            norm = 1.0
        return EmbeddingVector(tuple(v / norm for v in values))

    def embed_batch(self, texts: list[str]) -> list[EmbeddingVector]:
        return [self._vector(t) for t in texts]


class MockTranslator(Translator):
    """Wraps text in a language-tagged bracket: th->en of "x" is "en⟨x⟩".

    A round trip th->en->th yields "th⟨en⟨x⟩⟩", visibly degraded and never
    equal to the input, which downstream fluency ablations rely on.
    """

    remote = False

    def __init__(self, pairs: frozenset[tuple[str, str]] = frozenset(
            {("th", "en"), ("en", "th")})):
        self._pairs = pairs

    @property
    def provider_id(self) -> str:
        return "mock:translate"

    @property
    def language_pairs(self) -> frozenset[tuple[str, str]]:
        return self._pairs

    def translate(self, text: str, source_lang: str, target_lang: str) -> str:
        return f"{target_lang}⟨{text}⟩"


class MockParaphraser(Paraphraser):
    remote = False

    def __init__(self, seed: int = 0):
        self.seed = seed

    @property
    def provider_id(self) -> str:
        return f"mock:paraphrase:{self.seed}"

    def paraphrase(self, text: str, count: int,
                   controls: dict | None = None) -> list[str]:
        variants = []
        for i in range(count):
            tag = derive_seed(self.seed, "paraphrase", text, i) % 0xFFFFFF
            variants.append(f"{text} ⟪p{i + 1}:{tag:06x}⟫")
        return variants


class MockWikiClient(WikiClient):
    """Deterministic pseudo-wiki: titles, page ids, and section bodies are
    all derived from the query/article hash. About 5% of queries return no
    hits so the generated-context fallback path gets exercised."""

    remote = False

    @property
    def provider_id(self) -> str:
        return "mock:wiki"

    def search(self, query: str, limit: int) -> list[WikiArticleRef]:
        rng = random.Random(derive_seed("mockwiki", query))
        if rng.random() < 0.05:
            return []
        refs = []
        for rank in range(limit):
            title = _phrase(rng, rng.randint(1, 3)).title()
            refs.append(WikiArticleRef(
                title=title, page_id=rng.randrange(1, 10**7), rank=rank))
        return refs

    def fetch_sections(self, ref: WikiArticleRef) -> list:
        # Local import; contexts depends on gateway.types.
        from seedforge.contexts import WIKI, ContextDoc, ContextSource

        rng = random.Random(
            derive_seed("mockwiki-sections", ref.title, ref.page_id))
        headings = [""]
        headings += [_phrase(rng, rng.randint(1, 2)).capitalize()
                     for _ in range(rng.randint(0, 4))]
        docs = []
        for index, heading in enumerate(headings):
            body = _paragraph(rng, rng.randint(2, 4))
            docs.append(ContextDoc(
                body=body,
                source=ContextSource(kind=WIKI, title=ref.title,
                                     section=heading),
                provenance={"section_index": index}))
        return docs


class ScriptedTextGenerator(TextGenerator):
    """Returns a fixed sequence of responses, ignoring the prompt.

    Raises when the script runs dry unless loop=True. Thread-safe.
    """

    remote = False

    def __init__(self, responses: list[str], loop: bool = False):
        self._responses = list(responses)
        self._loop = loop
        self._i = 0
        self._lock = threading.Lock()

    @property
    def provider_id(self) -> str:
        return "mock:scripted"

    @property
    def calls(self) -> int:
        return self._i

    def complete(self, request: GenRequest) -> str:
        with self._lock:
            if self._i >= len(self._responses):
                if not self._loop:
                    raise AssertionError("scripted generator exhausted")
                self._i = 0
            response = self._responses[self._i]
            self._i += 1
        return response


class FlakyProvider:
    """Wraps any provider object; the first `failures` calls to each wrapped
    method raise RetryableProviderError, after which calls pass through."""

    def __init__(self, inner, failures: int):
        self._inner = inner
        self._remaining = failures
        self._lock = threading.Lock()
        self.attempts = 0

    def __getattr__(self, name):
        attr = getattr(self._inner, name)
        if not callable(attr):
            return attr

        def wrapper(*args, **kwargs):
            with self._lock:
                self.attempts += 1
                if self._remaining > 0:
                    self._remaining -= 1
                    raise RetryableProviderError("simulated transport failure")
            return attr(*args, **kwargs)

        return wrapper
