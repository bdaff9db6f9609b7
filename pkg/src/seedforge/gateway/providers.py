"""Abstract provider interfaces.

A provider implements one capability (completion, embeddings, translation,
paraphrasing, or wiki access). Implementations must be safe to call from
multiple threads and must not retain references to caller-owned objects.

`remote` distinguishes network-backed providers (subject to rate limiting and
retries) from in-process ones.
"""

from __future__ import annotations

from abc import ABC, abstractmethod

from seedforge.gateway.types import EmbeddingVector, GenRequest, WikiArticleRef


class TextGenerator(ABC):
    remote: bool = True

    @property
    @abstractmethod
    def provider_id(self) -> str:
        """Stable identifier used in cache keys, e.g. 'openai:gpt-x'."""

    @abstractmethod
    def complete(self, request: GenRequest) -> str:
        """Return the completion text for one request.

        Raises:
            RetryableProviderError: transient transport failure.
            ProviderError: permanent failure (auth, bad request).
        """


class Embedder(ABC):
    remote: bool = True
    batch_size: int = 64
    supports_token_embeddings: bool = True

    @property
    @abstractmethod
    def provider_id(self) -> str: ...

    @property
    @abstractmethod
    def dimension(self) -> int: ...

    @abstractmethod
    def embed_batch(self, texts: list[str]) -> list[EmbeddingVector]:
        """Embed up to batch_size texts, preserving order.

        Raises:
            ProtocolError: mixed or unexpected dimensions in the response.
            RetryableProviderError: transient transport failure.
        """


class Translator(ABC):
    remote: bool = True

    @property
    @abstractmethod
    def provider_id(self) -> str: ...

    @property
    @abstractmethod
    def language_pairs(self) -> frozenset[tuple[str, str]]:
        """Supported (source, target) language tag pairs."""

    @abstractmethod
    def translate(self, text: str, source_lang: str, target_lang: str) -> str:
        """Translate text. Never returns the input unchanged for distinct
        language tags (a degraded round trip must stay observable)."""


class Paraphraser(ABC):
    remote: bool = True

    @property
    @abstractmethod
    def provider_id(self) -> str: ...

    @abstractmethod
    def paraphrase(self, text: str, count: int,
                   controls: dict | None = None) -> list[str]:
        """Return `count` paraphrases of text, each distinct from the input.

        controls is an opaque pass-through for endpoint-specific quality/
        diversity knobs.

        Raises:
            ProtocolError: fewer than count variants came back.
        """


class WikiClient(ABC):
    remote: bool = True

    @property
    @abstractmethod
    def provider_id(self) -> str: ...

    @abstractmethod
    def search(self, query: str, limit: int) -> list[WikiArticleRef]:
        """Full-text search, provider ranking preserved. May be empty."""

    @abstractmethod
    def fetch_sections(self, ref: WikiArticleRef) -> list:
        """Return one context document per article section, lead first.

        Elements are seedforge.contexts.ContextDoc with topic unset; the
        context engine attaches the topic.

        Raises:
            NotFoundError: the article no longer exists.
        """
