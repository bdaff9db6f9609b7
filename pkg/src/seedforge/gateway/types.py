"""Value types passed across the provider boundary.

Everything here is immutable; provider implementations receive and return
these objects and must never mutate shared state through them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from seedforge import constants
from seedforge.errors import ValidationError


@dataclass(frozen=True)
class GenRequest:
    """A single text-completion request.

    seed is advisory: deterministic providers honor it, remote endpoints pass
    it through when their API supports one.
    """

    prompt: str
    temperature: float
    max_tokens: int = constants.MAX_TOKENS
    seed: int | None = None

    def __post_init__(self):
        if not self.prompt:
            raise ValidationError("prompt must be non-empty")
        if not 0.0 <= self.temperature <= 1.0:
            raise ValidationError(
                f"temperature must be in [0, 1], got {self.temperature}")
        if self.max_tokens <= 0:
            raise ValidationError(
                f"max_tokens must be positive, got {self.max_tokens}")


@dataclass(frozen=True)
class EmbeddingVector:
    """A fixed-length real vector. Values are finite by construction."""

    values: tuple[float, ...]

    def __post_init__(self):
        if len(self.values) == 0:
            raise ValidationError("embedding must have at least one dimension")
        for x in self.values:
            if not math.isfinite(x):
                raise ValidationError("embedding contains a non-finite value")

    @property
    def dimension(self) -> int:
        return len(self.values)


@dataclass(frozen=True)
class WikiArticleRef:
    """Search hit returned by a wiki provider. rank is 0-based and mirrors
    the provider's own result ordering."""

    title: str
    page_id: int
    rank: int

    def __post_init__(self):
        if not self.title:
            raise ValidationError("article title must be non-empty")
        if self.rank < 0:
            raise ValidationError("rank must be >= 0")


@dataclass(frozen=True)
class ProviderBudget:
    """Operational limits applied to remote providers.

    requests_per_minute bounds issued requests in any sliding 60 s window.
    max_concurrent bounds in-flight provider calls. retry_limit is the number
    of re-attempts after the first failure of a retryable call.
    """

    requests_per_minute: int = constants.REQUESTS_PER_MINUTE
    max_concurrent: int = constants.MAX_CONCURRENT
    retry_limit: int = constants.RETRY_LIMIT

    def __post_init__(self):
        if self.requests_per_minute < 1:
            raise ValidationError("requests_per_minute must be >= 1")
        if self.max_concurrent < 1:
            raise ValidationError("max_concurrent must be >= 1")
        if self.retry_limit < 0:
            raise ValidationError("retry_limit must be >= 0")
