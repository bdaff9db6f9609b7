"""Text similarity metrics implemented from first principles.

Everything here is deterministic and dependency-free apart from numpy in
the embedding-based scorer. Word-level metrics take a tokenizer argument
because Thai has no space-delimited words; the character tokenizer is the
honest default there.

Conventions that differ between published implementations are pinned here:

* n-gram orders whose denominator is zero (the text is shorter than the
  order) are excluded from geometric or arithmetic means instead of
  contributing zero, so scoring a text against itself yields the maximum.
* An order with a zero numerator but nonzero denominator stays in the
  mean, so an unsmoothed corpus score can still collapse to zero.
* Empty-vs-empty comparisons return the metric's maximum for the overlap
  metrics that define it (chrf, squad_f1, the embedding scorer) and zero
  elsewhere; empty-vs-nonempty is always zero.
"""

from __future__ import annotations

import math
import unicodedata
from collections import Counter
from dataclasses import dataclass
from itertools import chain

import numpy as np

from seedforge.errors import CapabilityError, ValidationError
from seedforge.tokenizers import Tokenizer, unicode_words


@dataclass(frozen=True)
class Score:
    precision: float
    recall: float
    f1: float


def _fmeasure(precision: float, recall: float) -> float:
    if precision + recall == 0.0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def _ngrams(tokens: list[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n])
                   for i in range(len(tokens) - n + 1))


# -- ROUGE ------------------------------------------------------------------

def rouge_n(pred: str, ref: str, n: int = 1,
            tokenizer: Tokenizer = unicode_words) -> Score:
    """Clipped n-gram overlap."""
    if n < 1:
        raise ValidationError(f"n-gram order must be >= 1, got {n}")
    pred_grams = _ngrams(tokenizer(pred), n)
    ref_grams = _ngrams(tokenizer(ref), n)
    pred_total = sum(pred_grams.values())
    ref_total = sum(ref_grams.values())
    if pred_total == 0 or ref_total == 0:
        return Score(0.0, 0.0, 0.0)
    overlap = sum((pred_grams & ref_grams).values())
    precision = overlap / pred_total
    recall = overlap / ref_total
    return Score(precision, recall, _fmeasure(precision, recall))


def _lcs_table(a: list[str], b: list[str]) -> list[list[int]]:
    table = [[0] * (len(b) + 1) for _ in range(len(a) + 1)]
    for i in range(1, len(a) + 1):
        for j in range(1, len(b) + 1):
            if a[i - 1] == b[j - 1]:
                table[i][j] = table[i - 1][j - 1] + 1
            else:
                table[i][j] = max(table[i - 1][j], table[i][j - 1])
    return table


def _lcs_indices(a: list[str], b: list[str]) -> set[int]:
    """Indices into a of one longest common subsequence with b."""
    table = _lcs_table(a, b)
    i, j = len(a), len(b)
    picked: set[int] = set()
    while i > 0 and j > 0:
        if a[i - 1] == b[j - 1]:
            picked.add(i - 1)
            i -= 1
            j -= 1
        elif table[i - 1][j] > table[i][j - 1]:
            i -= 1
        else:
            j -= 1
    return picked


def rouge_l(pred: str, ref: str,
            tokenizer: Tokenizer = unicode_words) -> Score:
    """Longest common subsequence overlap on whole texts."""
    pred_tokens = tokenizer(pred)
    ref_tokens = tokenizer(ref)
    if not pred_tokens or not ref_tokens:
        return Score(0.0, 0.0, 0.0)
    lcs = _lcs_table(pred_tokens, ref_tokens)[len(pred_tokens)][
        len(ref_tokens)]
    precision = lcs / len(pred_tokens)
    recall = lcs / len(ref_tokens)
    return Score(precision, recall, _fmeasure(precision, recall))


def rouge_lsum(pred: str, ref: str,
               tokenizer: Tokenizer = unicode_words) -> Score:
    """Newline-split union-LCS variant.

    Each reference line is matched against the union of its longest common
    subsequences with every prediction line; hits are clipped by token
    counts on both sides. For single-line texts this reduces exactly to
    rouge_l.
    """
    pred_sents = [tokenizer(s) for s in pred.splitlines() if s.strip()]
    ref_sents = [tokenizer(s) for s in ref.splitlines() if s.strip()]
    pred_sents = [s for s in pred_sents if s]
    ref_sents = [s for s in ref_sents if s]
    if not pred_sents or not ref_sents:
        return Score(0.0, 0.0, 0.0)
    pred_total = sum(len(s) for s in pred_sents)
    ref_total = sum(len(s) for s in ref_sents)
    pred_counts = Counter(chain.from_iterable(pred_sents))
    ref_counts = Counter(chain.from_iterable(ref_sents))
    hits = 0
    for ref_sent in ref_sents:
        union: set[int] = set()
        for pred_sent in pred_sents:
            union |= _lcs_indices(ref_sent, pred_sent)
        for idx in sorted(union):
            token = ref_sent[idx]
            if ref_counts[token] > 0 and pred_counts[token] > 0:
                hits += 1
                ref_counts[token] -= 1
                pred_counts[token] -= 1
    precision = hits / pred_total
    recall = hits / ref_total
    return Score(precision, recall, _fmeasure(precision, recall))


# -- BLEU -------------------------------------------------------------------

def bleu(preds: list[str] | str, refs: list[str] | str, max_order: int = 4,
         tokenizer: Tokenizer = unicode_words, smooth: bool = False
         ) -> float:
    """Corpus-level BLEU with one reference per prediction.

    Orders longer than every prediction are dropped from the geometric
    mean rather than zeroing it, so identical corpora score 1.0 whatever
    their length. smooth=True applies add-one smoothing to the clipped
    counts, the usual sentence-level fallback.
    """
    if isinstance(preds, str):
        preds = [preds]
    if isinstance(refs, str):
        refs = [refs]
    if len(preds) != len(refs):
        raise ValidationError(
            f"got {len(preds)} predictions for {len(refs)} references")
    if not preds:
        raise ValidationError("bleu needs at least one pair")
    if max_order < 1:
        raise ValidationError(f"max_order must be >= 1, got {max_order}")
    numerators = [0] * max_order
    denominators = [0] * max_order
    pred_len = 0
    ref_len = 0
    for pred, ref in zip(preds, refs):
        pred_tokens = tokenizer(pred)
        ref_tokens = tokenizer(ref)
        pred_len += len(pred_tokens)
        ref_len += len(ref_tokens)
        for n in range(1, max_order + 1):
            slots = len(pred_tokens) - n + 1
            if slots <= 0:
                continue
            denominators[n - 1] += slots
            overlap = _ngrams(pred_tokens, n) & _ngrams(ref_tokens, n)
            numerators[n - 1] += sum(overlap.values())
    log_sum = 0.0
    effective = 0
    for num, den in zip(numerators, denominators):
        if den == 0:
            continue
        effective += 1
        if smooth:
            log_sum += math.log((num + 1) / (den + 1))
        elif num == 0:
            return 0.0
        else:
            log_sum += math.log(num / den)
    if effective == 0 or pred_len == 0:
        return 0.0
    geo_mean = math.exp(log_sum / effective)
    brevity = 1.0 if pred_len >= ref_len else math.exp(1.0 - ref_len
                                                       / pred_len)
    return geo_mean * brevity


# -- chrF -------------------------------------------------------------------

def chrf(pred: str, ref: str, max_order: int = 6, beta: float = 2.0) -> float:
    """Character n-gram F-score on a 0..100 scale.

    Whitespace is removed before n-gram extraction. Orders where either
    side has no n-grams are skipped; two empty texts score 100.
    """
    pred_chars = "".join(pred.split())
    ref_chars = "".join(ref.split())
    if not pred_chars and not ref_chars:
        return 100.0
    if not pred_chars or not ref_chars:
        return 0.0
    precisions: list[float] = []
    recalls: list[float] = []
    for n in range(1, max_order + 1):
        pred_grams = Counter(pred_chars[i:i + n]
                             for i in range(len(pred_chars) - n + 1))
        ref_grams = Counter(ref_chars[i:i + n]
                            for i in range(len(ref_chars) - n + 1))
        pred_total = sum(pred_grams.values())
        ref_total = sum(ref_grams.values())
        if pred_total == 0 or ref_total == 0:
            continue
        overlap = sum((pred_grams & ref_grams).values())
        precisions.append(overlap / pred_total)
        recalls.append(overlap / ref_total)
    if not precisions:
        return 0.0
    precision = sum(precisions) / len(precisions)
    recall = sum(recalls) / len(recalls)
    if precision + recall == 0.0:
        return 0.0
    beta2 = beta * beta
    return 100.0 * (1 + beta2) * precision * recall / (
        beta2 * precision + recall)


# -- METEOR -----------------------------------------------------------------

def _meteor_alignment(pred_tokens: list[str], ref_tokens: list[str]
                      ) -> list[tuple[int, int]]:
    """Exact-match alignment as (pred index, ref index) pairs.

    Greedy longest-phrase matching: repeatedly take the longest contiguous
    span still unmatched on both sides (leftmost on ties). Every word ends
    up matched min(pred count, ref count) times, which is the maximum any
    alignment can achieve, while long runs stay contiguous to keep the
    chunk count honest.
    """
    pred_free = [True] * len(pred_tokens)
    ref_free = [True] * len(ref_tokens)
    pairs: list[tuple[int, int]] = []
    while True:
        best_len = 0
        best: tuple[int, int] | None = None
        for i in range(len(pred_tokens)):
            if not pred_free[i]:
                continue
            for j in range(len(ref_tokens)):
                if not ref_free[j] or pred_tokens[i] != ref_tokens[j]:
                    continue
                length = 0
                while (i + length < len(pred_tokens)
                       and j + length < len(ref_tokens)
                       and pred_free[i + length] and ref_free[j + length]
                       and pred_tokens[i + length]
                       == ref_tokens[j + length]):
                    length += 1
                if length > best_len:
                    best_len = length
                    best = (i, j)
        if best is None:
            break
        i, j = best
        for k in range(best_len):
            pred_free[i + k] = False
            ref_free[j + k] = False
            pairs.append((i + k, j + k))
    pairs.sort()
    return pairs


def _count_chunks(pairs: list[tuple[int, int]]) -> int:
    chunks = 0
    prev: tuple[int, int] | None = None
    for i, j in pairs:
        if prev is None or i != prev[0] + 1 or j != prev[1] + 1:
            chunks += 1
        prev = (i, j)
    return chunks


def meteor(pred: str, ref: str, alpha: float = 0.9, beta: float = 3.0,
           gamma: float = 0.5,
           tokenizer: Tokenizer = unicode_words) -> float:
    """Exact-match variant: unigram F-mean discounted by fragmentation.

    score = F * (1 - gamma * (chunks / matches) ** beta) with
    F = P*R / (alpha*P + (1-alpha)*R). No stemming or synonymy stage, so
    the matcher is language-neutral.
    """
    pred_tokens = tokenizer(pred)
    ref_tokens = tokenizer(ref)
    if not pred_tokens or not ref_tokens:
        return 0.0
    pairs = _meteor_alignment(pred_tokens, ref_tokens)
    matches = len(pairs)
    if matches == 0:
        return 0.0
    precision = matches / len(pred_tokens)
    recall = matches / len(ref_tokens)
    f_mean = precision * recall / (alpha * precision
                                   + (1.0 - alpha) * recall)
    chunks = _count_chunks(pairs)
    penalty = gamma * (chunks / matches) ** beta
    return f_mean * (1.0 - penalty)


# -- extractive QA token F1 -------------------------------------------------

_ENGLISH_ARTICLES = frozenset({"a", "an", "the"})


def _squad_normalize(text: str, strip_english_articles: bool) -> list[str]:
    lowered = text.casefold()
    cleaned = "".join(
        " " if unicodedata.category(ch).startswith("P") else ch
        for ch in lowered)
    tokens = cleaned.split()
    if strip_english_articles:
        tokens = [t for t in tokens if t not in _ENGLISH_ARTICLES]
    return tokens


def squad_f1(pred: str, ref: str,
             strip_english_articles: bool = False) -> float:
    """Bag-of-token F1 after casefolding and punctuation removal.

    Article stripping is opt-in: it only makes sense for English text and
    changes scores on short answers, so the default keeps every token.
    Both sides normalizing to nothing counts as a perfect match.
    """
    pred_tokens = _squad_normalize(pred, strip_english_articles)
    ref_tokens = _squad_normalize(ref, strip_english_articles)
    if not pred_tokens and not ref_tokens:
        return 1.0
    if not pred_tokens or not ref_tokens:
        return 0.0
    overlap = sum((Counter(pred_tokens) & Counter(ref_tokens)).values())
    if overlap == 0:
        return 0.0
    precision = overlap / len(pred_tokens)
    recall = overlap / len(ref_tokens)
    return _fmeasure(precision, recall)


# -- embedding-based token alignment ----------------------------------------

def bert_like_score(pred: str, ref: str, gateway,
                    tokenizer: Tokenizer = unicode_words) -> Score:
    """Greedy token alignment over embedding cosines.

    Each prediction token claims its most similar reference token and vice
    versa; similarities are clipped at zero so antipodal noise cannot go
    negative. There is no idf weighting or baseline rescaling, which makes
    absolute values incomparable with published model-based scores; only
    within-run comparisons are meaningful.
    """
    if not gateway.supports_token_embeddings:
        raise CapabilityError(
            "the configured embedder does not embed single tokens")
    pred_tokens = tokenizer(pred)
    ref_tokens = tokenizer(ref)
    if not pred_tokens and not ref_tokens:
        return Score(1.0, 1.0, 1.0)
    if not pred_tokens or not ref_tokens:
        return Score(0.0, 0.0, 0.0)
    vectors = gateway.embed(pred_tokens + ref_tokens)
    mat = np.asarray([v.values for v in vectors], dtype=np.float64)
    norms = np.linalg.norm(mat, axis=1)
    if np.any(norms == 0.0):
        raise ValidationError("embedder returned a zero vector for a token")
    mat = mat / norms[:, None]
    pred_mat = mat[:len(pred_tokens)]
    ref_mat = mat[len(pred_tokens):]
    sims = np.clip(pred_mat @ ref_mat.T, 0.0, None)
    precision = float(sims.max(axis=1).mean())
    recall = float(sims.max(axis=0).mean())
    return Score(precision, recall, _fmeasure(precision, recall))
