"""Semantic near-duplicate removal.

Records are embedded once (instruction, context, and output joined by
newlines), then filtered in ascending id order: a record is dropped when its
nearest already-kept predecessor is strictly above the similarity threshold.
Earlier ids always win, which makes the pass deterministic and idempotent.

Two neighbour indexes back the filter. The exact one scans a matrix product
and is the default at the corpus sizes this pipeline produces; the
approximate one is a small navigable-graph index built incrementally, kept
for corpora large enough that the quadratic scan hurts. Its recall is
measured in the tests, not assumed.
"""

from __future__ import annotations

import logging
import math
import random
from dataclasses import dataclass
from heapq import heapify, heappop, heappush

import numpy as np

from seedforge import constants
from seedforge.errors import ProtocolError, ValidationError

logger = logging.getLogger(__name__)

KEEP_FIRST = "keep_first"
FULL_SET = "full_set"
DEDUP_MODES = (KEEP_FIRST, FULL_SET)

EXACT = "exact"
APPROXIMATE = "approximate"
INDEX_KINDS = (EXACT, APPROXIMATE)

# Below this corpus size "auto" always takes the exact scan.
EXACT_FALLBACK_LIMIT = 50_000


def sample_text(record) -> str:
    """The text a record is embedded by: instruction, context, output,
    newline-separated; a missing context leaves an empty middle line."""
    return "\n".join([record.instruction, record.context or "",
                      record.output])


def cosine(a, b) -> float:
    """Cosine similarity with hard errors instead of NaN conventions."""
    va = np.asarray(a, dtype=np.float64)
    vb = np.asarray(b, dtype=np.float64)
    if va.ndim != 1 or va.shape != vb.shape:
        raise ValidationError(
            f"cosine needs two vectors of one shape, got {va.shape} "
            f"and {vb.shape}")
    na = float(np.linalg.norm(va))
    nb = float(np.linalg.norm(vb))
    if na == 0.0 or nb == 0.0:
        raise ValidationError("cosine is undefined for a zero vector")
    return float(np.dot(va, vb) / (na * nb))


def _as_unit_vector(vector, dim: int, owner: str) -> np.ndarray:
    vec = np.asarray(vector, dtype=np.float64)
    if vec.shape != (dim,):
        raise ProtocolError(
            f"vector for {owner} has shape {vec.shape}, index holds "
            f"dimension {dim}")
    norm = float(np.linalg.norm(vec))
    if norm == 0.0:
        raise ValidationError(f"zero-norm vector for {owner}")
    return vec / norm


def _normalized_matrix(vectors, ids=None) -> np.ndarray:
    mat = np.asarray([v.values if hasattr(v, "values") else v
                      for v in vectors], dtype=np.float64)
    if mat.ndim != 2:
        raise ProtocolError("embeddings do not share one dimension")
    norms = np.linalg.norm(mat, axis=1)
    bad = np.flatnonzero(norms == 0.0)
    if bad.size:
        which = ids[bad[0]] if ids is not None else int(bad[0])
        raise ValidationError(f"zero-norm embedding for record {which}")
    return mat / norms[:, None]


@dataclass(frozen=True)
class Removal:
    """Why a record was dropped. nearest_id is a kept record under
    keep_first; under full_set it can itself be a removed one."""

    record_id: str
    nearest_id: str
    similarity: float


@dataclass
class DedupResult:
    kept: list
    removed: list[Removal]
    threshold: float
    mode: str = KEEP_FIRST

    @property
    def removed_ids(self) -> set[str]:
        return {r.record_id for r in self.removed}


class ExactIndex:
    """Brute-force cosine nearest neighbour over unit vectors."""

    def __init__(self, dim: int):
        if dim < 1:
            raise ValidationError("index needs dim >= 1")
        self.dim = dim
        self._ids: list[str] = []
        self._rows: list[np.ndarray] = []
        self._mat: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self._ids)

    def insert(self, record_id: str, vector) -> None:
        self._rows.append(_as_unit_vector(vector, self.dim, record_id))
        self._ids.append(record_id)
        self._mat = None

    def nearest(self, vector, k: int = 1,
                exclude: str | None = None) -> list[tuple[str, float]]:
        if not self._ids:
            return []
        query = _as_unit_vector(vector, self.dim, "query")
        if self._mat is None:
            self._mat = np.vstack(self._rows)
        sims = self._mat @ query
        order = np.argsort(-sims, kind="stable")
        out: list[tuple[str, float]] = []
        for idx in order:
            rid = self._ids[int(idx)]
            if rid == exclude:
                continue
            out.append((rid, float(sims[int(idx)])))
            if len(out) == k:
                break
        return out


class HnswIndex:
    """Insert-only approximate nearest-neighbour index over unit vectors.

    Hierarchical layers with geometrically thinning membership: greedy
    descent from the top layer, then a bounded beam search on layer 0.
    Similarity is cosine (vectors are stored normalized), so bigger means
    closer throughout.
    """

    def __init__(self, dim: int, m: int = 16, ef_construction: int = 200,
                 ef_search: int = 128, seed: int = 0):
        if dim < 1 or m < 2:
            raise ValidationError("index needs dim >= 1 and m >= 2")
        self.dim = dim
        self.m = m
        self.m0 = 2 * m
        self.ef_construction = ef_construction
        self.ef_search = ef_search
        self._inv_log_m = 1.0 / math.log(m)
        self._rng = random.Random(seed)
        self._vectors: list[np.ndarray] = []
        self._ids: list[str] = []
        self._levels: list[int] = []
        # one adjacency dict per layer: node -> list of neighbour nodes
        self._links: list[dict[int, list[int]]] = []
        self._entry: int | None = None

    def __len__(self) -> int:
        return len(self._vectors)

    def _draw_level(self) -> int:
        u = self._rng.random()
        while u <= 0.0:  # random() can return 0.0; log(0) must not happen
            u = self._rng.random()
        return int(-math.log(u) * self._inv_log_m)

    def _sim(self, query: np.ndarray, node: int) -> float:
        return float(np.dot(query, self._vectors[node]))

    def _search_layer(self, query: np.ndarray, entries: list[int], ef: int,
                      layer: int) -> list[tuple[float, int]]:
        visited = set(entries)
        candidates = [(-self._sim(query, e), e) for e in entries]
        results = [(-neg, e) for neg, e in candidates]
        heapify(candidates)
        heapify(results)
        graph = self._links[layer]
        while candidates:
            neg, node = heappop(candidates)
            if len(results) >= ef and -neg < results[0][0]:
                break
            for nb in graph.get(node, ()):
                if nb in visited:
                    continue
                visited.add(nb)
                s = self._sim(query, nb)
                if len(results) < ef or s > results[0][0]:
                    heappush(candidates, (-s, nb))
                    heappush(results, (s, nb))
                    if len(results) > ef:
                        heappop(results)
        return results

    def _shrink(self, layer: int, node: int, cap: int) -> None:
        links = self._links[layer][node]
        if len(links) <= cap:
            return
        vec = self._vectors[node]
        links.sort(key=lambda nb: -float(np.dot(vec, self._vectors[nb])))
        del links[cap:]

    def _greedy_descend(self, vec: np.ndarray, entry: int, top: int,
                        stop_layer: int) -> int:
        for layer in range(top, stop_layer, -1):
            improved = True
            while improved:
                improved = False
                best = self._sim(vec, entry)
                for nb in self._links[layer].get(entry, ()):
                    s = self._sim(vec, nb)
                    if s > best:
                        best, entry, improved = s, nb, True
        return entry

    def insert(self, record_id: str, vector) -> None:
        vec = _as_unit_vector(vector, self.dim, record_id)
        node = len(self._vectors)
        level = self._draw_level()
        self._vectors.append(vec)
        self._ids.append(record_id)
        self._levels.append(level)
        # Layers above the pre-insert top hold no other members yet, so
        # search and link only up to old_top; above it the node merely
        # becomes the new entry point.
        old_top = len(self._links) - 1
        while len(self._links) <= level:
            self._links.append({})
        for layer in range(level + 1):
            self._links[layer][node] = []
        if node == 0:
            self._entry = node
            return
        entry = self._greedy_descend(vec, self._entry, old_top, level)
        entries = [entry]
        for layer in range(min(level, old_top), -1, -1):
            found = self._search_layer(vec, entries, self.ef_construction,
                                       layer)
            found.sort(reverse=True)
            cap = self.m0 if layer == 0 else self.m
            neighbours = [n for _, n in found[:cap] if n != node]
            self._links[layer][node] = list(neighbours)
            for nb in neighbours:
                self._links[layer][nb].append(node)
                self._shrink(layer, nb, cap)
            entries = [n for _, n in found] or entries
        if self._levels[node] > self._levels[self._entry]:
            self._entry = node

    def nearest(self, vector, k: int = 1,
                exclude: str | None = None) -> list[tuple[str, float]]:
        """The k most similar inserted records, best first."""
        if self._entry is None:
            return []
        vec = _as_unit_vector(vector, self.dim, "query")
        entry = self._greedy_descend(vec, self._entry,
                                     len(self._links) - 1, 0)
        want = k + (1 if exclude is not None else 0)
        found = self._search_layer(vec, [entry],
                                   max(self.ef_search, want), 0)
        found.sort(reverse=True)
        out: list[tuple[str, float]] = []
        for s, n in found:
            if self._ids[n] == exclude:
                continue
            out.append((self._ids[n], s))
            if len(out) == k:
                break
        return out


def build_index(vectors: list[tuple[str, object]], kind: str = EXACT,
                seed: int = 0):
    """An index over (id, vector) pairs supporting nearest-with-exclusion."""
    if kind not in INDEX_KINDS:
        raise ValidationError(f"unknown index kind {kind!r}")
    if not vectors:
        raise ValidationError("cannot index zero vectors")
    first = np.asarray(vectors[0][1], dtype=np.float64)
    dim = int(first.shape[0]) if first.ndim == 1 else 0
    if dim < 1:
        raise ProtocolError("vectors must be one-dimensional")
    index = (ExactIndex(dim) if kind == EXACT
             else HnswIndex(dim, seed=seed))
    for record_id, vec in vectors:
        index.insert(record_id, vec)
    return index


def _dedup_exact(ids: list[str], mat: np.ndarray, threshold: float,
                 mode: str) -> tuple[list[int], list[Removal]]:
    n = len(ids)
    kept: list[int] = []
    removed: list[Removal] = []
    kept_rows = np.empty_like(mat)
    for i in range(n):
        if mode == KEEP_FIRST:
            pool = kept_rows[:len(kept)]
        else:
            pool = mat[:i]
        if len(pool):
            sims = pool @ mat[i]
            j = int(np.argmax(sims))
            if float(sims[j]) > threshold:
                nearest = ids[kept[j]] if mode == KEEP_FIRST else ids[j]
                removed.append(Removal(record_id=ids[i], nearest_id=nearest,
                                       similarity=float(sims[j])))
                continue
        if mode == KEEP_FIRST:
            kept_rows[len(kept)] = mat[i]
        kept.append(i)
    return kept, removed


def _dedup_approx(ids: list[str], mat: np.ndarray, threshold: float,
                  mode: str, seed: int) -> tuple[list[int], list[Removal]]:
    index = HnswIndex(dim=mat.shape[1], seed=seed)
    kept: list[int] = []
    removed: list[Removal] = []
    for i in range(len(ids)):
        hit = index.nearest(mat[i], k=1)
        if hit and hit[0][1] > threshold:
            removed.append(Removal(record_id=ids[i], nearest_id=hit[0][0],
                                   similarity=hit[0][1]))
            if mode == FULL_SET:
                index.insert(ids[i], mat[i])
            continue
        kept.append(i)
        index.insert(ids[i], mat[i])
    return kept, removed


def dedup_filter(records: list, gateway, *,
                 threshold: float = constants.DEDUP_THRESHOLD,
                 mode: str = KEEP_FIRST, index_kind: str = "auto",
                 seed: int = 0,
                 exact_fallback_limit: int = EXACT_FALLBACK_LIMIT
                 ) -> DedupResult:
    """Drop records whose nearest predecessor is strictly above threshold.

    Records are processed in ascending id order regardless of input order.
    mode selects the comparison pool: keep_first measures against the
    records already kept (a removed record cannot knock out later ones),
    full_set against every earlier record regardless of its fate.
    index_kind "auto" scans exactly up to exact_fallback_limit records and
    switches to the approximate index beyond that.
    """
    if mode not in DEDUP_MODES:
        raise ValidationError(f"unknown dedup mode {mode!r}")
    if not 0.0 < threshold <= 1.0:
        raise ValidationError(f"threshold {threshold} outside (0, 1]")
    if index_kind not in ("auto",) + INDEX_KINDS:
        raise ValidationError(f"unknown index kind {index_kind!r}")
    if not records:
        return DedupResult(kept=[], removed=[], threshold=threshold,
                           mode=mode)
    records = sorted(records, key=lambda r: r.id)
    ids = [r.id for r in records]
    if len(set(ids)) != len(ids):
        raise ValidationError("duplicate record ids in dedup input")
    vectors = gateway.embed([sample_text(r) for r in records])
    mat = _normalized_matrix(vectors, ids)
    if index_kind == "auto":
        index_kind = (EXACT if len(records) <= exact_fallback_limit
                      else APPROXIMATE)
    if index_kind == EXACT:
        kept_idx, removed = _dedup_exact(ids, mat, threshold, mode)
    else:
        kept_idx, removed = _dedup_approx(ids, mat, threshold, mode, seed)
    logger.info("dedup kept %d of %d records (threshold %.3f, %s, %s)",
                len(kept_idx), len(records), threshold, mode, index_kind)
    return DedupResult(kept=[records[i] for i in kept_idx],
                       removed=removed, threshold=threshold, mode=mode)
