"""Resumable staged pipeline runner.

A run is unrolled into a linear chain of stages per extension epoch
(topics, contexts, instructions, dedup) plus one final manifest stage.
Each stage persists its outputs under the working directory and records a
digest in checkpoints.json; the digest chains the stage name, the
content-relevant config, and the upstream stage digest, so a rerun skips
exactly the stages whose inputs are unchanged and whose outputs still
verify. Operational settings (budget, cache) do not enter the digest:
changing them never invalidates work.

Determinism: all randomness is derived from (run.seed, stage path), never
from wall clock or completion order, so a run interrupted at any stage
boundary resumes to a byte-identical manifest.
"""

from __future__ import annotations

import json
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from hashlib import sha256

from seedforge.ablations import (RECORDS_PER_TOPIC, VARIANT_FULL,
                                 DatasetManifest, Recipe, finish_manifest,
                                 read_manifest, truncate_records,
                                 write_manifest)
from seedforge.config import PipelineConfig
from seedforge.contexts import (ContextDoc, ContextPolicy, acquire_context,
                                context_from_dict, context_to_dict)
from seedforge.dedup import dedup_filter
from seedforge.errors import (BuildError, ConfigError, LockError,
                              SeedforgeError)
from seedforge.gateway import Gateway, ProviderBudget
from seedforge.gateway.http import (HttpCompletionClient, HttpEmbedder,
                                    HttpParaphraser, HttpTranslator,
                                    MediaWikiClient)
from seedforge.instructions import TaskSettings, generate_for_context
from seedforge.records import (file_sha256, read_records, write_records)
from seedforge.topics import (CULTURAL, GENERAL, Topic, build_topic_set,
                              generate_topics, normalize_topic)

logger = logging.getLogger(__name__)

CHECKPOINT_FILE = "checkpoints.json"
LOCK_FILE = ".lock.json"
MANIFEST_FILE = "manifest.jsonl"

MAX_EPOCHS = 20

_EXTENSION_BATCH_BASE = 1000
_EXTENSION_BATCH_STRIDE = 100


def build_gateway(config: PipelineConfig) -> Gateway:
    """Wire providers from config. kind=mock runs fully offline."""
    budget = ProviderBudget(
        requests_per_minute=config.budget_requests_per_minute,
        max_concurrent=config.budget_max_concurrent,
        retry_limit=config.budget_retry_limit)
    cache_dir = config.cache_dir or None
    if config.provider_kind == "mock":
        return Gateway.mock(budget=budget, cache_dir=cache_dir,
                            embed_dim=config.provider_embed_dim,
                            paraphrase_seed=config.run_seed)
    for key, value in (("provider.generator.base_url",
                        config.provider_generator_base_url),
                       ("provider.embedder.base_url",
                        config.provider_embedder_base_url),
                       ("provider.translator.url",
                        config.provider_translator_url),
                       ("provider.paraphraser.url",
                        config.provider_paraphraser_url)):
        if not value:
            raise ConfigError(f"provider.kind=http requires {key}")
    generator = HttpCompletionClient(
        base_url=config.provider_generator_base_url,
        model=config.provider_generator_model,
        api_key_env=config.provider_generator_api_key_env,
        style=config.provider_generator_style)
    embedder = HttpEmbedder(
        base_url=config.provider_embedder_base_url,
        model=config.provider_embedder_model,
        api_key_env=config.provider_embedder_api_key_env)
    pivot = config.run_pivot_language
    target = config.run_target_language
    translator = HttpTranslator(
        base_url=config.provider_translator_url,
        pairs=frozenset({(target, pivot), (pivot, target)}))
    paraphraser = HttpParaphraser(base_url=config.provider_paraphraser_url)
    wiki = MediaWikiClient(api_url=config.provider_wiki_api_url)
    return Gateway(generator=generator, embedder=embedder,
                   translator=translator, paraphraser=paraphraser,
                   wiki=wiki, budget=budget, cache_dir=cache_dir)


class WorkdirLock:
    """Single-writer guard on a working directory.

    The lock file records the owner pid; a lock whose process is gone is
    stale and silently reclaimed, so a crashed run never wedges the
    directory.
    """

    def __init__(self, workdir: str):
        self.path = os.path.join(workdir, LOCK_FILE)
        self._held = False

    def acquire(self) -> None:
        for _ in range(2):
            try:
                fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
            except FileExistsError:
                if self._is_stale():
                    try:
                        os.unlink(self.path)
                    except FileNotFoundError:
                        pass
                    continue
                raise LockError(
                    f"{self.path} is held by a live process; remove the "
                    f"file only if you are sure no run is active")
            with os.fdopen(fd, "w", encoding="utf-8") as handle:
                json.dump({"pid": os.getpid()}, handle)
            self._held = True
            return
        raise LockError(f"could not acquire {self.path}")

    def _is_stale(self) -> bool:
        try:
            with open(self.path, encoding="utf-8") as handle:
                pid = int(json.load(handle)["pid"])
        except (OSError, ValueError, KeyError, json.JSONDecodeError):
            return True
        try:
            os.kill(pid, 0)
        except ProcessLookupError:
            return True
        except PermissionError:
            return False
        return False

    def release(self) -> None:
        if self._held:
            try:
                os.unlink(self.path)
            except FileNotFoundError:
                pass
            self._held = False

    def __enter__(self) -> "WorkdirLock":
        self.acquire()
        return self

    def __exit__(self, *exc) -> None:
        self.release()


class _Checkpoints:
    """Stage ledger: digest plus output-file hashes, rewritten atomically
    after every completed stage."""

    def __init__(self, workdir: str):
        self.workdir = workdir
        self.path = os.path.join(workdir, CHECKPOINT_FILE)
        self.stages: dict = {}
        if os.path.exists(self.path):
            try:
                with open(self.path, encoding="utf-8") as handle:
                    self.stages = json.load(handle)
            except (json.JSONDecodeError, UnicodeDecodeError):
                logger.warning("unreadable %s, starting over", self.path)
                self.stages = {}

    def fresh(self, stage: str, digest: str) -> bool:
        entry = self.stages.get(stage)
        if not entry or entry.get("digest") != digest:
            return False
        for name, expected in entry.get("outputs", {}).items():
            path = os.path.join(self.workdir, name)
            if not os.path.exists(path) or file_sha256(path) != expected:
                return False
        return True

    def record(self, stage: str, digest: str, outputs: dict) -> None:
        self.stages[stage] = {"digest": digest, "outputs": outputs}
        tmp = self.path + ".tmp"
        with open(tmp, "w", encoding="utf-8") as handle:
            json.dump(self.stages, handle, indent=2, sort_keys=True)
            handle.write("\n")
        os.replace(tmp, self.path)


def _chain(stage: str, config_digest: str, upstream: str) -> str:
    return sha256(f"{stage}\n{config_digest}\n{upstream}".encode()).hexdigest()


def _write_json(path: str, payload) -> str:
    blob = json.dumps(payload, ensure_ascii=False, sort_keys=True,
                      indent=2) + "\n"
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8") as handle:
        handle.write(blob)
    os.replace(tmp, path)
    return file_sha256(path)


def _write_jsonl(path: str, rows: list[dict]) -> str:
    blob = "".join(json.dumps(r, ensure_ascii=False, separators=(",", ":"))
                   + "\n" for r in rows)
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8") as handle:
        handle.write(blob)
    os.replace(tmp, path)
    return file_sha256(path)


def _read_jsonl(path: str) -> list[dict]:
    rows = []
    with open(path, encoding="utf-8") as handle:
        for line in handle:
            if line.strip():
                rows.append(json.loads(line))
    return rows


class _Run:
    """State threaded through one run_pipeline invocation."""

    def __init__(self, config: PipelineConfig, workdir: str, gateway,
                 stage_hook):
        self.config = config
        self.workdir = workdir
        self.gateway = gateway
        self.hook = stage_hook
        self.checkpoints = _Checkpoints(workdir)
        self.config_digest = config.content_digest()
        self.upstream = "origin"

    def path(self, name: str) -> str:
        return os.path.join(self.workdir, name)

    def _map(self, fn, count: int) -> list:
        """Run fn(0..count-1) concurrently, results in index order."""
        if count == 0:
            return []
        workers = max(1, self.config.budget_max_concurrent)
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, range(count)))

    def stage(self, name: str, compute, load):
        """Execute or skip one stage.

        compute() -> (value, {filename: sha}); load() rebuilds the value
        from the files of a previously completed stage. The stage hook
        fires only when compute runs. The chain digest handed to the next
        stage covers this stage's actual output hashes, so downstream
        stages are invalidated by changed content, not only by changed
        inputs.
        """
        digest = _chain(name, self.config_digest, self.upstream)
        if self.checkpoints.fresh(name, digest):
            logger.info("stage %s: up to date, skipping", name)
            outputs = self.checkpoints.stages[name]["outputs"]
            self.upstream = _chain(name, digest,
                                   json.dumps(outputs, sort_keys=True))
            return load()
        if self.hook is not None:
            self.hook(name)
        logger.info("stage %s: running", name)
        try:
            value, outputs = compute()
        except SeedforgeError as exc:
            if not hasattr(exc, "stage"):
                exc.stage = name
            logger.error("stage %s failed: %s", name, exc)
            raise
        self.checkpoints.record(name, digest, outputs)
        self.upstream = _chain(name, digest,
                               json.dumps(outputs, sort_keys=True))
        return value

    # -- stage bodies --------------------------------------------------------

    def topics_stage(self, epoch: int, deficit: int,
                     seen: set[str]) -> list[Topic]:
        cfg = self.config
        name = f"topics-{epoch:02d}"
        fname = f"{name}.json"
        kwargs = {"batch_size": cfg.topics_per_batch,
                  "temperature": cfg.temperature_topics,
                  "culture": cfg.run_culture,
                  "retry_limit": cfg.budget_retry_limit}

        def compute():
            if epoch == 0:
                topic_set = build_topic_set(
                    self.gateway, cfg.run_seed, general=cfg.topics_general,
                    cultural=cfg.topics_cultural, **kwargs)
                topics = list(topic_set.topics)
            else:
                add_total = max(1, math.ceil(deficit / RECORDS_PER_TOPIC))
                total = cfg.topics_cultural + cfg.topics_general
                add_cultural = (round(add_total * cfg.topics_cultural / total)
                                if total else 0)
                add_general = add_total - add_cultural
                start = (_EXTENSION_BATCH_BASE
                         + epoch * _EXTENSION_BATCH_STRIDE)
                topics = []
                for category, count in ((CULTURAL, add_cultural),
                                        (GENERAL, add_general)):
                    if count > 0:
                        fresh = generate_topics(
                            category, count, self.gateway, cfg.run_seed,
                            start_batch=start, **kwargs)
                        topics.extend(t for t in fresh.topics
                                      if normalize_topic(t.text) not in seen)
            rows = [{"text": t.text, "category": t.category,
                     "batch_id": t.batch_id} for t in topics]
            sha = _write_json(self.path(fname), rows)
            return topics, {fname: sha}

        def load():
            rows = json.loads(
                open(self.path(fname), encoding="utf-8").read())
            return [Topic(text=r["text"], category=r["category"],
                          batch_id=r["batch_id"]) for r in rows]

        return self.stage(name, compute, load)

    def contexts_stage(self, epoch: int, topics: list[Topic],
                       start_index: int) -> list[tuple[str, ContextDoc]]:
        cfg = self.config
        name = f"contexts-{epoch:02d}"
        fname = f"{name}.jsonl"
        policy = ContextPolicy(p_wiki=cfg.context_p_wiki,
                               wiki_top_k=cfg.context_wiki_top_k,
                               temperature=cfg.temperature_context)

        def compute():
            def one(offset: int):
                key = f"t{start_index + offset:04d}-r00"
                return key, acquire_context(topics[offset], self.gateway,
                                            cfg.run_seed, key, policy)

            keyed = self._map(one, len(topics))
            rows = [{"key": k, **context_to_dict(d)} for k, d in keyed]
            sha = _write_jsonl(self.path(fname), rows)
            return keyed, {fname: sha}

        def load():
            return [(row["key"], context_from_dict(row))
                    for row in _read_jsonl(self.path(fname))]

        return self.stage(name, compute, load)

    def instructions_stage(self, epoch: int,
                           contexts: list[tuple[str, ContextDoc]]) -> list:
        cfg = self.config
        name = f"instructions-{epoch:02d}"
        fname = f"{name}.jsonl"
        settings = TaskSettings(
            temperature_closed_qa=cfg.temperature_closed_qa,
            temperature_summarization=cfg.temperature_summarization,
            temperature_conversation=cfg.temperature_conversation,
            temperature_multiple_choice=cfg.temperature_multiple_choice,
            qa_pairs=cfg.tasks_qa_pairs,
            language=cfg.run_target_language)

        def compute():
            def one(i: int):
                key, doc = contexts[i]
                return generate_for_context(doc, self.gateway, cfg.run_seed,
                                            key, settings=settings)

            records = []
            for recs, failures in self._map(one, len(contexts)):
                records.extend(recs)
                for failure in failures:
                    logger.warning("%s: %s failed for %s: %s", name,
                                   failure.task, failure.key, failure.reason)
            sha = write_records(records, self.path(fname))
            return records, {fname: sha}

        def load():
            return read_records(self.path(fname))

        return self.stage(name, compute, load)

    def dedup_stage(self, epoch: int, cumulative: list) -> list:
        cfg = self.config
        name = f"dedup-{epoch:02d}"
        fname = f"pool-{epoch:02d}.jsonl"

        def compute():
            if cfg.dedup_enabled:
                result = dedup_filter(cumulative, self.gateway,
                                      threshold=cfg.dedup_threshold,
                                      mode=cfg.dedup_mode,
                                      index_kind=cfg.dedup_index_kind,
                                      seed=cfg.run_seed)
                pool = result.kept
                logger.info("%s: %d kept, %d removed", name, len(pool),
                            len(result.removed))
            else:
                pool = sorted(cumulative, key=lambda r: r.id)
            sha = write_records(pool, self.path(fname))
            return pool, {fname: sha}

        def load():
            return read_records(self.path(fname))

        return self.stage(name, compute, load)

    def manifest_stage(self, pool: list) -> DatasetManifest:
        cfg = self.config
        name = "manifest"

        def compute():
            final = truncate_records(pool, cfg.dataset_size, cfg.run_seed,
                                     VARIANT_FULL)
            recipe = Recipe(variant=VARIANT_FULL,
                            topics_cultural=cfg.topics_cultural,
                            topics_general=cfg.topics_general,
                            dedup=cfg.dedup_enabled)
            manifest = finish_manifest(final, recipe, cfg.dataset_size,
                                       cfg.run_seed)
            mpath = self.path(MANIFEST_FILE)
            sha = write_manifest(manifest, mpath,
                                 config_echo=cfg.effective())
            meta_name = MANIFEST_FILE + ".meta.json"
            return manifest, {MANIFEST_FILE: sha,
                              meta_name: file_sha256(self.path(meta_name))}

        def load():
            return read_manifest(self.path(MANIFEST_FILE))

        return self.stage(name, compute, load)


def run_pipeline(config: PipelineConfig, workdir: str,
                 stage_hook=None, max_epochs: int = MAX_EPOCHS
                 ) -> DatasetManifest:
    """Produce the configured dataset under workdir, resuming prior work.

    stage_hook(name) is called before each stage that actually executes;
    skipped stages stay silent. Raises BuildError when the target size is
    unreachable within max_epochs extension rounds.
    """
    os.makedirs(workdir, exist_ok=True)
    gateway = build_gateway(config)
    with WorkdirLock(workdir):
        run = _Run(config, workdir, gateway, stage_hook)
        all_records: list = []
        all_topics: list[Topic] = []
        seen: set[str] = set()
        pool: list = []
        for epoch in range(max_epochs + 1):
            deficit = config.dataset_size - len(pool)
            if epoch > 0 and deficit <= 0:
                break
            topics = run.topics_stage(epoch, deficit, seen)
            if epoch > 0 and not topics:
                continue
            seen.update(normalize_topic(t.text) for t in topics)
            contexts = run.contexts_stage(epoch, topics,
                                          start_index=len(all_topics))
            all_topics.extend(topics)
            records = run.instructions_stage(epoch, contexts)
            all_records.extend(records)
            pool = run.dedup_stage(epoch, all_records)
        if len(pool) < config.dataset_size:
            raise BuildError(
                f"{len(pool)} records after {max_epochs} topic extensions, "
                f"target {config.dataset_size}", achieved=len(pool))
        return run.manifest_stage(pool)
