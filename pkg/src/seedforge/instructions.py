"""Instruction generation.

Four task generators turn a topic plus (for three of them) a context document
into instruction records: closed question answering, summarization, a single
conversation turn, and multiple choice. Each generator renders its fixed
prompt, calls the completion provider at the task's temperature, parses the
output leniently, and retries once under a fresh seed before giving up with a
logged failure. A failed context never yields partial records for that task.
"""

from __future__ import annotations

import hashlib
import logging
import random
import re
from dataclasses import dataclass, field, replace

from seedforge import constants
from seedforge.contexts import ContextDoc
from seedforge.errors import (GenerationError, ParseError, ValidationError)
from seedforge.gateway.types import GenRequest
from seedforge.parsing import (balanced_spans, extract_dict_list,
                               loads_lenient, strip_code_fences)
from seedforge.seeding import derive_seed
from seedforge.topics import Topic

logger = logging.getLogger(__name__)

CLOSED_QA = "closed_qa"
SUMMARIZATION = "summarization"
CONVERSATION = "conversation"
MULTIPLE_CHOICE = "multiple_choice"
GENERATION_TASKS = (CLOSED_QA, SUMMARIZATION, CONVERSATION, MULTIPLE_CHOICE)

# Tasks whose records must carry the context they were generated from.
CONTEXT_TASKS = frozenset({CLOSED_QA, SUMMARIZATION, MULTIPLE_CHOICE})

# Wording that leaks choice position into a question or answer. Choices get
# shuffled after generation, so any of these invalidates the sample.
ORDINAL_PATTERNS = (
    r"all of the above",
    r"none of the above",
    r"both of the above",
    r"\b(?:first|second|third|fourth|last)\s+(?:answer|choice|option)",
    r"\b(?:choice|option|answer)\s+(?:[a-d]|[1-4])\b",
    r"ทั้งหมดข้างต้น",
    r"ทุกข้อข้างต้น",
    r"ถูกทุกข้อ",
    r"ไม่มีข้อใดถูก",
    r"ไม่มีคำตอบที่ถูกต้อง",
    r"ข้อแรก",
    r"ข้อสุดท้าย",
    r"ตัวเลือก(?:แรก|สุดท้าย|ที่\s*[1-4๑-๔])",
    r"คำตอบ(?:แรก|สุดท้าย|ที่\s*[1-4๑-๔])",
)
_ORDINAL_RE = re.compile("|".join(f"(?:{p})" for p in ORDINAL_PATTERNS),
                         re.IGNORECASE)


@dataclass(frozen=True)
class InstructionRecord:
    id: str
    task: str
    instruction: str
    context: str | None
    output: str
    topic: Topic
    language: str
    lineage: tuple[str, ...] = ("generated",)
    provenance: dict = field(default_factory=dict)
    flags: dict | None = None

    def __post_init__(self):
        if self.task not in GENERATION_TASKS:
            raise ValidationError(f"unknown task {self.task!r}")
        if not self.id:
            raise ValidationError("record id must be non-empty")
        if not self.instruction or not self.instruction.strip():
            raise ValidationError("instruction must be non-empty")
        if not self.output or not self.output.strip():
            raise ValidationError("output must be non-empty")
        if self.task in CONTEXT_TASKS:
            if not self.context or not self.context.strip():
                raise ValidationError(f"{self.task} records require a context")
        elif self.context is not None:
            raise ValidationError(f"{self.task} records must not carry a "
                                  f"context")
        if not self.language:
            raise ValidationError("language tag must be non-empty")


@dataclass(frozen=True)
class McQuestion:
    question: str
    choices: tuple[str, ...]
    answer_text: str
    correct_index: int

    def __post_init__(self):
        if not self.question.strip():
            raise ValidationError("question must be non-empty")
        if len(self.choices) < 2:
            raise ValidationError("need at least two choices")
        if any(not c.strip() or "\n" in c for c in self.choices):
            raise ValidationError("choices must be non-empty single lines")
        if len(set(self.choices)) != len(self.choices):
            raise ValidationError("duplicate choices break the single "
                                  "correct answer guarantee")
        if not 0 <= self.correct_index < len(self.choices):
            raise ValidationError(
                f"correct_index {self.correct_index} out of range")
        if not self.answer_text.strip():
            raise ValidationError("answer text must be non-empty")
        hit = find_ordinal_reference(self.choices)
        if hit:
            raise ValidationError(f"choice contains ordinal wording: {hit!r}")


@dataclass(frozen=True)
class GenerationFailure:
    """A context/task pair that produced nothing usable after its retry."""

    task: str
    key: str
    topic_text: str
    reason: str
    raw_excerpt: str = ""


@dataclass(frozen=True)
class TaskSettings:
    temperature_closed_qa: float = constants.TEMPERATURE_CLOSED_QA
    temperature_summarization: float = constants.TEMPERATURE_SUMMARIZATION
    temperature_conversation: float = constants.TEMPERATURE_CONVERSATION
    temperature_multiple_choice: float = constants.TEMPERATURE_MULTIPLE_CHOICE
    qa_pairs: int = constants.QA_PAIRS_PER_CONTEXT
    language: str = constants.TARGET_LANGUAGE


def find_ordinal_reference(texts) -> str | None:
    """Return the first ordinal phrase found in any of the texts, if any."""
    for text in texts:
        match = _ORDINAL_RE.search(text)
        if match:
            return match.group(0)
    return None


# -- prompt rendering -------------------------------------------------------

def render_closed_qa_prompt(context_body: str,
                            pairs: int = constants.QA_PAIRS_PER_CONTEXT) -> str:
    return (
        f"Generate {pairs} questions focusing on different aspects / parts "
        "of this given context. Use only the given context to create your "
        "questions. Do not use external information. "
        f"<context>{context_body}</context> Ensure your output is in the "
        "format of a list of dictionaries, where each dictionary contains a "
        "'question' key and an 'answer' key. Your output should be one line "
        "in the aforementioned format without anything else."
    )


def render_summarization_prompt(style: str, topic_text: str,
                                context_body: str) -> str:
    return (
        f"Generate a concise summary in {style} format of the following "
        f"context related to {topic_text}: <context> {context_body} "
        "</context> Ensure your output is in the format of a dictionary with "
        "a 'summary' and 'instruction' key, where 'summary' is your summary "
        "in the specified format and 'instruction' is a sentence you would "
        "instruct someone to get this summary (for example: 'Please "
        f"summarize in {style} format the following text passage'). Your "
        "output should be one line in the aforementioned format, and in the "
        "correct language without anything else."
    )


def render_conversation_prompt(topic_text: str) -> str:
    return (
        "Generate a conversation between a user and an AI assistant on the "
        f"topic of {topic_text}. The user's message should be a question or "
        f"a statement related to {topic_text}, and the AI assistant should "
        "provide a relevant, engaging response to maintain a friendly and "
        "casual conversation. The output should be in the following format: "
        "<format>Input: User's message Output: AI assistant's response"
        "</format> Ensure your output contains ONLY ONE input-output pair "
        "exactly in the specified format without any additional text."
    )


def render_multiple_choice_prompt(context_body: str) -> str:
    # "Explaination" is intentional; the generators were tuned with this
    # exact wording.
    return (
        "Generate a multiple-choice question focusing on the given context. "
        "The question should only have one correct choice. Use only the "
        "given context to create your question and answer choices. Do not "
        f"use external information. <context>{context_body}</context> DO "
        "NOT USE any ordinal information (DO NOT USE eg: first answer is "
        "correct, all of the above is correct, etc) of the choices to "
        "answer your question as the choices will be shuffled later. Ensure "
        "your output is in the following format:<format> Question: Your "
        "question Choices: - [Choice 1] - [Choice 2] - [Choice 3] - "
        "[Choice 4] Answer: [Explaination + Reasoning + Correct Answer (in "
        "this order exactly)] </format> Your output should contain ONLY ONE "
        "multiple-choice question exactly in the specified format without "
        "any additional text."
    )


# -- parsers ----------------------------------------------------------------

def parse_qa_pairs(raw: str) -> list[tuple[str, str]]:
    """Question/answer pairs from a bracketed list of dicts."""
    dicts = extract_dict_list(raw, ("question", "answer"))
    return [(d["question"], d["answer"]) for d in dicts]


def parse_summary_payload(raw: str) -> tuple[str, str]:
    """(summary, instruction) from a braced dict.

    A summary delivered as a list of strings (bullet output drifts that way)
    is joined with newlines; anything else non-string is rejected.
    """
    if not raw or not raw.strip():
        raise ParseError("empty output where a summary dict was expected",
                         raw=raw)
    text = strip_code_fences(raw)
    for span in balanced_spans(text, "{", "}"):
        value = loads_lenient(span)
        if not isinstance(value, dict):
            continue
        summary = value.get("summary")
        instruction = value.get("instruction")
        if isinstance(summary, list) and all(
                isinstance(x, str) for x in summary):
            summary = "\n".join(x.strip() for x in summary if x.strip())
        if (isinstance(summary, str) and summary.strip()
                and isinstance(instruction, str) and instruction.strip()):
            return summary.strip(), instruction.strip()
    raise ParseError("no dict with 'summary' and 'instruction' found",
                     raw=raw)


_TAG_RE = re.compile(r"</?format>", re.IGNORECASE)


def parse_conversation(raw: str) -> tuple[str, str]:
    """One (user message, assistant reply) pair from Input:/Output: blocks.

    Exactly one of each marker is required; more means the model ignored the
    single-pair instruction and the sample is discarded.
    """
    if not raw or not raw.strip():
        raise ParseError("empty output where a conversation was expected",
                         raw=raw)
    text = _TAG_RE.sub(" ", strip_code_fences(raw))
    inputs = list(re.finditer(r"Input\s*:", text))
    outputs = list(re.finditer(r"Output\s*:", text))
    if len(inputs) != 1 or len(outputs) != 1:
        raise ParseError(
            f"expected exactly one Input:/Output: pair, found "
            f"{len(inputs)}/{len(outputs)}", raw=raw)
    if outputs[0].start() < inputs[0].end():
        raise ParseError("Output: precedes Input:", raw=raw)
    user = text[inputs[0].end():outputs[0].start()].strip()
    assistant = text[outputs[0].end():].strip()
    if not user or not assistant:
        raise ParseError("empty conversation side", raw=raw)
    return user, assistant


def _strip_brackets(text: str) -> str:
    text = text.strip()
    if len(text) >= 2 and text[0] == "[" and text[-1] == "]":
        inner = text[1:-1]
        if "[" not in inner and "]" not in inner:
            text = inner.strip()
    return text


def _resolve_correct_choice(choices: list[str], answer_text: str) -> int:
    """Pick the choice contained in the answer, preferring the longest
    match; ties go to the earliest choice."""
    def norm(s: str) -> str:
        return " ".join(s.split()).casefold()

    haystack = norm(answer_text)
    best = None
    for i, choice in enumerate(choices):
        needle = norm(choice)
        if needle and needle in haystack:
            key = (len(needle), -i)
            if best is None or key > best[0]:
                best = (key, i)
    if best is None:
        raise ParseError(
            "correct choice is not locatable inside the answer text",
            raw=answer_text)
    return best[1]


def parse_multiple_choice(raw: str) -> McQuestion:
    """Question/Choices/Answer blocks into a validated McQuestion.

    Choice lines are dash-prefixed; wrapping brackets are stripped.
    Ordinal wording anywhere in the choices or answer raises
    ValidationError rather than ParseError so the two failure kinds stay
    distinguishable in logs.
    """
    if not raw or not raw.strip():
        raise ParseError("empty output where a question was expected",
                         raw=raw)
    text = _TAG_RE.sub(" ", strip_code_fences(raw))
    q_marks = list(re.finditer(r"Question\s*:", text, re.IGNORECASE))
    c_marks = list(re.finditer(r"Choices\s*:", text, re.IGNORECASE))
    a_marks = list(re.finditer(r"Answer\s*:", text, re.IGNORECASE))
    if len(q_marks) != 1:
        raise ParseError(f"expected exactly one question, found "
                         f"{len(q_marks)}", raw=raw)
    if len(c_marks) != 1 or len(a_marks) != 1:
        raise ParseError("expected exactly one Choices: and one Answer: "
                         "block", raw=raw)
    if not (q_marks[0].end() <= c_marks[0].start()
            and c_marks[0].end() <= a_marks[0].start()):
        raise ParseError("Question/Choices/Answer out of order", raw=raw)
    question = " ".join(
        text[q_marks[0].end():c_marks[0].start()].split())
    if not question:
        raise ParseError("empty question", raw=raw)
    block = text[c_marks[0].end():a_marks[0].start()]
    choices: list[str] = []
    for line in block.splitlines():
        line = line.strip()
        if not line:
            continue
        if line[0] in "-*•–":
            item = _strip_brackets(line[1:].strip())
            item = " ".join(item.split())
            if item:
                choices.append(item)
        elif choices:
            choices[-1] = f"{choices[-1]} {' '.join(line.split())}"
        else:
            raise ParseError(f"choice block starts with a non-choice line: "
                             f"{line[:60]!r}", raw=raw)
    if len(choices) < 2:
        raise ParseError(f"found {len(choices)} choices, need at least 2",
                         raw=raw)
    if len(set(choices)) != len(choices):
        raise ValidationError("duplicate choices in generated question")
    answer_text = _strip_brackets(text[a_marks[0].end():].strip())
    if not answer_text:
        raise ParseError("empty answer text", raw=raw)
    hit = find_ordinal_reference(list(choices) + [answer_text])
    if hit:
        raise ValidationError(
            f"ordinal wording {hit!r} found in generated question")
    correct = _resolve_correct_choice(choices, answer_text)
    return McQuestion(question=question, choices=tuple(choices),
                      answer_text=answer_text, correct_index=correct)


def shuffle_choices(question: McQuestion, rng: random.Random) -> McQuestion:
    """Uniformly permute the choices, keeping correct_index aligned.

    The answer text is untouched; only the presentation order moves.
    """
    perm = list(range(len(question.choices)))
    rng.shuffle(perm)
    new_choices = tuple(question.choices[i] for i in perm)
    new_correct = perm.index(question.correct_index)
    return replace(question, choices=new_choices, correct_index=new_correct)


def render_mc_instruction(question: McQuestion) -> str:
    lines = [question.question]
    lines += [f"- {c}" for c in question.choices]
    return "\n".join(lines)


def split_rendered_mc(instruction: str) -> tuple[str, tuple[str, ...]]:
    """Inverse of render_mc_instruction, used to audit round-trip fidelity."""
    lines = instruction.splitlines()
    head: list[str] = []
    choices: list[str] = []
    for line in lines:
        if line.startswith("- "):
            choices.append(line[2:])
        elif not choices:
            head.append(line)
        else:
            raise ParseError("question text after choice lines",
                             raw=instruction)
    if not head or not choices:
        raise ParseError("rendered question must have a question line and "
                         "choice lines", raw=instruction)
    return " ".join(" ".join(head).split()), tuple(choices)


# -- generation -------------------------------------------------------------

def _prompt_hash(prompt: str) -> str:
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()[:16]


def _generate_parsed(gateway, prompt: str, temperature: float,
                     build_seed: int, key: str, task: str, parse):
    """Call the provider, parse, retry once under a fresh seed.

    Returns (value, provenance). Raises GenerationError when the retry also
    fails; the caller records a failure entry and moves on.
    """
    last_error: Exception | None = None
    raw = ""
    for attempt in range(2):
        seed = derive_seed(build_seed, key, task, attempt)
        raw = gateway.complete(GenRequest(
            prompt=prompt, temperature=temperature, seed=seed))
        try:
            value = parse(raw)
        except (ParseError, ValidationError) as exc:
            last_error = exc
            logger.warning("%s generation for %s failed to parse "
                           "(attempt %d): %s", task, key, attempt + 1, exc)
            continue
        provenance = {
            "temperature": temperature,
            "seed": seed,
            "attempt": attempt,
            "prompt_sha256": _prompt_hash(prompt),
        }
        return value, provenance
    raise GenerationError(
        f"{task} generation for {key} failed twice: {last_error} "
        f"(raw starts {raw[:80]!r})")


def gen_closed_qa(ctx: ContextDoc, gateway, build_seed: int, key: str,
                  settings: TaskSettings = TaskSettings()
                  ) -> list[InstructionRecord]:
    """Exactly settings.qa_pairs records per context, or GenerationError.

    A payload with the wrong pair count is treated the same as a parse
    failure: one retry, then the whole context is skipped for this task.
    Never returns a partial batch.
    """
    if ctx.topic is None:
        raise ValidationError("context document has no topic attached")
    prompt = render_closed_qa_prompt(ctx.body, pairs=settings.qa_pairs)

    def parse(raw: str) -> list[tuple[str, str]]:
        pairs = parse_qa_pairs(raw)
        if len(pairs) != settings.qa_pairs:
            raise ParseError(
                f"expected {settings.qa_pairs} pairs, got {len(pairs)}",
                raw=raw)
        return pairs

    pairs, provenance = _generate_parsed(
        gateway, prompt, settings.temperature_closed_qa, build_seed, key,
        CLOSED_QA, parse)
    provenance["context"] = dict(ctx.provenance)
    return [
        InstructionRecord(
            id=f"{key}-{CLOSED_QA}-{i:02d}", task=CLOSED_QA,
            instruction=question, context=ctx.body, output=answer,
            topic=ctx.topic, language=settings.language,
            provenance=provenance)
        for i, (question, answer) in enumerate(pairs)
    ]


def gen_summarization(ctx: ContextDoc, gateway, build_seed: int, key: str,
                      settings: TaskSettings = TaskSettings()
                      ) -> list[InstructionRecord]:
    """One summary record; the style is drawn uniformly per record."""
    if ctx.topic is None:
        raise ValidationError("context document has no topic attached")
    rng = random.Random(derive_seed(build_seed, key, "summary-style"))
    style = rng.choice(constants.SUMMARY_STYLES)
    prompt = render_summarization_prompt(style, ctx.topic.text, ctx.body)
    (summary, instruction), provenance = _generate_parsed(
        gateway, prompt, settings.temperature_summarization, build_seed, key,
        SUMMARIZATION, parse_summary_payload)
    provenance["summary_style"] = style
    provenance["context"] = dict(ctx.provenance)
    return [InstructionRecord(
        id=f"{key}-{SUMMARIZATION}-00", task=SUMMARIZATION,
        instruction=instruction, context=ctx.body, output=summary,
        topic=ctx.topic, language=settings.language, provenance=provenance)]


def gen_conversation(topic: Topic, gateway, build_seed: int, key: str,
                     settings: TaskSettings = TaskSettings()
                     ) -> list[InstructionRecord]:
    """One user/assistant exchange grounded in the topic alone."""
    prompt = render_conversation_prompt(topic.text)
    (user, assistant), provenance = _generate_parsed(
        gateway, prompt, settings.temperature_conversation, build_seed, key,
        CONVERSATION, parse_conversation)
    return [InstructionRecord(
        id=f"{key}-{CONVERSATION}-00", task=CONVERSATION,
        instruction=user, context=None, output=assistant, topic=topic,
        language=settings.language, provenance=provenance)]


def gen_multiple_choice(ctx: ContextDoc, gateway, build_seed: int, key: str,
                        settings: TaskSettings = TaskSettings()
                        ) -> tuple[McQuestion, dict]:
    """A validated, not-yet-shuffled question plus its call provenance."""
    if ctx.topic is None:
        raise ValidationError("context document has no topic attached")
    prompt = render_multiple_choice_prompt(ctx.body)
    return _generate_parsed(
        gateway, prompt, settings.temperature_multiple_choice, build_seed,
        key, MULTIPLE_CHOICE, parse_multiple_choice)


def mc_to_record(question: McQuestion, ctx: ContextDoc, build_seed: int,
                 key: str, settings: TaskSettings = TaskSettings(),
                 provenance: dict | None = None) -> InstructionRecord:
    """Render a (shuffled) question into a record.

    The instruction is the question plus dash-prefixed choices; rendering
    and split_rendered_mc are exact inverses for validated questions.
    """
    if ctx.topic is None:
        raise ValidationError("context document has no topic attached")
    instruction = render_mc_instruction(question)
    meta = dict(provenance or {})
    meta["correct_index"] = question.correct_index
    meta["context"] = dict(ctx.provenance)
    return InstructionRecord(
        id=f"{key}-{MULTIPLE_CHOICE}-00", task=MULTIPLE_CHOICE,
        instruction=instruction, context=ctx.body,
        output=question.answer_text, topic=ctx.topic,
        language=settings.language, provenance=meta)


def generate_for_context(ctx: ContextDoc, gateway, build_seed: int, key: str,
                         settings: TaskSettings = TaskSettings(),
                         tasks: tuple[str, ...] = GENERATION_TASKS
                         ) -> tuple[list[InstructionRecord],
                                    list[GenerationFailure]]:
    """Run the configured task generators against one context.

    Failures are collected, not raised: a context that defeats one task can
    still contribute records for the others.
    """
    if ctx.topic is None:
        raise ValidationError("context document has no topic attached")
    records: list[InstructionRecord] = []
    failures: list[GenerationFailure] = []

    def note_failure(task: str, exc: Exception) -> None:
        failures.append(GenerationFailure(
            task=task, key=key, topic_text=ctx.topic.text,
            reason=str(exc)[:200]))

    for task in tasks:
        try:
            if task == CLOSED_QA:
                records.extend(gen_closed_qa(
                    ctx, gateway, build_seed, key, settings))
            elif task == SUMMARIZATION:
                records.extend(gen_summarization(
                    ctx, gateway, build_seed, key, settings))
            elif task == CONVERSATION:
                records.extend(gen_conversation(
                    ctx.topic, gateway, build_seed, key, settings))
            elif task == MULTIPLE_CHOICE:
                question, provenance = gen_multiple_choice(
                    ctx, gateway, build_seed, key, settings)
                rng = random.Random(derive_seed(build_seed, key, "mc-shuffle"))
                shuffled = shuffle_choices(question, rng)
                records.append(mc_to_record(
                    shuffled, ctx, build_seed, key, settings,
                    provenance=provenance))
            else:
                raise ValidationError(f"unknown task {task!r}")
        except GenerationError as exc:
            note_failure(task, exc)
    return records, failures
