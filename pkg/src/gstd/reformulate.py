"""Prompt construction, batched chat-completion requests, and edit validation.

Translations are rewritten into speaker-masculine and speaker-feminine forms
by a chat-completion backend. Requests carry numbered inputs and responses
are parsed back by numbered-line matching, so prompts are machine-checkable;
a deterministic lexicon-driven mock backend stands in for hosted models in
tests and offline runs. Every accepted rewrite passes through a token-diff
validator that only allows known gendered-pair edits (or the configured
morphological alternation), flagging anything else for quarantine.
"""

from __future__ import annotations

import hashlib
import re
import threading
import time
from dataclasses import dataclass, field
from difflib import SequenceMatcher
from typing import Callable, Iterable, Mapping, Protocol, Sequence

from .corpus import Gender, GenderForm, Lang, Utterance
from .resources import GENDER_PAIRS, default_exemplars
from .textutil import tokenize

PROMPT_VERSION = "pv1"

ENV_ENDPOINT = "GSTD_LLM_ENDPOINT"
ENV_KEY = "GSTD_LLM_KEY"
ENV_MODEL = "GSTD_LLM_MODEL"

_FORM_LABEL = {GenderForm.MASCULINE: "MASCULINE", GenderForm.FEMININE: "FEMININE"}
_LANG_LABEL = {Lang.ES: "Spanish", Lang.IT: "Italian"}

_NUMBERED_RE = re.compile(r"^\s*(\d+)[.)]\s*(.*\S)\s*$")
_BOTH_SEP_RE = re.compile(r"\s*\|\|\|\s*")


class ReformulationError(Exception):
    """Raised for unrecoverable client-side failures (bad config, bad usage)."""


class BackendError(ReformulationError):
    """Transport or protocol failure talking to a chat backend."""


class PromptParseError(ReformulationError):
    """Backend response did not contain the expected numbered lines."""


@dataclass(frozen=True)
class PromptStrategy:
    """Prompting style: plain instruction, few-shot, or few-shot with reasoning."""

    kind: str  # "zero_shot" | "few_shot" | "few_shot_cot"
    shots: int = 10

    def __post_init__(self):
        if self.kind not in ("zero_shot", "few_shot", "few_shot_cot"):
            raise ValueError(f"unknown prompt strategy '{self.kind}'")
        if self.kind != "zero_shot" and self.shots < 1:
            raise ValueError("few-shot strategies need shots >= 1")

    @classmethod
    def zero_shot(cls) -> "PromptStrategy":
        return cls("zero_shot", 0)

    @classmethod
    def few_shot(cls, shots: int = 10) -> "PromptStrategy":
        return cls("few_shot", shots)

    @classmethod
    def few_shot_cot(cls, shots: int = 10) -> "PromptStrategy":
        return cls("few_shot_cot", shots)

    @classmethod
    def parse(cls, name: str, shots: int = 10) -> "PromptStrategy":
        key = name.strip().lower().replace("-", "_")
        if key in ("zero_shot", "0_shot"):
            return cls.zero_shot()
        if key in ("few_shot", "n_shot"):
            return cls.few_shot(shots)
        if key in ("few_shot_cot", "cot"):
            return cls.few_shot_cot(shots)
        raise ValueError(f"unknown prompt strategy '{name}'")

    @property
    def uses_exemplars(self) -> bool:
        return self.kind != "zero_shot"

    @property
    def wants_reasoning(self) -> bool:
        return self.kind == "few_shot_cot"


@dataclass(frozen=True)
class Exemplar:
    source_translation: str
    target_gender: GenderForm
    rewritten: str
    reasoning: str | None = None

    def __post_init__(self):
        if self.target_gender is GenderForm.NEUTRAL:
            raise ValueError("exemplar target must be masculine or feminine")


@dataclass(frozen=True)
class ReformulationResult:
    utterance_id: str
    masculine: str
    feminine: str
    raw_response_ref: str
    backend: str

    def __post_init__(self):
        if not self.masculine or not self.feminine:
            raise ValueError("reformulation result with empty form")


@dataclass(frozen=True)
class ChunkFailure:
    utterance_ids: tuple[str, ...]
    reason: str


@dataclass
class BatchOutcome:
    results: list[ReformulationResult] = field(default_factory=list)
    failures: list[ChunkFailure] = field(default_factory=list)
    prompt_hashes: dict[str, str] = field(default_factory=dict)


class ChatBackend(Protocol):
    name: str

    def complete(self, messages: list[dict], *, temperature: float = 0.0) -> str:
        ...


_SYSTEM_MESSAGE = (
    "You rewrite translations so the speaker is expressed in a requested "
    "grammatical gender. You change nothing else."
)

_INSTRUCTIONS_ONE = (
    "Rewrite each numbered {language} translation below so that every "
    "gender-marked word referring to the speaker is in the {form} form.\n"
    "Leave all other words exactly as they are, including words that refer "
    "to third persons; keep punctuation and word order unchanged.\n"
    "Reply with exactly one numbered line per input, in the same order, "
    "containing only the rewritten translation."
)

_INSTRUCTIONS_BOTH = (
    "Rewrite each numbered {language} translation below twice: once with "
    "every gender-marked word referring to the speaker in the MASCULINE "
    "form, once in the FEMININE form.\n"
    "Leave all other words exactly as they are, including words that refer "
    "to third persons; keep punctuation and word order unchanged.\n"
    "Reply with exactly one numbered line per input, in the same order, "
    "formatted as: <masculine version> ||| <feminine version>"
)


def _select_exemplars(
    exemplars: Sequence[Exemplar], target: GenderForm, strategy: PromptStrategy
) -> list[Exemplar]:
    matching = [e for e in exemplars if e.target_gender is target]
    if len(matching) < strategy.shots:
        raise ValueError(
            f"insufficient exemplars for {strategy.kind}: need {strategy.shots} "
            f"toward {target.value}, have {len(matching)}"
        )
    chosen = matching[: strategy.shots]
    if strategy.wants_reasoning and any(e.reasoning is None for e in chosen):
        raise ValueError("chain-of-thought strategy requires exemplar reasoning lines")
    return chosen


def _numbered(items: Iterable[str]) -> str:
    return "\n".join(f"{i}. {text}" for i, text in enumerate(items, 1))


def build_prompt(
    batch: Sequence[tuple[int, str]],
    lang: Lang,
    target: GenderForm,
    strategy: PromptStrategy,
    exemplars: Sequence[Exemplar] = (),
) -> str:
    """Single-target prompt: instruction block, exemplars, numbered batch."""
    if not batch:
        raise ValueError("empty batch")
    if target is GenderForm.NEUTRAL:
        raise ValueError("target form must be masculine or feminine")
    parts = [_INSTRUCTIONS_ONE.format(language=_LANG_LABEL[lang],
                                      form=_FORM_LABEL[target])]
    parts.append(f"TARGET: {_FORM_LABEL[target]}")
    if strategy.uses_exemplars:
        chosen = _select_exemplars(exemplars, target, strategy)
        lines = ["EXAMPLES:"]
        for i, ex in enumerate(chosen, 1):
            lines.append(f"{i}. {ex.source_translation} -> {ex.rewritten}")
            if strategy.wants_reasoning:
                lines.append(f"   REASONING: {ex.reasoning}")
        parts.append("\n".join(lines))
    parts.append("INPUTS:\n" + "\n".join(f"{idx}. {text}" for idx, text in batch))
    return "\n\n".join(parts)


def _pair_exemplars(exemplars: Sequence[Exemplar], strategy: PromptStrategy):
    """Collapse per-direction exemplars into (masc, femi, reasoning) tuples.

    A to-feminine exemplar demonstrates masc -> femi, a to-masculine one the
    reverse; the two directions of one sentence pair deduplicate here.
    """
    pairs: list[tuple[str, str, str | None]] = []
    seen: set[tuple[str, str]] = set()
    for ex in exemplars:
        if ex.target_gender is GenderForm.FEMININE:
            key = (ex.source_translation, ex.rewritten)
        else:
            key = (ex.rewritten, ex.source_translation)
        if key in seen:
            continue
        seen.add(key)
        pairs.append((key[0], key[1], ex.reasoning))
    if len(pairs) < strategy.shots:
        raise ValueError(
            f"insufficient both-direction exemplars: need {strategy.shots}, "
            f"have {len(pairs)}"
        )
    chosen = pairs[: strategy.shots]
    if strategy.wants_reasoning and any(r is None for _, _, r in chosen):
        raise ValueError("chain-of-thought strategy requires exemplar reasoning lines")
    return chosen


def build_both_forms_prompt(
    batch: Sequence[tuple[int, str]],
    lang: Lang,
    strategy: PromptStrategy,
    exemplars: Sequence[Exemplar] = (),
) -> str:
    """Combined prompt asking for masculine and feminine forms in one line."""
    if not batch:
        raise ValueError("empty batch")
    parts = [_INSTRUCTIONS_BOTH.format(language=_LANG_LABEL[lang])]
    parts.append("TARGET: BOTH")
    if strategy.uses_exemplars:
        pairs = _pair_exemplars(exemplars, strategy)
        lines = ["EXAMPLES:"]
        for i, (masc, femi, reasoning) in enumerate(pairs, 1):
            lines.append(f"{i}. {masc} -> {masc} ||| {femi}")
            if strategy.wants_reasoning:
                lines.append(f"   REASONING: {reasoning}")
        parts.append("\n".join(lines))
    parts.append("INPUTS:\n" + "\n".join(f"{idx}. {text}" for idx, text in batch))
    return "\n\n".join(parts)


def parse_numbered_response(text: str, expected: int) -> list[str]:
    """Extract lines '1. ...' .. 'n. ...'; anything else is a parse failure."""
    found: dict[int, str] = {}
    for line in text.splitlines():
        m = _NUMBERED_RE.match(line)
        if not m:
            continue
        idx = int(m.group(1))
        if idx in found:
            raise PromptParseError(f"duplicate numbered line {idx}")
        found[idx] = m.group(2)
    if sorted(found) != list(range(1, expected + 1)):
        raise PromptParseError(
            f"expected numbered lines 1..{expected}, got {sorted(found)}"
        )
    return [found[i] for i in range(1, expected + 1)]


# ---------------------------------------------------------------------------
# backends


class MockChatBackend:
    """Deterministic lexicon-substitution backend for tests and offline runs."""

    def __init__(self, lexicon: Iterable[tuple[str, str]] | None = None,
                 lang: Lang = Lang.ES):
        pairs = tuple(lexicon) if lexicon is not None else GENDER_PAIRS[lang]
        self.name = "mock"
        self._to_femi = {m.lower(): f for m, f in pairs}
        self._to_masc = {f.lower(): m for m, f in pairs}

    def _rewrite(self, text: str, table: Mapping[str, str]) -> str:
        def swap(match: re.Match) -> str:
            word = match.group(0)
            repl = table.get(word.lower())
            if repl is None:
                return word
            if word.istitle():
                return repl.capitalize()
            if word.isupper():
                return repl.upper()
            return repl

        return re.sub(r"\w+", swap, text)

    def complete(self, messages: list[dict], *, temperature: float = 0.0) -> str:
        prompt = next(m["content"] for m in reversed(messages) if m["role"] == "user")
        target = None
        inputs: list[tuple[int, str]] = []
        in_inputs = False
        for line in prompt.splitlines():
            if line.startswith("TARGET: "):
                target = line[len("TARGET: "):].strip()
            elif line.strip() == "INPUTS:":
                in_inputs = True
            elif in_inputs:
                m = _NUMBERED_RE.match(line)
                if m:
                    inputs.append((int(m.group(1)), m.group(2)))
        if target is None or not inputs:
            raise BackendError("mock backend could not locate TARGET/INPUTS markers")
        out = []
        for idx, text in inputs:
            if target == "BOTH":
                masc = self._rewrite(text, self._to_masc)
                femi = self._rewrite(text, self._to_femi)
                out.append(f"{idx}. {masc} ||| {femi}")
            elif target == "MASCULINE":
                out.append(f"{idx}. {self._rewrite(text, self._to_masc)}")
            elif target == "FEMININE":
                out.append(f"{idx}. {self._rewrite(text, self._to_femi)}")
            else:
                raise BackendError(f"mock backend got unknown target '{target}'")
        return "\n".join(out)


class FaultInjectingBackend:
    """Wraps a backend and applies extra token swaps to its responses.

    Used to emulate a model that also flips gender forms of third-person
    referents; the validator must catch every such item.
    """

    def __init__(self, inner: ChatBackend, corrupt_tokens: Mapping[str, str]):
        self.inner = inner
        self.name = f"{inner.name}+fault"
        self._table = {k.lower(): v for k, v in corrupt_tokens.items()}

    def complete(self, messages: list[dict], *, temperature: float = 0.0) -> str:
        response = self.inner.complete(messages, temperature=temperature)

        def swap(match: re.Match) -> str:
            return self._table.get(match.group(0).lower(), match.group(0))

        return re.sub(r"\w+", swap, response)


class HttpChatBackend:
    """Chat-completion-style HTTP JSON backend.

    Request: {model, messages, temperature}; response:
    {choices: [{message: {content}}]}. Endpoint, key and model come from
    arguments or the GSTD_LLM_* environment variables.
    """

    def __init__(self, endpoint: str | None = None, api_key: str | None = None,
                 model: str | None = None, timeout_s: float = 60.0):
        import os

        self.endpoint = endpoint or os.environ.get(ENV_ENDPOINT)
        if not self.endpoint:
            raise ReformulationError(
                f"http backend needs an endpoint: set {ENV_ENDPOINT} or pass one"
            )
        self.api_key = api_key or os.environ.get(ENV_KEY)
        self.model = model or os.environ.get(ENV_MODEL) or "gpt-4"
        self.timeout_s = timeout_s
        self.name = f"http:{self.model}"

    def complete(self, messages: list[dict], *, temperature: float = 0.0) -> str:
        import requests

        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        try:
            resp = requests.post(
                self.endpoint,
                json={"model": self.model, "messages": messages,
                      "temperature": temperature},
                headers=headers,
                timeout=self.timeout_s,
            )
        except requests.RequestException as exc:
            raise BackendError(f"transport failure: {exc}") from exc
        if resp.status_code != 200:
            raise BackendError(f"backend returned HTTP {resp.status_code}")
        try:
            return resp.json()["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError, ValueError) as exc:
            raise BackendError(f"malformed backend response: {exc}") from exc


class RateLimiter:
    """Token-bucket limiter for requests per minute.

    ``clock``/``sleep`` are injectable for tests; the default pair wall-waits.
    """

    def __init__(self, requests_per_minute: float,
                 clock: Callable[[], float] = time.monotonic,
                 sleep: Callable[[float], None] = time.sleep):
        if requests_per_minute <= 0:
            raise ValueError("requests_per_minute must be positive")
        self.interval = 60.0 / requests_per_minute
        self._clock = clock
        self._sleep = sleep
        self._lock = threading.Lock()
        self._next_free = 0.0

    def acquire(self) -> None:
        with self._lock:
            now = self._clock()
            start = max(now, self._next_free)
            self._next_free = start + self.interval
            wait = start - now
        if wait > 0:
            self._sleep(wait)


# ---------------------------------------------------------------------------
# batch client


def _hash(text: str) -> str:
    return "sha256:" + hashlib.sha256(text.encode("utf-8")).hexdigest()


def _chunk_prompts(chunk, lang, strategy, exemplars, request_mode):
    numbered = [(i, u.translation) for i, u in enumerate(chunk, 1)]
    if request_mode == "both":
        return [("both", build_both_forms_prompt(numbered, lang, strategy, exemplars))]
    return [
        ("masc", build_prompt(numbered, lang, GenderForm.MASCULINE, strategy, exemplars)),
        ("femi", build_prompt(numbered, lang, GenderForm.FEMININE, strategy, exemplars)),
    ]


def _split_both(line: str) -> tuple[str, str]:
    parts = _BOTH_SEP_RE.split(line)
    if len(parts) != 2 or not parts[0].strip() or not parts[1].strip():
        raise PromptParseError(f"line is not '<masc> ||| <femi>': '{line}'")
    return parts[0].strip(), parts[1].strip()


def _run_chunk(chunk, lang, strategy, backend, exemplars, request_mode, retries,
               rate_limiter, temperature):
    """One chunk, with retry-on-parse/transport; returns (results, prompt_hash)."""
    prompts = _chunk_prompts(chunk, lang, strategy, exemplars, request_mode)
    prompt_hash = _hash("\n␞\n".join(p for _, p in prompts))
    last_error: Exception | None = None
    for _ in range(1 + retries):
        try:
            responses = {}
            for tag, prompt in prompts:
                if rate_limiter is not None:
                    rate_limiter.acquire()
                messages = [{"role": "system", "content": _SYSTEM_MESSAGE},
                            {"role": "user", "content": prompt}]
                responses[tag] = backend.complete(messages, temperature=temperature)
            raw_ref = _hash("\n␞\n".join(responses[t] for t, _ in prompts))
            if request_mode == "both":
                lines = parse_numbered_response(responses["both"], len(chunk))
                forms = [_split_both(line) for line in lines]
            else:
                masc = parse_numbered_response(responses["masc"], len(chunk))
                femi = parse_numbered_response(responses["femi"], len(chunk))
                forms = list(zip(masc, femi))
            results = [
                ReformulationResult(
                    utterance_id=u.id, masculine=m, feminine=f,
                    raw_response_ref=raw_ref, backend=backend.name,
                )
                for u, (m, f) in zip(chunk, forms)
            ]
            return results, prompt_hash, None
        except (PromptParseError, BackendError, ValueError) as exc:
            last_error = exc
    failure = ChunkFailure(
        utterance_ids=tuple(u.id for u in chunk),
        reason=f"{type(last_error).__name__}: {last_error}",
    )
    return None, prompt_hash, failure


def reformulate_batch(
    batch: Sequence[Utterance],
    lang: Lang,
    strategy: PromptStrategy,
    backend: ChatBackend,
    batch_size: int = 8,
    retries: int = 2,
    *,
    exemplars: Sequence[Exemplar] | None = None,
    request_mode: str = "both",
    max_workers: int = 1,
    rate_limiter: RateLimiter | None = None,
    temperature: float = 0.0,
) -> BatchOutcome:
    """Reformulate translations in chunks of at most ``batch_size``.

    ``request_mode`` is "both" (one combined request per chunk, the default)
    or "per_form" (a masculine and a feminine request per chunk).
    Unparseable or failing chunks are retried with identical content up to
    ``retries`` extra times, then reported in ``failures``; successful
    results come back in input order regardless of worker count.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    if request_mode not in ("both", "per_form"):
        raise ValueError(f"unknown request_mode '{request_mode}'")
    if exemplars is None:
        exemplars = default_exemplars(lang) if strategy.uses_exemplars else []
    # Fail fast on exemplar shortfalls before any request goes out.
    if strategy.uses_exemplars and batch:
        probe = [(1, batch[0].translation)]
        if request_mode == "both":
            build_both_forms_prompt(probe, lang, strategy, exemplars)
        else:
            build_prompt(probe, lang, GenderForm.MASCULINE, strategy, exemplars)
            build_prompt(probe, lang, GenderForm.FEMININE, strategy, exemplars)

    chunks = [list(batch[i:i + batch_size]) for i in range(0, len(batch), batch_size)]
    outcome = BatchOutcome()
    if not chunks:
        return outcome

    def job(chunk):
        return _run_chunk(chunk, lang, strategy, backend, exemplars, request_mode,
                          retries, rate_limiter, temperature)

    if max_workers > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            settled = list(pool.map(job, chunks))
    else:
        settled = [job(chunk) for chunk in chunks]

    for chunk, (results, prompt_hash, failure) in zip(chunks, settled):
        for utt in chunk:
            outcome.prompt_hashes[utt.id] = prompt_hash
        if failure is not None:
            outcome.failures.append(failure)
        else:
            outcome.results.extend(results)
    return outcome


# ---------------------------------------------------------------------------
# validation


@dataclass(frozen=True)
class Verdict:
    passed: bool
    flagged: tuple[tuple[str, str], ...] = ()

    def reason(self) -> str:
        if self.passed:
            return "pass"
        return "flag:" + ",".join(f"{a or '~'}>{b or '~'}" for a, b in self.flagged)


def _default_morph(a: str, b: str) -> bool:
    """Final-vowel o/a alternation on a shared stem."""
    return (len(a) > 1 and len(b) > 1 and a[:-1] == b[:-1]
            and {a[-1], b[-1]} == {"o", "a"})


def _normalize_lexicon(lexicon) -> set[frozenset[str]]:
    if lexicon is None:
        return set()
    if isinstance(lexicon, Mapping):
        pairs = lexicon.items()
    else:
        pairs = lexicon
    return {frozenset((a.lower(), b.lower())) for a, b in pairs}


def validate_reformulation(
    original: str,
    rewritten: str,
    allowed_edit_lexicon=None,
    *,
    morph_pattern: Callable[[str, str], bool] | None = _default_morph,
) -> Verdict:
    """Token-diff the two strings and flag edits outside the allowed set.

    An edit passes when the (case-folded) token pair appears in the lexicon
    in either direction or matches ``morph_pattern``; insertions/deletions
    and any other substitution are flagged. Identical strings pass.
    """
    allowed = _normalize_lexicon(allowed_edit_lexicon)
    a_tokens = tokenize(original, lowercase=True)
    b_tokens = tokenize(rewritten, lowercase=True)
    flagged: list[tuple[str, str]] = []
    matcher = SequenceMatcher(a=a_tokens, b=b_tokens, autojunk=False)
    for op, a0, a1, b0, b1 in matcher.get_opcodes():
        if op == "equal":
            continue
        span_a = a_tokens[a0:a1]
        span_b = b_tokens[b0:b1]
        width = max(len(span_a), len(span_b))
        for i in range(width):
            ta = span_a[i] if i < len(span_a) else ""
            tb = span_b[i] if i < len(span_b) else ""
            if ta and tb:
                if frozenset((ta, tb)) in allowed:
                    continue
                if morph_pattern is not None and (morph_pattern(ta, tb)
                                                  or morph_pattern(tb, ta)):
                    continue
            flagged.append((ta, tb))
    return Verdict(passed=not flagged, flagged=tuple(flagged))
