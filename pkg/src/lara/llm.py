"""Bridge to a logprobs-capable completion endpoint.

Turns (topic, document) pairs into grade-probability vectors: renders a
prompt, asks the endpoint for the top-k log-probabilities at the grade
position, sums the mass of each grade's token surface forms, and normalizes
the result into a distribution over grades 0..l.

The wire shape is the OpenAI-style completion request: POST of prompt plus
decoding parameters, response carrying per-position ``top_logprobs``.
"""

from __future__ import annotations

import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .errors import (
    EndpointUnreachable,
    InvalidConfig,
    MissingField,
    NoGradeTokenFound,
    UnknownGrade,
    ZeroMass,
)
from .trec_io import Pair, ProbRecord, Topic, prob_record_to_json


def normalize_probabilities(raw: Mapping[int, float], max_grade: int) -> np.ndarray:
    """pi[k] = raw(k) / sum_j raw(j) over grades 0..max_grade.

    Absent grades contribute 0.  Raises ZeroMass when no grade carries
    positive mass and UnknownGrade for keys outside the declared range.
    """
    pi = np.zeros(max_grade + 1)
    for grade, mass in raw.items():
        if not 0 <= grade <= max_grade:
            raise UnknownGrade(f"grade {grade} outside 0..{max_grade}")
        if mass < 0:
            raise ZeroMass(f"negative mass {mass} for grade {grade}")
        pi[grade] = mass
    total = pi.sum()
    if total <= 0:
        raise ZeroMass("no grade has positive mass")
    return pi / total


# --- prompts -------------------------------------------------------------------

_PLACEHOLDERS = {"topic_title", "topic_description", "document_text", "grade_list"}


@dataclass(frozen=True)
class PromptTemplate:
    """A prompt with named placeholders, loaded from a plain-text file.

    Recognized placeholders: {topic_title}, {topic_description},
    {document_text}, {grade_list}.
    """

    id: str
    template_text: str
    # position marker for prompts that reason before answering; None means
    # the grade is the first generated token
    answer_marker: str | None = None

    @classmethod
    def from_file(cls, path: str | Path, id: str | None = None,
                  answer_marker: str | None = None) -> "PromptTemplate":
        path = Path(path)
        return cls(id or path.stem, path.read_text(encoding="utf-8"), answer_marker)


BASE_TEMPLATE = PromptTemplate(
    "base",
    "Topic: {topic_title}\n"
    "Description: {topic_description}\n"
    "Document: {document_text}\n"
    "On a scale of {grade_list}, where higher means more relevant, "
    "the relevance grade of this document to the topic is: ",
)


def grade_list_text(max_grade: int) -> str:
    return ", ".join(str(g) for g in range(max_grade + 1))


def render_prompt(template: PromptTemplate, topic: Topic, document_text: str,
                  max_grade: int) -> str:
    """Substitute placeholders; deterministic, no placeholder may survive."""
    if not topic.title.strip():
        raise MissingField(f"topic {topic.topic_id} has empty title")
    if not document_text.strip():
        raise MissingField(f"empty document text for topic {topic.topic_id}")
    values = {
        "topic_title": topic.title,
        "topic_description": topic.description,
        "document_text": document_text,
        "grade_list": grade_list_text(max_grade),
    }
    try:
        return template.template_text.format(**values)
    except (KeyError, IndexError) as exc:
        raise MissingField(f"unresolvable placeholder {exc} in template {template.id!r}") from None


# --- decoding and transport -----------------------------------------------------

@dataclass(frozen=True)
class DecodingConfig:
    temperature: float = 3.0
    top_k: int = 50
    max_tokens: int = 16

    def validate(self, max_grade: int) -> None:
        if self.temperature <= 0:
            raise InvalidConfig(f"temperature must be > 0, got {self.temperature}")
        if self.top_k < max_grade + 1:
            raise InvalidConfig(
                f"top_k={self.top_k} cannot cover {max_grade + 1} grade tokens"
            )
        if self.max_tokens < 1:
            raise InvalidConfig("max_tokens must be positive")


@dataclass
class Completion:
    """Generated tokens plus the top-k logprob map at each position."""

    tokens: list[str]
    top_logprobs: list[dict[str, float]]


# transport: request payload -> decoded response body; swapped out in tests
Transport = Callable[[dict], dict]

_TRANSIENT_STATUSES = {429, 500, 502, 503, 504}


class CompletionClient:
    """Minimal completion-endpoint client with retry and backoff.

    Transient failures (connection errors, timeouts, 429/5xx) are retried
    with exponential backoff up to ``max_attempts`` total tries.
    """

    def __init__(
        self,
        endpoint: str,
        model_id: str = "default",
        token: str | None = None,
        timeout: float = 60.0,
        max_attempts: int = 3,
        backoff: float = 0.5,
        transport: Transport | None = None,
    ):
        self.endpoint = endpoint
        self.model_id = model_id
        self.token = token
        self.timeout = timeout
        self.max_attempts = max_attempts
        self.backoff = backoff
        self._transport = transport or self._http_transport

    def _http_transport(self, payload: dict) -> dict:
        import httpx

        headers = {"Content-Type": "application/json"}
        if self.token:
            headers["Authorization"] = f"Bearer {self.token}"
        try:
            resp = httpx.post(self.endpoint, json=payload, headers=headers,
                              timeout=self.timeout)
        except httpx.HTTPError as exc:
            raise EndpointUnreachable(f"{self.endpoint}: {exc}") from None
        if resp.status_code in _TRANSIENT_STATUSES:
            raise EndpointUnreachable(f"{self.endpoint}: HTTP {resp.status_code}")
        if resp.status_code != 200:
            # permanent: wrong auth, bad request; retrying will not help
            raise _PermanentFailure(f"{self.endpoint}: HTTP {resp.status_code}")
        return resp.json()

    def complete(self, prompt: str, config: DecodingConfig) -> Completion:
        payload = {
            "model": self.model_id,
            "prompt": prompt,
            "max_tokens": config.max_tokens,
            "temperature": config.temperature,
            "logprobs": config.top_k,
        }
        last_error: Exception | None = None
        for attempt in range(self.max_attempts):
            if attempt and self.backoff:
                time.sleep(self.backoff * 2 ** (attempt - 1))
            try:
                body = self._transport(payload)
                return self._parse(body)
            except _PermanentFailure as exc:
                raise EndpointUnreachable(str(exc)) from None
            except EndpointUnreachable as exc:
                last_error = exc
        raise EndpointUnreachable(
            f"{self.endpoint}: gave up after {self.max_attempts} attempts ({last_error})"
        )

    @staticmethod
    def _parse(body: dict) -> Completion:
        try:
            logprobs = body["choices"][0]["logprobs"]
            tokens = [str(t) for t in logprobs["tokens"]]
            top = [dict(pos) for pos in logprobs["top_logprobs"]]
        except (KeyError, IndexError, TypeError):
            raise EndpointUnreachable("response lacks token logprobs") from None
        return Completion(tokens=tokens, top_logprobs=top)


class _PermanentFailure(Exception):
    pass


# --- grade extraction ------------------------------------------------------------

def default_grade_tokens(max_grade: int) -> dict[int, tuple[str, ...]]:
    """Surface forms per grade: bare digit, leading-space digit, quoted digit.

    Tokenizers differ in how they carve these; all variants are summed.
    """
    return {
        g: (str(g), f" {g}", f'"{g}"') for g in range(max_grade + 1)
    }


def _as_variant_map(grade_tokens: Mapping[int, str | Sequence[str]]) -> dict[int, tuple[str, ...]]:
    out: dict[int, tuple[str, ...]] = {}
    for grade, forms in grade_tokens.items():
        if isinstance(forms, str):
            out[grade] = (forms,)
        else:
            out[grade] = tuple(forms)
    return out


def extract_grade_probs(
    top_logprobs: Mapping[str, float],
    grade_tokens: Mapping[int, str | Sequence[str]],
) -> dict[int, float]:
    """Sum exp(logprob) over each grade's surface variants at one position."""
    variants = _as_variant_map(grade_tokens)
    raw: dict[int, float] = {}
    for grade, forms in variants.items():
        mass = sum(math.exp(top_logprobs[f]) for f in forms if f in top_logprobs)
        if mass > 0:
            raw[grade] = mass
    if not raw:
        raise NoGradeTokenFound(
            f"no grade token among {len(top_logprobs)} candidates"
        )
    return raw


def _marker_position(completion: Completion, marker: str) -> int:
    """Index of the first token starting at or after the answer marker."""
    text = "".join(completion.tokens)
    idx = text.find(marker)
    if idx < 0:
        raise NoGradeTokenFound(f"answer marker {marker!r} not generated")
    end = idx + len(marker)
    offset = 0
    for pos, tok in enumerate(completion.tokens):
        if offset >= end:
            return pos
        offset += len(tok)
    raise NoGradeTokenFound(f"nothing generated after answer marker {marker!r}")


def fetch_grade_probs(
    client: CompletionClient,
    config: DecodingConfig,
    prompt: str,
    grade_tokens: Mapping[int, str | Sequence[str]],
    answer_marker: str | None = None,
) -> dict[int, float]:
    """One endpoint call -> raw grade masses at the grade position.

    The grade is read off the first generated position, or the position
    following ``answer_marker`` for prompts that reason before answering.
    """
    completion = client.complete(prompt, config)
    if not completion.top_logprobs:
        raise NoGradeTokenFound("empty completion")
    pos = 0 if answer_marker is None else _marker_position(completion, answer_marker)
    if pos >= len(completion.top_logprobs):
        raise NoGradeTokenFound("no logprobs at the grade position")
    return extract_grade_probs(completion.top_logprobs[pos], grade_tokens)


# --- batch annotation -------------------------------------------------------------

@dataclass(frozen=True)
class AnnotationFailure:
    topic_id: str
    doc_id: str
    error: str


@dataclass
class BatchResult:
    records: list[ProbRecord]
    failures: list[AnnotationFailure] = field(default_factory=list)
    endpoint_calls: int = 0


def _load_cache(path: Path, max_grade: int) -> dict[Pair, ProbRecord]:
    from .trec_io import read_probs

    if not path.exists():
        return {}
    with open(path, encoding="utf-8") as fh:
        return {(r.topic_id, r.doc_id): r for r in read_probs(fh, max_grade)}


def batch_annotate(
    pairs: Sequence[Pair],
    client: CompletionClient,
    config: DecodingConfig,
    template: PromptTemplate,
    topics: Mapping[str, Topic],
    docs: Mapping[str, str],
    max_grade: int,
    cache_path: str | Path | None = None,
    grade_tokens: Mapping[int, str | Sequence[str]] | None = None,
    missing_grade_fallback: str = "uniform",
    parallel: int = 1,
) -> BatchResult:
    """Annotate every pair once, persisting each record as it completes.

    Pairs already present in the cache are not re-queried, so re-running a
    completed batch issues zero endpoint calls.  Per-pair failures go into
    the failure report instead of aborting the batch; failed pairs are not
    cached and will be retried on the next run.

    ``missing_grade_fallback`` decides what NoGradeTokenFound yields:
    "uniform" records a maximum-uncertainty vector (LARA will then surface
    the pair for human judgment early), "skip" reports it as a failure.
    """
    if missing_grade_fallback not in ("uniform", "skip"):
        raise InvalidConfig(f"unknown fallback {missing_grade_fallback!r}")
    config.validate(max_grade)
    tokens = grade_tokens or default_grade_tokens(max_grade)

    cache: dict[Pair, ProbRecord] = {}
    cache_file = Path(cache_path) if cache_path is not None else None
    if cache_file is not None:
        cache = _load_cache(cache_file, max_grade)

    result = BatchResult(records=[], failures=[])
    todo: list[Pair] = []
    for pair in pairs:
        if pair in cache:
            result.records.append(cache[pair])
        else:
            todo.append(pair)

    def annotate_one(pair: Pair) -> ProbRecord:
        topic_id, doc_id = pair
        if topic_id not in topics:
            raise MissingField(f"unknown topic {topic_id}")
        if doc_id not in docs:
            raise MissingField(f"unknown document {doc_id}")
        prompt = render_prompt(template, topics[topic_id], docs[doc_id], max_grade)
        try:
            raw = fetch_grade_probs(client, config, prompt, tokens,
                                    answer_marker=template.answer_marker)
        except NoGradeTokenFound:
            if missing_grade_fallback == "skip":
                raise
            raw = {g: 1.0 / (max_grade + 1) for g in range(max_grade + 1)}
        pi = normalize_probabilities(raw, max_grade)
        return ProbRecord(topic_id, doc_id, raw, tuple(float(x) for x in pi),
                          prompt_id=template.id, model_id=client.model_id)

    def commit(pair: Pair, outcome: ProbRecord | Exception) -> None:
        # single-writer append: only this loop touches the cache file
        if isinstance(outcome, Exception):
            result.failures.append(
                AnnotationFailure(pair[0], pair[1], f"{type(outcome).__name__}: {outcome}")
            )
            return
        result.records.append(outcome)
        if cache_file is not None:
            with open(cache_file, "a", encoding="utf-8") as fh:
                fh.write(prob_record_to_json(outcome) + "\n")
                fh.flush()

    if parallel <= 1:
        for pair in todo:
            result.endpoint_calls += 1
            try:
                commit(pair, annotate_one(pair))
            except (EndpointUnreachable, NoGradeTokenFound, MissingField, ZeroMass) as exc:
                commit(pair, exc)
    else:
        with ThreadPoolExecutor(max_workers=parallel) as pool:
            futures = [(pair, pool.submit(annotate_one, pair)) for pair in todo]
            result.endpoint_calls += len(futures)
            for pair, fut in futures:
                try:
                    commit(pair, fut.result())
                except (EndpointUnreachable, NoGradeTokenFound, MissingField, ZeroMass) as exc:
                    commit(pair, exc)

    return result


def write_failures(failures: Iterable[AnnotationFailure], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for f in failures:
            fh.write(json.dumps(
                {"topic": f.topic_id, "doc": f.doc_id, "error": f.error},
                sort_keys=True) + "\n")
