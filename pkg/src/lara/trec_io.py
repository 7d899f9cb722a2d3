"""Readers and writers for the on-disk artifacts.

Formats handled here:

* qrels           -- ``topic iter doc grade``, whitespace separated
* runs            -- ``topic Q0 doc rank score tag`` (ranks are recomputed
                     from scores; the score is authoritative)
* prob records    -- JSON object per line with keys ``topic``, ``doc``,
                     ``probs`` (grade string -> number), ``prompt_id``,
                     ``model_id``
* manifest        -- TOML file declaring the collection name, grade range
                     and file paths
* judgment log    -- JSON object per line, append only; replay reconstructs
                     the judged set of an interrupted session
* topic/doc text  -- JSON object per line text stores

All parsers are pure functions over line iterables and safe for concurrent
use on distinct streams.  The judgment log has a single-writer contract per
session.
"""

from __future__ import annotations

import io
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Sequence, TextIO

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import (
    DuplicateDoc,
    DuplicatePair,
    IncompleteLabels,
    InvalidConfig,
    MalformedLine,
    NegativeGrade,
    UnknownGrade,
    ZeroMass,
)

# A judgment pair is identified by (topic_id, doc_id).
Pair = tuple[str, str]


@dataclass(frozen=True)
class QrelsRecord:
    topic_id: str
    doc_id: str
    grade: int


@dataclass(frozen=True)
class RunRecord:
    topic_id: str
    doc_id: str
    rank: int
    score: float
    system_tag: str


@dataclass(frozen=True)
class ProbRecord:
    topic_id: str
    doc_id: str
    raw_grade_probs: dict[int, float]
    pi: tuple[float, ...]
    prompt_id: str = "base"
    model_id: str = "unknown"


@dataclass(frozen=True)
class Topic:
    topic_id: str
    title: str
    description: str = ""


@dataclass(frozen=True)
class JudgmentLogEntry:
    session_id: str
    seq: int
    topic_id: str
    doc_id: str
    grade: int
    assessor_id: str
    timestamp: str  # UTC instant, ISO 8601


def _lines(stream: Iterable[str] | str) -> Iterator[str]:
    if isinstance(stream, str):
        return iter(stream.splitlines())
    return iter(stream)


# --- qrels -------------------------------------------------------------------

def parse_qrels(stream: Iterable[str] | str) -> list[QrelsRecord]:
    """Parse qrels lines; the iteration field is discarded.

    Raises MalformedLine, NegativeGrade or DuplicatePair.
    """
    records: list[QrelsRecord] = []
    seen: set[Pair] = set()
    for line_no, line in enumerate(_lines(stream), start=1):
        if not line.strip():
            continue
        fields = line.split()
        if len(fields) != 4:
            raise MalformedLine(line_no, f"expected 4 fields, got {len(fields)}")
        topic, _iteration, doc, grade_str = fields
        try:
            grade = int(grade_str)
        except ValueError:
            raise MalformedLine(line_no, f"grade {grade_str!r} is not an integer") from None
        if grade < 0:
            raise NegativeGrade(f"line {line_no}: grade {grade} < 0")
        if (topic, doc) in seen:
            raise DuplicatePair(f"line {line_no}: duplicate pair ({topic}, {doc})")
        seen.add((topic, doc))
        records.append(QrelsRecord(topic, doc, grade))
    return records


def write_qrels(
    labels: Mapping[Pair, int],
    sink: TextIO,
    universe: Iterable[Pair] | None = None,
) -> int:
    """Write 4-field qrels lines sorted by (topic, doc); returns bytes written.

    When ``universe`` is given, every pair in it must be labeled, otherwise
    IncompleteLabels is raised.
    """
    if universe is not None:
        missing = [p for p in universe if p not in labels]
        if missing:
            raise IncompleteLabels(
                f"{len(missing)} unlabeled pairs, first: {missing[0]}"
            )
    written = 0
    for (topic, doc) in sorted(labels):
        line = f"{topic} 0 {doc} {labels[(topic, doc)]}\n"
        sink.write(line)
        written += len(line.encode("utf-8"))
    return written


def load_qrels(path: str | Path) -> list[QrelsRecord]:
    with open(path, encoding="utf-8") as fh:
        return parse_qrels(fh)


# --- runs ----------------------------------------------------------------------

def normalize_ranks(records: Sequence[RunRecord]) -> list[RunRecord]:
    """Recompute ranks as 1..m per (system, topic) by descending score.

    Score ties break by doc_id ascending.  Idempotent.
    """
    by_group: dict[tuple[str, str], list[RunRecord]] = {}
    for rec in records:
        by_group.setdefault((rec.system_tag, rec.topic_id), []).append(rec)
    out: list[RunRecord] = []
    for group in by_group.values():
        group.sort(key=lambda r: (-r.score, r.doc_id))
        for rank, rec in enumerate(group, start=1):
            out.append(RunRecord(rec.topic_id, rec.doc_id, rank, rec.score, rec.system_tag))
    out.sort(key=lambda r: (r.system_tag, r.topic_id, r.rank))
    return out


def parse_run(stream: Iterable[str] | str) -> list[RunRecord]:
    """Parse run lines (``topic Q0 doc rank score tag``) and normalize ranks."""
    records: list[RunRecord] = []
    seen: set[tuple[str, str, str]] = set()
    for line_no, line in enumerate(_lines(stream), start=1):
        if not line.strip():
            continue
        fields = line.split()
        if len(fields) != 6:
            raise MalformedLine(line_no, f"expected 6 fields, got {len(fields)}")
        topic, _q0, doc, rank_str, score_str, tag = fields
        try:
            rank = int(rank_str)
            score = float(score_str)
        except ValueError:
            raise MalformedLine(line_no, "rank/score not numeric") from None
        key = (tag, topic, doc)
        if key in seen:
            raise DuplicateDoc(f"line {line_no}: duplicate doc {doc} in ({tag}, {topic})")
        seen.add(key)
        records.append(RunRecord(topic, doc, rank, score, tag))
    return normalize_ranks(records)


def write_run(records: Sequence[RunRecord], sink: TextIO) -> int:
    written = 0
    for rec in sorted(records, key=lambda r: (r.system_tag, r.topic_id, r.rank)):
        # repr keeps the score lossless so parse(write(x)) == x holds
        line = f"{rec.topic_id} Q0 {rec.doc_id} {rec.rank} {rec.score!r} {rec.system_tag}\n"
        sink.write(line)
        written += len(line.encode("utf-8"))
    return written


def load_runs(path: str | Path) -> list[RunRecord]:
    with open(path, encoding="utf-8") as fh:
        return parse_run(fh)


# --- probability records -----------------------------------------------------

def read_probs(stream: Iterable[str] | str, max_grade: int) -> list[ProbRecord]:
    """Read JSONL probability records, normalizing each to a grade vector.

    Missing grades are treated as mass 0.  Raises ZeroMass when a record has
    no positive mass and UnknownGrade when a key falls outside 0..max_grade.
    """
    # local import to avoid a cycle: llm needs nothing from here
    from .llm import normalize_probabilities

    records: list[ProbRecord] = []
    for line_no, line in enumerate(_lines(stream), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError:
            raise MalformedLine(line_no, "invalid JSON") from None
        try:
            raw = {int(k): float(v) for k, v in obj["probs"].items()}
        except (KeyError, ValueError, AttributeError):
            raise MalformedLine(line_no, "missing or malformed 'probs'") from None
        pi = normalize_probabilities(raw, max_grade)
        records.append(
            ProbRecord(
                topic_id=str(obj["topic"]),
                doc_id=str(obj["doc"]),
                raw_grade_probs=raw,
                pi=tuple(float(x) for x in pi),
                prompt_id=str(obj.get("prompt_id", "base")),
                model_id=str(obj.get("model_id", "unknown")),
            )
        )
    return records


def prob_record_to_json(rec: ProbRecord) -> str:
    return json.dumps(
        {
            "topic": rec.topic_id,
            "doc": rec.doc_id,
            "probs": {str(k): v for k, v in sorted(rec.raw_grade_probs.items())},
            "prompt_id": rec.prompt_id,
            "model_id": rec.model_id,
        },
        sort_keys=True,
    )


def write_probs(records: Sequence[ProbRecord], sink: TextIO) -> int:
    written = 0
    for rec in records:
        line = prob_record_to_json(rec) + "\n"
        sink.write(line)
        written += len(line.encode("utf-8"))
    return written


def load_probs(path: str | Path, max_grade: int) -> list[ProbRecord]:
    with open(path, encoding="utf-8") as fh:
        return read_probs(fh, max_grade)


# --- topic / document text stores ---------------------------------------------

def read_topics(stream: Iterable[str] | str) -> dict[str, Topic]:
    topics: dict[str, Topic] = {}
    for line_no, line in enumerate(_lines(stream), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            topic = Topic(str(obj["topic"]), str(obj["title"]), str(obj.get("description", "")))
        except (json.JSONDecodeError, KeyError):
            raise MalformedLine(line_no, "bad topic record") from None
        topics[topic.topic_id] = topic
    return topics


def write_topics(topics: Iterable[Topic], sink: TextIO) -> int:
    written = 0
    for t in sorted(topics, key=lambda t: t.topic_id):
        line = json.dumps(
            {"topic": t.topic_id, "title": t.title, "description": t.description},
            sort_keys=True,
        ) + "\n"
        sink.write(line)
        written += len(line.encode("utf-8"))
    return written


def read_docs(stream: Iterable[str] | str) -> dict[str, str]:
    docs: dict[str, str] = {}
    for line_no, line in enumerate(_lines(stream), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            docs[str(obj["doc"])] = str(obj["text"])
        except (json.JSONDecodeError, KeyError):
            raise MalformedLine(line_no, "bad doc record") from None
    return docs


def write_docs(docs: Mapping[str, str], sink: TextIO) -> int:
    written = 0
    for doc_id in sorted(docs):
        line = json.dumps({"doc": doc_id, "text": docs[doc_id]}, sort_keys=True) + "\n"
        sink.write(line)
        written += len(line.encode("utf-8"))
    return written


# --- manifest and collection ---------------------------------------------------

@dataclass
class Manifest:
    """Declares a collection: its name, grade range and file locations.

    ``max_grade`` is declared, never inferred from data: a qrels sample may
    simply lack examples of its top grade.
    """

    name: str
    max_grade: int
    qrels: str
    runs: str
    probs: str = ""
    topics: str = ""
    docs: str = ""


def _toml_str(value: str) -> str:
    return json.dumps(value)  # JSON string escaping is valid TOML


def write_manifest(manifest: Manifest, sink: TextIO) -> int:
    lines = [
        f"name = {_toml_str(manifest.name)}",
        f"max_grade = {manifest.max_grade}",
        f"qrels = {_toml_str(manifest.qrels)}",
        f"runs = {_toml_str(manifest.runs)}",
    ]
    if manifest.probs:
        lines.append(f"probs = {_toml_str(manifest.probs)}")
    if manifest.topics:
        lines.append(f"topics = {_toml_str(manifest.topics)}")
    if manifest.docs:
        lines.append(f"docs = {_toml_str(manifest.docs)}")
    text = "\n".join(lines) + "\n"
    sink.write(text)
    return len(text.encode("utf-8"))


def load_manifest(path: str | Path) -> Manifest:
    path = Path(path)
    try:
        data = tomllib.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise
    except tomllib.TOMLDecodeError as exc:
        raise InvalidConfig(f"{path}: {exc}") from None
    try:
        return Manifest(
            name=str(data["name"]),
            max_grade=int(data["max_grade"]),
            qrels=str(data["qrels"]),
            runs=str(data["runs"]),
            probs=str(data.get("probs", "")),
            topics=str(data.get("topics", "")),
            docs=str(data.get("docs", "")),
        )
    except KeyError as exc:
        raise InvalidConfig(f"{path}: missing manifest key {exc}") from None


@dataclass
class Collection:
    """A loaded test collection: ground truth, runs, LLM probabilities, texts."""

    name: str
    max_grade: int
    qrels: dict[Pair, int]
    runs: list[RunRecord]
    probs: dict[Pair, ProbRecord] = field(default_factory=dict)
    topics: dict[str, Topic] = field(default_factory=dict)
    docs: dict[str, str] = field(default_factory=dict)

    @property
    def pairs(self) -> list[Pair]:
        return sorted(self.qrels)

    def validate(self) -> None:
        for (topic, doc), grade in self.qrels.items():
            if not 0 <= grade <= self.max_grade:
                raise UnknownGrade(
                    f"qrels grade {grade} for ({topic}, {doc}) outside 0..{self.max_grade}"
                )
        for pair, rec in self.probs.items():
            if len(rec.pi) != self.max_grade + 1:
                raise UnknownGrade(
                    f"prob record for {pair} has {len(rec.pi)} grades, "
                    f"expected {self.max_grade + 1}"
                )


def load_collection(manifest_path: str | Path) -> Collection:
    manifest_path = Path(manifest_path)
    manifest = load_manifest(manifest_path)
    base = manifest_path.parent

    def resolve(rel: str) -> Path:
        p = Path(rel)
        return p if p.is_absolute() else base / p

    qrels = {(r.topic_id, r.doc_id): r.grade for r in load_qrels(resolve(manifest.qrels))}
    runs = load_runs(resolve(manifest.runs))
    probs: dict[Pair, ProbRecord] = {}
    if manifest.probs:
        for rec in load_probs(resolve(manifest.probs), manifest.max_grade):
            probs[(rec.topic_id, rec.doc_id)] = rec
    topics: dict[str, Topic] = {}
    if manifest.topics:
        with open(resolve(manifest.topics), encoding="utf-8") as fh:
            topics = read_topics(fh)
    docs: dict[str, str] = {}
    if manifest.docs:
        with open(resolve(manifest.docs), encoding="utf-8") as fh:
            docs = read_docs(fh)
    coll = Collection(manifest.name, manifest.max_grade, qrels, runs, probs, topics, docs)
    coll.validate()
    return coll


def write_collection(coll: Collection, out_dir: str | Path) -> Path:
    """Write a collection to a directory in the standard formats.

    Returns the manifest path.  Synthetic and real collections are
    indistinguishable on disk.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "qrels.txt", "w", encoding="utf-8") as fh:
        write_qrels(coll.qrels, fh)
    with open(out / "runs.txt", "w", encoding="utf-8") as fh:
        write_run(coll.runs, fh)
    manifest = Manifest(
        name=coll.name,
        max_grade=coll.max_grade,
        qrels="qrels.txt",
        runs="runs.txt",
    )
    if coll.probs:
        with open(out / "probs.jsonl", "w", encoding="utf-8") as fh:
            write_probs([coll.probs[p] for p in sorted(coll.probs)], fh)
        manifest.probs = "probs.jsonl"
    if coll.topics:
        with open(out / "topics.jsonl", "w", encoding="utf-8") as fh:
            write_topics(coll.topics.values(), fh)
        manifest.topics = "topics.jsonl"
    if coll.docs:
        with open(out / "docs.jsonl", "w", encoding="utf-8") as fh:
            write_docs(coll.docs, fh)
        manifest.docs = "docs.jsonl"
    manifest_path = out / "manifest.toml"
    with open(manifest_path, "w", encoding="utf-8") as fh:
        write_manifest(manifest, fh)
    return manifest_path


# --- judgment log ---------------------------------------------------------------

class JudgmentLog:
    """Append-only judgment log with replay recovery.

    One writer per session; every append is flushed so a crash loses at most
    the entry being written.
    """

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._next_seq: dict[str, int] = {}
        self._seen: set[tuple[str, str, str]] = set()
        if self.path.exists():
            for entry in self.replay():
                self._register(entry)

    def _register(self, entry: JudgmentLogEntry) -> None:
        key = (entry.session_id, entry.topic_id, entry.doc_id)
        if key in self._seen:
            raise DuplicatePair(f"duplicate judgment for {key}")
        expected = self._next_seq.get(entry.session_id, 0)
        if entry.seq < expected:
            raise MalformedLine(entry.seq, "non-increasing seq in judgment log")
        self._seen.add(key)
        self._next_seq[entry.session_id] = entry.seq + 1

    def next_seq(self, session_id: str) -> int:
        return self._next_seq.get(session_id, 0)

    def append(self, entry: JudgmentLogEntry) -> None:
        self._register(entry)
        with open(self.path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps({
                "session": entry.session_id,
                "seq": entry.seq,
                "topic": entry.topic_id,
                "doc": entry.doc_id,
                "grade": entry.grade,
                "assessor": entry.assessor_id,
                "ts": entry.timestamp,
            }, sort_keys=True) + "\n")
            fh.flush()

    def replay(self, session_id: str | None = None) -> list[JudgmentLogEntry]:
        if not self.path.exists():
            return []
        entries: list[JudgmentLogEntry] = []
        with open(self.path, encoding="utf-8") as fh:
            for line_no, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    obj = json.loads(line)
                    entry = JudgmentLogEntry(
                        session_id=str(obj["session"]),
                        seq=int(obj["seq"]),
                        topic_id=str(obj["topic"]),
                        doc_id=str(obj["doc"]),
                        grade=int(obj["grade"]),
                        assessor_id=str(obj["assessor"]),
                        timestamp=str(obj["ts"]),
                    )
                except (json.JSONDecodeError, KeyError, ValueError):
                    raise MalformedLine(line_no, "bad judgment log entry") from None
                if session_id is None or entry.session_id == session_id:
                    entries.append(entry)
        return entries

    def judged_pairs(self, session_id: str) -> dict[Pair, int]:
        """The annotated set of a session, reconstructed from the log."""
        return {
            (e.topic_id, e.doc_id): e.grade for e in self.replay(session_id)
        }


def qrels_to_string(labels: Mapping[Pair, int]) -> str:
    buf = io.StringIO()
    write_qrels(labels, buf)
    return buf.getvalue()
