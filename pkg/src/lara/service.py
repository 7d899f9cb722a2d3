"""HTTP facade for live annotation sessions.

The strategy proposes pairs, human assessors submit grades, the calibrator
updates, and progress/exports are queryable.  Sessions survive crashes: every
accepted judgment is appended to a per-session log before any in-memory state
changes (write-ahead), and recovery replays the log through a freshly built
strategy, which reproduces its state exactly because strategies are
deterministic in the judgment sequence.

The core is plain Python (LaraService); the HTTP layer is a thin adapter so
tests and the offline engine can drive the same object directly.
"""

import json
import threading
import time
import uuid
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Mapping

from .calibration import Calibrator, IdentityCalibrator, calibration_curve
from .errors import (
    DoubleObserve,
    Exhausted,
    GradeOutOfRange,
    GroupBudgetExhausted,
    InvalidConfig,
    LaraError,
    NoPendingAssignment,
    SessionNotFinalizable,
    SessionNotFound,
    StaleAssignment,
    UnknownCollection,
)
from .strategies import FinalLabels, JudgmentPool, Strategy, make_strategy
from .trec_io import (
    Collection,
    JudgmentLog,
    JudgmentLogEntry,
    Pair,
    load_collection,
    qrels_to_string,
)

DEFAULT_LEASE_SECONDS = 30 * 60

# strategies that understand the n-assessor grouping plan
_GROUPED_KINDS = {"lara", "naive"}


@dataclass
class Lease:
    assessor_id: str
    pair: Pair
    issued_at: float
    expires_at: float


@dataclass
class SessionRuntime:
    session_id: str
    collection: Collection
    pool: JudgmentPool
    strategy: Strategy
    log: JudgmentLog
    meta: dict
    dir: Path
    lock: threading.Lock = field(default_factory=threading.Lock)
    leases: dict[str, Lease] = field(default_factory=dict)
    labels: FinalLabels | None = None

    @property
    def status(self) -> str:
        return self.meta["status"]

    def calibrator(self) -> Calibrator:
        return getattr(self.strategy, "calibrator", None) or IdentityCalibrator()


class LaraService:
    """All session logic, HTTP-free.

    Per-session mutations are serialized under the session lock; reads take
    cheap snapshots.  Collections resolve through the registry first, then
    as manifest paths if path loading is enabled.
    """

    def __init__(
        self,
        data_dir: str | Path,
        collections: Mapping[str, Collection] | None = None,
        lease_seconds: float = DEFAULT_LEASE_SECONDS,
        allow_manifest_paths: bool = True,
        clock: Callable[[], float] = time.time,
    ):
        self.data_dir = Path(data_dir)
        self.sessions_dir = self.data_dir / "sessions"
        self.sessions_dir.mkdir(parents=True, exist_ok=True)
        self.collections = dict(collections or {})
        self.lease_seconds = lease_seconds
        self.allow_manifest_paths = allow_manifest_paths
        self.clock = clock
        self._sessions: dict[str, SessionRuntime] = {}
        self._create_lock = threading.Lock()
        self.recover()

    # -- collection resolution --

    def _resolve_collection(self, ref: str) -> Collection:
        if ref in self.collections:
            return self.collections[ref]
        if self.allow_manifest_paths and Path(ref).exists():
            coll = load_collection(ref)
            return coll
        raise UnknownCollection(f"collection {ref!r} is neither registered nor a manifest path")

    # -- session lifecycle --

    def create_session(self, request: Mapping) -> dict:
        try:
            collection_ref = str(request["collection"])
            kind = str(request.get("strategy", "lara"))
            params = dict(request.get("params", {}))
            n = int(request.get("n", 1))
            budget = int(request["budget"])
            seed = int(request.get("seed", 0))
        except (KeyError, TypeError, ValueError) as exc:
            raise InvalidConfig(f"bad session request: {exc!r}") from None
        collection = self._resolve_collection(collection_ref)
        if n > 1:
            if kind not in _GROUPED_KINDS:
                raise InvalidConfig(f"strategy {kind!r} does not support n > 1")
            params["n_assessors"] = n

        session_id = str(request.get("session_id") or uuid.uuid4().hex[:12])
        with self._create_lock:
            if session_id in self._sessions:
                raise InvalidConfig(f"session {session_id!r} already exists")
            pool = JudgmentPool.from_collection(collection, budget, seed)
            strategy = make_strategy(kind, pool, **params)
            session_dir = self.sessions_dir / session_id
            session_dir.mkdir(parents=True, exist_ok=True)
            meta = {
                "session_id": session_id,
                "collection": collection_ref,
                "strategy": kind,
                "params": {k: v for k, v in params.items() if k != "n_assessors"},
                "n": n,
                "budget": budget,
                "seed": seed,
                "status": "active" if budget > 0 else "exhausted",
                "assessor_groups": {},
                "created_at": self._now_iso(),
            }
            runtime = SessionRuntime(
                session_id=session_id,
                collection=collection,
                pool=pool,
                strategy=strategy,
                log=JudgmentLog(session_dir / "log.jsonl"),
                meta=meta,
                dir=session_dir,
            )
            self._write_meta(runtime)
            self._sessions[session_id] = runtime
        return self.get_session(session_id)

    def _write_meta(self, runtime: SessionRuntime) -> None:
        path = runtime.dir / "meta.json"
        path.write_text(json.dumps(runtime.meta, sort_keys=True) + "\n", encoding="utf-8")

    def _now_iso(self) -> str:
        return datetime.fromtimestamp(self.clock(), tz=timezone.utc).isoformat()

    def _session(self, session_id: str) -> SessionRuntime:
        runtime = self._sessions.get(session_id)
        if runtime is None:
            raise SessionNotFound(f"no session {session_id!r}")
        return runtime

    def get_session(self, session_id: str) -> dict:
        rt = self._session(session_id)
        groups = []
        plan = getattr(rt.strategy, "plan", None)
        if plan is not None:
            spent = getattr(rt.strategy, "_group_spent", [0] * plan.n)
            budgets = getattr(rt.strategy, "_group_budgets", list(plan.group_budgets))
            for g in range(plan.n):
                groups.append({
                    "group": g,
                    "topics": len(plan.groups[g]),
                    "budget": budgets[g],
                    "judged": spent[g],
                })
        return {
            "session_id": rt.session_id,
            "collection": rt.meta["collection"],
            "strategy": rt.meta["strategy"],
            "status": rt.status,
            "judged": len(rt.pool.judged),
            "budget": rt.pool.budget,
            "max_grade": rt.pool.max_grade,
            "n": rt.meta["n"],
            "groups": groups,
            "assessor_groups": dict(rt.meta["assessor_groups"]),
        }

    def recover(self) -> None:
        """Rebuild every persisted session by replaying its judgment log."""
        if not self.sessions_dir.exists():
            return
        for meta_path in sorted(self.sessions_dir.glob("*/meta.json")):
            meta = json.loads(meta_path.read_text(encoding="utf-8"))
            session_id = meta["session_id"]
            if session_id in self._sessions:
                continue
            collection = self._resolve_collection(meta["collection"])
            params = dict(meta.get("params", {}))
            if meta.get("n", 1) > 1:
                params["n_assessors"] = meta["n"]
            pool = JudgmentPool.from_collection(collection, meta["budget"], meta["seed"])
            strategy = make_strategy(meta["strategy"], pool, **params)
            log = JudgmentLog(meta_path.parent / "log.jsonl")
            for entry in log.replay(session_id):
                strategy.observe((entry.topic_id, entry.doc_id), entry.grade)
            runtime = SessionRuntime(
                session_id=session_id,
                collection=collection,
                pool=pool,
                strategy=strategy,
                log=log,
                meta=meta,
                dir=meta_path.parent,
            )
            if meta["status"] != "finalized" and self._spent(runtime):
                runtime.meta["status"] = "exhausted"
            self._sessions[session_id] = runtime

    def _spent(self, rt: SessionRuntime) -> bool:
        return len(rt.pool.judged) >= min(rt.pool.budget, len(rt.pool.pairs))

    # -- assignment flow --

    def _group_for(self, rt: SessionRuntime, assessor_id: str) -> int:
        groups: dict = rt.meta["assessor_groups"]
        if assessor_id in groups:
            return int(groups[assessor_id])
        if len(groups) >= rt.meta["n"]:
            raise InvalidConfig(
                f"all {rt.meta['n']} assessor groups are taken; "
                f"known assessors: {sorted(groups)}"
            )
        groups[assessor_id] = len(groups)
        self._write_meta(rt)
        return groups[assessor_id]

    def _active_group(self, rt: SessionRuntime) -> int:
        if hasattr(rt.strategy, "active_group"):
            return rt.strategy.active_group()
        return 0

    def next_item(self, session_id: str, assessor_id: str) -> dict:
        rt = self._session(session_id)
        with rt.lock:
            if rt.status != "active":
                raise Exhausted(f"session is {rt.status}")
            group = self._group_for(rt, assessor_id)
            now = self.clock()

            lease = rt.leases.get(assessor_id)
            if lease is not None and lease.expires_at > now:
                return self._assignment_payload(rt, lease)
            if lease is not None:
                # expired: the pair silently returns to the pool
                del rt.leases[assessor_id]

            active = self._active_group(rt)
            if group != active:
                raise GroupBudgetExhausted(
                    f"group {group} is not active (active group: {active})"
                )
            try:
                pair = rt.strategy.next_pair()
            except Exhausted:
                rt.meta["status"] = "exhausted"
                self._write_meta(rt)
                raise
            lease = Lease(
                assessor_id=assessor_id,
                pair=pair,
                issued_at=now,
                expires_at=now + self.lease_seconds,
            )
            rt.leases[assessor_id] = lease
            return self._assignment_payload(rt, lease)

    def _assignment_payload(self, rt: SessionRuntime, lease: Lease) -> dict:
        topic_id, doc_id = lease.pair
        topic = rt.collection.topics.get(topic_id)
        return {
            "session_id": rt.session_id,
            "assessor_id": lease.assessor_id,
            "topic_id": topic_id,
            "doc_id": doc_id,
            "topic_title": topic.title if topic else topic_id,
            "topic_description": topic.description if topic else "",
            "document_text": rt.collection.docs.get(doc_id, doc_id),
            "grade_levels": list(range(rt.pool.max_grade + 1)),
            "lease_expires_at": lease.expires_at,
            "judged": len(rt.pool.judged),
            "budget": rt.pool.budget,
        }

    def submit_judgment(
        self, session_id: str, assessor_id: str, topic_id: str, doc_id: str, grade: int
    ) -> dict:
        rt = self._session(session_id)
        pair = (topic_id, doc_id)
        with rt.lock:
            lease = rt.leases.get(assessor_id)
            if lease is None:
                raise NoPendingAssignment(f"assessor {assessor_id!r} holds no assignment")
            if lease.expires_at <= self.clock():
                # the pair went back to the pool; the assessor must re-fetch
                del rt.leases[assessor_id]
                raise StaleAssignment(f"lease on {lease.pair} expired")
            if lease.pair != pair:
                # the old lease lapsed and a different pair was issued since
                raise StaleAssignment(
                    f"assignment for {pair} was superseded by {lease.pair}"
                )
            if pair in rt.pool.judged:
                raise DoubleObserve(f"{pair} already judged")
            if not 0 <= grade <= rt.pool.max_grade:
                raise GradeOutOfRange(
                    f"grade {grade} outside 0..{rt.pool.max_grade}"
                )
            # write-ahead: the log is the source of truth, state follows
            entry = JudgmentLogEntry(
                session_id=session_id,
                seq=rt.log.next_seq(session_id),
                topic_id=topic_id,
                doc_id=doc_id,
                grade=int(grade),
                assessor_id=assessor_id,
                timestamp=self._now_iso(),
            )
            rt.log.append(entry)
            rt.strategy.observe(pair, int(grade))
            del rt.leases[assessor_id]
            if self._spent(rt):
                rt.meta["status"] = "exhausted"
                self._write_meta(rt)
            return {
                "session_id": session_id,
                "status": rt.status,
                "judged": len(rt.pool.judged),
                "budget": rt.pool.budget,
                "remaining": rt.pool.remaining_budget(),
            }

    # -- finalization and export --

    def finalize(self, session_id: str, force: bool = False) -> dict:
        rt = self._session(session_id)
        with rt.lock:
            if rt.status == "finalized":
                return self._export_handle(rt)
            if rt.status != "exhausted" and not force:
                raise SessionNotFinalizable(
                    f"session is {rt.status}; pass force to finalize early"
                )
            rt.labels = rt.strategy.finalize()
            export_path = rt.dir / "export.qrels"
            export_path.write_text(
                qrels_to_string(rt.labels.all_labels()), encoding="utf-8"
            )
            rt.meta["status"] = "finalized"
            rt.meta["finalized_at"] = self._now_iso()
            self._write_meta(rt)
            return self._export_handle(rt)

    def _export_handle(self, rt: SessionRuntime) -> dict:
        labels = rt.labels
        if labels is None:
            # finalized in a previous process: labels are reproducible
            labels = rt.strategy.finalize()
            rt.labels = labels
        return {
            "session_id": rt.session_id,
            "status": rt.status,
            "export": f"/sessions/{rt.session_id}/export",
            "pairs": len(rt.pool.pairs),
            "human": len(labels.human),
            "predicted": len(labels.predicted),
        }

    def export_text(self, session_id: str) -> str:
        rt = self._session(session_id)
        if rt.status != "finalized":
            raise SessionNotFinalizable("finalize the session before exporting")
        return (rt.dir / "export.qrels").read_text(encoding="utf-8")

    def calibration_data(self, session_id: str) -> dict:
        rt = self._session(session_id)
        cal = rt.calibrator()
        curves = {
            str(grade): [
                [x, y] for x, y in calibration_curve(cal, rt.pool.max_grade, grade)
            ]
            for grade in range(rt.pool.max_grade + 1)
        }
        return {
            "session_id": session_id,
            "kind": cal.kind,
            "judged": len(rt.pool.judged),
            "curves": curves,
        }


# --- HTTP adapter ------------------------------------------------------------------

_STATUS_CODES: dict[type[LaraError], int] = {
    SessionNotFound: 404,
    UnknownCollection: 404,
    InvalidConfig: 400,
    GradeOutOfRange: 400,
    Exhausted: 409,
    GroupBudgetExhausted: 409,
    NoPendingAssignment: 409,
    StaleAssignment: 409,
    DoubleObserve: 409,
    SessionNotFinalizable: 409,
}


def _status_for(exc: LaraError) -> int:
    for klass in type(exc).__mro__:
        if klass in _STATUS_CODES:
            return _STATUS_CODES[klass]
    return 500


def build_app(service: LaraService, token: str | None = None):
    from fastapi import FastAPI, HTTPException, Request
    from fastapi.responses import JSONResponse, PlainTextResponse

    app = FastAPI(title="lara annotation service", docs_url=None, redoc_url=None)

    @app.exception_handler(LaraError)
    async def lara_error_handler(_request: Request, exc: LaraError):
        return JSONResponse(
            status_code=_status_for(exc),
            content={"error": type(exc).__name__, "detail": str(exc)},
        )

    def check_token(request: Request) -> None:
        if token is None:
            return
        header = request.headers.get("authorization", "")
        if header != f"Bearer {token}":
            raise HTTPException(status_code=401, detail="missing or wrong bearer token")

    @app.post("/sessions")
    async def create_session(request: Request):
        check_token(request)
        body = await request.json()
        return service.create_session(body)

    @app.get("/sessions/{session_id}")
    async def get_session(session_id: str, request: Request):
        check_token(request)
        return service.get_session(session_id)

    @app.get("/sessions/{session_id}/next")
    async def next_item(session_id: str, assessor: str, request: Request):
        check_token(request)
        return service.next_item(session_id, assessor)

    @app.post("/sessions/{session_id}/judgments")
    async def submit_judgment(session_id: str, request: Request):
        check_token(request)
        body = await request.json()
        try:
            assessor = str(body["assessor"])
            topic_id = str(body["topic_id"])
            doc_id = str(body["doc_id"])
            grade = int(body["grade"])
        except (KeyError, TypeError, ValueError) as exc:
            raise InvalidConfig(f"bad judgment request: {exc!r}") from None
        return service.submit_judgment(session_id, assessor, topic_id, doc_id, grade)

    @app.post("/sessions/{session_id}/finalize")
    async def finalize(session_id: str, request: Request):
        check_token(request)
        force = False
        body = await request.body()
        if body:
            force = bool(json.loads(body).get("force", False))
        return service.finalize(session_id, force=force)

    @app.get("/sessions/{session_id}/export")
    async def export(session_id: str, request: Request):
        check_token(request)
        return PlainTextResponse(service.export_text(session_id))

    @app.get("/sessions/{session_id}/calibration")
    async def calibration(session_id: str, request: Request):
        check_token(request)
        return service.calibration_data(session_id)

    return app


def serve(
    data_dir: str | Path,
    listen: str = "127.0.0.1:8237",
    collections: Mapping[str, Collection] | None = None,
    token: str | None = None,
) -> None:  # pragma: no cover - exercised manually / by the UI
    import uvicorn

    host, _, port = listen.partition(":")
    service = LaraService(data_dir, collections=collections)
    app = build_app(service, token=token)
    uvicorn.run(app, host=host or "127.0.0.1", port=int(port or 8237), log_level="warning")
