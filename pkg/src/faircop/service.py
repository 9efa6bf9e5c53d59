"""HTTP session service: the engine behind a small JSON API.

Sessions are owned server-side; clients see opaque session ids. Every
feedback round is appended to a per-session JSONL event log together with a
header recording the engine config and seed, so a restarted service rebuilds
every open session by replaying its log (training included, which is
deterministic given the seed).

Environment overrides: FAIRCOP_ADDR (host:port), FAIRCOP_CORPUS,
FAIRCOP_IMAGE_ROOT.
"""

from __future__ import annotations

import json
import logging
import mimetypes
import os
import secrets
import threading
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

from fastapi import FastAPI, Request, Response
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse

from . import engine as engine_mod
from .corpus import Corpus, CorpusError, load_corpus
from .engine import EngineConfig, SessionState

logger = logging.getLogger("faircop.service")

DEFAULT_HUMAN_MAX_ITERATIONS = 30


@dataclass
class ServiceConfig:
    host: str = "127.0.0.1"
    port: int = 8765
    corpus_path: str | None = None
    image_root: str | None = None
    storage_dir: str | None = None
    engine: EngineConfig = field(default_factory=lambda: EngineConfig(
        max_iterations=DEFAULT_HUMAN_MAX_ITERATIONS))
    allowed_origins: list[str] = field(default_factory=list)
    session_idle_timeout_s: float = 3600.0

    @staticmethod
    def from_file(path) -> "ServiceConfig":
        data = json.loads(Path(path).read_text())
        engine_kwargs = data.pop("engine", {})
        if "hidden_dims" in engine_kwargs:
            engine_kwargs["hidden_dims"] = tuple(engine_kwargs["hidden_dims"])
        cfg = ServiceConfig(engine=EngineConfig(
            max_iterations=DEFAULT_HUMAN_MAX_ITERATIONS, **engine_kwargs))
        for key, value in data.items():
            if not hasattr(cfg, key):
                raise ValueError(f"unknown service config key {key!r}")
            setattr(cfg, key, value)
        return cfg

    def apply_env(self) -> "ServiceConfig":
        addr = os.environ.get("FAIRCOP_ADDR")
        if addr:
            host, _, port = addr.rpartition(":")
            self.host = host or self.host
            self.port = int(port)
        self.corpus_path = os.environ.get("FAIRCOP_CORPUS", self.corpus_path)
        self.image_root = os.environ.get("FAIRCOP_IMAGE_ROOT", self.image_root)
        return self


@dataclass
class SessionRecord:
    session_id: str
    state: SessionState
    constraints: dict
    created_at: float
    updated_at: float
    last_batch: list[str]
    lock: threading.Lock = field(default_factory=threading.Lock)


def _batch_payload(corpus: Corpus, batch: list[str]) -> list[dict]:
    items = []
    for record_id in batch:
        rec = corpus.record(record_id)
        items.append({"id": rec.id, "image_uri": rec.image_uri,
                      "attributes": rec.attributes})
    return items


class SessionStore:
    """In-memory session table with JSONL persistence per session.

    Sessions idle beyond the configured timeout are evicted from memory when
    persistence is on; a later request restores them by replaying their log.
    """

    def __init__(self, corpus: Corpus, base_cfg: EngineConfig,
                 storage_dir: str | None, idle_timeout_s: float = 3600.0):
        self.corpus = corpus
        self.base_cfg = base_cfg
        self.storage = Path(storage_dir) if storage_dir else None
        self.idle_timeout_s = idle_timeout_s
        self.sessions: dict[str, SessionRecord] = {}
        self._table_lock = threading.Lock()
        self._restore_lock = threading.Lock()
        if self.storage:
            self.storage.mkdir(parents=True, exist_ok=True)
            self._restore_all()

    # -- persistence -------------------------------------------------------

    def _log_path(self, session_id: str) -> Path:
        return self.storage / f"{session_id}.jsonl"

    def _append(self, session_id: str, entry: dict) -> None:
        if not self.storage:
            return
        with open(self._log_path(session_id), "a") as fh:
            fh.write(json.dumps(entry, sort_keys=True) + "\n")

    def _restore_all(self) -> None:
        for path in sorted(self.storage.glob("*.jsonl")):
            try:
                self._restore_one(path)
            except Exception:
                logger.exception("could not restore session from %s", path)

    def evict_idle(self) -> int:
        """Drop in-memory state for idle sessions; their logs remain."""
        if not self.storage:
            return 0
        cutoff = time.time() - self.idle_timeout_s
        evicted = 0
        with self._table_lock:
            for session_id in list(self.sessions):
                record = self.sessions[session_id]
                if record.updated_at < cutoff and not record.lock.locked():
                    del self.sessions[session_id]
                    evicted += 1
        if evicted:
            logger.info("evicted %d idle sessions", evicted)
        return evicted

    def _restore_one(self, path: Path) -> None:
        lines = [json.loads(line) for line in path.read_text().splitlines()
                 if line.strip()]
        if not lines or lines[0].get("type") != "created":
            return
        header = lines[0]
        cfg_kwargs = dict(header["engine_config"])
        cfg_kwargs["hidden_dims"] = tuple(cfg_kwargs.get("hidden_dims", ()))
        cfg = EngineConfig(**cfg_kwargs)
        state, batch = engine_mod.start_session(self.corpus,
                                                header["constraints"], cfg)
        closed_status = None
        for entry in lines[1:]:
            if entry["type"] == "feedback":
                result = engine_mod.submit_feedback(state, entry["similar_ids"])
                if result["status"] == engine_mod.STATUS_ACTIVE:
                    batch = result["batch"]
                else:
                    batch = []
            elif entry["type"] == "report":
                engine_mod.report_target(state, entry["image_id"])
                closed_status = engine_mod.STATUS_CONVERGED
        record = SessionRecord(
            session_id=header["session_id"], state=state,
            constraints=dict(header["constraints"]),
            created_at=header["created_at"], updated_at=time.time(),
            last_batch=batch)
        if closed_status:
            state.status = closed_status
        self.sessions[record.session_id] = record
        logger.info("restored session %s at iteration %d",
                    record.session_id, state.iteration)

    # -- operations ---------------------------------------------------------

    def create(self, constraints: dict, config_overrides: dict | None,
               seed: int | None) -> tuple[SessionRecord, list[str]]:
        cfg = self.base_cfg
        if config_overrides:
            allowed = {f for f in EngineConfig.__dataclass_fields__}
            unknown = set(config_overrides) - allowed
            if unknown:
                raise ValueError(f"unknown config overrides: {sorted(unknown)}")
            if "hidden_dims" in config_overrides:
                config_overrides = dict(config_overrides)
                config_overrides["hidden_dims"] = tuple(config_overrides["hidden_dims"])
            cfg = replace(cfg, **config_overrides)
        if seed is None:
            seed = secrets.randbits(63)
        cfg = replace(cfg, seed=int(seed))
        state, batch = engine_mod.start_session(self.corpus, constraints, cfg)
        session_id = secrets.token_hex(16)
        now = time.time()
        record = SessionRecord(session_id=session_id, state=state,
                               constraints=dict(constraints or {}),
                               created_at=now, updated_at=now, last_batch=batch)
        with self._table_lock:
            self.sessions[session_id] = record
        cfg_dict = asdict(cfg)
        cfg_dict["hidden_dims"] = list(cfg.hidden_dims)
        self._append(session_id, {
            "type": "created", "session_id": session_id, "created_at": now,
            "constraints": record.constraints, "engine_config": cfg_dict})
        return record, batch

    def get(self, session_id: str) -> SessionRecord | None:
        self.evict_idle()
        with self._table_lock:
            record = self.sessions.get(session_id)
        if record is not None:
            return record
        if self.storage:
            path = self._log_path(session_id)
            if path.exists():
                with self._restore_lock:
                    with self._table_lock:
                        record = self.sessions.get(session_id)
                    if record is not None:
                        return record
                    try:
                        self._restore_one(path)
                    except Exception:
                        logger.exception("could not restore session from %s", path)
                with self._table_lock:
                    return self.sessions.get(session_id)
        return None


def create_app(config: ServiceConfig, corpus: Corpus | None = None) -> FastAPI:
    if corpus is None:
        if not config.corpus_path:
            raise ValueError("a corpus path is required")
        corpus = load_corpus(config.corpus_path)
    store = SessionStore(corpus, config.engine, config.storage_dir,
                         idle_timeout_s=config.session_idle_timeout_s)
    app = FastAPI(title="faircop session service")
    app.state.store = store
    app.state.config = config
    if config.allowed_origins:
        app.add_middleware(CORSMiddleware, allow_origins=config.allowed_origins,
                           allow_methods=["*"], allow_headers=["*"])

    def error(status: int, message: str, **extra) -> JSONResponse:
        return JSONResponse(status_code=status,
                            content={"error": message, **extra})

    @app.middleware("http")
    async def request_log(request: Request, call_next):
        started = time.perf_counter()
        response = await call_next(request)
        logger.info("%s %s -> %d (%.1f ms)", request.method,
                    request.url.path, response.status_code,
                    1000 * (time.perf_counter() - started))
        return response

    @app.get("/v1/healthz")
    def healthz():
        return {"status": "ok", "records": len(corpus)}

    @app.post("/v1/sessions", status_code=201)
    async def create_session(request: Request):
        body = await request.json()
        constraints = body.get("constraints") or {}
        overrides = body.get("config_overrides")
        seed = body.get("seed")
        try:
            matches = corpus.matching_indices(constraints)
        except CorpusError as exc:
            return error(400, str(exc))
        if not matches:
            return error(404, "no records match the given constraints",
                         constraints=constraints)
        try:
            record, batch = store.create(constraints, overrides, seed)
        except (ValueError, CorpusError) as exc:
            return error(400, str(exc))
        return JSONResponse(status_code=201, content={
            "session_id": record.session_id,
            "iteration": 0,
            "batch": _batch_payload(corpus, batch),
        })

    @app.post("/v1/sessions/{session_id}/feedback")
    async def feedback(session_id: str, request: Request):
        record = store.get(session_id)
        if record is None:
            return error(404, "unknown session")
        body = await request.json()
        similar_ids = body.get("similar_ids", [])
        if not isinstance(similar_ids, list):
            return error(422, "similar_ids must be a list of id strings")
        with record.lock:
            if record.state.status != engine_mod.STATUS_ACTIVE:
                return error(409, f"session is {record.state.status}")
            try:
                result = engine_mod.submit_feedback(record.state, similar_ids)
            except engine_mod.FeedbackError as exc:
                offenders = sorted(set(similar_ids) - set(record.last_batch))
                return error(422, str(exc), offenders=offenders)
            store._append(session_id, {"type": "feedback",
                                       "similar_ids": list(similar_ids),
                                       "at": time.time()})
            record.updated_at = time.time()
            if result["status"] != engine_mod.STATUS_ACTIVE:
                record.last_batch = []
                return {"status": result["status"],
                        "iteration": result["iteration"]}
            record.last_batch = result["batch"]
            payload = {
                "status": engine_mod.STATUS_ACTIVE,
                "iteration": result["iteration"],
                "batch": _batch_payload(corpus, result["batch"]),
                "trained": result["trained"],
            }
            if result["loss"] is not None:
                payload["loss"] = result["loss"]
            return payload

    @app.post("/v1/sessions/{session_id}/report")
    async def report(session_id: str, request: Request):
        record = store.get(session_id)
        if record is None:
            return error(404, "unknown session")
        body = await request.json()
        image_id = body.get("image_id")
        with record.lock:
            if record.state.status != engine_mod.STATUS_ACTIVE:
                return error(409, f"session is {record.state.status}")
            try:
                result = engine_mod.report_target(record.state, image_id)
            except engine_mod.FeedbackError as exc:
                return error(422, str(exc))
            store._append(session_id, {"type": "report", "image_id": image_id,
                                       "at": time.time()})
            record.updated_at = time.time()
            n = result["iterations"]
            max_iter = record.state.config.max_iterations
            from .metrics import convergence_score
            return {
                "status": "converged",
                "iterations": n,
                "convergence_score": convergence_score(n, max_iter, True),
            }

    @app.get("/v1/sessions/{session_id}")
    def snapshot(session_id: str):
        record = store.get(session_id)
        if record is None:
            return error(404, "unknown session")
        with record.lock:
            state = record.state
            return {
                "status": state.status,
                "iteration": state.iteration,
                "counts": {
                    "similar": len(state.similar_all),
                    "dissimilar": len(state.dissimilar_all),
                    "remaining": len(state.unseen),
                },
                "last_batch": _batch_payload(corpus, record.last_batch),
            }

    @app.get("/v1/images/{image_id}")
    def image(image_id: str):
        if "/" in image_id or "\\" in image_id or ".." in image_id:
            return error(400, "invalid image id")
        try:
            rec = corpus.record(image_id)
        except KeyError:
            return error(404, "unknown image id")
        if not config.image_root or not rec.image_uri:
            return error(404, "image has no local file")
        root = Path(config.image_root).resolve()
        path = (root / rec.image_uri).resolve()
        if not str(path).startswith(str(root) + os.sep):
            return error(400, "image path escapes the image root")
        if not path.is_file():
            return error(404, "image file not found")
        media_type = mimetypes.guess_type(path.name)[0] or "application/octet-stream"
        return Response(content=path.read_bytes(), media_type=media_type)

    return app


def serve(config: ServiceConfig) -> None:
    """Blocking uvicorn runner used by the CLI; request logs go to stdout."""
    import sys

    import uvicorn

    logging.basicConfig(level=logging.INFO, stream=sys.stdout,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    app = create_app(config)
    uvicorn.run(app, host=config.host, port=config.port, log_level="info")
