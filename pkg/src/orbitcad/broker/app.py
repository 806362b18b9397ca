"""HTTP and WebSocket service for collaborative sessions.

Single process, many sessions. Each session has one logical writer: ops
arriving over any client channel are serialized per session, validated,
stamped with the next op_id, durably appended, folded into the
materialized state, and only then broadcast to every connected client
(sender included, the echo doubles as the ack). Ephemeral pose traffic
bypasses the log and is rate-limited per client.

REST covers projects, users, model upload/reduce/export, session CRUD
and thumbnail jobs. Errors are machine-readable:
``{"error": {"code": ..., "message": ...}}``.
"""

from __future__ import annotations

import asyncio
import contextlib
import hashlib
import json
import logging
import os
import re
import secrets
import time
from dataclasses import dataclass, field
from pathlib import Path

from fastapi import FastAPI, HTTPException, Request, Response, UploadFile, WebSocket
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from starlette.exceptions import HTTPException as StarletteHTTPException
from starlette.websockets import WebSocketDisconnect

from .. import container, meshio, modelstore, reduction
from ..png import encode_png
from ..renderer import sprite_sheet
from ..sessionlog import (
    ProtocolError,
    SessionOp,
    SessionState,
    apply_op,
    bundle_from_state,
    canonical_bytes,
    fold_ops,
    snapshot_ops,
    squash_state,
    state_hash,
    validate_body,
)
from .storage import SESSION_ID_RE, SegmentedLog, StorageError

log = logging.getLogger(__name__)

ROLE_RANK = {"viewer": 0, "member": 1, "admin": 2}
POSE_MIN_INTERVAL = 1.0 / 20.0  # pose fan-out capped at 20 Hz per client
SEND_QUEUE_LIMIT = 4096

EXPORT_MEDIA_TYPES = {
    "obj": "text/plain",
    "stl": "model/stl",
    "ply": "application/octet-stream",
    "gltf": "model/gltf+json",
    "glb": "model/gltf-binary",
}

WS_CLOSE_UNAUTHORIZED = 4401
WS_CLOSE_UNKNOWN_SESSION = 4404


def _err(status: int, code: str, message: str) -> HTTPException:
    return HTTPException(status_code=status, detail={"code": code, "message": message})


def _now_ms() -> int:
    return int(time.time() * 1000)


def _atomic_write_json(path: Path, doc) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    tmp.replace(path)


# ------------------------------------------------------------------ users


class UserStore:
    """Bearer tokens with roles, kept in data_dir/users.json. First start
    mints an admin account and logs its token once."""

    def __init__(self, path: Path):
        self.path = path
        self.users: list[dict] = []
        if path.exists():
            self.users = json.loads(path.read_text())["users"]
        else:
            token = secrets.token_hex(16)
            self.users = [{"name": "admin", "role": "admin", "token": token}]
            self._save()
            log.warning("created bootstrap admin user; token: %s", token)

    def _save(self) -> None:
        self.path.parent.mkdir(parents=True, exist_ok=True)
        _atomic_write_json(self.path, {"users": self.users})
        os.chmod(self.path, 0o600)

    def by_token(self, token: str) -> dict | None:
        for u in self.users:
            if secrets.compare_digest(u["token"], token):
                return u
        return None

    def create(self, name: str, role: str) -> dict:
        if role not in ROLE_RANK:
            raise _err(400, "bad_role", f"role must be one of {sorted(ROLE_RANK)}")
        if any(u["name"] == name for u in self.users):
            raise _err(409, "user_exists", f"user {name!r} already exists")
        user = {"name": name, "role": role, "token": secrets.token_hex(16)}
        self.users.append(user)
        self._save()
        return user


# --------------------------------------------------------------- sessions


@dataclass
class ClientConn:
    cid: str
    user: dict
    ws: WebSocket
    joined: bool
    queue: asyncio.Queue = field(default_factory=lambda: asyncio.Queue(maxsize=SEND_QUEUE_LIMIT))
    last_pose: float = 0.0

    def push(self, text: str) -> None:
        try:
            self.queue.put_nowait(text)
        except asyncio.QueueFull:
            # slow consumer: poison the queue so the sender task closes it
            while not self.queue.empty():
                try:
                    self.queue.get_nowait()
                except asyncio.QueueEmpty:
                    break
            self.queue.put_nowait(None)


class LiveSession:
    def __init__(self, session_id: str, store: SegmentedLog, state: SessionState):
        self.session_id = session_id
        self.log = store
        self.state = state
        self.lock = asyncio.Lock()
        self.conns: list[ClientConn] = []
        self.read_only = False

    def wire_json(self, op: SessionOp) -> str:
        return json.dumps({"v": 1, "op": op.op_id, "cid": op.client_id, "t": op.wall_time,
                           "type": op.kind, "body": op.body}, separators=(",", ":"))

    def broadcast(self, text: str, skip: ClientConn | None = None) -> None:
        for conn in self.conns:
            if conn is not skip:
                conn.push(text)

    async def sequence(self, kind: str, body: dict, cid: str) -> SessionOp:
        """Validate, number, persist, apply, broadcast. Caller holds the
        session lock; the append completes before anyone sees the echo."""
        if self.read_only:
            raise ProtocolError("session is read-only after a storage failure")
        body = validate_body(kind, body)
        op_id = self.log.head + 1
        if kind == "create_slide" and "ops" not in body:
            body = dict(body)
            body.setdefault("slide_id", f"s{op_id}")
            body["ops"] = snapshot_ops(self.state)
        op = SessionOp(op_id=op_id, client_id=cid, wall_time=_now_ms(), kind=kind, body=body)
        loop = asyncio.get_running_loop()
        try:
            await loop.run_in_executor(None, self.log.append, op)
        except OSError as exc:
            self.read_only = True
            notice = json.dumps({"v": 1, "error": {
                "code": "read_only", "message": f"storage failure: {exc}"}})
            self.broadcast(notice)
            raise ProtocolError(f"storage failure, session now read-only: {exc}") from exc
        self.state = apply_op(self.state, op)
        self.broadcast(self.wire_json(op))
        return op


# ----------------------------------------------------------------- broker


class Broker:
    def __init__(self, data_dir: Path, flush_secs: float = 30.0, rotate_ops: int = 10000):
        self.data_dir = Path(data_dir)
        self.flush_secs = flush_secs
        self.rotate_ops = rotate_ops
        for sub in ("models", "sessions", "thumbs"):
            (self.data_dir / sub).mkdir(parents=True, exist_ok=True)
        self.users = UserStore(self.data_dir / "users.json")
        self.meta_lock = asyncio.Lock()
        self.sessions: dict[str, LiveSession] = {}
        self._load_locks: dict[str, asyncio.Lock] = {}
        self.jobs: dict[str, dict] = {}
        self.session_jobs: dict[str, str] = {}
        self._job_seq = 0
        self._conn_seq = 0
        self._flusher: asyncio.Task | None = None
        self._tasks: set = set()
        if not self.projects_path.exists():
            self._write_projects({"default": {
                "project_id": "default", "name": "Default project",
                "members": [], "model_ids": [], "session_ids": [],
            }})

    # ---------------------------------------------------- metadata files

    @property
    def projects_path(self) -> Path:
        return self.data_dir / "projects.json"

    @property
    def session_index_path(self) -> Path:
        return self.data_dir / "sessions.json"

    def _read_json(self, path: Path, default):
        if path.exists():
            return json.loads(path.read_text())
        return default

    def read_projects(self) -> dict:
        return self._read_json(self.projects_path, {})

    def _write_projects(self, doc: dict) -> None:
        _atomic_write_json(self.projects_path, doc)

    def read_models(self) -> dict:
        return modelstore.read_index(self.data_dir)

    def write_models(self, doc: dict) -> None:
        modelstore.write_index(self.data_dir, doc)

    def read_session_index(self) -> dict:
        return self._read_json(self.session_index_path, {})

    def write_session_index(self, doc: dict) -> None:
        _atomic_write_json(self.session_index_path, doc)

    def model_path(self, model_id: str) -> Path:
        return modelstore.model_file(self.data_dir, model_id)

    # ---------------------------------------------------------- sessions

    async def session(self, session_id: str) -> LiveSession:
        live = self.sessions.get(session_id)
        if live is not None:
            return live
        if session_id not in self.read_session_index():
            raise _err(404, "unknown_session", f"no session {session_id!r}")
        lock = self._load_locks.setdefault(session_id, asyncio.Lock())
        async with lock:
            live = self.sessions.get(session_id)
            if live is not None:
                return live
            store = SegmentedLog(self.data_dir / "sessions", session_id,
                                 rotate_ops=self.rotate_ops)
            loop = asyncio.get_running_loop()
            ops = await loop.run_in_executor(None, store.recover)
            state = fold_ops(ops)
            live = LiveSession(session_id, store, state)
            # participants left over from a crash are gone; record that
            for cid in sorted(state.participants):
                await live.sequence("leave", {}, cid)
            self.sessions[session_id] = live
            return live

    async def create_session(self, session_id: str, project_id: str, name: str,
                             model_id: str | None) -> dict:
        async with self.meta_lock:
            projects = self.read_projects()
            if project_id not in projects:
                raise _err(404, "unknown_project", f"no project {project_id!r}")
            index = self.read_session_index()
            if session_id in index:
                raise _err(409, "session_exists", f"session {session_id!r} already exists")
            record = {"session_id": session_id, "project_id": project_id, "name": name,
                      "model_id": model_id, "created": _now_ms()}
            index[session_id] = record
            self.write_session_index(index)
            projects[project_id]["session_ids"].append(session_id)
            self._write_projects(projects)
        live = await self.session(session_id)
        if model_id:
            async with live.lock:
                await live.sequence("set_active_model", {"model_id": model_id}, "server")
        return record

    async def compact_idle_sessions(self) -> None:
        for live in list(self.sessions.values()):
            async with live.lock:
                if live.conns or live.read_only or live.log.head == 0:
                    continue
                squashed = squash_state(live.state)
                if len(squashed) >= live.log.head:
                    continue
                loop = asyncio.get_running_loop()
                try:
                    await loop.run_in_executor(None, live.log.compact, squashed)
                except OSError as exc:
                    log.error("compaction failed for %s: %s", live.session_id, exc)
                    live.read_only = True
                    continue
                live.state = fold_ops(squashed)

    async def run_flusher(self) -> None:
        while True:
            await asyncio.sleep(self.flush_secs)
            try:
                await self.compact_idle_sessions()
            except Exception:
                log.exception("periodic compaction pass failed")

    # -------------------------------------------------------------- jobs

    def new_job(self, target: str, viewpoint_count: int) -> dict:
        self._job_seq += 1
        job = {"job_id": f"job{self._job_seq}", "target": target,
               "viewpoint_count": viewpoint_count, "status": "queued", "error": None,
               "output": None}
        self.jobs[job["job_id"]] = job
        return job

    def next_conn_id(self) -> int:
        self._conn_seq += 1
        return self._conn_seq

    def spawn(self, coro) -> None:
        # hold a reference so the task is not collected mid-flight
        task = asyncio.create_task(coro)
        self._tasks.add(task)
        task.add_done_callback(self._tasks.discard)


# ------------------------------------------------------------------- auth


def request_user(broker: Broker, request: Request) -> dict:
    auth = request.headers.get("authorization", "")
    if not auth.startswith("Bearer "):
        raise _err(401, "unauthorized", "missing bearer token")
    user = broker.users.by_token(auth[7:])
    if user is None:
        raise _err(401, "unauthorized", "unknown token")
    return user


def require_role(user: dict, role: str) -> None:
    if ROLE_RANK[user["role"]] < ROLE_RANK[role]:
        raise _err(403, "forbidden", f"requires role {role}")


# -------------------------------------------------------------------- app


def create_app(data_dir: Path | str, flush_secs: float = 30.0,
               rotate_ops: int = 10000) -> FastAPI:
    broker = Broker(Path(data_dir), flush_secs=flush_secs, rotate_ops=rotate_ops)

    @contextlib.asynccontextmanager
    async def lifespan(app):
        broker._flusher = asyncio.create_task(broker.run_flusher())
        yield
        broker._flusher.cancel()
        await broker.compact_idle_sessions()
        for live in broker.sessions.values():
            live.log.close()

    app = FastAPI(lifespan=lifespan, openapi_url=None)
    app.state.broker = broker

    @app.exception_handler(StarletteHTTPException)
    async def http_error(request, exc):
        detail = exc.detail if isinstance(exc.detail, dict) else {
            "code": "error", "message": str(exc.detail)}
        return JSONResponse({"error": detail}, status_code=exc.status_code)

    @app.exception_handler(RequestValidationError)
    async def validation_error(request, exc):
        return JSONResponse({"error": {"code": "bad_request", "message": str(exc)}},
                            status_code=400)

    @app.exception_handler(Exception)
    async def internal_error(request, exc):
        log.exception("unhandled error")
        return JSONResponse({"error": {"code": "internal", "message": str(exc)}},
                            status_code=500)

    # ------------------------------------------------------------ basics

    @app.get("/api/health")
    async def health():
        return {"ok": True}

    # ---------------------------------------------------------- projects

    @app.get("/api/projects")
    async def list_projects(request: Request):
        request_user(broker, request)
        return list(broker.read_projects().values())

    @app.post("/api/projects", status_code=201)
    async def create_project(request: Request):
        user = request_user(broker, request)
        require_role(user, "member")
        body = await request.json()
        name = body.get("name")
        if not isinstance(name, str) or not name:
            raise _err(400, "bad_request", "project name required")
        pid = body.get("project_id") or re.sub(r"[^A-Za-z0-9_-]", "-", name.lower())[:32]
        if not SESSION_ID_RE.match(pid):
            raise _err(400, "bad_request", f"invalid project id {pid!r}")
        async with broker.meta_lock:
            projects = broker.read_projects()
            if pid in projects:
                raise _err(409, "project_exists", f"project {pid!r} already exists")
            projects[pid] = {"project_id": pid, "name": name, "members": [user["name"]],
                             "model_ids": [], "session_ids": []}
            broker._write_projects(projects)
            return projects[pid]

    @app.delete("/api/projects/{pid}")
    async def delete_project(pid: str, request: Request):
        user = request_user(broker, request)
        async with broker.meta_lock:
            projects = broker.read_projects()
            if pid not in projects:
                raise _err(404, "unknown_project", f"no project {pid!r}")
            member = user["name"] in projects[pid]["members"]
            if user["role"] != "admin" and not (member and ROLE_RANK[user["role"]] >= 1):
                raise _err(403, "forbidden", "not a member of this project")
            if projects[pid]["model_ids"] or projects[pid]["session_ids"]:
                raise _err(409, "not_empty", "project still has models or sessions")
            del projects[pid]
            broker._write_projects(projects)
        return {"deleted": pid}

    # ------------------------------------------------------------- users

    @app.get("/api/users")
    async def list_users(request: Request):
        user = request_user(broker, request)
        require_role(user, "admin")
        return [{"name": u["name"], "role": u["role"]} for u in broker.users.users]

    @app.post("/api/users", status_code=201)
    async def create_user(request: Request):
        user = request_user(broker, request)
        require_role(user, "admin")
        body = await request.json()
        name = body.get("name")
        if not isinstance(name, str) or not name:
            raise _err(400, "bad_request", "user name required")
        async with broker.meta_lock:
            return broker.users.create(name, body.get("role", "member"))

    # ------------------------------------------------------------ models

    @app.get("/api/models")
    async def list_models(request: Request):
        request_user(broker, request)
        return list(broker.read_models().values())

    @app.get("/api/models/{model_id}")
    async def get_model(model_id: str, request: Request):
        request_user(broker, request)
        record = broker.read_models().get(model_id)
        if record is None:
            raise _err(404, "unknown_model", f"no model {model_id!r}")
        return record

    @app.post("/api/models", status_code=201)
    async def upload_model(request: Request, file: UploadFile):
        user = request_user(broker, request)
        require_role(user, "member")
        form = await request.form()
        name = form.get("name") or (file.filename or "model")
        fmt = (form.get("format") or Path(file.filename or "").suffix.lstrip(".")).lower()
        if fmt not in meshio.FORMATS:
            raise _err(400, "bad_format", f"format must be one of {sorted(meshio.FORMATS)}")
        project_id = form.get("project_id") or "default"
        try:
            unit_scale = float(form.get("unit_scale") or 1.0)
        except ValueError:
            raise _err(400, "bad_request", "unit_scale must be a number") from None
        data = await file.read()
        async with broker.meta_lock:
            projects = broker.read_projects()
            if project_id not in projects:
                raise _err(404, "unknown_project", f"no project {project_id!r}")
            models = broker.read_models()
            model_id = modelstore.allocate_id(models)
            record = {"model_id": model_id, "name": str(name), "project_id": project_id,
                      "format": fmt, "status": "queued", "error": None,
                      "triangles": None, "nodes": None, "unit_scale": unit_scale}
            models[model_id] = record
            broker.write_models(models)
            projects[project_id]["model_ids"].append(model_id)
            broker._write_projects(projects)

        async def process():
            async with broker.meta_lock:
                models = broker.read_models()
                models[model_id]["status"] = "processing"
                broker.write_models(models)
            loop = asyncio.get_running_loop()
            try:
                def work():
                    model, report = meshio.import_model(
                        data, fmt, model_id=model_id, unit_scale=unit_scale)
                    broker.model_path(model_id).write_bytes(container.serialize(model))
                    return report
                report = await loop.run_in_executor(None, work)
                update = {"status": "ready", "triangles": report.triangle_count,
                          "nodes": report.node_count}
            except Exception as exc:
                update = {"status": "failed", "error": str(exc)}
            async with broker.meta_lock:
                models = broker.read_models()
                models[model_id].update(update)
                broker.write_models(models)

        broker.spawn(process())
        return {"model_id": model_id, "status": "queued"}

    def _load_ready_model(model_id: str):
        record = broker.read_models().get(model_id)
        if record is None:
            raise _err(404, "unknown_model", f"no model {model_id!r}")
        if record["status"] != "ready":
            raise _err(409, "not_ready", f"model {model_id!r} status is {record['status']}")
        return container.deserialize(broker.model_path(model_id).read_bytes())

    @app.get("/api/models/{model_id}/export")
    async def export_model(model_id: str, request: Request, format: str = "glb"):
        request_user(broker, request)
        if format not in meshio.FORMATS:
            raise _err(400, "bad_format", f"format must be one of {sorted(meshio.FORMATS)}")
        model = _load_ready_model(model_id)
        loop = asyncio.get_running_loop()
        data = await loop.run_in_executor(None, meshio.export_model, model, format)
        etag = '"' + hashlib.sha256(data).hexdigest()[:32] + '"'
        if request.headers.get("if-none-match") == etag:
            return Response(status_code=304, headers={"ETag": etag})
        return Response(content=data, media_type=EXPORT_MEDIA_TYPES[format],
                        headers={"ETag": etag,
                                 "Content-Disposition": f'attachment; filename="{model_id}.{format}"'})

    @app.post("/api/models/{model_id}/plan")
    async def run_plan(model_id: str, request: Request, dry_run: bool = False):
        user = request_user(broker, request)
        require_role(user, "member")
        doc = await request.json()
        try:
            plan = reduction.parse_plan({**doc, "model_id": model_id})
        except reduction.PlanError as exc:
            raise _err(400, "bad_plan", str(exc)) from None
        model = _load_ready_model(model_id)
        loop = asyncio.get_running_loop()
        try:
            reduced, report = await loop.run_in_executor(
                None, reduction.apply_plan, model, plan)
        except reduction.PlanError as exc:
            raise _err(422, "plan_failed", str(exc)) from None
        result = {"model_id": model_id, "report": report.to_dict(), "reduced_model_id": None}
        if not dry_run:
            async with broker.meta_lock:
                models = broker.read_models()
                base = models[model_id]
                n = 1
                new_id = f"{model_id}-r{n}"
                while new_id in models:
                    n += 1
                    new_id = f"{model_id}-r{n}"
                reduced.model_id = new_id
                data = await loop.run_in_executor(None, container.serialize, reduced)
                broker.model_path(new_id).write_bytes(data)
                models[new_id] = {"model_id": new_id, "name": f"{base['name']} (reduced)",
                                  "project_id": base["project_id"], "format": "ocsm",
                                  "status": "ready", "error": None,
                                  "triangles": report.final_triangles,
                                  "nodes": len(reduced.nodes),
                                  "unit_scale": reduced.unit_scale}
                broker.write_models(models)
                projects = broker.read_projects()
                projects[base["project_id"]]["model_ids"].append(new_id)
                broker._write_projects(projects)
            result["reduced_model_id"] = new_id
        return result

    # ---------------------------------------------------------- sessions

    @app.get("/api/sessions")
    async def list_sessions_endpoint(request: Request):
        request_user(broker, request)
        out = []
        for sid, record in sorted(broker.read_session_index().items()):
            live = broker.sessions.get(sid)
            entry = dict(record)
            entry["head"] = live.log.head if live else None
            entry["clients"] = len(live.conns) if live else 0
            out.append(entry)
        return out

    @app.post("/api/sessions", status_code=201)
    async def create_session(request: Request):
        user = request_user(broker, request)
        require_role(user, "member")
        body = await request.json()
        sid = body.get("session_id") or secrets.token_hex(6)
        if not SESSION_ID_RE.match(sid):
            raise _err(400, "bad_request", f"invalid session id {sid!r}")
        return await broker.create_session(
            sid, body.get("project_id") or "default",
            body.get("name") or sid, body.get("model_id"))

    @app.get("/api/sessions/{sid}")
    async def get_session(sid: str, request: Request):
        request_user(broker, request)
        record = broker.read_session_index().get(sid)
        if record is None:
            raise _err(404, "unknown_session", f"no session {sid!r}")
        live = await broker.session(sid)
        entry = dict(record)
        entry["head"] = live.log.head
        entry["clients"] = len(live.conns)
        entry["participants"] = sorted(live.state.participants)
        entry["state_hash"] = state_hash(live.state)
        return entry

    @app.get("/api/sessions/{sid}/state")
    async def get_session_state(sid: str, request: Request, participants: bool = False):
        request_user(broker, request)
        if sid not in broker.read_session_index():
            raise _err(404, "unknown_session", f"no session {sid!r}")
        live = await broker.session(sid)
        async with live.lock:
            data = canonical_bytes(live.state, include_participants=participants)
            digest = state_hash(live.state, include_participants=participants)
        return Response(content=data, media_type="application/json",
                        headers={"X-State-Hash": digest})

    @app.delete("/api/sessions/{sid}")
    async def delete_session(sid: str, request: Request):
        user = request_user(broker, request)
        require_role(user, "member")
        async with broker.meta_lock:
            index = broker.read_session_index()
            if sid not in index:
                raise _err(404, "unknown_session", f"no session {sid!r}")
            record = index.pop(sid)
            broker.write_session_index(index)
            projects = broker.read_projects()
            proj = projects.get(record["project_id"])
            if proj and sid in proj["session_ids"]:
                proj["session_ids"].remove(sid)
                broker._write_projects(projects)
        live = broker.sessions.pop(sid, None)
        if live is not None:
            async with live.lock:
                for conn in live.conns:
                    conn.push(None)
                live.conns.clear()
                live.log.close()
        root = broker.data_dir / "sessions"
        for path in root.glob(f"{sid}.*.log"):
            path.unlink()
        return {"deleted": sid}

    @app.post("/api/sessions/{sid}/compact")
    async def compact_session(sid: str, request: Request):
        user = request_user(broker, request)
        require_role(user, "admin")
        live = await broker.session(sid)
        async with live.lock:
            if live.conns:
                raise _err(409, "clients_connected",
                           "compaction runs only with no clients connected")
            squashed = squash_state(live.state)
            loop = asyncio.get_running_loop()
            await loop.run_in_executor(None, live.log.compact, squashed)
            live.state = fold_ops(squashed)
            return {"session_id": sid, "head": live.log.head, "ops": len(squashed)}

    # --------------------------------------------------------- thumbnails

    @app.post("/api/sessions/{sid}/thumbnail", status_code=202)
    async def request_thumbnail(sid: str, request: Request):
        user = request_user(broker, request)
        require_role(user, "member")
        record = broker.read_session_index().get(sid)
        if record is None:
            raise _err(404, "unknown_session", f"no session {sid!r}")
        try:
            body = await request.json()
        except Exception:
            body = {}
        count = body.get("viewpoint_count", 24)
        if not isinstance(count, int) or count < 1:
            raise _err(400, "bad_request", "viewpoint_count must be a positive integer")
        live = await broker.session(sid)
        model_id = record.get("model_id") or live.state.active_model
        job = broker.new_job(target=f"session:{sid}", viewpoint_count=count)
        broker.session_jobs[sid] = job["job_id"]

        async def render():
            job["status"] = "running"
            loop = asyncio.get_running_loop()
            try:
                if not model_id:
                    raise ValueError("session has no model to render")
                def work():
                    model = container.deserialize(broker.model_path(model_id).read_bytes())
                    sheet = sprite_sheet(model, viewpoint_count=count)
                    out = broker.data_dir / "thumbs" / f"{sid}.png"
                    out.write_bytes(encode_png(sheet))
                    return str(out)
                job["output"] = await loop.run_in_executor(None, work)
                job["status"] = "done"
            except Exception as exc:
                job["status"] = "failed"
                job["error"] = str(exc)

        broker.spawn(render())
        return {"job_id": job["job_id"], "status": job["status"]}

    @app.get("/api/sessions/{sid}/thumbnail")
    async def fetch_thumbnail(sid: str, request: Request):
        request_user(broker, request)
        if sid not in broker.read_session_index():
            raise _err(404, "unknown_session", f"no session {sid!r}")
        job_id = broker.session_jobs.get(sid)
        if job_id is None:
            raise _err(404, "no_thumbnail", "no thumbnail job for this session")
        job = broker.jobs[job_id]
        if job["status"] in ("queued", "running"):
            return JSONResponse({"job_id": job_id, "status": job["status"]}, status_code=202)
        if job["status"] == "failed":
            return JSONResponse({"error": {"code": "thumbnail_failed",
                                           "message": job["error"]},
                                 "job_id": job_id, "status": "failed"}, status_code=500)
        return Response(content=Path(job["output"]).read_bytes(), media_type="image/png")

    @app.get("/api/jobs/{job_id}")
    async def get_job(job_id: str, request: Request):
        request_user(broker, request)
        job = broker.jobs.get(job_id)
        if job is None:
            raise _err(404, "unknown_job", f"no job {job_id!r}")
        return {k: v for k, v in job.items() if k != "output"} | {
            "output_ready": job["output"] is not None}

    # ---------------------------------------------------------- channel

    @app.websocket("/ws/sessions/{sid}")
    async def session_channel(ws: WebSocket, sid: str):
        await ws.accept()
        token = ws.query_params.get("token", "")
        user = broker.users.by_token(token)
        if user is None:
            await ws.close(code=WS_CLOSE_UNAUTHORIZED)
            return
        try:
            live = await broker.session(sid)
        except HTTPException:
            await ws.close(code=WS_CLOSE_UNKNOWN_SESSION)
            return

        raw_cid = ws.query_params.get("cid") or f"{user['name']}-{broker.next_conn_id()}"
        cid = re.sub(r"[^A-Za-z0-9_.-]", "-", raw_cid)[:64] or "client"
        kind = ws.query_params.get("kind", "web")
        if kind not in ("web", "headset"):
            kind = "web"
        name = ws.query_params.get("name", cid)
        can_write = ROLE_RANK[user["role"]] >= ROLE_RANK["member"]
        conn = ClientConn(cid=cid, user=user, ws=ws, joined=False)

        async def pump():
            while True:
                item = await conn.queue.get()
                if item is None:
                    break
                await ws.send_text(item)

        async with live.lock:
            if can_write and not live.read_only:
                try:
                    await live.sequence("join", {"name": name, "kind": kind}, cid)
                    conn.joined = True
                except ProtocolError:
                    pass
            live.conns.append(conn)
            hello = json.dumps({"v": 1, "hello": {
                "session": sid, "client": cid, "role": user["role"],
                "head": live.log.head, "read_only": live.read_only,
                "bundle": [json.loads(live.wire_json(op))
                           for op in bundle_from_state(live.state)],
            }}, separators=(",", ":"))
            conn.push(hello)
        pump_task = asyncio.create_task(pump())

        try:
            while True:
                try:
                    raw = await ws.receive_text()
                except WebSocketDisconnect:
                    break
                try:
                    msg = json.loads(raw)
                    if not isinstance(msg, dict):
                        raise ProtocolError("frame must be a JSON object")
                except (json.JSONDecodeError, ProtocolError) as exc:
                    conn.push(json.dumps({"v": 1, "error": {
                        "code": "bad_frame", "message": str(exc)}}))
                    continue
                kind_in = msg.get("type")
                body = msg.get("body") if isinstance(msg.get("body"), dict) else {}
                if not can_write:
                    conn.push(json.dumps({"v": 1, "error": {
                        "code": "forbidden", "message": "viewer role is read-only"}}))
                    continue
                if kind_in == "participant_pose":
                    now = time.monotonic()
                    if now - conn.last_pose < POSE_MIN_INTERVAL:
                        continue  # over 20 Hz: drop, presence only needs the latest
                    conn.last_pose = now
                    try:
                        body = validate_body("participant_pose", body)
                    except ProtocolError as exc:
                        conn.push(json.dumps({"v": 1, "error": {
                            "code": "bad_op", "message": str(exc)}}))
                        continue
                    op = SessionOp(op_id=0, client_id=cid, wall_time=_now_ms(),
                                   kind="participant_pose", body=body)
                    async with live.lock:
                        live.state = apply_op(live.state, op)
                        live.broadcast(live.wire_json(op), skip=conn)
                    continue
                if kind_in in ("join", "leave"):
                    conn.push(json.dumps({"v": 1, "error": {
                        "code": "bad_op", "message": "presence ops are server-generated"}}))
                    continue
                async with live.lock:
                    try:
                        await live.sequence(kind_in, body, cid)
                    except ProtocolError as exc:
                        conn.push(json.dumps({"v": 1, "error": {
                            "code": "bad_op", "message": str(exc)}}))
        finally:
            async with live.lock:
                if conn in live.conns:
                    live.conns.remove(conn)
                if conn.joined and not live.read_only:
                    try:
                        await live.sequence("leave", {}, cid)
                    except ProtocolError:
                        pass
            conn.push(None)
            try:
                await pump_task
            except Exception:
                pass

    return app


def main_serve(data_dir: Path, bind: str, flush_secs: float) -> None:
    """Blocking entry point used by the command line."""
    import uvicorn
    host, _, port = bind.rpartition(":")
    app = create_app(data_dir, flush_secs=flush_secs)
    uvicorn.run(app, host=host or "127.0.0.1", port=int(port or 8023), log_level="info")
