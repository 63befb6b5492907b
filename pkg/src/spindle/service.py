"""HTTP session service: interactive partitioning over JSON.

One session wraps one Partitioner. Tactics either commit or leave the
session untouched (409), so a recorded sequence of requests replays to the
same state. Forking snapshots a session for what-if exploration.
"""
from __future__ import annotations

import threading
import uuid

from fastapi import FastAPI
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from .ir import Mesh
from .models import MODELS, build_model
from .parser import ParseError, parse_module
from .rewrite import PartitionError
from .schedule import Partitioner, tactic_from_json
from .sim import load_machine_spec
from .verify import VerifyError


class SessionRequest(BaseModel):
    model: str | None = None
    params: dict = {}
    module: str | None = None
    mesh: str | None = None
    machine: str | None = None


class _Session:
    def __init__(self, partitioner: Partitioner):
        self.partitioner = partitioner
        self.lock = threading.Lock()


def _error(status: int, message: str) -> JSONResponse:
    return JSONResponse(status_code=status, content={"error": message})


def _summary(sid: str, p: Partitioner) -> dict:
    from .printer import print_module

    counts, cost = p.costs()
    return {
        "id": sid,
        "mesh": p.module.mesh.render(),
        "machine": p.machine.name,
        "base_ir": p.base_ir,
        "ir": print_module(p.module),
        "counts": counts,
        "cost": cost,
        "tactics": [t.to_json() for t in p.tactics],
        "reports": [r.to_json() for r in p.reports],
    }


def create_app() -> FastAPI:
    app = FastAPI(title="spindle", version="0.1.0")
    # The browser explorer is served as static files from a separate
    # origin; sessions are local and unauthenticated, so open CORS is fine.
    app.add_middleware(
        CORSMiddleware,
        allow_origins=["*"],
        allow_methods=["*"],
        allow_headers=["*"],
    )
    sessions: dict[str, _Session] = {}
    registry_lock = threading.Lock()

    def _get(sid: str) -> _Session | None:
        with registry_lock:
            return sessions.get(sid)

    def _put(p: Partitioner) -> str:
        sid = uuid.uuid4().hex[:12]
        with registry_lock:
            sessions[sid] = _Session(p)
        return sid

    @app.post("/sessions")
    def create_session(req: SessionRequest):
        try:
            if (req.model is None) == (req.module is None):
                raise ValueError("pass exactly one of 'model' or 'module'")
            if req.model is not None:
                if req.model not in MODELS:
                    raise ValueError(f"unknown model {req.model!r}; "
                                     f"have {sorted(MODELS)}")
                module = build_model(req.model, **req.params)
            else:
                module = parse_module(req.module)
            if req.mesh:
                module.mesh = Mesh.parse(req.mesh)
            machine = load_machine_spec(req.machine) if req.machine else None
            p = Partitioner(module, machine=machine)
        except (ParseError, VerifyError, PartitionError, ValueError,
                TypeError) as e:
            return _error(400, str(e))
        sid = _put(p)
        return _summary(sid, p)

    @app.get("/sessions/{sid}")
    def get_session(sid: str):
        s = _get(sid)
        if s is None:
            return _error(404, f"no session {sid!r}")
        with s.lock:
            return _summary(sid, s.partitioner)

    @app.post("/sessions/{sid}/tactics")
    def apply_tactic(sid: str, tactic: dict):
        s = _get(sid)
        if s is None:
            return _error(404, f"no session {sid!r}")
        try:
            t = tactic_from_json(tactic)
        except ValueError as e:
            return _error(400, str(e))
        with s.lock:
            try:
                report = s.partitioner.apply(t)
            except PartitionError as e:
                return _error(409, str(e))
            return report.to_json()

    @app.get("/sessions/{sid}/shardable")
    def shardable(sid: str):
        s = _get(sid)
        if s is None:
            return _error(404, f"no session {sid!r}")
        with s.lock:
            return {"values": s.partitioner.shardable()}

    @app.get("/sessions/{sid}/export")
    def export(sid: str):
        s = _get(sid)
        if s is None:
            return _error(404, f"no session {sid!r}")
        with s.lock:
            return s.partitioner.export()

    @app.post("/sessions/{sid}/fork")
    def fork(sid: str):
        s = _get(sid)
        if s is None:
            return _error(404, f"no session {sid!r}")
        with s.lock:
            twin = s.partitioner.clone()
        new_sid = _put(twin)
        return _summary(new_sid, twin)

    return app
