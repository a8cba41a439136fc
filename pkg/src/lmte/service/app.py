"""JSON-over-HTTP session service for interactive what-if exploration.

Sessions wrap a fitted explanation pipeline (frozen neighborhood + tree).
Creation runs the full pipeline when a test point is supplied, otherwise
the first explain request fits the session. What-if requests re-route
through the frozen tree, so they answer in milliseconds.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from fastapi import FastAPI, Query, Request
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
from fastapi.staticfiles import StaticFiles

from ..explain import (
    ExplainSession,
    Oracle,
    SessionConfig,
    explain_with_surrogate,
    make_oracle,
    run_session,
    session_snapshot_save,
    top_attributions,
    what_if,
)
from ..lmt import tree_to_dict
from ..tabular import Dataset, Schema, load_csv, row_from_named
from .schemas import (
    ExplainRequest,
    ExplanationModel,
    HealthResponse,
    SessionCreateRequest,
    SessionCreateResponse,
    WhatIfRequest,
    WhatIfResponse,
)


class ServiceError(Exception):
    def __init__(self, status: int, code: str, message: str):
        super().__init__(message)
        self.status = status
        self.code = code
        self.message = message


@dataclass
class SessionState:
    session_id: str
    train: Dataset
    oracle: Oracle
    config: SessionConfig
    fitted: ExplainSession | None = None


class SessionStore:
    def __init__(self):
        self._lock = threading.Lock()
        self._sessions: dict[str, SessionState] = {}
        self._counter = 0

    def add(self, state_factory) -> SessionState:
        with self._lock:
            self._counter += 1
            sid = f"s{self._counter}"
        state = state_factory(sid)
        with self._lock:
            self._sessions[sid] = state
        return state

    def get(self, sid: str) -> SessionState:
        with self._lock:
            if sid not in self._sessions:
                raise ServiceError(404, "unknown_session", f"no session {sid!r}")
            return self._sessions[sid]

    def fit_once(self, state: SessionState, x_t: np.ndarray) -> ExplainSession:
        """Fit the session for its first test point; later calls reuse it."""
        with self._lock:
            if state.fitted is None:
                state.fitted = run_session(state.train, x_t, state.oracle,
                                           state.config)
            return state.fitted


def _explanation_payload(expl, top_k: int = 5) -> dict:
    d = expl.to_dict()
    d["top_attributions"] = [a.to_dict() for a in top_attributions(expl, top_k)]
    return d


def _load_train(req: SessionCreateRequest) -> tuple[Dataset, Schema]:
    schema = None
    if req.schema_path:
        import json

        with open(req.schema_path, encoding="utf-8") as fh:
            schema = Schema.from_dict(json.load(fh))
    full = load_csv(req.train_csv_path, schema)
    label = req.label_column or req.oracle_spec.get("label_column")
    if label and label in full.schema.names:
        li = full.schema.column_index(label)
        keep = [j for j in range(len(full.schema.columns)) if j != li]
        feat_schema = Schema(tuple(full.schema.columns[j] for j in keep))
        return Dataset(feat_schema, full.values[:, keep]), feat_schema
    return full, full.schema


def create_app(static_dir: str | None = None) -> FastAPI:
    app = FastAPI(title="lmte", description="local explanation sessions")
    app.add_middleware(
        CORSMiddleware,
        allow_origins=["*"],  # single-analyst tool; UI may run on another port
        allow_methods=["*"],
        allow_headers=["*"],
    )
    store = SessionStore()
    app.state.store = store

    @app.exception_handler(ServiceError)
    async def service_error_handler(request: Request, exc: ServiceError):
        return JSONResponse(status_code=exc.status,
                            content={"error": {"code": exc.code,
                                               "message": exc.message}})

    @app.exception_handler(Exception)
    async def unhandled_error_handler(request: Request, exc: Exception):
        return JSONResponse(status_code=500,
                            content={"error": {"code": "internal",
                                               "message": str(exc)}})

    @app.get("/health", response_model=HealthResponse)
    def health():
        return HealthResponse(status="ok")

    @app.post("/sessions", response_model=SessionCreateResponse)
    def create_session(req: SessionCreateRequest):
        try:
            train, schema = _load_train(req)
            oracle = make_oracle(req.oracle_spec, schema)
            config = SessionConfig.from_dict(req.config) if req.config \
                else SessionConfig()
        except (ValueError, RuntimeError, OSError) as e:
            raise ServiceError(400, "bad_session_spec", str(e)) from e

        def factory(sid):
            return SessionState(sid, train, oracle, config)

        state = store.add(factory)
        if req.test_point is not None:
            try:
                x_t = row_from_named(schema, req.test_point)
                fitted = store.fit_once(state, x_t)
                if req.snapshot_path:
                    session_snapshot_save(fitted, req.snapshot_path)
            except (ValueError, RuntimeError, OSError) as e:
                raise ServiceError(400, "fit_failed", str(e)) from e
        return SessionCreateResponse(session_id=state.session_id,
                                     fitted=state.fitted is not None)

    @app.get("/sessions/{sid}/schema")
    def get_schema(sid: str):
        state = store.get(sid)
        return state.train.schema.to_dict()

    @app.get("/sessions/{sid}/tree")
    def get_tree(sid: str):
        state = store.get(sid)
        if state.fitted is None:
            raise ServiceError(409, "not_fitted",
                               "session has no fitted tree yet; explain a point first")
        return tree_to_dict(state.fitted.surrogate.tree)

    @app.post("/sessions/{sid}/explain", response_model=ExplanationModel)
    def explain(sid: str, req: ExplainRequest,
                fresh: bool = Query(default=False),
                top_k: int = Query(default=5, ge=1)):
        state = store.get(sid)
        schema = state.train.schema
        try:
            if req.point is not None:
                x_t = row_from_named(schema, req.point)
            elif state.fitted is not None:
                x_t = state.fitted.test_point
            else:
                raise ServiceError(400, "missing_point",
                                   "session is unfitted; supply a point")
            if fresh:
                fresh_session = run_session(state.train, x_t, state.oracle,
                                            state.config)
                return _explanation_payload(fresh_session.explanation, top_k)
            fitted = store.fit_once(state, x_t)
            if np.array_equal(x_t, fitted.test_point):
                return _explanation_payload(fitted.explanation, top_k)
            y_t = float(state.oracle.predict(
                Dataset(schema, np.asarray(x_t, float)[None, :]))[0])
            expl = explain_with_surrogate(fitted.surrogate, x_t, y_t)
            return _explanation_payload(expl, top_k)
        except ServiceError:
            raise
        except (ValueError, RuntimeError) as e:
            raise ServiceError(400, "explain_failed", str(e)) from e

    @app.post("/sessions/{sid}/whatif", response_model=WhatIfResponse)
    def whatif(sid: str, req: WhatIfRequest, top_k: int = Query(default=5, ge=1)):
        state = store.get(sid)
        if state.fitted is None:
            raise ServiceError(409, "not_fitted",
                               "session has no fitted tree yet; explain a point first")
        schema = state.train.schema
        try:
            x_t = row_from_named(schema, req.point) if req.point is not None \
                else state.fitted.test_point
            result = what_if(state.fitted.surrogate.tree, schema, x_t,
                             req.overrides, fidelity=state.fitted.surrogate.fidelity)
        except (ValueError, RuntimeError) as e:
            raise ServiceError(400, "whatif_failed", str(e)) from e
        return {
            "explanation": _explanation_payload(result.explanation, top_k),
            "leaf_changed": result.leaf_changed,
            "overridden": result.overridden,
        }

    static = Path(static_dir) if static_dir else \
        Path(__file__).resolve().parents[3] / "frontend" / "dist"
    if static.is_dir():
        app.mount("/", StaticFiles(directory=str(static), html=True), name="ui")
    return app


def serve(host: str = "127.0.0.1", port: int = 8321,
          static_dir: str | None = None) -> None:
    """Run the service until interrupted (uvicorn handles signals)."""
    import uvicorn

    uvicorn.run(create_app(static_dir), host=host, port=port, log_level="info")
