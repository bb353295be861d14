"""HTTP layer: FastAPI routes over the service core."""

from __future__ import annotations

from typing import Any, Optional

from fastapi import FastAPI, Header, Request, Response
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field

from .core import GridbookService, ServiceConfig, ServiceError


class QueryBody(BaseModel):
    document: dict
    element_id: str
    expansion: dict = Field(default_factory=dict)
    controls: dict[str, Any] = Field(default_factory=dict)


class AdhocBody(BaseModel):
    edits: list[dict] = Field(default_factory=list)


class MaterializeBody(BaseModel):
    doc_id: str
    cadence_seconds: float


def create_app(config: Optional[ServiceConfig] = None) -> FastAPI:
    service = GridbookService(config)
    app = FastAPI(title="gridbook", docs_url=None, redoc_url=None)
    app.state.service = service

    def token_of(authorization: Optional[str]) -> Optional[str]:
        if authorization and authorization.startswith("Bearer "):
            return authorization[len("Bearer "):]
        return authorization

    @app.exception_handler(ServiceError)
    async def on_service_error(_req: Request, exc: ServiceError):
        payload: dict[str, Any] = {"error": exc.message}
        if exc.details:
            payload["details"] = exc.details
        return JSONResponse(status_code=exc.status, content=payload)

    @app.post("/v1/query")
    def query(body: QueryBody,
              authorization: Optional[str] = Header(default=None),
              x_session_id: str = Header(default="anonymous")):
        service.check_token(token_of(authorization))
        result = service.handle_query(
            body.document, body.element_id, body.expansion, body.controls,
            session_id=x_session_id,
        )
        return {
            "query_id": result.query_id,
            "schema": result.schema,
            "rows": result.rows,
            "total_rows": result.total_rows,
            "complete": result.complete,
            "from_cache": result.from_cache,
        }

    @app.post("/v1/compile")
    def compile_route(body: QueryBody,
                      authorization: Optional[str] = Header(default=None)):
        service.check_token(token_of(authorization))
        return service.compile_only(body.document, body.element_id,
                                    body.expansion, body.controls)

    @app.get("/v1/results/{query_id}")
    def results(query_id: str, limit: Optional[int] = None, offset: int = 0,
                authorization: Optional[str] = Header(default=None)):
        service.check_token(token_of(authorization))
        result = service.fetch_results(query_id, limit, offset)
        return {
            "query_id": result.query_id,
            "schema": result.schema,
            "rows": result.rows,
            "total_rows": result.total_rows,
            "complete": result.complete,
        }

    @app.post("/v1/documents")
    def save_document(document: dict,
                      authorization: Optional[str] = Header(default=None)):
        service.check_token(token_of(authorization))
        return {"doc_id": service.save_document(document)}

    @app.get("/v1/documents/{doc_id}")
    def load_document(doc_id: str,
                      authorization: Optional[str] = Header(default=None)):
        service.check_token(token_of(authorization))
        return service.load_document(doc_id)

    @app.post("/v1/uploads/csv")
    async def upload_csv(request: Request, name: str = "upload",
                         authorization: Optional[str] =
                         Header(default=None)):
        service.check_token(token_of(authorization))
        data = await request.body()
        return service.ingest_csv(data, name)

    @app.patch("/v1/adhoc/{table_ref}")
    def adhoc(table_ref: str, body: AdhocBody,
              authorization: Optional[str] = Header(default=None)):
        service.check_token(token_of(authorization))
        return service.apply_adhoc_edits(table_ref, body.edits)

    @app.post("/v1/elements/{element_id}/materialize")
    def materialize(element_id: str, body: MaterializeBody,
                    authorization: Optional[str] = Header(default=None)):
        service.check_token(token_of(authorization))
        return service.schedule_materialization(
            element_id, body.doc_id, body.cadence_seconds
        )

    @app.get("/admin/cache")
    def admin_cache(authorization: Optional[str] = Header(default=None)):
        service.check_token(token_of(authorization))
        return service.cache_listing()

    @app.get("/healthz")
    def healthz() -> Response:
        return Response(content="ok", media_type="text/plain")

    return app
