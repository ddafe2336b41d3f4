"""Long-running routing proxy: completion proxy, classification, health.

All shared state (probe parameters, budget table) is read-only, so the
app handles concurrent requests without locking.
"""

from __future__ import annotations

import logging
from typing import Any

from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from .backend import Backend
from .core import Problem
from .dispatch import BudgetTable, route
from .errors import DiffAdaptError
from .probe import LoadedProbe, forward, predict

__all__ = ["create_app", "serve"]

log = logging.getLogger(__name__)


class ClassifyRequest(BaseModel):
    feature: list[float] | None = None
    problem_id: str | None = None
    question: str | None = None
    difficulty_rating: int | None = None


class RouteRequest(BaseModel):
    question: str
    benchmark: str = "default"
    model: str | None = None
    problem_id: str | None = None
    difficulty_rating: int | None = None
    gold_answer: str = ""


def _error(status: int, code: str, message: str) -> JSONResponse:
    return JSONResponse(
        status_code=status, content={"error": {"code": code, "message": message}}
    )


def _build_problem(
    problem_id: str | None,
    question: str | None,
    difficulty_rating: int | None,
    benchmark: str = "default",
    gold_answer: str = "",
) -> Problem:
    pid = problem_id or f"adhoc-{abs(hash(question or '')) % 10**10}"
    return Problem(
        id=pid,
        question=question or "",
        gold_answer=gold_answer,
        difficulty_rating=difficulty_rating,
        benchmark=benchmark,
    )


def create_app(
    probe: LoadedProbe,
    backend: Backend,
    budget_table: BudgetTable,
    model_name: str,
    allow_fingerprint_mismatch: bool = False,
) -> FastAPI:
    probe_fp = probe.provider_fingerprint
    backend_fp = backend.representation_fingerprint()
    if probe_fp and backend_fp and probe_fp != backend_fp and not allow_fingerprint_mismatch:
        raise DiffAdaptError(
            f"probe was trained on provider {probe_fp!r} but the backend "
            f"reports {backend_fp!r}; refusing to serve (pass "
            f"allow_fingerprint_mismatch to override)"
        )

    app = FastAPI(title="diffadapt-proxy")

    @app.exception_handler(RequestValidationError)
    async def _validation_handler(request: Request, exc: RequestValidationError):
        return _error(422, "validation_error", str(exc.errors()))

    @app.get("/healthz")
    def healthz() -> dict[str, Any]:
        return {
            "status": "ok",
            "probe_fingerprint": probe_fp,
            "probe_input_dim": probe.params.input_dim,
            "backend": backend.describe(),
            "backend_reachable": backend.ping(),
        }

    @app.post("/v1/classify")
    def classify(body: ClassifyRequest):
        if body.feature is not None:
            if len(body.feature) != probe.params.input_dim:
                return _error(
                    400,
                    "dimension_mismatch",
                    f"feature has dim {len(body.feature)}, probe expects "
                    f"{probe.params.input_dim}",
                )
            from .core import FeatureVector

            feature = FeatureVector.from_values(body.feature)
        else:
            if body.question is None and body.problem_id is None:
                return _error(
                    400, "missing_input", "provide a feature, a question, or a problem_id"
                )
            problem = _build_problem(
                body.problem_id, body.question, body.difficulty_rating
            )
            try:
                feature = backend.get_representation(problem)
            except DiffAdaptError as exc:
                return _error(404, "feature_unavailable", str(exc))
            if feature.dim != probe.params.input_dim:
                return _error(
                    400,
                    "dimension_mismatch",
                    f"backend representation dim {feature.dim} != probe dim "
                    f"{probe.params.input_dim}",
                )
        probs = forward(probe.params, feature)
        label = predict(probe.params, feature)
        return {
            "label": label.value,
            "probabilities": {
                "Easy": probs[0],
                "Normal": probs[1],
                "Hard": probs[2],
            },
        }

    @app.post("/v1/route")
    def route_endpoint(body: RouteRequest):
        problem = _build_problem(
            body.problem_id,
            body.question,
            body.difficulty_rating,
            benchmark=body.benchmark,
            gold_answer=body.gold_answer,
        )
        result = route(
            problem,
            probe.params,
            backend,
            budget_table,
            body.model or model_name,
        )
        if result.error is not None or result.record is None:
            return _error(502, "backend_failure", result.error or "no record")
        record = result.record
        return {
            "answer_text": record.completion_text,
            "label": result.label.value,
            "tokens": record.completion_tokens,
            "entropy": record.generation_entropy,
            "fallback": result.fallback,
        }

    return app


def serve(listen_addr: str, app: FastAPI) -> None:
    """Run the proxy until interrupted."""
    import uvicorn

    host, _, port = listen_addr.rpartition(":")
    uvicorn.run(app, host=host or "127.0.0.1", port=int(port or 8080))
