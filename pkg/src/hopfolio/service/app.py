"""FastAPI application wrapping the pipeline handlers.

Domain failures map onto HTTP 400 with a typed body ({kind, message}), so
remote clients can re-raise the same exception classes the local path
uses; everything else is a plain 500.
"""

from __future__ import annotations

from typing import Callable

from fastapi import FastAPI
from fastapi.responses import JSONResponse

from .. import __version__, runner
from ..errors import ConfigError, DataError, HopfolioError
from .schemas import (ArtifactBundle, BacktestRequest, CompareRequest,
                      HealthResponse, ReportRequest, SynthRequest)


def error_kind(exc: HopfolioError) -> str:
    if isinstance(exc, ConfigError):
        return "config"
    if isinstance(exc, DataError):
        return "data"
    return "compute"


def _run(fn: Callable[[], dict[str, str]]):
    try:
        return ArtifactBundle(artifacts=fn())
    except HopfolioError as exc:
        return JSONResponse(status_code=400,
                            content={"kind": error_kind(exc),
                                     "message": str(exc)})


def create_app() -> FastAPI:
    app = FastAPI(title="hopfolio", version=__version__)

    @app.get("/health", response_model=HealthResponse)
    def health() -> HealthResponse:
        return HealthResponse(status="ok", version=__version__)

    @app.post("/synth", response_model=ArtifactBundle)
    def synth(req: SynthRequest):
        return _run(lambda: runner.synth_artifacts(req.spec, req.seed,
                                                   req.path_label))

    @app.post("/backtest", response_model=ArtifactBundle)
    def backtest(req: BacktestRequest):
        return _run(lambda: runner.backtest_artifacts(req.config))

    @app.post("/compare", response_model=ArtifactBundle)
    def compare(req: CompareRequest):
        return _run(lambda: runner.compare_artifacts(req.metrics_csv,
                                                     req.alpha))

    @app.post("/report", response_model=ArtifactBundle)
    def report(req: ReportRequest):
        return _run(lambda: runner.report_artifacts(req.metrics_csv,
                                                    req.tukey_json))

    return app
