"""Request and response bodies for the HTTP service.

Every pipeline endpoint returns an ArtifactBundle: a map of artifact file
names to their full text content.  Writing the files is the client's job,
which keeps the service stateless and lets the CLI behave identically in
local and remote mode.
"""

from __future__ import annotations

from pydantic import BaseModel, ConfigDict

from ..config import RunConfig, SynthSpec


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class SynthRequest(_Strict):
    spec: SynthSpec = SynthSpec()
    seed: int = 0
    path_label: str = "panel.csv"


class BacktestRequest(_Strict):
    config: RunConfig


class CompareRequest(_Strict):
    metrics_csv: str
    alpha: float = 0.05


class ReportRequest(_Strict):
    metrics_csv: str
    tukey_json: str | None = None


class ArtifactBundle(_Strict):
    artifacts: dict[str, str]


class HealthResponse(_Strict):
    status: str
    version: str


class ErrorBody(_Strict):
    kind: str  # config | data | compute
    message: str
