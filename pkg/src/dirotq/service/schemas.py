"""Request and response models for the HTTP service.

Every run endpoint takes the same shape: a JSON run configuration as an
open dict, validated server-side by RunConfig so the service and the
library reject exactly the same inputs.
"""

from __future__ import annotations

from pydantic import BaseModel, Field


class HealthResponse(BaseModel):
    status: str
    version: str


class RunRequest(BaseModel):
    config: dict = Field(default_factory=dict)


class LayerBasisInfo(BaseModel):
    layer_id: str
    dim: int
    rank_k: int
    token_count: int


class CalibrateResponse(BaseModel):
    output_dir: str
    layers: list[LayerBasisInfo]


class LayerQuantSummary(BaseModel):
    weight_quant_error: float
    rank_k: int
    residual_dim: int
    quantized: bool


class QuantizeResponse(BaseModel):
    output_dir: str
    layers: dict[str, LayerQuantSummary]


class EvalResponse(BaseModel):
    reports: int
    path: str


class SweepRequest(BaseModel):
    config: dict = Field(default_factory=dict)
    r_values: list[float]


class SweepRow(BaseModel):
    r: float
    qsnr_db: float


class SweepResponse(BaseModel):
    rows: list[SweepRow]
    path: str


class JudgeRequest(BaseModel):
    a_file: str
    b_file: str
    metric: str = "overall"
    tie_eps: float = 0.01
    order: str = "overall_of_means"


class CategoryRates(BaseModel):
    win_rate: float
    tie_rate: float
    loss_rate: float
    n: int


class JudgeResponse(BaseModel):
    win_rate: float
    tie_rate: float
    loss_rate: float
    n: int
    metric: str
    tie_eps: float
    per_category: dict[str, CategoryRates]


class ErrorBody(BaseModel):
    kind: str  # "config" or "numerical"
    message: str
