"""Pydantic request/response models for the explanation service."""

from __future__ import annotations

from typing import Any, Optional, Union

from pydantic import BaseModel, Field


class SessionCreateRequest(BaseModel):
    train_csv_path: str
    schema_path: Optional[str] = None
    label_column: Optional[str] = None
    oracle_spec: dict
    config: dict = Field(default_factory=dict)
    test_point: Optional[dict[str, Any]] = None
    snapshot_path: Optional[str] = None


class SessionCreateResponse(BaseModel):
    session_id: str
    fitted: bool


class ExplainRequest(BaseModel):
    point: Optional[dict[str, Any]] = None


class WhatIfRequest(BaseModel):
    point: Optional[dict[str, Any]] = None
    overrides: dict[str, Any]


class ConditionModel(BaseModel):
    feature: str
    op: str
    value: Union[float, str]


class AttributionModel(BaseModel):
    feature: str
    encoded_feature: str
    coefficient: float
    encoded_value: float
    value: float
    category: Optional[str] = None


class ExplanationModel(BaseModel):
    test_point: dict[str, Any]
    surrogate_prediction: float
    oracle_prediction: Optional[float] = None
    context: list[ConditionModel]
    context_text: str
    attributions: list[AttributionModel]
    top_attributions: list[AttributionModel]
    intercept: float
    leaf_id: int
    fidelity: Optional[float] = None
    task: str


class WhatIfResponse(BaseModel):
    explanation: ExplanationModel
    leaf_changed: bool
    overridden: dict[str, Any]


class HealthResponse(BaseModel):
    status: str
