"""Request/response bodies for the certification service."""

from __future__ import annotations

from typing import List, Optional

from pydantic import BaseModel, Field


class CheckPositiveRequest(BaseModel):
    matrix: List[List[float]]


class MetricRequest(BaseModel):
    model: str  # model file text
    rate: Optional[float] = None
    audit_samples: int = Field(default=10000, ge=1)
    seed: int = 0
    tube_radius: Optional[float] = None
    x0: Optional[List[float]] = None


class SmallGainRequest(BaseModel):
    # either a gain matrix directly, or a model to bound by sampling
    alpha: Optional[List[List[float]]] = None
    model: Optional[str] = None
    weights: Optional[List[float]] = None
    samples: int = Field(default=10000, ge=1)
    seed: int = 0


class SProcedureRequest(BaseModel):
    model: str
    rate: float = 0.0
    psi: Optional[float] = None  # overrides the model file's psi
    seed: int = 0


class SimulateRequest(BaseModel):
    model: str
    x0: Optional[List[float]] = None  # default: box midpoint
    h: float = Field(default=1e-3, gt=0)
    seed: int = 0


class SynthesizeRequest(BaseModel):
    model: str
    target: str  # trajectory CSV text
    rate: Optional[float] = None
    x0: Optional[List[float]] = None
    h: float = Field(default=1e-3, gt=0)
    seed: int = 0


class VirtualRequest(BaseModel):
    factored: str  # factored-system file text
    samples: int = Field(default=5, ge=1)
    seed: int = 0


class AuditRequest(BaseModel):
    model: str
    rate: Optional[float] = None
    samples: int = Field(default=10000, ge=1)
    seed: int = 0


class Report(BaseModel):
    """Uniform result envelope for every command."""

    command: str
    verdict: str  # "certified" | "not_certified" | "completed"
    reason: Optional[str] = None
    detail: Optional[str] = None
    certificate: Optional[dict] = None
    provenance: dict = {}
    timing: dict = {}
    seed: Optional[int] = None
    csv: Optional[str] = None  # trajectory payload for simulate/synthesize
