"""Pydantic request/response models for the HTTP service."""

from __future__ import annotations

from pydantic import BaseModel, Field, model_validator


class ModelSpec(BaseModel):
    """A model given either as text or as builder parameters.

    Exactly one of ``text``, ``mm1``, ``tandem``, ``tandem_ctmdp``, ``random``
    must be set.
    """

    text: str | None = None
    mm1: "Mm1Params | None" = None
    tandem: "TandemParams | None" = None
    tandem_ctmdp: "TandemCtmdpParams | None" = None
    random: "RandomParams | None" = None

    @model_validator(mode="after")
    def _one_of(self):
        given = [
            f
            for f in ("text", "mm1", "tandem", "tandem_ctmdp", "random")
            if getattr(self, f) is not None
        ]
        if len(given) != 1:
            raise ValueError(f"exactly one model source required, got {given or 'none'}")
        return self


class Mm1Params(BaseModel):
    cap: int = Field(ge=1)
    lambda_arrival: float = Field(gt=0)
    mu_service: float = Field(gt=0)


class TandemParams(BaseModel):
    cap: int = Field(ge=1)
    lam: float = Field(gt=0)
    mu1: float = Field(gt=0)
    mu2: float = Field(gt=0)
    mu3: float = Field(gt=0)
    a: float = Field(ge=0, le=1)
    b: float = Field(ge=0, le=1)
    p: float = Field(default=0.0, ge=0, le=1)
    delta_lambda: float = Field(default=0.0, ge=0)


class TandemCtmdpParams(BaseModel):
    cap: int = Field(ge=1)
    lam: float = Field(gt=0)
    mu1: float = Field(gt=0)
    mu2: float = Field(gt=0)
    mu3: float = Field(gt=0)
    modes: list[tuple[float, float, float]] = [(0.6, 0.1, 0.05), (0.7, 0.05, 0.05)]


class RandomParams(BaseModel):
    n: int = Field(ge=2)
    seed: int = 0
    density: float = Field(default=1.0, gt=0, le=1)


class ReduceRequest(BaseModel):
    model: ModelSpec
    horizon: float = Field(gt=0, alias="T")
    eps: float = Field(default=0.0, ge=0)
    r: int | None = None

    model_config = {"populate_by_name": True}


class ReduceResponse(BaseModel):
    m: int
    r: int
    kappa: float
    coeff: float
    coeff_gamma: float | None
    bound_at_T: float
    tolerance_met: bool
    removed_states: list[int]


class SolveRequest(ReduceRequest):
    n_points: int = Field(default=200, ge=2, le=100000)


class SolveResponse(ReduceResponse):
    csv: str


class SynthesizeRequest(BaseModel):
    model: ModelSpec
    horizon: float = Field(gt=0, alias="T")
    eps: float = Field(default=0.1, ge=0)
    tau: float = Field(gt=0)
    delta: float | None = Field(default=None, gt=0)
    identity_m: bool | None = None

    model_config = {"populate_by_name": True}


class SynthesizeResponse(BaseModel):
    r: int
    bound: float
    tolerance_met: bool
    segments: list[tuple[float, int]]
    policy_csv: str
    band_csv: str
    argmax_csv: str


class BenchRequest(BaseModel):
    kind: str = "random"
    sizes: list[int] = [100, 200, 500]
    horizon: float = Field(default=5.0, gt=0, alias="T")
    eps: float = Field(default=0.01, gt=0, lt=1)
    trunc_tol: float = Field(default=0.01, gt=0)
    seed: int = 1
    reps: int = Field(default=5, ge=5)

    model_config = {"populate_by_name": True}


class RuntimeRecordModel(BaseModel):
    n_states: int
    wall_time_uniformization: float
    wall_time_symbolic_full: float
    wall_time_symbolic_reduced: float
    r_chosen: int
    bound_at_T: float


class BenchResponse(BaseModel):
    records: list[RuntimeRecordModel]
    csv: str
    consistent: bool


class ErrorBody(BaseModel):
    code: str
    message: str
