"""Pydantic request/response models for the HTTP surface.

The model wire format matches the JSON file schema:
{"d": int, "types": [{"atoms": [{"k": [int, ...], "p": float}]}]}.
"""

from __future__ import annotations

from pydantic import BaseModel, Field


class AtomIn(BaseModel):
    k: list[int]
    p: float


class TypeIn(BaseModel):
    atoms: list[AtomIn]


class ModelIn(BaseModel):
    d: int
    types: list[TypeIn]

    def to_doc(self) -> dict:
        return self.model_dump()


class ErrorBody(BaseModel):
    kind: str
    message: str


# -- validate ----------------------------------------------------------------


class ValidateRequest(BaseModel):
    model: ModelIn


class ValidateResponse(BaseModel):
    nonsingular: bool
    positive_regular: bool
    positive_regular_witness: int | None
    aperiodic_A5: bool
    q_positive: str
    moment_orders_available: str  # "inf" for finite support


# -- spectral ----------------------------------------------------------------


class SpectralRequest(BaseModel):
    model: ModelIn
    gap_table_n: int = Field(default=40, ge=1)


class SpectralResponse(BaseModel):
    rho: float
    u: list[float]
    v: list[float]
    gaps: list[tuple[int, float]]


# -- extinction / tilt ---------------------------------------------------------


class ExtinctionRequest(BaseModel):
    model: ModelIn


class ExtinctionResponse(BaseModel):
    q: list[float]
    iterations: int
    residual: float


class TiltRequest(BaseModel):
    model: ModelIn
    a: list[float] | None = None  # explicit tilt vector
    critical: bool = False  # solve for the criticality-restoring scalar tilt


class TiltResponse(BaseModel):
    a: list[float]
    rho_bar: float
    q: list[float]
    residual: float
    tilted_model: dict


# -- q-process -----------------------------------------------------------------


class QProcessRequest(BaseModel):
    model: ModelIn
    a: list[float] | None = None  # default: extinction tilt
    box: list[int] | None = None
    box_cap: int = Field(default=30, ge=1)


class KernelEntry(BaseModel):
    x: list[int]
    y: list[int]
    value: float


class QProcessResponse(BaseModel):
    rho_bar: float
    u_bar: list[float]
    entries: list[KernelEntry]


# -- yaglom ---------------------------------------------------------------------


class YaglomRequest(BaseModel):
    model: ModelIn
    box: list[int] | None = None
    box_cap: int = Field(default=40, ge=1)
    x0: list[int] | None = None


class MassRow(BaseModel):
    state: list[int]
    mass: float


class YaglomResponse(BaseModel):
    nu: list[MassRow]
    gamma: float
    g_grad_at_1: list[float]
    mu_bar: list[MassRow]
    rho_box: float
    route_tv_gap: float
    leak_per_step: float


# -- conditioning ----------------------------------------------------------------


class PathIn(BaseModel):
    initial: list[int]
    times: list[int]
    states: list[list[int]]


class ConditionRequest(BaseModel):
    model: ModelIn
    path: PathIn
    set_spec: str
    n: int = Field(ge=0)
    box: list[int] | None = None
    box_cap: int = Field(default=40, ge=1)


class ConditionResponse(BaseModel):
    probability: float
    q_process_rhs: float
    gap: float


class DoubleLimitRequest(BaseModel):
    model: ModelIn
    z: list[int]
    x0: list[int] | None = None
    diagonal_m: int = Field(default=25, ge=1)
    fractions: list[float] = Field(default_factory=list)
    fraction_m: int = Field(default=50, ge=1)
    box: list[int] | None = None
    box_cap: int = Field(default=60, ge=1)


class DoubleLimitRow(BaseModel):
    schedule: str
    k: int
    n: int
    value_at_z: float
    gap_at_z: float
    tv_to_mu_bar: float


class DoubleLimitResponse(BaseModel):
    rows: list[DoubleLimitRow]


# -- progeny ----------------------------------------------------------------------


class ProgenyPmfRequest(BaseModel):
    model: ModelIn
    x0: list[int]
    n: list[int]
    oracle: bool = False  # cross-check against the DP table


class ProgenyPmfResponse(BaseModel):
    value: float
    dp_value: float | None = None
    gap: float | None = None


class ProgenyScalingRequest(BaseModel):
    model: ModelIn
    x0: list[int]
    n_min: int = Field(default=50, ge=1)
    n_max: int = Field(default=400, ge=1)
    n_step: int = Field(default=10, ge=1)


class ScalingRow(BaseModel):
    n: int
    target: list[int]
    value: float


class ProgenyScalingResponse(BaseModel):
    w: list[float]
    rows: list[ScalingRow]
    plateau: float
    formula_constant: float
    skipped: list[str]


class Theorem2Request(BaseModel):
    model: ModelIn
    path: PathIn
    n_values: list[int]
    a: list[float] | None = None


class Theorem2Row(BaseModel):
    n: int
    target: list[int]
    conditional: float
    limit: float
    gap: float


class Theorem2Response(BaseModel):
    a: list[float]
    u_bar: list[float]
    v_bar: list[float]
    rows: list[Theorem2Row]
    skipped: list[str]


class Lemma1Request(BaseModel):
    model: ModelIn
    a: list[float]
    x0: list[int]
    paths: list[PathIn]
    n: list[int]


class Lemma1Row(BaseModel):
    times: list[int]
    states: list[list[int]]
    lhs: float
    rhs: float
    discrepancy: float


class Lemma1Response(BaseModel):
    max_discrepancy: float
    rows: list[Lemma1Row]


# -- monte carlo --------------------------------------------------------------------


class MCRequest(BaseModel):
    model: ModelIn
    path: PathIn
    condition_kind: str  # set | nonextinct | progeny
    set_spec: str | None = None
    n: int = 0
    progeny: list[int] | None = None
    seed: int = 0
    replicates: int = Field(default=10_000, ge=1)
    horizon: int = Field(default=100, ge=1)
    pop_cap: int = Field(default=10_000, ge=1)
    threads: int = Field(default=1, ge=1)


class MCResponse(BaseModel):
    estimate: float
    std_error: float
    n_effective: int
    censored: int
