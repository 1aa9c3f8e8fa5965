from typing import Any, List, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from ..setmap import AnySetMap, ExpressionField
from ..sets import EndpointSet
from .base import MapClass, Mode


class Section(BaseModel):
    model_config = ConfigDict(
        extra="forbid", populate_by_name=True, arbitrary_types_allowed=True
    )


class MetaSection(Section):
    n: int = Field(ge=1)
    T: float = Field(gt=0.0)
    x0: List[float]

    @model_validator(mode="after")
    def validate_x0(self) -> "MetaSection":
        if len(self.x0) != self.n:
            raise ValueError(f"x0 must have {self.n} entries, got {len(self.x0)}")
        return self


class CostSection(Section):
    phi0: ExpressionField = Field(default="0", validate_default=True)
    f: ExpressionField = Field(default="0", validate_default=True)


class ConstraintsSection(Section):
    ineq: List[ExpressionField] = Field(default_factory=list)
    eq: List[ExpressionField] = Field(default_factory=list)
    omega: Optional[EndpointSet] = None
    L: float = Field(default=0.0, ge=0.0)


class ReferenceSection(Section):
    """Analytic x̄ and ẋ̄ in t, or an open-loop control to integrate."""

    state: Optional[List[ExpressionField]] = None
    derivative: Optional[List[ExpressionField]] = None
    control: Optional[List[ExpressionField]] = None
    points: int = Field(default=4097, ge=2)

    @model_validator(mode="after")
    def validate_source(self) -> "ReferenceSection":
        analytic = self.state is not None and self.derivative is not None
        if analytic == (self.control is not None):
            raise ValueError(
                "reference needs either 'state' and 'derivative' or 'control'"
            )
        for expr in (self.state or []) + (self.derivative or []) + (self.control or []):
            if expr.variables() - {"t"}:
                raise ValueError(f"reference expression '{expr}' may only use t")
        return self


class LocalizationSection(Section):
    eps: float = Field(gt=0.0)
    eta: Optional[float] = Field(default=None, ge=0.0)
    reference: Optional[ReferenceSection] = None


class SolverConfig(Section):
    tol: float = Field(default=1e-8, gt=0.0)
    seeds: List[int] = Field(default_factory=lambda: [0])
    n_starts: int = Field(default=8, ge=1)
    smoothing: bool = False
    max_outer: int = Field(default=30, ge=1)
    max_inner: int = Field(default=500, ge=1)
    mode: Mode = Mode.PK

    @field_validator("seeds")
    @classmethod
    def validate_seeds(cls, v: List[int]) -> List[int]:
        if not v:
            raise ValueError("seeds cannot be empty")
        return v

    @property
    def seed(self) -> int:
        return self.seeds[0]


def _normalize_class(value: Any) -> Any:
    if not isinstance(value, str):
        return value
    compact = value.replace("_", "").replace("-", "").lower()
    for member in MapClass:
        if member.value.replace("_", "") == compact:
            return member.value
    return value


class ProblemFile(Section):
    meta: MetaSection
    dynamics: AnySetMap
    cost: CostSection = Field(default_factory=CostSection)
    constraints: ConstraintsSection = Field(default_factory=ConstraintsSection)
    localization: LocalizationSection
    solver: SolverConfig = Field(default_factory=SolverConfig)

    @model_validator(mode="before")
    @classmethod
    def prepare_dynamics(cls, data: Any) -> Any:
        if not isinstance(data, dict) or not isinstance(data.get("dynamics"), dict):
            return data
        dynamics = dict(data["dynamics"])
        dynamics["class"] = _normalize_class(dynamics.get("class"))
        meta = data.get("meta")
        if isinstance(meta, dict) and "T" in meta and "horizon" not in dynamics:
            dynamics["horizon"] = meta["T"]
        return {**data, "dynamics": dynamics}

    @model_validator(mode="after")
    def validate_dimensions(self) -> "ProblemFile":
        n = self.meta.n
        if self.dynamics.n != n:
            raise ValueError(
                f"dynamics domain_box has dimension {self.dynamics.n}, meta.n is {n}"
            )
        omega = self.constraints.omega
        if omega is not None and omega.dimension != n:
            raise ValueError(f"omega has dimension {omega.dimension}, meta.n is {n}")
        return self
