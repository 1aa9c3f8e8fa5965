from enum import Enum


class CaseInsensitiveStrEnum(str, Enum):
    @classmethod
    def _missing_(cls, value):
        if isinstance(value, str):
            for member in cls:
                if member.value.lower() == value.lower():
                    return member
        raise ValueError(f"Invalid value: {value}")

    def __str__(self):
        return str(self.value)


class Mode(CaseInsensitiveStrEnum):
    PK = "pk"
    PK_TILDE = "pktilde"


class SolveStatus(CaseInsensitiveStrEnum):
    OPTIMAL_LOCAL = "optimal-local"
    MAX_ITER = "max-iter"
    INFEASIBLE = "infeasible"


class HausdorffMethod(CaseInsensitiveStrEnum):
    EXACT = "exact"
    DIRECTION_SAMPLED = "direction-sampled"


class ConeKind(CaseInsensitiveStrEnum):
    ZERO = "zero"
    FINITELY_GENERATED = "finitely-generated"
    POLYHEDRAL = "polyhedral"
    WHOLE_SPACE = "whole-space"


class SubdiffKind(CaseInsensitiveStrEnum):
    SINGLETON = "singleton"
    CONVEX_HULL = "convex-hull"
    UNION_OF_POINTS = "union-of-points"
    SUM = "sum"


class MapClass(CaseInsensitiveStrEnum):
    AFFINE_CONTROL = "affine_control"
    SMOOTH_INVERSE = "smooth_inverse"
