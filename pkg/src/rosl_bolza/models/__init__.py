from .base import (
    CaseInsensitiveStrEnum,
    ConeKind,
    HausdorffMethod,
    MapClass,
    Mode,
    SolveStatus,
    SubdiffKind,
)

__all__ = [
    "CaseInsensitiveStrEnum",
    "ConeKind",
    "HausdorffMethod",
    "MapClass",
    "Mode",
    "SolveStatus",
    "SubdiffKind",
]
