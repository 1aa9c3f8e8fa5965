"""Compact convex sets with exact support functions and projections.

Set literals are pydantic models so the same objects are parsed from problem
files and used in computations. Every set is immutable.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Annotated, List, Literal, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from scipy.optimize import minimize

from .errors import DimensionMismatchError, ZeroDirectionError
from .models.base import HausdorffMethod

_POLISH_TOL = 1e-10


def _as_vector(x, n: int, what: str = "vector") -> np.ndarray:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.ndim != 1 or x.shape[0] != n:
        raise DimensionMismatchError(
            f"{what} has shape {x.shape}, expected ({n},)"
        )
    return x


class ConvexSet(BaseModel):
    """Common interface of the set catalog."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    @property
    def dimension(self) -> int:
        raise NotImplementedError

    @property
    def is_polytope(self) -> bool:
        return False

    def support(self, d) -> Tuple[float, np.ndarray]:
        """Support function value and a maximizer.

        Args:
            d: Nonzero direction

        Returns:
            (max over the set of <y, d>, a point attaining it)

        Raises:
            ZeroDirectionError: If d = 0
            DimensionMismatchError: If d has the wrong size
        """
        d = _as_vector(d, self.dimension, "direction")
        if not np.any(d):
            raise ZeroDirectionError("Support function requires a nonzero direction")
        return self._support(d)

    def project(self, x) -> Tuple[np.ndarray, float]:
        """Euclidean projection of x and its distance to the set."""
        x = _as_vector(x, self.dimension, "point")
        point = self._project(x)
        return point, float(np.linalg.norm(x - point))

    def distance(self, x) -> float:
        return self.project(x)[1]

    def contains(self, x, tol: float = 1e-9) -> bool:
        return self.distance(x) <= tol

    def vertices(self) -> np.ndarray:
        raise NotImplementedError(f"{type(self).__name__} has no vertex list")

    def max_norm(self, n_dirs: int = 720) -> float:
        """max |y| over the set."""
        if self.is_polytope:
            return float(np.max(np.linalg.norm(self.vertices(), axis=1)))
        directions, _ = sphere_directions(self.dimension, n_dirs)
        return float(np.max(support_values(self, directions)))

    def center(self) -> np.ndarray:
        """Some point of the set."""
        raise NotImplementedError

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError

    def _support(self, d: np.ndarray) -> Tuple[float, np.ndarray]:
        raise NotImplementedError

    def _project(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class Box(ConvexSet):
    type: Literal["box"] = "box"
    lo: List[float]
    hi: List[float]

    @model_validator(mode="after")
    def validate_bounds(self) -> "Box":
        if len(self.lo) == 0 or len(self.lo) != len(self.hi):
            raise ValueError("lo and hi must be nonempty and of equal length")
        if any(a > b for a, b in zip(self.lo, self.hi)):
            raise ValueError(f"Box requires lo <= hi, got lo={self.lo}, hi={self.hi}")
        return self

    @property
    def dimension(self) -> int:
        return len(self.lo)

    @property
    def is_polytope(self) -> bool:
        return True

    @property
    def lower(self) -> np.ndarray:
        return np.asarray(self.lo, dtype=float)

    @property
    def upper(self) -> np.ndarray:
        return np.asarray(self.hi, dtype=float)

    def _support(self, d):
        lo, hi = self.lower, self.upper
        point = np.where(d > 0, hi, np.where(d < 0, lo, 0.5 * (lo + hi)))
        return float(d @ point), point

    def _project(self, x):
        return np.clip(x, self.lower, self.upper)

    def vertices(self):
        corners = [sorted({a, b}) for a, b in zip(self.lo, self.hi)]
        return np.array(list(itertools.product(*corners)), dtype=float)

    def center(self):
        return 0.5 * (self.lower + self.upper)

    def sample(self, rng):
        return rng.uniform(self.lower, self.upper)


class Ball(ConvexSet):
    type: Literal["ball"] = "ball"
    center_: List[float] = Field(alias="center")
    radius: float = Field(ge=0.0)

    model_config = ConfigDict(frozen=True, extra="forbid", populate_by_name=True)

    @field_validator("center_")
    @classmethod
    def validate_center(cls, v: List[float]) -> List[float]:
        if len(v) == 0:
            raise ValueError("Ball center must be nonempty")
        return v

    @property
    def dimension(self) -> int:
        return len(self.center_)

    @property
    def c(self) -> np.ndarray:
        return np.asarray(self.center_, dtype=float)

    def _support(self, d):
        norm = np.linalg.norm(d)
        if norm == 0.0:
            return 0.0, self.c
        point = self.c + self.radius * d / norm
        return float(self.c @ d + self.radius * norm), point

    def _project(self, x):
        offset = x - self.c
        norm = np.linalg.norm(offset)
        if norm <= self.radius:
            return x.copy()
        return self.c + self.radius * offset / norm

    def max_norm(self, n_dirs: int = 720) -> float:
        return float(np.linalg.norm(self.c) + self.radius)

    def center(self):
        return self.c

    def sample(self, rng):
        direction = rng.standard_normal(self.dimension)
        direction /= max(np.linalg.norm(direction), 1e-300)
        scale = self.radius * rng.uniform() ** (1.0 / self.dimension)
        return self.c + scale * direction


class PolytopeV(ConvexSet):
    type: Literal["polytope"] = "polytope"
    points: List[List[float]] = Field(alias="vertices")

    model_config = ConfigDict(frozen=True, extra="forbid", populate_by_name=True)

    @field_validator("points")
    @classmethod
    def validate_points(cls, v: List[List[float]]) -> List[List[float]]:
        if len(v) == 0:
            raise ValueError("PolytopeV needs at least one vertex")
        sizes = {len(p) for p in v}
        if len(sizes) != 1 or 0 in sizes:
            raise ValueError("All polytope vertices must have the same positive size")
        return v

    @property
    def dimension(self) -> int:
        return len(self.points[0])

    @property
    def is_polytope(self) -> bool:
        return True

    def vertices(self):
        return np.asarray(self.points, dtype=float)

    def _support(self, d):
        return _support_of_points(self.vertices(), d)

    def _project(self, x):
        return project_onto_hull(self.vertices(), x)

    def center(self):
        return self.vertices().mean(axis=0)

    def sample(self, rng):
        weights = rng.dirichlet(np.ones(len(self.points)))
        return weights @ self.vertices()


class Segment(ConvexSet):
    type: Literal["segment"] = "segment"
    a: List[float]
    b: List[float]

    @model_validator(mode="after")
    def validate_endpoints(self) -> "Segment":
        if len(self.a) == 0 or len(self.a) != len(self.b):
            raise ValueError("Segment endpoints must be nonempty and of equal length")
        return self

    @property
    def dimension(self) -> int:
        return len(self.a)

    @property
    def is_polytope(self) -> bool:
        return True

    def vertices(self):
        return np.array([self.a, self.b], dtype=float)

    def _support(self, d):
        return _support_of_points(self.vertices(), d)

    def _project(self, x):
        a, b = np.asarray(self.a, dtype=float), np.asarray(self.b, dtype=float)
        span = b - a
        length2 = span @ span
        if length2 == 0.0:
            return a.copy()
        s = np.clip((x - a) @ span / length2, 0.0, 1.0)
        return a + s * span

    def center(self):
        return 0.5 * (np.asarray(self.a) + np.asarray(self.b))

    def sample(self, rng):
        s = rng.uniform()
        return (1 - s) * np.asarray(self.a) + s * np.asarray(self.b)


class AffineImage(ConvexSet):
    """The set offset + matrix @ base."""

    type: Literal["affine_image"] = "affine_image"
    matrix: List[List[float]]
    base: "CompactConvexSet"
    offset: Optional[List[float]] = None

    @model_validator(mode="after")
    def validate_shapes(self) -> "AffineImage":
        rows = len(self.matrix)
        if rows == 0 or any(len(row) != self.base.dimension for row in self.matrix):
            raise ValueError(
                f"matrix must be n x {self.base.dimension} for a base of dimension "
                f"{self.base.dimension}"
            )
        if self.offset is not None and len(self.offset) != rows:
            raise ValueError(f"offset must have {rows} entries")
        return self

    @property
    def dimension(self) -> int:
        return len(self.matrix)

    @property
    def M(self) -> np.ndarray:
        return np.asarray(self.matrix, dtype=float).reshape(self.dimension, -1)

    @property
    def shift(self) -> np.ndarray:
        if self.offset is None:
            return np.zeros(self.dimension)
        return np.asarray(self.offset, dtype=float)

    @property
    def is_polytope(self) -> bool:
        return self.base.is_polytope

    def flattened(self) -> "AffineImage":
        """Compose nested images into a single map over a non-image base."""
        if not isinstance(self.base, AffineImage):
            return self
        inner = self.base.flattened()
        matrix = self.M @ inner.M
        offset = self.M @ inner.shift + self.shift
        return AffineImage(
            matrix=matrix.tolist(), base=inner.base, offset=offset.tolist()
        )

    def vertices(self):
        return self.base.vertices() @ self.M.T + self.shift

    def _support(self, d):
        value, point = self.base._support(self.M.T @ d)
        return float(value + self.shift @ d), self.M @ point + self.shift

    def _project(self, x):
        if self.is_polytope:
            return project_onto_hull(self.vertices(), x)
        flat = self.flattened()
        matrix, shift, base = flat.M, flat.shift, flat.base
        start = base.center()

        def objective(w):
            r = matrix @ w + shift - x
            return 0.5 * r @ r, matrix.T @ r

        # base is a Ball here; stay inside it through an inequality constraint
        constraint = {
            "type": "ineq",
            "fun": lambda w: base.radius**2 - (w - base.c) @ (w - base.c),
            "jac": lambda w: -2.0 * (w - base.c),
        }
        result = minimize(
            objective,
            start,
            jac=True,
            method="SLSQP",
            constraints=[constraint],
            options={"ftol": 1e-15, "maxiter": 500},
        )
        w = base._project(result.x)
        return matrix @ w + shift

    def center(self):
        return self.M @ self.base.center() + self.shift

    def sample(self, rng):
        return self.M @ self.base.sample(rng) + self.shift


class WholeSpace(ConvexSet):
    """R^n; used for an unconstrained endpoint set."""

    type: Literal["whole_space"] = "whole_space"
    n: int = Field(ge=1)

    @property
    def dimension(self) -> int:
        return self.n

    def _support(self, d):
        return float("inf"), np.full(self.n, np.nan)

    def _project(self, x):
        return x.copy()

    def center(self):
        return np.zeros(self.n)


CompactConvexSet = Annotated[
    Union[Box, Ball, PolytopeV, Segment, AffineImage], Field(discriminator="type")
]
EndpointSet = Annotated[
    Union[Box, Ball, PolytopeV, Segment, AffineImage, WholeSpace],
    Field(discriminator="type"),
]

AffineImage.model_rebuild()


def _support_of_points(points: np.ndarray, d: np.ndarray) -> Tuple[float, np.ndarray]:
    values = points @ d
    best = int(np.argmax(values))
    return float(values[best]), points[best].copy()


def project_onto_hull(points: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Project x onto conv(points) by a simplex-weight QP with exact polishing."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if len(points) == 1:
        return points[0].copy()
    if points.shape[1] == 1:
        return np.clip(x, points.min(axis=0), points.max(axis=0))

    def objective(w):
        r = w @ points - x
        return 0.5 * r @ r, points @ r

    m = len(points)
    result = minimize(
        objective,
        np.full(m, 1.0 / m),
        jac=True,
        method="SLSQP",
        bounds=[(0.0, 1.0)] * m,
        constraints=[
            {"type": "eq", "fun": lambda w: w.sum() - 1.0, "jac": lambda w: np.ones(m)}
        ],
        options={"ftol": 1e-16, "maxiter": 500},
    )
    weights = np.clip(result.x, 0.0, None)
    weights /= weights.sum()
    best = weights @ points
    polished = _polish(points[weights > _POLISH_TOL], x)
    if polished is not None and np.linalg.norm(polished - x) <= np.linalg.norm(
        best - x
    ) + 1e-12:
        return polished
    return best


def _polish(active: np.ndarray, x: np.ndarray) -> Optional[np.ndarray]:
    """Exact projection onto the affine hull of the active vertices, if inside."""
    if len(active) == 0:
        return None
    if len(active) == 1:
        return active[0].copy()
    anchor = active[0]
    span = (active[1:] - anchor).T
    coef, *_ = np.linalg.lstsq(span, x - anchor, rcond=None)
    weights = np.concatenate([[1.0 - coef.sum()], coef])
    if np.any(weights < -1e-12):
        return None
    return anchor + span @ coef


def sphere_directions(n: int, n_dirs: int, seed: int = 0) -> Tuple[np.ndarray, float]:
    """Unit directions and their covering radius on the sphere.

    One dimension uses the two exact directions, two dimensions equally spaced
    angles, higher dimensions seeded Gaussian samples with an estimated radius.
    """
    if n == 1:
        return np.array([[1.0], [-1.0]]), 0.0
    if n == 2:
        angles = 2.0 * np.pi * np.arange(n_dirs) / n_dirs
        directions = np.column_stack([np.cos(angles), np.sin(angles)])
        return directions, 2.0 * np.sin(np.pi / (2.0 * n_dirs))
    rng = np.random.default_rng(seed)
    directions = rng.standard_normal((n_dirs, n))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    samples = rng.standard_normal((max(n_dirs // 2, 1), n))
    samples /= np.linalg.norm(samples, axis=1, keepdims=True)
    gaps = np.sqrt(np.maximum(2.0 - 2.0 * samples @ directions.T, 0.0)).min(axis=1)
    return directions, float(gaps.max())


@dataclass(frozen=True)
class HausdorffReport:
    value: float
    method: HausdorffMethod
    error_bound: float
    n_dirs: int = 0


def hausdorff(A: ConvexSet, B: ConvexSet, n_dirs: int = 720) -> HausdorffReport:
    """Pompeiu-Hausdorff distance between two compact convex sets.

    Exact for ball pairs, polytope pairs and any pair in one dimension;
    otherwise the support-function form sup_{|d|=1} |σ_A(d) − σ_B(d)| is
    sampled and an error bound from the covering radius is reported.
    """
    if A.dimension != B.dimension:
        raise DimensionMismatchError(
            f"Sets have dimensions {A.dimension} and {B.dimension}"
        )
    A, B = simplify(A), simplify(B)
    if isinstance(A, Ball) and isinstance(B, Ball):
        value = np.linalg.norm(A.c - B.c) + abs(A.radius - B.radius)
        return HausdorffReport(float(value), HausdorffMethod.EXACT, 0.0)
    if A.is_polytope and B.is_polytope:
        forward = max(B.distance(a) for a in A.vertices())
        backward = max(A.distance(b) for b in B.vertices())
        value = float(max(forward, backward))
        return HausdorffReport(value, HausdorffMethod.EXACT, 0.0)
    directions, radius = sphere_directions(A.dimension, n_dirs)
    gaps = np.abs(support_values(A, directions) - support_values(B, directions))
    if A.dimension == 1:
        return HausdorffReport(float(max(gaps)), HausdorffMethod.EXACT, 0.0)
    bound = (A.max_norm() + B.max_norm()) * radius
    return HausdorffReport(
        float(max(gaps)),
        HausdorffMethod.DIRECTION_SAMPLED,
        float(bound),
        len(directions),
    )


def support_values(S: ConvexSet, directions: np.ndarray) -> np.ndarray:
    """Support function values for a stack of directions (rows)."""
    directions = np.atleast_2d(directions)
    if isinstance(S, Box):
        return directions.clip(min=0) @ S.upper + directions.clip(max=0) @ S.lower
    if isinstance(S, Ball):
        return directions @ S.c + S.radius * np.linalg.norm(directions, axis=1)
    if isinstance(S, (PolytopeV, Segment)):
        return np.max(directions @ S.vertices().T, axis=1)
    if isinstance(S, AffineImage):
        return support_values(S.base, directions @ S.M) + directions @ S.shift
    return np.array([S._support(d)[0] for d in directions])


def simplify(S: ConvexSet) -> ConvexSet:
    """Rewrite affine images of balls and boxes as balls and boxes when possible."""
    if not isinstance(S, AffineImage):
        return S
    flat = S.flattened()
    matrix, base = flat.M, flat.base
    if matrix.shape[0] != matrix.shape[1]:
        return flat
    if isinstance(base, Ball):
        scale = matrix[0, 0]
        if np.allclose(matrix, scale * np.eye(len(matrix)), rtol=0.0, atol=0.0):
            center = matrix @ base.c + flat.shift
            return Ball(center=center.tolist(), radius=abs(scale) * base.radius)
    diagonal = np.count_nonzero(matrix - np.diag(np.diag(matrix))) == 0
    if isinstance(base, Box) and diagonal:
        ends = np.diag(matrix)[:, None] * np.column_stack([base.lower, base.upper])
        ends += flat.shift[:, None]
        return Box(lo=ends.min(axis=1).tolist(), hi=ends.max(axis=1).tolist())
    return flat
