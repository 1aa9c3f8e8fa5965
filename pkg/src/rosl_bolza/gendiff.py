"""Exact normal cones, subdifferentials, graph normal cones and coderivatives.

Everything is computed analytically on the set catalog and on a small
nonsmooth fragment of the expression language: linear combinations of
``abs``/``min``/``max`` atoms over smooth arguments plus a smooth remainder.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Any, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import linprog, lsq_linear
from scipy.spatial import ConvexHull

from .errors import (
    PointNotInSetError,
    PointNotOnGraphError,
    UnsupportedExpressionError,
)
from .expressions import BinOp, Call, Expression, Neg, state_names
from .models.base import ConeKind, SubdiffKind
from .setmap import AffineControlMap, SmoothInverseMap
from .sets import (
    AffineImage,
    Ball,
    Box,
    ConvexSet,
    PolytopeV,
    Segment,
    WholeSpace,
    project_onto_hull,
    simplify,
)

_TOL = 1e-8
_KINK_TOL = 1e-9


@dataclass(frozen=True)
class ConeRep:
    """Closed convex cone {G a + L b : a >= 0} in R^n.

    ``generators`` and ``lineality`` hold G and L as rows.
    """

    kind: ConeKind
    n: int
    generators: np.ndarray
    lineality: np.ndarray

    @classmethod
    def zero(cls, n: int) -> "ConeRep":
        return cls(ConeKind.ZERO, n, np.zeros((0, n)), np.zeros((0, n)))

    @classmethod
    def whole_space(cls, n: int) -> "ConeRep":
        return cls(ConeKind.WHOLE_SPACE, n, np.zeros((0, n)), np.eye(n))

    @classmethod
    def from_parts(
        cls, n: int, generators: Sequence[np.ndarray] = (), lineality: Any = None
    ) -> "ConeRep":
        gens = _unique_rows(_normalized_rows(np.reshape(generators, (-1, n))))
        lin = np.zeros((0, n)) if lineality is None else np.reshape(lineality, (-1, n))
        if lin.shape[0] >= n and np.linalg.matrix_rank(lin) == n:
            return cls.whole_space(n)
        if lin.shape[0]:
            return cls(ConeKind.POLYHEDRAL, n, gens, lin)
        if gens.shape[0]:
            return cls(ConeKind.FINITELY_GENERATED, n, gens, np.zeros((0, n)))
        return cls.zero(n)

    def columns(self) -> Tuple[np.ndarray, np.ndarray]:
        """Generator matrix (n x c) and per-column lower bounds (0 or -inf)."""
        matrix = np.vstack([self.generators, self.lineality]).T.reshape(self.n, -1)
        lower = np.concatenate(
            [np.zeros(len(self.generators)), np.full(len(self.lineality), -np.inf)]
        )
        return matrix, lower

    def project(self, w: Any) -> np.ndarray:
        w = np.asarray(w, dtype=float).reshape(self.n)
        if self.kind is ConeKind.WHOLE_SPACE:
            return w.copy()
        matrix, lower = self.columns()
        if matrix.shape[1] == 0:
            return np.zeros(self.n)
        return matrix @ _bounded_lstsq(matrix, w, lower)

    def distance(self, w: Any) -> float:
        w = np.asarray(w, dtype=float).reshape(self.n)
        return float(np.linalg.norm(w - self.project(w)))

    def contains(self, w: Any, tol: float = 1e-10) -> bool:
        return self.distance(w) <= tol

    def negated(self) -> "ConeRep":
        return ConeRep(self.kind, self.n, -self.generators, self.lineality)

    def mapped(self, matrix: np.ndarray) -> "ConeRep":
        """Image of the cone under a linear map."""
        matrix = np.asarray(matrix, dtype=float)
        return ConeRep.from_parts(
            matrix.shape[0],
            self.generators @ matrix.T,
            self.lineality @ matrix.T if len(self.lineality) else None,
        )


def _bounded_lstsq(matrix: np.ndarray, rhs: np.ndarray, lower: np.ndarray):
    upper = np.full(matrix.shape[1], np.inf)
    if np.all(np.isneginf(lower)):
        return np.linalg.lstsq(matrix, rhs, rcond=None)[0]
    return lsq_linear(matrix, rhs, bounds=(lower, upper), method="bvls").x


def _normalized_rows(rows: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(rows, axis=1)
    keep = norms > 1e-14
    return rows[keep] / norms[keep, None]


def _unique_rows(rows: np.ndarray, decimals: int = 10) -> np.ndarray:
    if len(rows) <= 1:
        return rows
    _, index = np.unique(np.round(rows, decimals), axis=0, return_index=True)
    return rows[np.sort(index)]


def normal_cone(set: ConvexSet, x: Any, tol: float = _TOL) -> ConeRep:
    """Normal cone of a catalog set at a point of the set.

    Raises:
        PointNotInSetError: If x is farther than tol from the set
    """
    x = np.asarray(x, dtype=float).reshape(set.dimension)
    if isinstance(set, WholeSpace):
        return ConeRep.zero(set.dimension)
    distance = set.distance(x)
    if distance > tol:
        raise PointNotInSetError(
            f"Point {x.tolist()} is at distance {distance:.3e} from {set}"
        )
    set = simplify(set)
    if isinstance(set, Box):
        return _box_cone(set, x, tol)
    if isinstance(set, Ball):
        return _ball_cone(set.c, set.radius, x, tol)
    if isinstance(set, (PolytopeV, Segment)) or set.is_polytope:
        return polytope_normal_cone(set.vertices(), x, tol)
    if isinstance(set, AffineImage):
        return _ellipsoid_cone(set.flattened(), x, tol)
    raise PointNotInSetError(f"No normal cone rule for {type(set).__name__}")


def _box_cone(box: Box, x: np.ndarray, tol: float) -> ConeRep:
    n = box.dimension
    generators, lineality = [], []
    for i, (lo, hi) in enumerate(zip(box.lower, box.upper)):
        e = np.eye(n)[i]
        if hi - lo <= tol:
            lineality.append(e)
        elif x[i] >= hi - tol:
            generators.append(e)
        elif x[i] <= lo + tol:
            generators.append(-e)
    return ConeRep.from_parts(n, generators, lineality or None)


def _ball_cone(c: np.ndarray, radius: float, x: np.ndarray, tol: float) -> ConeRep:
    n = len(c)
    if radius <= tol:
        return ConeRep.whole_space(n)
    offset = x - c
    if np.linalg.norm(offset) >= radius - tol:
        return ConeRep.from_parts(n, [offset])
    return ConeRep.zero(n)


def _ellipsoid_cone(image: AffineImage, x: np.ndarray, tol: float) -> ConeRep:
    # image = shift + M (c + r B); normals are (M M^T)^+ s on the boundary
    ball: Ball = image.base
    n = image.dimension
    if ball.radius <= tol:
        return ConeRep.whole_space(n)
    u, s, _ = np.linalg.svd(image.M)
    rank = int(np.sum(s > 1e-12 * max(s.max(), 1.0)))
    lineality = u[:, rank:].T if rank < n else None
    local = u[:, :rank].T @ (x - image.shift - image.M @ ball.c) / ball.radius
    level = float(np.sum(local**2 / s[:rank] ** 2))
    if level >= 1.0 - tol:
        generator = u[:, :rank] @ (local / s[:rank] ** 2)
        return ConeRep.from_parts(n, [generator], lineality)
    return ConeRep.from_parts(n, [], lineality)


def polytope_normal_cone(vertices: np.ndarray, x: Any, tol: float = _TOL) -> ConeRep:
    """Normal cone of conv(vertices) at x from the active facets."""
    vertices = np.atleast_2d(np.asarray(vertices, dtype=float))
    x = np.asarray(x, dtype=float)
    n = vertices.shape[1]
    centroid = vertices.mean(axis=0)
    shifted = vertices - centroid
    _, s, vt = np.linalg.svd(shifted, full_matrices=True)
    dim = int(np.sum(s > 1e-10 * max(1.0, s.max(initial=0.0))))
    basis, complement = vt[:dim].T, vt[dim:]
    lineality = complement if dim < n else None
    if dim == 0:
        return ConeRep.whole_space(n)
    coords = shifted @ basis
    local = (x - centroid) @ basis
    generators = []
    if dim == 1:
        if local[0] >= coords.max() - tol:
            generators.append(basis[:, 0])
        if local[0] <= coords.min() + tol:
            generators.append(-basis[:, 0])
    else:
        hull = ConvexHull(coords)
        for equation in hull.equations:
            normal, offset = equation[:-1], equation[-1]
            if normal @ local + offset >= -tol:
                generators.append(basis @ normal)
    return ConeRep.from_parts(n, generators, lineality)


def inflated_normal_cone(
    set: ConvexSet, eta: float, x: Any, tol: float = _TOL
) -> ConeRep:
    """Normal cone of set + eta B at x."""
    x = np.asarray(x, dtype=float).reshape(set.dimension)
    if eta <= 0.0 or isinstance(set, WholeSpace):
        return normal_cone(set, x, tol)
    nearest, distance = set.project(x)
    if distance > eta + tol:
        raise PointNotInSetError(
            f"Point {x.tolist()} is at distance {distance:.3e} > {eta:.3e} from {set}"
        )
    if distance >= eta - tol:
        return ConeRep.from_parts(set.dimension, [x - nearest])
    return ConeRep.zero(set.dimension)


@dataclass(frozen=True)
class SubdiffRep:
    """A subdifferential: one gradient, a hull, a finite union, or a sum of those."""

    kind: SubdiffKind
    points: np.ndarray
    parts: Tuple["SubdiffRep", ...] = ()

    @classmethod
    def singleton(cls, gradient: Any) -> "SubdiffRep":
        return cls(SubdiffKind.SINGLETON, np.atleast_2d(np.asarray(gradient, float)))

    @property
    def n(self) -> int:
        if self.kind is SubdiffKind.SUM:
            return self.parts[0].n
        return self.points.shape[1]

    def pieces(self) -> List[np.ndarray]:
        """Convex pieces as vertex arrays; the set is their union."""
        if self.kind is SubdiffKind.SUM:
            combos = itertools.product(*(part.pieces() for part in self.parts))
            return [_minkowski(list(combo)) for combo in combos]
        if self.kind is SubdiffKind.UNION_OF_POINTS:
            return [p[None, :] for p in self.points]
        return [self.points]

    def negated(self) -> "SubdiffRep":
        if self.kind is SubdiffKind.SUM:
            parts = tuple(p.negated() for p in self.parts)
            return SubdiffRep(self.kind, self.points, parts)
        return SubdiffRep(self.kind, -self.points)

    def scaled(self, alpha: float) -> "SubdiffRep":
        """alpha * set; negative alpha flips the set."""
        if self.kind is SubdiffKind.SUM:
            parts = tuple(p.scaled(alpha) for p in self.parts)
            return SubdiffRep(self.kind, self.points, parts)
        return SubdiffRep(self.kind, alpha * self.points)

    def distance(self, w: Any) -> float:
        w = np.asarray(w, dtype=float).reshape(self.n)
        return min(
            float(np.linalg.norm(w - project_onto_hull(piece, w)))
            for piece in self.pieces()
        )

    def contains(self, w: Any, tol: float = 1e-9) -> bool:
        return self.distance(w) <= tol

    def equivalent(self, other: "SubdiffRep", tol: float = 1e-9) -> bool:
        """Set equality: every piece of one set lies inside a piece of the other."""
        return _covered(self, other, tol) and _covered(other, self, tol)


def _covered(a: SubdiffRep, b: SubdiffRep, tol: float) -> bool:
    targets = b.pieces()
    for piece in a.pieces():
        if not any(
            all(np.linalg.norm(p - project_onto_hull(t, p)) <= tol for p in piece)
            for t in targets
        ):
            return False
    return True


def _minkowski(pieces: List[np.ndarray]) -> np.ndarray:
    total = pieces[0]
    for piece in pieces[1:]:
        total = (total[:, None, :] + piece[None, :, :]).reshape(-1, total.shape[1])
    return _unique_rows(total)


@dataclass(frozen=True)
class _Kink:
    coef: float
    atom: Call


def _split(expr: Expression) -> Tuple[List[_Kink], List[Tuple[float, Expression]]]:
    """Write expr as Σ c_i kink_i + Σ d_j smooth_j, or reject it."""
    if not expr.has_kinks():
        return [], [(1.0, expr)]
    if isinstance(expr, Call) and expr.func in ("abs", "min", "max"):
        if any(arg.has_kinks() for arg in expr.args):
            raise UnsupportedExpressionError(f"Nested kinks in '{expr}'")
        return [_Kink(1.0, expr)], []
    if isinstance(expr, Neg):
        return _scale_split(_split(expr.arg), -1.0)
    if isinstance(expr, BinOp):
        if expr.op in ("+", "-"):
            left = _split(expr.left)
            right = _split(expr.right)
            if expr.op == "-":
                right = _scale_split(right, -1.0)
            return left[0] + right[0], left[1] + right[1]
        if expr.op == "*" and expr.left.is_constant():
            return _scale_split(_split(expr.right), _constant(expr.left))
        if expr.op == "*" and expr.right.is_constant():
            return _scale_split(_split(expr.left), _constant(expr.right))
        if expr.op == "/" and expr.right.is_constant():
            return _scale_split(_split(expr.left), 1.0 / _constant(expr.right))
    raise UnsupportedExpressionError(
        f"'{expr}' is outside the nonsmooth fragment: kinks must enter linearly"
    )


def _constant(expr: Expression) -> float:
    return expr.evaluate({})


def _scale_split(split, factor: float):
    kinks, smooth = split
    return (
        [_Kink(factor * k.coef, k.atom) for k in kinks],
        [(factor * c, e) for c, e in smooth],
    )


def _branches(
    atom: Call, names: Sequence[str], z: np.ndarray, size: int
) -> List[np.ndarray]:
    duals = [arg.compile_gradient(names)(z) for arg in atom.args]
    if atom.func == "abs":
        value, grad = duals[0]
        grad = grad[:size]
        if abs(value) > _KINK_TOL:
            return [np.sign(value) * grad]
        return [grad, -grad]
    values = np.array([value for value, _ in duals])
    best = values.max() if atom.func == "max" else values.min()
    active = np.abs(values - best) <= _KINK_TOL
    return [duals[i][1][:size] for i in np.nonzero(active)[0]]


def subdiff(
    expr: Expression,
    point: Any,
    names: Optional[Sequence[str]] = None,
    fixed: Optional[Mapping[str, float]] = None,
) -> SubdiffRep:
    """Limiting subdifferential of expr with respect to ``names`` at ``point``.

    Args:
        expr: Scalar expression in the nonsmooth fragment
        point: Values of the differentiation variables
        names: Differentiation variables, x1..xn by default
        fixed: Values of further variables held constant (for example t)

    Returns:
        Singleton at smooth points, ConvexHull or Sum at convex kinks,
        UnionOfPoints at a concave kink

    Raises:
        UnsupportedExpressionError: If kinks enter nonlinearly, are nested, or
            convex and concave kinks are active together
    """
    point = np.atleast_1d(np.asarray(point, dtype=float))
    names = list(names or state_names(len(point)))
    fixed = dict(fixed or {})
    all_names = names + list(fixed)
    z = np.concatenate([point, np.array(list(fixed.values()), dtype=float)])
    size = len(names)

    kinks, smooth = _split(expr)
    base = np.zeros(size)
    for coef, part in smooth:
        base += coef * part.compile_gradient(all_names)(z)[1][:size]

    convex: List[np.ndarray] = []
    concave: List[np.ndarray] = []
    for kink in kinks:
        grads = _branches(kink.atom, all_names, z, size)
        if len(grads) == 1 or kink.coef == 0.0:
            base += kink.coef * grads[0]
            continue
        points = kink.coef * np.array(grads)
        is_convex = (kink.atom.func in ("abs", "max")) == (kink.coef > 0)
        (convex if is_convex else concave).append(_unique_rows(points))

    if not convex and not concave:
        return SubdiffRep.singleton(base)
    if concave and (convex or len(concave) > 1):
        raise UnsupportedExpressionError(
            f"'{expr}' mixes active convex and concave kinks at {point.tolist()}"
        )
    if concave:
        return SubdiffRep(SubdiffKind.UNION_OF_POINTS, concave[0] + base)
    if len(convex) == 1:
        return SubdiffRep(SubdiffKind.CONVEX_HULL, convex[0] + base)
    parts = [SubdiffRep(SubdiffKind.CONVEX_HULL, convex[0] + base)]
    parts += [SubdiffRep(SubdiffKind.CONVEX_HULL, pts) for pts in convex[1:]]
    return SubdiffRep(SubdiffKind.SUM, np.zeros((0, size)), tuple(parts))


def sym_subdiff(
    expr: Expression,
    point: Any,
    names: Optional[Sequence[str]] = None,
    fixed: Optional[Mapping[str, float]] = None,
) -> SubdiffRep:
    """Symmetric subdifferential ∂φ ∪ (−∂(−φ)).

    The union equals whichever of the two pieces is convex-valued, the other
    being the finite set of its extreme branch gradients.
    """
    direct = subdiff(expr, point, names, fixed)
    if direct.kind is not SubdiffKind.UNION_OF_POINTS:
        return direct
    return subdiff(Neg(expr), point, names, fixed).negated()


@dataclass(frozen=True)
class GraphCone:
    """Normal cone to gph F as {(X a, Y a) : a_i >= lower_i}."""

    X: np.ndarray
    Y: np.ndarray
    lower: np.ndarray

    def distance(self, u: Any, q: Any) -> float:
        target = np.concatenate([np.ravel(u), np.ravel(q)])
        matrix = np.vstack([self.X, self.Y])
        if matrix.shape[1] == 0:
            return float(np.linalg.norm(target))
        a = _bounded_lstsq(matrix, target, self.lower)
        return float(np.linalg.norm(matrix @ a - target))

    def contains(self, u: Any, q: Any, tol: float = 1e-9) -> bool:
        return self.distance(u, q) <= tol


def graph_normal_cone(
    map, x: Any, y: Any, t: float, tol: float = _TOL
) -> GraphCone:
    """Normal cone to the graph of F(., t) at (x, y).

    Raises:
        PointNotOnGraphError: If y is not in F(x, t) within tol
    """
    x = np.asarray(x, dtype=float).reshape(map.n)
    y = np.asarray(y, dtype=float).reshape(map.n)
    if isinstance(map, AffineControlMap):
        value, jac = map.g1_jacobian(x, t)
        image = map.control_image(t)
        w = y - value
        if image.distance(w) > tol:
            raise PointNotOnGraphError(
                f"{y.tolist()} is not in F({x.tolist()}, {t})"
            )
        matrix, lower = normal_cone(image, w, tol).columns()
        return GraphCone(-jac.T @ matrix, matrix, lower)
    if isinstance(map, SmoothInverseMap):
        value, jac = map.psi_jacobian(y, t)
        if np.linalg.norm(value - x) > tol:
            raise PointNotOnGraphError(
                f"psi({y.tolist()}, {t}) = {value.tolist()} differs from {x.tolist()}"
            )
        return GraphCone(np.eye(map.n), -jac.T, np.full(map.n, -np.inf))
    raise PointNotOnGraphError(f"No graph normal rule for {type(map).__name__}")


@dataclass(frozen=True)
class Coderivative:
    """The slice {X a : Y a = -v, a_i >= lower_i} of a graph normal cone."""

    cone: GraphCone
    v: np.ndarray

    def _bounds(self) -> List[Tuple[Optional[float], None]]:
        return [(None if np.isneginf(lo) else lo, None) for lo in self.cone.lower]

    def is_empty(self) -> bool:
        c = self.cone
        if c.Y.shape[1] == 0:
            return bool(np.linalg.norm(self.v) > _KINK_TOL)
        result = linprog(
            np.zeros(c.Y.shape[1]),
            A_eq=c.Y,
            b_eq=-self.v,
            bounds=self._bounds(),
            method="highs",
        )
        return result.status == 2

    def contains(self, u: Any, tol: float = 1e-9) -> bool:
        return self.cone.contains(u, -self.v, tol)

    def is_zero(self) -> bool:
        """True iff the slice is exactly {0}."""
        if self.is_empty():
            return False
        c = self.cone
        if c.X.shape[1] == 0:
            return True
        for row in np.vstack([c.X, -c.X]):
            result = linprog(
                -row,
                A_eq=c.Y,
                b_eq=-self.v,
                bounds=self._bounds(),
                method="highs",
            )
            if result.status == 3 or (result.status == 0 and -result.fun > _KINK_TOL):
                return False
        return True


def coderivative(map, x: Any, y: Any, t: float, v: Any) -> Coderivative:
    """D*F(x, y)(v) = {u : (u, -v) in N((x, y); gph F)}."""
    v = np.asarray(v, dtype=float).reshape(map.n)
    return Coderivative(graph_normal_cone(map, x, y, t), v)


def lipschitz_like_check(map, x: Any, y: Any, t: float) -> bool:
    """Coderivative criterion: D*F(x, y)(0) = {0}."""
    return coderivative(map, x, y, t, np.zeros(map.n)).is_zero()
