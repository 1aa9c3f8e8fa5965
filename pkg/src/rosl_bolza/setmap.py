"""Set-valued maps F(x, t) and their standing-hypothesis diagnostics."""

from __future__ import annotations

import itertools
import logging
from typing import Annotated, Any, List, Literal, Tuple, Union

import numpy as np
from pydantic import (
    BaseModel,
    BeforeValidator,
    ConfigDict,
    Field,
    PlainSerializer,
    PrivateAttr,
    model_validator,
)
from scipy.integrate import trapezoid
from scipy.optimize import brentq, root

from .errors import DomainError, EmptySampleError, RootFindingError
from .expressions import Expression, as_expression, state_names, velocity_names
from .sets import (
    AffineImage,
    Box,
    CompactConvexSet,
    ConvexSet,
    PolytopeV,
    _as_vector,
    hausdorff,
)

log = logging.getLogger(__name__)

ExpressionField = Annotated[
    Expression,
    BeforeValidator(as_expression),
    PlainSerializer(str, return_type=str),
]

_DOMAIN_TOL = 1e-12
_ROOT_TOL = 1e-12
_RTOL = 4 * np.finfo(float).eps
_INVERT_TOL = 1e-10
_INVERT_RESTARTS = 32


class SetMap(BaseModel):
    """Common part of the map catalog: domain box, claimed moduli and horizon."""

    model_config = ConfigDict(
        frozen=True, extra="forbid", populate_by_name=True, arbitrary_types_allowed=True
    )

    domain_box: Box
    rosl_l: float
    m_F: float = Field(gt=0.0)
    horizon: float = Field(default=1.0, gt=0.0)

    @property
    def n(self) -> int:
        return self.domain_box.dimension

    def check_domain(self, x: Any, t: float) -> np.ndarray:
        x = _as_vector(x, self.n, "state")
        box = self.domain_box
        if np.any(x < box.lower - _DOMAIN_TOL) or np.any(x > box.upper + _DOMAIN_TOL):
            raise DomainError(f"State {x.tolist()} lies outside the domain box {box}")
        if t < -_DOMAIN_TOL or t > self.horizon + _DOMAIN_TOL:
            raise DomainError(f"Time {t} lies outside [0, {self.horizon}]")
        return x

    def evaluate(self, x: Any, t: float) -> ConvexSet:
        raise NotImplementedError

    def is_autonomous(self) -> bool:
        raise NotImplementedError


class AffineControlMap(SetMap):
    """F(x, t) = g1(x, t) + M(t) U."""

    kind: Literal["affine_control"] = Field(default="affine_control", alias="class")
    g1: List[ExpressionField]
    M: List[List[ExpressionField]]
    control_set: CompactConvexSet

    _g1_fns: list = PrivateAttr(default_factory=list)
    _M_fns: list = PrivateAttr(default_factory=list)

    @model_validator(mode="after")
    def validate_shapes(self) -> "AffineControlMap":
        n, m = self.n, self.control_set.dimension
        if len(self.g1) != n:
            raise ValueError(f"g1 must have {n} components, got {len(self.g1)}")
        if len(self.M) != n or any(len(row) != m for row in self.M):
            raise ValueError(f"M must be a {n} x {m} matrix")
        allowed = set(state_names(n)) | {"t"}
        for expr in self.g1:
            extra = expr.variables() - allowed
            if extra:
                raise ValueError(f"g1 component '{expr}' uses {sorted(extra)}")
        for row in self.M:
            for expr in row:
                if expr.variables() - {"t"}:
                    raise ValueError(f"M entry '{expr}' may only depend on t")
        names = state_names(n) + ["t"]
        self._g1_fns = [expr.compile_gradient(names) for expr in self.g1]
        self._M_fns = [[expr.compile(["t"]) for expr in row] for row in self.M]
        return self

    @property
    def control_dimension(self) -> int:
        return self.control_set.dimension

    def g1_value(self, x: np.ndarray, t: float) -> np.ndarray:
        z = np.append(x, t)
        return np.array([fn(z)[0] for fn in self._g1_fns])

    def g1_jacobian(self, x: np.ndarray, t: float) -> Tuple[np.ndarray, np.ndarray]:
        """Value of g1 and its Jacobian with respect to x."""
        z = np.append(x, t)
        pairs = [fn(z) for fn in self._g1_fns]
        value = np.array([v for v, _ in pairs])
        jac = np.array([g[:-1] for _, g in pairs]).reshape(self.n, self.n)
        return value, jac

    def control_matrix(self, t: float) -> np.ndarray:
        z = np.array([t], dtype=float)
        return np.array([[fn(z) for fn in row] for row in self._M_fns])

    def control_image(self, t: float) -> AffineImage:
        """C(t) = M(t) U."""
        matrix = self.control_matrix(t).tolist()
        return AffineImage(matrix=matrix, base=self.control_set)

    def evaluate(self, x: Any, t: float) -> ConvexSet:
        x = self.check_domain(x, t)
        return AffineImage(
            matrix=self.control_matrix(t).tolist(),
            base=self.control_set,
            offset=self.g1_value(x, t).tolist(),
        )

    def is_autonomous(self) -> bool:
        return not any(expr.depends_on(["t"]) for expr in self.g1) and not any(
            expr.depends_on(["t"]) for row in self.M for expr in row
        )

    def g1_is_affine(self) -> bool:
        names = set(state_names(self.n))
        return all(
            expr.curvature(names) in ("constant", "affine") for expr in self.g1
        )


class SmoothInverseMap(SetMap):
    """F(x, t) = {y : psi(y, t) = x}; psi is written in v1..vn and t."""

    kind: Literal["smooth_inverse"] = Field(default="smooth_inverse", alias="class")
    psi: List[ExpressionField]

    _psi_fns: list = PrivateAttr(default_factory=list)

    @model_validator(mode="after")
    def validate_psi(self) -> "SmoothInverseMap":
        if len(self.psi) != self.n:
            raise ValueError(f"psi must have {self.n} components, got {len(self.psi)}")
        allowed = set(velocity_names(self.n)) | {"t"}
        for expr in self.psi:
            extra = expr.variables() - allowed
            if extra:
                raise ValueError(f"psi component '{expr}' uses {sorted(extra)}")
            if expr.has_kinks():
                raise ValueError(f"psi component '{expr}' must be smooth")
        names = velocity_names(self.n) + ["t"]
        self._psi_fns = [expr.compile_gradient(names) for expr in self.psi]
        return self

    def psi_jacobian(self, y: np.ndarray, t: float) -> Tuple[np.ndarray, np.ndarray]:
        """Value of psi and its Jacobian with respect to y."""
        z = np.append(y, t)
        pairs = [fn(z) for fn in self._psi_fns]
        value = np.array([v for v, _ in pairs])
        jac = np.array([g[:-1] for _, g in pairs]).reshape(self.n, self.n)
        return value, jac

    def invert(self, x: np.ndarray, t: float, start: Any = None) -> np.ndarray:
        """Solve psi(y, t) = x by safeguarded root finding.

        Powell's hybrid method runs from the start point, then Levenberg-Marquardt,
        then both again from seeded restarts in the cube of radius m_F.

        Raises:
            RootFindingError: If no attempt reaches a residual of 1e-10
        """
        if self.n == 1:
            return np.array([self._invert_scalar(float(x[0]), t)])
        x = np.asarray(x, dtype=float)

        def residual_and_jacobian(y):
            value, jac = self.psi_jacobian(y, t)
            return value - x, jac

        def residual_norm(y):
            return float(np.linalg.norm(self.psi_jacobian(y, t)[0] - x))

        rng = np.random.default_rng(0)
        starts = [np.asarray(x if start is None else start, dtype=float)]
        starts += [
            rng.uniform(-self.m_F, self.m_F, self.n) for _ in range(_INVERT_RESTARTS)
        ]
        best, best_residual = starts[0], np.inf
        for guess in starts:
            for method in ("hybr", "lm"):
                try:
                    result = root(
                        residual_and_jacobian,
                        guess,
                        jac=True,
                        method=method,
                        options={"xtol": 1e-14},
                    )
                except (ArithmeticError, ValueError):
                    continue
                if not np.all(np.isfinite(result.x)):
                    continue
                residual = residual_norm(result.x)
                if residual <= _INVERT_TOL:
                    return result.x
                if residual < best_residual:
                    best, best_residual = result.x, residual
        raise RootFindingError(
            f"Cannot solve psi(y, {t}) = {x.tolist()} from {len(starts)} starts "
            f"(best residual {best_residual:.3e} at {best.tolist()})"
        )

    def _invert_scalar(self, x: float, t: float) -> float:
        def g(y: float) -> float:
            return self.psi_jacobian(np.array([y]), t)[0][0] - x

        if g(0.0) == 0.0:
            return 0.0
        lo, hi = -1.0, 1.0
        for _ in range(60):
            if g(lo) * g(hi) <= 0.0:
                return float(brentq(g, lo, hi, xtol=_ROOT_TOL, rtol=_RTOL))
            lo, hi = 2.0 * lo, 2.0 * hi
        raise RootFindingError(f"No sign change bracketing psi(y, {t}) = {x}")

    def evaluate(self, x: Any, t: float) -> ConvexSet:
        x = self.check_domain(x, t)
        return PolytopeV(vertices=[self.invert(x, t).tolist()])

    def is_autonomous(self) -> bool:
        return not any(expr.depends_on(["t"]) for expr in self.psi)


AnySetMap = Annotated[
    Union[AffineControlMap, SmoothInverseMap], Field(discriminator="kind")
]


def support(set: ConvexSet, d: Any) -> Tuple[float, np.ndarray]:
    return set.support(d)


def project(x: Any, set: ConvexSet) -> Tuple[np.ndarray, float]:
    return set.project(x)


def evaluate(map: SetMap, x: Any, t: float) -> ConvexSet:
    """Value F(x, t) of a map as a set literal.

    Raises:
        DomainError: If x is outside the domain box or t outside [0, T]
        RootFindingError: If a smooth-inverse value cannot be computed
    """
    return map.evaluate(x, t)


def _state_grid(box: Box, points: int) -> List[np.ndarray]:
    if points <= 1:
        return [box.center()]
    axes = [np.linspace(a, b, points) for a, b in zip(box.lower, box.upper)]
    return [np.array(p) for p in itertools.product(*axes)]


def _time_grid(horizon: float, points: int) -> np.ndarray:
    if points <= 1:
        return np.array([0.0])
    return np.linspace(0.0, horizon, points)


def rosl_check(
    map: SetMap, l_claim: float, n_pairs: int, seed: int, tol: float = 1e-9
) -> Tuple[float, bool]:
    """Sampled check of the relaxed one-sided Lipschitz condition.

    For convex values the worst case over y1 in F(x1) is the support-function
    difference σ_{F(x1)}(d) − σ_{F(x2)}(d) with d = x1 − x2.

    Returns:
        (largest sampled quotient, quotient <= l_claim + tol)
    """
    if n_pairs < 1:
        raise EmptySampleError("rosl_check needs at least one pair")
    rng = np.random.default_rng(seed)
    box = map.domain_box
    worst = -np.inf
    for _ in range(n_pairs):
        x1, x2 = box.sample(rng), box.sample(rng)
        t = rng.uniform(0.0, map.horizon)
        d = x1 - x2
        norm2 = d @ d
        if norm2 == 0.0:
            continue
        s1 = map.evaluate(x1, t).support(d)[0]
        s2 = map.evaluate(x2, t).support(d)[0]
        worst = max(worst, (s1 - s2) / norm2)
    if worst == -np.inf:
        raise EmptySampleError(
            f"All {n_pairs} sampled pairs coincide; the domain box {box} is a point"
        )
    passed = bool(worst <= l_claim + tol)
    if not passed:
        log.warning("ROSL claim l=%g violated: sampled quotient %g", l_claim, worst)
    return float(worst), passed


def avg_modulus(map: SetMap, h: float, t_grid: int = 101, x_grid: int = 3) -> float:
    """Average modulus of continuity τ(F; h) on a tensor grid.

    The windowed oscillation only uses t-grid points, so the value is an
    under-approximation that grows as the grid is refined.
    """
    if map.is_autonomous():
        return 0.0
    ts = _time_grid(map.horizon, t_grid)
    gaps = np.abs(ts[:, None] - ts[None, :])
    within = gaps <= h + 1e-12
    half = gaps <= 0.5 * h + 1e-12
    best = 0.0
    for x in _state_grid(map.domain_box, x_grid):
        values = [map.evaluate(x, t) for t in ts]
        dist = np.zeros((len(ts), len(ts)))
        for a, b in zip(*np.nonzero(np.triu(within, 1))):
            dist[a, b] = dist[b, a] = hausdorff(values[a], values[b]).value
        oscillation = np.array(
            [dist[np.ix_(half[i], half[i])].max() for i in range(len(ts))]
        )
        best = max(best, float(trapezoid(oscillation, ts)))
    return best


def uniform_bound(map: SetMap, grid: int, tol: float = 1e-9) -> Tuple[float, bool]:
    """Largest sampled norm of F(x, t) against the claimed bound m_F."""
    m_hat = 0.0
    for x in _state_grid(map.domain_box, grid):
        for t in _time_grid(map.horizon, grid):
            m_hat = max(m_hat, map.evaluate(x, t).max_norm())
    return m_hat, bool(m_hat <= map.m_F + tol)
