"""Discrete approximation problems (P_k) and (P̃_k) of a generalized Bolza problem."""

from __future__ import annotations

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from . import kkt
from .errors import (
    EmptySampleError,
    InconsistentTrajectoryError,
    InvalidProblemError,
    ModeMismatchError,
    NonconvexIntegrandError,
    RoslError,
)
from .expressions import state_names, velocity_names
from .implicit_step import approximate_trajectory, euler_iterates, extend_and_compare
from .models.base import Mode, SolveStatus
from .models.problem import ProblemFile, SolverConfig
from .setmap import AffineControlMap, ExpressionField, SmoothInverseMap
from .sets import ConvexSet, EndpointSet, WholeSpace
from .trajectory import DiscreteTrajectory, ReferenceTrajectory

log = logging.getLogger(__name__)

STUDY_HEADER = ["k", "h", "eta_k", "J_k", "sup_err", "w12_err", "el_residual"]
_MONOTONE_TOL = 1e-9


class BolzaSpec(BaseModel):
    """Data of the continuous problem: dynamics, costs, endpoint constraints, ε, L."""

    model_config = ConfigDict(frozen=True, extra="forbid", arbitrary_types_allowed=True)

    T: float = Field(gt=0.0)
    x0: List[float]
    dynamics: Union[AffineControlMap, SmoothInverseMap]
    phi0: ExpressionField = Field(default="0", validate_default=True)
    f: ExpressionField = Field(default="0", validate_default=True)
    ineq: List[ExpressionField] = Field(default_factory=list)
    eq: List[ExpressionField] = Field(default_factory=list)
    omega: Optional[EndpointSet] = None
    eps: float = Field(gt=0.0)
    L: float = Field(default=0.0, ge=0.0)

    @model_validator(mode="after")
    def validate_problem(self) -> "BolzaSpec":
        n = self.n
        if len(self.x0) != n:
            raise ValueError(f"x0 must have {n} entries, got {len(self.x0)}")
        if not np.isclose(self.dynamics.horizon, self.T):
            raise ValueError(
                f"dynamics horizon {self.dynamics.horizon} differs from T={self.T}"
            )
        if (self.ineq or self.eq) and self.L <= 0.0:
            raise ValueError("L must be positive when endpoint constraints are given")
        endpoint_names = set(state_names(n))
        for expr in [self.phi0, *self.ineq, *self.eq]:
            extra = expr.variables() - endpoint_names
            if extra:
                raise ValueError(f"endpoint expression '{expr}' uses {sorted(extra)}")
        extra = self.f.variables() - endpoint_names - set(velocity_names(n)) - {"t"}
        if extra:
            raise ValueError(f"integrand '{self.f}' uses {sorted(extra)}")
        if self.omega is not None and self.omega.dimension != n:
            raise ValueError(f"omega must have dimension {n}")
        return self

    @property
    def n(self) -> int:
        return self.dynamics.n

    @property
    def m(self) -> int:
        return len(self.ineq)

    @property
    def r(self) -> int:
        return len(self.eq)

    @property
    def omega_set(self) -> ConvexSet:
        return self.omega if self.omega is not None else WholeSpace(n=self.n)

    @property
    def has_kinks(self) -> bool:
        return any(e.has_kinks() for e in [self.phi0, self.f, *self.ineq, *self.eq])

    @classmethod
    def from_problem(cls, problem: ProblemFile) -> "BolzaSpec":
        return cls(
            T=problem.meta.T,
            x0=problem.meta.x0,
            dynamics=problem.dynamics,
            phi0=problem.cost.phi0,
            f=problem.cost.f,
            ineq=problem.constraints.ineq,
            eq=problem.constraints.eq,
            omega=problem.constraints.omega,
            eps=problem.localization.eps,
            L=problem.constraints.L,
        )


def reference_from_problem(
    problem: ProblemFile, spec: BolzaSpec
) -> ReferenceTrajectory:
    """Build x̄ from the problem file's localization.reference section.

    Raises:
        InvalidProblemError: If the section is missing or does not fit the dynamics
    """
    section = problem.localization.reference
    if section is None:
        raise InvalidProblemError("No reference in the problem file; pass a CSV")
    ts = np.linspace(0.0, spec.T, section.points)

    def sample(exprs) -> np.ndarray:
        fns = [expr.compile(["t"]) for expr in exprs]
        return np.array([[fn(np.array([t])) for fn in fns] for t in ts])

    if section.control is not None:
        if not isinstance(spec.dynamics, AffineControlMap):
            raise InvalidProblemError("A control reference needs affine dynamics")
        fns = [expr.compile(["t"]) for expr in section.control]
        return ReferenceTrajectory.from_control(
            spec.dynamics,
            spec.x0,
            lambda t: np.array([fn(np.array([t])) for fn in fns]),
            spec.T,
            section.points,
        )
    return ReferenceTrajectory(ts, sample(section.state), sample(section.derivative))


@dataclass
class DiscretizedProblem:
    """An assembled (P_k) or (P̃_k) with its compiled cost and constraint data.

    With ``mu`` set, kink atoms of the cost and endpoint functions are replaced
    by their smoothings.
    """

    spec: BolzaSpec
    k: int
    mode: Mode
    eta_k: float
    ref: ReferenceTrajectory
    warm_start: Optional[DiscreteTrajectory] = None
    mu: Optional[float] = None

    h: float = field(init=False)
    grid: np.ndarray = field(init=False, repr=False)
    ref_nodes: np.ndarray = field(init=False, repr=False)
    first: np.ndarray = field(init=False, repr=False)
    second: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.mode = Mode(self.mode)
        self.h = self.spec.T / self.k
        self.grid = self.h * np.arange(self.k + 1)
        self.ref_nodes = self.ref.state_at(self.grid)
        self.first, self.second = self.ref.interval_integrals(self.grid)
        n = self.spec.n
        xs, xvt = state_names(n), state_names(n) + velocity_names(n) + ["t"]
        self._phi0 = self._prepare(self.spec.phi0).compile_gradient(xs)
        self._f = self._prepare(self.spec.f).compile_gradient(xvt)
        self._ineq = [self._prepare(e).compile_gradient(xs) for e in self.spec.ineq]
        self._eq = [self._prepare(e).compile_gradient(xs) for e in self.spec.eq]

    def _prepare(self, expr):
        return expr.smoothed(self.mu) if self.mu else expr

    def with_smoothing(self, mu: Optional[float]) -> "DiscretizedProblem":
        return replace(self, mu=mu)

    @property
    def n(self) -> int:
        return self.spec.n

    @property
    def bound(self) -> float:
        """L η_k, the perturbation of the endpoint constraints."""
        return self.spec.L * self.eta_k

    @property
    def constraint_count(self) -> int:
        count = self.k + self.spec.m + self.spec.r
        if self.mode is Mode.PK:
            count += 1
        if not isinstance(self.spec.omega_set, WholeSpace):
            count += 1
        return count

    def nodes_of(self, traj: DiscreteTrajectory) -> np.ndarray:
        if traj.k != self.k or traj.n != self.n or not np.isclose(traj.h, self.h):
            raise InconsistentTrajectoryError(
                f"Trajectory with k={traj.k}, h={traj.h} does not fit k={self.k}, "
                f"h={self.h}"
            )
        if not np.allclose(traj.nodes[0], self.spec.x0, atol=1e-9):
            raise InconsistentTrajectoryError(
                f"Trajectory starts at {traj.nodes[0].tolist()}, not x0={self.spec.x0}"
            )
        return traj.nodes

    def integrand(
        self, x: np.ndarray, v: np.ndarray, t: float
    ) -> Tuple[float, np.ndarray, np.ndarray]:
        """f(x, v, t) with its x- and v-gradients."""
        value, grad = self._f(np.concatenate([x, v, [t]]))
        n = self.n
        return value, grad[:n], grad[n : 2 * n]

    def endpoint(self, x: np.ndarray) -> Dict[str, Tuple[float, np.ndarray]]:
        """φ_0 and the constraint functions at x with their gradients."""
        values = {"phi0": self._phi0(x)}
        for i, fn in enumerate(self._ineq, start=1):
            values[f"ineq[{i}]"] = fn(x)
        for i, fn in enumerate(self._eq, start=1):
            values[f"eq[{i}]"] = fn(x)
        return values

    def velocities(self, nodes: np.ndarray) -> np.ndarray:
        return np.diff(nodes, axis=0) / self.h

    def penalties(self, nodes: np.ndarray) -> np.ndarray:
        """Trapezoid values of ∫|v_j − ẋ̄|² over each step."""
        v = self.velocities(nodes)
        return (
            self.h * np.sum(v**2, axis=1)
            - 2.0 * np.sum(v * self.first, axis=1)
            + self.second
        )

    def theta(self, nodes: np.ndarray) -> np.ndarray:
        """θ_j = −2 ∫ (ẋ̄ − v_j), the v-gradient of the step penalty."""
        return -2.0 * (self.first - self.h * self.velocities(nodes))

    def tracking(self, nodes: np.ndarray) -> np.ndarray:
        """ϑ_j = 2 (x_j − x̄(t_j)) for j = 1..k."""
        return 2.0 * (nodes[1:] - self.ref_nodes[1:])

    def objective(self, nodes: np.ndarray) -> Tuple[float, np.ndarray]:
        """J_k at the given nodes and its gradient with respect to every node."""
        h, grad = self.h, np.zeros_like(nodes)
        v = self.velocities(nodes)
        value = 0.0
        for j in range(1, self.k + 1):
            f, fx, fv = self.integrand(nodes[j], v[j - 1], self.grid[j])
            value += h * f
            grad[j] += h * fx + fv
            grad[j - 1] -= fv
        if self.mode is Mode.PK:
            value += float(self.penalties(nodes).sum())
            theta = self.theta(nodes) / h
            grad[1:] += theta
            grad[:-1] -= theta
        else:
            gap = nodes[1:] - self.ref_nodes[1:]
            value += float(np.sum(gap**2))
            grad[1:] += 2.0 * gap
        terminal, g = self._phi0(nodes[-1])
        grad[-1] += g
        return value + terminal, grad

    def constraints(
        self, nodes: np.ndarray
    ) -> Tuple[np.ndarray, np.ndarray, List[str]]:
        """Constraint values c <= 0, their node gradients and labels."""
        values: List[float] = []
        grads: List[np.ndarray] = []
        labels: List[str] = []

        def add(label: str, value: float, grad: np.ndarray) -> None:
            labels.append(label)
            values.append(float(value))
            grads.append(grad)

        radius2 = self.spec.eps**2 / 4.0
        for j in range(1, self.k + 1):
            gap = nodes[j] - self.ref_nodes[j]
            grad = np.zeros_like(nodes)
            grad[j] = 2.0 * gap
            add(f"tube[{j}]", gap @ gap - radius2, grad)
        if self.mode is Mode.PK:
            theta = self.theta(nodes) / self.h
            grad = np.zeros_like(nodes)
            grad[1:] += theta
            grad[:-1] -= theta
            add("energy", self.penalties(nodes).sum() - self.spec.eps / 2.0, grad)
        x_k = nodes[-1]
        for label, (value, g) in self.endpoint(x_k).items():
            if label == "phi0":
                continue
            grad = np.zeros_like(nodes)
            grad[-1] = g
            if label.startswith("ineq"):
                add(label, value - self.bound, grad)
            else:
                add(f"{label}+", value - self.bound, grad)
                add(f"{label}-", -value - self.bound, -grad)
        omega = self.spec.omega_set
        if not isinstance(omega, WholeSpace):
            nearest, distance = omega.project(x_k)
            grad = np.zeros_like(nodes)
            if distance > 0.0:
                grad[-1] = (x_k - nearest) / distance
            add("omega", distance - self.eta_k, grad)
        return np.array(values), np.array(grads), labels


def assemble(
    spec: BolzaSpec,
    k: int,
    mode: Mode,
    eta_k: Optional[float],
    ref: ReferenceTrajectory,
) -> DiscretizedProblem:
    """Build (P_k) or (P̃_k) around the reference x̄.

    Args:
        spec: Continuous problem data
        k: Number of steps
        mode: Mode.PK or Mode.PK_TILDE
        eta_k: Inflation radius; computed with approximate_trajectory when None
        ref: Reference trajectory x̄ starting at x0

    Raises:
        ModeMismatchError: If P̃_k is requested for an integrand depending on v
        InvalidProblemError: If k, eta_k or the reference do not fit the problem
    """
    mode = Mode(mode)
    if k < 1:
        raise InvalidProblemError(f"k must be positive, got {k}")
    if mode is Mode.PK_TILDE and spec.f.depends_on(velocity_names(spec.n)):
        raise ModeMismatchError(f"pktilde needs an integrand without v, got '{spec.f}'")
    if ref.n != spec.n or not np.isclose(ref.T, spec.T):
        raise InvalidProblemError(
            f"Reference on [0, {ref.T}] in R^{ref.n} does not fit T={spec.T}, "
            f"n={spec.n}"
        )
    if not np.allclose(ref.states[0], spec.x0, atol=1e-9):
        raise InvalidProblemError(
            f"Reference starts at {ref.states[0].tolist()}, not x0={spec.x0}"
        )
    warm_start = None
    if eta_k is None:
        warm_start, report = approximate_trajectory(spec.dynamics, ref, k)
        eta_k = report.eta_k
    if eta_k < 0.0:
        raise InvalidProblemError(f"eta_k must be nonnegative, got {eta_k}")
    return DiscretizedProblem(spec, k, mode, float(eta_k), ref, warm_start=warm_start)


def _exact(dp: DiscretizedProblem) -> DiscretizedProblem:
    return dp if dp.mu is None else dp.with_smoothing(None)


def cost(
    dp: DiscretizedProblem,
    traj: DiscreteTrajectory,
    controls: Optional[np.ndarray] = None,
    tol: float = 1e-8,
) -> float:
    """Exact J_k of a trajectory.

    Raises:
        InconsistentTrajectoryError: If traj does not fit the grid, or if
            controls are given and do not generate traj through the scheme
    """
    nodes = dp.nodes_of(traj)
    dynamics = dp.spec.dynamics
    if controls is not None and isinstance(dynamics, AffineControlMap):
        controls = np.asarray(controls, dtype=float).reshape(dp.k, -1)
        for j in range(1, dp.k + 1):
            t = dp.grid[j]
            velocity = dynamics.g1_value(nodes[j], t)
            velocity = velocity + dynamics.control_matrix(t) @ controls[j - 1]
            residual = np.linalg.norm(nodes[j] - nodes[j - 1] - dp.h * velocity)
            if residual > tol:
                raise InconsistentTrajectoryError(
                    f"Step {j} misses the dynamics by {residual:.3e}"
                )
    return _exact(dp).objective(nodes)[0]


def bolza_cost(spec: BolzaSpec, traj: DiscreteTrajectory) -> float:
    """φ0(x_k) + h Σ f(x_j, v_j, t_j)."""
    n = spec.n
    f = spec.f.compile(state_names(n) + velocity_names(n) + ["t"])
    total = spec.phi0.compile(state_names(n))(traj.nodes[-1])
    for j, v in enumerate(traj.velocities, start=1):
        total += traj.h * f(np.concatenate([traj.nodes[j], v, [j * traj.h]]))
    return float(total)


@dataclass(frozen=True)
class FeasibilityReport:
    """Largest violation per constraint family; negative margins are slack."""

    margins: Dict[str, float]
    tol: float

    @property
    def passed(self) -> bool:
        return all(value <= self.tol for value in self.margins.values())

    def failures(self) -> List[str]:
        return [name for name, value in self.margins.items() if value > self.tol]

    def to_dict(self) -> Dict[str, Any]:
        return {"margins": dict(self.margins), "tol": self.tol, "passed": self.passed}


def inclusion_residual(map, traj: DiscreteTrajectory) -> float:
    """max_j dist(v_j, F(x_j, t_j)); inf if a node leaves the domain."""
    try:
        return float(
            max(
                map.evaluate(traj.nodes[j], j * traj.h).distance(v)
                for j, v in enumerate(traj.velocities, start=1)
            )
        )
    except RoslError as e:
        log.debug("inclusion residual undefined: %s", e)
        return float("inf")


def feasible(
    dp: DiscretizedProblem, traj: DiscreteTrajectory, tol: float = 1e-8
) -> FeasibilityReport:
    """Margins of every constraint family of (P_k)/(P̃_k); never raises."""
    dp = _exact(dp)
    nodes = traj.nodes
    margins = {"inclusion": inclusion_residual(dp.spec.dynamics, traj)}
    gap = nodes[1:] - dp.ref_nodes[1:]
    margins["tube"] = float(np.max(np.sum(gap**2, axis=1)) - dp.spec.eps**2 / 4.0)
    if dp.mode is Mode.PK:
        margins["energy"] = float(dp.penalties(nodes).sum() - dp.spec.eps / 2.0)
    omega = dp.spec.omega_set
    if not isinstance(omega, WholeSpace):
        margins["endpoint"] = omega.distance(nodes[-1]) - dp.eta_k
    values = dp.endpoint(nodes[-1])
    if dp.spec.m:
        margins["ineq"] = max(
            values[f"ineq[{i}]"][0] - dp.bound for i in range(1, dp.spec.m + 1)
        )
    if dp.spec.r:
        margins["eq"] = max(
            abs(values[f"eq[{i}]"][0]) - dp.bound for i in range(1, dp.spec.r + 1)
        )
    return FeasibilityReport({k: float(v) for k, v in margins.items()}, tol)


@dataclass
class SolveResult:
    traj: DiscreteTrajectory
    controls: np.ndarray
    cost: float
    multipliers: kkt.Multipliers
    status: SolveStatus
    violation: float = 0.0
    mode: Mode = Mode.PK
    eta_k: float = 0.0

    def to_dict(self) -> Dict[str, Any]:
        return {
            "k": self.traj.k,
            "h": self.traj.h,
            "mode": str(self.mode),
            "eta_k": self.eta_k,
            "x": self.traj.nodes.tolist(),
            "u": np.asarray(self.controls).tolist(),
            "cost": self.cost,
            "multipliers": self.multipliers.to_dict(),
            "status": str(self.status),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "SolveResult":
        try:
            traj = DiscreteTrajectory(np.array(data["x"], dtype=float), data["h"])
            return cls(
                traj=traj,
                controls=np.array(data.get("u", []), dtype=float),
                cost=float(data["cost"]),
                multipliers=kkt.Multipliers.from_dict(data["multipliers"]),
                status=SolveStatus(data["status"]),
                mode=Mode(data.get("mode", "pk")),
                eta_k=float(data.get("eta_k", 0.0)),
            )
        except (KeyError, TypeError, ValueError) as e:
            raise InvalidProblemError(f"Malformed solution file: {e}") from e


def solve(
    dp: DiscretizedProblem, config: Optional[SolverConfig] = None
) -> SolveResult:
    """Solve the discrete problem as a mathematical program.

    Affine-control dynamics are transcribed with the controls u_j as decision
    variables; smooth-inverse dynamics leave no freedom and the forced
    trajectory is evaluated.

    Returns:
        SolveResult whose multipliers come from the augmented-Lagrangian
        estimates, normalized so that Σ|λ_i| + |p_0| = 1
    """
    from .transcription import solve_reduced

    config = config or SolverConfig()
    dynamics = dp.spec.dynamics
    if isinstance(dynamics, AffineControlMap):
        outcome = solve_reduced(dp, config)
        traj = DiscreteTrajectory(outcome.nodes, dp.h)
        controls, estimates = outcome.controls, outcome.estimates
        status = outcome.status
    else:
        nodes = euler_iterates(dynamics, dp.spec.x0, dp.h, dp.k)
        traj = DiscreteTrajectory(nodes, dp.h)
        controls, estimates = np.zeros((dp.k, 0)), {}
        ok = feasible(dp, traj, 10 * config.tol).passed
        status = SolveStatus.OPTIMAL_LOCAL if ok else SolveStatus.INFEASIBLE
    report = feasible(dp, traj, 10 * config.tol)
    if status is SolveStatus.OPTIMAL_LOCAL and not report.passed:
        log.warning("solution fails %s; reporting max-iter", report.failures())
        status = SolveStatus.MAX_ITER
    multipliers = kkt.normalize(kkt.multipliers_from_estimates(dp, traj, estimates))
    violation = max(0.0, *report.margins.values())
    return SolveResult(
        traj=traj,
        controls=controls,
        cost=cost(dp, traj),
        multipliers=multipliers,
        status=status,
        violation=violation,
        mode=dp.mode,
        eta_k=dp.eta_k,
    )


def relaxed_cost(spec: BolzaSpec, traj: DiscreteTrajectory, tol: float = 1e-8) -> float:
    """Relaxed Bolza cost; +inf when the trajectory violates the inclusion.

    Raises:
        NonconvexIntegrandError: If f is not certified convex in v
    """
    if not spec.f.is_convex_in(velocity_names(spec.n)):
        raise NonconvexIntegrandError(f"'{spec.f}' is not certified convex in v")
    if inclusion_residual(spec.dynamics, traj) > tol:
        return float("inf")
    return bolza_cost(spec, traj)


def lipschitz_sanity(
    spec: BolzaSpec, n_samples: int = 200, seed: int = 0, tol: float = 1e-9
) -> Tuple[float, bool]:
    """Largest sampled difference quotient of the φ_i on the domain box against L."""
    if n_samples < 1:
        raise EmptySampleError("lipschitz_sanity needs at least one sample")
    exprs = [*spec.ineq, *spec.eq]
    if not exprs:
        return 0.0, True
    fns = [e.compile(state_names(spec.n)) for e in exprs]
    rng = np.random.default_rng(seed)
    box = spec.dynamics.domain_box
    worst = 0.0
    for _ in range(n_samples):
        a, b = box.sample(rng), box.sample(rng)
        gap = np.linalg.norm(a - b)
        if gap == 0.0:
            continue
        worst = max(worst, max(abs(fn(a) - fn(b)) / gap for fn in fns))
    passed = worst <= spec.L + tol
    if not passed:
        log.warning("sampled Lipschitz quotient %g exceeds L=%g", worst, spec.L)
    return float(worst), bool(passed)


@dataclass(frozen=True)
class StudyRow:
    k: int
    h: float
    eta_k: float
    J_k: float
    sup_err: float
    w12_err: float
    el_residual: float
    status: str
    error: Optional[str] = None

    def values(self) -> List[Any]:
        return [
            self.k,
            self.h,
            self.eta_k,
            self.J_k,
            self.sup_err,
            self.w12_err,
            self.el_residual,
        ]


@dataclass(frozen=True)
class StudyTable:
    """Convergence table over increasing k.

    The monotonicity flags are None for a single successful row.
    """

    rows: List[StudyRow]
    mode: Mode
    sup_monotone: Optional[bool]
    w12_monotone: Optional[bool]

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(row, name) for row in self.rows], dtype=float)

    def to_csv(self, path, comments: Sequence[str] = ()) -> None:
        from .trajectory import write_table

        write_table(path, STUDY_HEADER, (row.values() for row in self.rows), comments)


def default_threads() -> int:
    """Worker count from ROSL_THREADS (at least 1)."""
    try:
        return max(1, int(os.getenv("ROSL_THREADS", "1")))
    except ValueError:
        log.warning("ignoring non-integer ROSL_THREADS=%r", os.getenv("ROSL_THREADS"))
        return 1


def _nonincreasing(values: np.ndarray) -> Optional[bool]:
    values = values[np.isfinite(values)]
    if len(values) < 2:
        return None
    return bool(np.all(np.diff(values) <= _MONOTONE_TOL))


def _recovered_residual(
    dp: DiscretizedProblem, result: SolveResult, tol: float
) -> float:
    """Largest Euler-Lagrange residual of recovered multipliers.

    Falls back to the solver's augmented-Lagrangian estimates when the
    recovery fails.
    """
    try:
        mult = kkt.recover_adjoint(dp, result.traj, tol=tol)
    except RoslError as e:
        log.info("k=%d: adjoint recovery failed (%s); using estimates", dp.k, e)
        return kkt.check(dp, result).euler_lagrange
    return kkt.check(dp, result, multipliers=mult).euler_lagrange


def study(
    spec: BolzaSpec,
    ref: ReferenceTrajectory,
    ks: Sequence[int],
    mode: Mode = Mode.PK,
    config: Optional[SolverConfig] = None,
    eta: Optional[float] = None,
    threads: Optional[int] = None,
) -> StudyTable:
    """Solve the discrete problems for each k and tabulate the convergence data.

    Rows failing with a library error are kept with NaN entries and their
    message; the remaining rows still run.
    """
    ks = list(ks)
    if not ks or any(b <= a for a, b in zip(ks, ks[1:])):
        raise InvalidProblemError(f"ks must be nonempty and increasing, got {ks}")
    mode = Mode(mode)
    config = config or SolverConfig()

    def run_row(k: int) -> StudyRow:
        h = spec.T / k
        try:
            dp = assemble(spec, k, mode, eta, ref)
            result = solve(dp, config)
            sup_err, w12_err = extend_and_compare(result.traj, ref)
            el = _recovered_residual(dp, result, 10 * config.tol)
        except RoslError as e:
            log.warning("study row k=%d failed: %s", k, e)
            nan = float("nan")
            return StudyRow(k, h, nan, nan, nan, nan, nan, "failed", str(e))
        log.info(
            "k=%d J_k=%.8g sup_err=%.3e w12_err=%.3e", k, result.cost, sup_err, w12_err
        )
        return StudyRow(
            k, h, dp.eta_k, result.cost, sup_err, w12_err, el, str(result.status)
        )

    with ThreadPoolExecutor(max_workers=threads or default_threads()) as pool:
        rows = list(pool.map(run_row, ks))

    table = StudyTable(
        rows=rows,
        mode=mode,
        sup_monotone=_nonincreasing(np.array([row.sup_err for row in rows])),
        w12_monotone=_nonincreasing(np.array([row.w12_err for row in rows])),
    )
    claimed = table.sup_monotone if mode is Mode.PK_TILDE else table.w12_monotone
    if claimed is False:
        column = "sup_err" if mode is Mode.PK_TILDE else "w12_err"
        log.warning("%s is not nonincreasing over k=%s", column, ks)
    return table
