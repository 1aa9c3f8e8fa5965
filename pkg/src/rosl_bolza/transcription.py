"""Reduced nonlinear program over the controls u_1..u_k of an affine-control problem.

The nodes are eliminated through the implicit scheme
x_j = x_{j-1} + h (g1(x_j, t_j) + M(t_j) u_j), so the only geometric
constraint left on the decision variables is u_j ∈ U. The remaining
constraints c(x) <= 0 of the discrete problem are handled by an augmented
Lagrangian; gradients come from the discrete adjoint of the scheme.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import TYPE_CHECKING, Dict, List, Optional, Tuple

import numpy as np
from scipy.optimize import minimize, root

from .errors import (
    InfeasibleProblemError,
    NoConvergenceError,
    RoslError,
    UnsupportedExpressionError,
)
from .implicit_step import MAX_ITER, STEP_TOL
from .models.base import SolveStatus
from .sets import Box

if TYPE_CHECKING:
    from .bolza import DiscretizedProblem
    from .models.problem import SolverConfig

log = logging.getLogger(__name__)

SMOOTHING_SCHEDULE = (1e-2, 1e-3, 1e-4)
RHO_START = 10.0
RHO_MAX = 1e10
_ARMIJO = 1e-4


@dataclass(frozen=True)
class ReducedOutcome:
    """Result of one augmented-Lagrangian run."""

    controls: np.ndarray
    nodes: np.ndarray
    cost: float
    violation: float
    estimates: Dict[str, float]
    status: SolveStatus
    start: int = 0


class ReducedProblem:
    """The discrete problem as a function of the controls only."""

    def __init__(self, dp: "DiscretizedProblem"):
        dynamics = dp.spec.dynamics
        self.dp = dp
        self.dynamics = dynamics
        self.k, self.n = dp.k, dp.n
        self.m = dynamics.control_dimension
        self.control_set = dynamics.control_set
        self.matrices = np.array([dynamics.control_matrix(t) for t in dp.grid[1:]])
        self.x0 = np.asarray(dp.spec.x0, dtype=float)

    def forward(self, u: np.ndarray) -> Tuple[np.ndarray, List[np.ndarray]]:
        """Nodes generated by the controls and the step matrices I - h ∇g1(x_j)."""
        h = self.dp.h
        nodes = np.empty((self.k + 1, self.n))
        nodes[0] = self.x0
        steps = []
        for j in range(1, self.k + 1):
            target = nodes[j - 1] + h * self.matrices[j - 1] @ u[j - 1]
            y, step = self._resolve(target, self.dp.grid[j], nodes[j - 1])
            nodes[j] = y
            steps.append(step)
        return nodes, steps

    def _resolve(
        self, target: np.ndarray, t: float, start: np.ndarray
    ) -> Tuple[np.ndarray, np.ndarray]:
        # Newton on y - h g1(y, t) = target
        h, eye = self.dp.h, np.eye(self.n)

        def equation(y):
            value, jac = self.dynamics.g1_jacobian(y, t)
            return y - h * value - target, eye - h * jac

        y = start.copy()
        for _ in range(50):
            residual, step = equation(y)
            if np.linalg.norm(residual) <= STEP_TOL:
                return y, step
            y = y - np.linalg.solve(step, residual)
        result = root(
            equation, start, jac=True, method="hybr", options={"maxfev": MAX_ITER}
        )
        residual, step = equation(result.x)
        if np.linalg.norm(residual) > STEP_TOL:
            raise NoConvergenceError(
                f"Implicit scheme at t={t} did not converge", np.linalg.norm(residual)
            )
        return result.x, step

    def adjoint(self, node_grad: np.ndarray, steps: List[np.ndarray]) -> np.ndarray:
        """Pull a gradient with respect to x_1..x_k back to the controls."""
        h = self.dp.h
        grad = np.zeros((self.k, self.m))
        carry = node_grad[self.k].copy()
        for j in range(self.k, 0, -1):
            w = np.linalg.solve(steps[j - 1].T, carry)
            grad[j - 1] = h * self.matrices[j - 1].T @ w
            carry = node_grad[j - 1] + w
        return grad

    def augmented(
        self, u: np.ndarray, lam: np.ndarray, rho: float
    ) -> Tuple[float, np.ndarray]:
        """PHR augmented Lagrangian and its control gradient."""
        nodes, steps = self.forward(u)
        value, node_grad = self.dp.objective(nodes)
        c, jac, _ = self.dp.constraints(nodes)
        shifted = np.maximum(0.0, lam + rho * c)
        value += (shifted @ shifted - lam @ lam) / (2.0 * rho)
        node_grad = node_grad + np.tensordot(shifted, jac, axes=1)
        return value, self.adjoint(node_grad, steps)

    def project(self, u: np.ndarray) -> np.ndarray:
        return np.array([self.control_set.project(row)[0] for row in u])

    def controls_of(self, nodes: np.ndarray) -> np.ndarray:
        """Controls of U closest to reproducing the given nodes."""
        h = self.dp.h
        u = np.zeros((self.k, self.m))
        for j in range(1, self.k + 1):
            t = self.dp.grid[j]
            velocity = (nodes[j] - nodes[j - 1]) / h
            velocity -= self.dynamics.g1_value(nodes[j], t)
            u[j - 1] = np.linalg.lstsq(self.matrices[j - 1], velocity, rcond=None)[0]
        return self.project(u)

    def minimize_inner(
        self, u: np.ndarray, lam: np.ndarray, rho: float, max_inner: int, tol: float
    ) -> Tuple[np.ndarray, bool]:
        if isinstance(self.control_set, Box):
            return self._lbfgsb(u, lam, rho, max_inner, tol)
        return self._projected_gradient(u, lam, rho, max_inner, tol)

    def _lbfgsb(self, u, lam, rho, max_inner, tol):
        box = self.control_set
        bounds = list(zip(np.tile(box.lower, self.k), np.tile(box.upper, self.k)))

        def fun(flat):
            value, grad = self.augmented(flat.reshape(self.k, self.m), lam, rho)
            return value, grad.ravel()

        result = minimize(
            fun,
            np.clip(u.ravel(), *np.array(bounds).T),
            jac=True,
            method="L-BFGS-B",
            bounds=bounds,
            options={"maxiter": max_inner, "ftol": 1e-15, "gtol": 1e-2 * tol},
        )
        # status 1 is the iteration cap; 2 is a line search stalled at precision
        return result.x.reshape(self.k, self.m), result.status != 1

    def _projected_gradient(self, u, lam, rho, max_inner, tol):
        u = self.project(u)
        value, grad = self.augmented(u, lam, rho)
        step = 1.0
        for _ in range(max_inner):
            while True:
                candidate = self.project(u - step * grad)
                trial, trial_grad = self.augmented(candidate, lam, rho)
                if trial <= value + _ARMIJO * np.sum(grad * (candidate - u)):
                    break
                step *= 0.5
                if step < 1e-16:
                    return u, False
            s, y = candidate - u, trial_grad - grad
            u, value, grad = candidate, trial, trial_grad
            if np.linalg.norm(s) <= tol * (1.0 + np.linalg.norm(u)):
                return u, True
            curvature = np.sum(s * y)
            step = np.sum(s * s) / curvature if curvature > 0.0 else 1.0
        return u, False

    def run(
        self, u: np.ndarray, config: "SolverConfig", start: int = 0
    ) -> ReducedOutcome:
        """Augmented-Lagrangian outer loop from the controls u."""
        labels = self.dp.constraints(self.forward(u)[0])[2]
        lam = np.zeros(len(labels))
        rho, previous = RHO_START, np.inf
        converged = False
        for outer in range(config.max_outer):
            u, inner_ok = self.minimize_inner(
                u, lam, rho, config.max_inner, config.tol
            )
            nodes, _ = self.forward(u)
            c, _, _ = self.dp.constraints(nodes)
            updated = np.maximum(0.0, lam + rho * c)
            violation = float(max(0.0, c.max()))
            shift = float(np.max(np.abs(updated - lam)))
            lam = updated
            log.debug(
                "start %d outer %d: violation=%.3e shift=%.3e rho=%g",
                start,
                outer,
                violation,
                shift,
                rho,
            )
            if violation <= config.tol and shift <= np.sqrt(config.tol) * (
                1.0 + lam.max()
            ):
                converged = inner_ok
                break
            if violation > 0.25 * previous:
                rho = min(10.0 * rho, RHO_MAX)
            previous = violation

        nodes, _ = self.forward(u)
        cost, _ = self.dp.objective(nodes)
        if violation > config.tol:
            status = SolveStatus.INFEASIBLE
        elif converged:
            status = SolveStatus.OPTIMAL_LOCAL
        else:
            status = SolveStatus.MAX_ITER
        return ReducedOutcome(
            controls=u,
            nodes=nodes,
            cost=float(cost),
            violation=violation,
            estimates=dict(zip(labels, lam.tolist())),
            status=status,
            start=start,
        )


def starting_controls(
    problem: ReducedProblem, config: "SolverConfig"
) -> List[np.ndarray]:
    """Warm start, reference controls, then seeded samples of U."""
    dp = problem.dp
    starts = []
    if dp.warm_start is not None:
        starts.append(problem.controls_of(dp.warm_start.nodes))
    starts.append(problem.controls_of(dp.ref_nodes))
    for i in range(max(0, config.n_starts - len(starts))):
        seed = config.seeds[i % len(config.seeds)]
        rng = np.random.default_rng([seed, i])
        starts.append(
            np.array([problem.control_set.sample(rng) for _ in range(problem.k)])
        )
    return starts[: config.n_starts]


def _better(a: ReducedOutcome, b: Optional[ReducedOutcome], tol: float) -> bool:
    if b is None:
        return True
    a_ok, b_ok = a.violation <= tol, b.violation <= tol
    if a_ok != b_ok:
        return a_ok
    if a_ok:
        return a.cost < b.cost
    return a.violation < b.violation


def multistart(
    dp: "DiscretizedProblem",
    config: "SolverConfig",
    starts: Optional[List[np.ndarray]] = None,
) -> ReducedOutcome:
    """Run the augmented Lagrangian from every start and keep the best outcome.

    Raises:
        InfeasibleProblemError: If every start fails numerically
    """
    problem = ReducedProblem(dp)
    if starts is None:
        starts = starting_controls(problem, config)
    best: Optional[ReducedOutcome] = None
    failures = []
    for i, u in enumerate(starts):
        try:
            outcome = problem.run(np.array(u, dtype=float), config, start=i)
        except RoslError as e:
            log.debug("start %d failed: %s", i, e)
            failures.append(str(e))
            continue
        if _better(outcome, best, config.tol):
            best = outcome
    if best is None:
        raise InfeasibleProblemError(
            f"All {len(starts)} starts failed; last error: {failures[-1]}"
        )
    log.info(
        "k=%d: start %d wins with cost=%.10g violation=%.3e (%s)",
        dp.k,
        best.start,
        best.cost,
        best.violation,
        best.status,
    )
    return best


def solve_reduced(dp: "DiscretizedProblem", config: "SolverConfig") -> ReducedOutcome:
    """Solve the reduced program, continuing over smoothing parameters at kinks.

    Raises:
        UnsupportedExpressionError: If the cost or endpoint functions have kinks
            and smoothing is disabled
    """
    if not dp.spec.has_kinks:
        return multistart(dp, config)
    if not config.smoothing:
        raise UnsupportedExpressionError(
            "Cost or endpoint functions use abs/min/max; enable solver.smoothing"
        )
    outcome = None
    for mu in SMOOTHING_SCHEDULE:
        starts = None if outcome is None else [outcome.controls]
        outcome = multistart(dp.with_smoothing(mu), config, starts)
        log.debug("smoothing mu=%g cost=%.10g", mu, outcome.cost)
    return outcome
