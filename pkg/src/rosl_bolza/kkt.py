"""Extended Euler-Lagrange conditions for the discrete problems: check and recovery."""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Any, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import lsq_linear

from .errors import (
    InfeasibleTrajectoryError,
    InvalidProblemError,
    TrivialMultipliersError,
)
from .expressions import state_names, velocity_names
from .gendiff import (
    SubdiffRep,
    _bounded_lstsq,
    graph_normal_cone,
    inflated_normal_cone,
    subdiff,
    sym_subdiff,
)
from .models.base import Mode, SolveStatus
from .setmap import AffineControlMap
from .sets import WholeSpace
from .trajectory import DiscreteTrajectory, ReferenceTrajectory

if TYPE_CHECKING:
    from .bolza import DiscretizedProblem, SolveResult

log = logging.getLogger(__name__)

GRAPH_TOL = 1e-6
ACTIVE_TOL = 1e-6
_SIMPLEX_WEIGHT = 1e6
_MAX_PIECE_COMBOS = 256
_PIECE_SWEEPS = 3


@dataclass(frozen=True)
class Multipliers:
    """λ_0..λ_{m+r}, adjoint nodes p_0..p_k and θ_1..θ_k.

    ``mu`` holds μ_1..μ_k of the tube constraints followed by the energy
    multiplier (always 0 for pktilde). They vanish on inactive constraints.
    """

    lam: np.ndarray
    p: np.ndarray
    theta: np.ndarray
    mu: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        for name in ("lam", "p", "theta", "mu"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), float))
        if self.p.ndim == 1:
            object.__setattr__(self, "p", self.p[:, None])
        if self.theta.ndim == 1:
            object.__setattr__(self, "theta", self.theta[:, None])

    @property
    def lambda0(self) -> float:
        return float(self.lam[0])

    @property
    def mass(self) -> float:
        """Σ|λ_i| + |p_0|."""
        return float(np.sum(np.abs(self.lam)) + np.linalg.norm(self.p[0]))

    def scaled(self, alpha: float) -> "Multipliers":
        """Jointly scaled dual elements; θ is primal data and stays."""
        return Multipliers(
            alpha * self.lam, alpha * self.p, self.theta, alpha * self.mu
        )

    def to_dict(self) -> Dict[str, Any]:
        return {
            "lambda": self.lam.tolist(),
            "p": self.p.tolist(),
            "theta": self.theta.tolist(),
            "mu": self.mu.tolist(),
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "Multipliers":
        return cls(
            lam=np.array(data["lambda"], dtype=float),
            p=np.array(data["p"], dtype=float),
            theta=np.array(data["theta"], dtype=float),
            mu=np.array(data.get("mu", []), dtype=float),
        )


def theta(ref: ReferenceTrajectory, traj: DiscreteTrajectory) -> np.ndarray:
    """θ_j = −2 ∫ (ẋ̄(t) − v_j) dt over step j, by trapezoid on the grid."""
    if not np.isclose(ref.T, traj.T) or ref.n != traj.n:
        raise InvalidProblemError(
            f"Reference on [0, {ref.T}] does not fit a trajectory on [0, {traj.T}]"
        )
    first, _ = ref.interval_integrals(traj.times)
    return -2.0 * (first - traj.h * traj.velocities)


def normalize(mult: Multipliers) -> Multipliers:
    """Rescale so that Σ|λ_i| + |p_0| = 1.

    A nonzero set with λ = 0 and p_0 = 0 cannot reach that form and is
    returned unchanged.

    Raises:
        TrivialMultipliersError: If every dual element vanishes
    """
    mass = mult.mass
    if mass > 0.0:
        return mult.scaled(1.0 / mass)
    if np.any(mult.p) or np.any(mult.mu):
        log.warning("multipliers have lambda = 0 and p_0 = 0; left unnormalized")
        return mult
    raise TrivialMultipliersError("All multipliers vanish")


def _transition(dp: "DiscretizedProblem", x: np.ndarray, v: np.ndarray, t: float):
    """Jacobian of the velocity map along the scheme at (x_j, v_j)."""
    dynamics = dp.spec.dynamics
    if isinstance(dynamics, AffineControlMap):
        return dynamics.g1_jacobian(x, t)[1]
    return np.linalg.pinv(dynamics.psi_jacobian(v, t)[1])


def _endpoint_normal(dp: "DiscretizedProblem", x_k: np.ndarray) -> np.ndarray:
    omega = dp.spec.omega_set
    if isinstance(omega, WholeSpace):
        return np.zeros(dp.n)
    nearest, distance = omega.project(x_k)
    return np.zeros(dp.n) if distance == 0.0 else (x_k - nearest) / distance


def multipliers_from_estimates(
    dp: "DiscretizedProblem",
    traj: DiscreteTrajectory,
    estimates: Mapping[str, float],
) -> Multipliers:
    """Dual elements from augmented-Lagrangian estimates, with λ_0 = 1.

    The endpoint multipliers fix −p_k; the adjoint nodes follow from the
    backward Euler-Lagrange recursion with the graph multiplier equal to
    p_{j−1} shifted by the cost terms.
    """
    nodes, h, n = traj.nodes, dp.h, dp.n
    m, r = dp.spec.m, dp.spec.r
    lam = np.zeros(1 + m + r)
    lam[0] = 1.0
    for i in range(1, m + 1):
        lam[i] = estimates.get(f"ineq[{i}]", 0.0)
    for i in range(1, r + 1):
        lam[m + i] = estimates.get(f"eq[{i}]+", 0.0) - estimates.get(f"eq[{i}]-", 0.0)

    exact = dp if dp.mu is None else dp.with_smoothing(None)
    values = exact.endpoint(nodes[-1])
    p = np.zeros((dp.k + 1, n))
    p[-1] = -values["phi0"][1]
    for i in range(1, m + 1):
        p[-1] -= lam[i] * values[f"ineq[{i}]"][1]
    for i in range(1, r + 1):
        p[-1] -= lam[m + i] * values[f"eq[{i}]"][1]
    p[-1] -= estimates.get("omega", 0.0) * _endpoint_normal(dp, nodes[-1])

    tube = np.array([estimates.get(f"tube[{j}]", 0.0) for j in range(1, dp.k + 1)])
    energy = estimates.get("energy", 0.0) if dp.mode is Mode.PK else 0.0
    track_weight = tube + (1.0 if dp.mode is Mode.PK_TILDE else 0.0)
    theta_weight = energy + (1.0 if dp.mode is Mode.PK else 0.0)

    v = traj.velocities
    step_theta = exact.theta(nodes)
    tracking = exact.tracking(nodes)
    for j in range(dp.k, 0, -1):
        t = dp.grid[j]
        _, fx, fv = exact.integrand(nodes[j], v[j - 1], t)
        jac = _transition(dp, nodes[j], v[j - 1], t)
        shift = fv + theta_weight * step_theta[j - 1] / h
        rhs = p[j] - h * fx - shift - track_weight[j - 1] * tracking[j - 1]
        q = np.linalg.solve(np.eye(n) - h * jac.T, rhs)
        p[j - 1] = q + shift

    return Multipliers(lam, p, theta(dp.ref, traj), np.append(tube, energy))


def constraint_multipliers(
    dp: "DiscretizedProblem", mult: Multipliers
) -> Tuple[np.ndarray, float]:
    """Tube multipliers μ_1..μ_k and the energy multiplier; empty μ reads as zero.

    Raises:
        InvalidProblemError: If μ has neither 0 nor k + 1 entries
    """
    if mult.mu.size == 0:
        return np.zeros(dp.k), 0.0
    if mult.mu.size != dp.k + 1:
        raise InvalidProblemError(
            f"Expected {dp.k + 1} tube and energy multipliers, got {mult.mu.size}"
        )
    return mult.mu[:-1], float(mult.mu[-1])


@dataclass(frozen=True)
class KKTReport:
    """Residual families of the discrete Euler-Lagrange conditions."""

    sign: float
    slackness: float
    euler_lagrange: float
    transversality: float
    el_steps: np.ndarray
    nontrivial: bool
    tol: float

    @property
    def passed(self) -> bool:
        return self.nontrivial and self.max_residual <= self.tol

    @property
    def max_residual(self) -> float:
        return max(self.sign, self.slackness, self.euler_lagrange, self.transversality)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "sign": self.sign,
            "slackness": self.slackness,
            "euler_lagrange": self.euler_lagrange,
            "transversality": self.transversality,
            "el_steps": self.el_steps.tolist(),
            "nontrivial": self.nontrivial,
            "tol": self.tol,
            "passed": self.passed,
        }


def hull_cone_distance(
    target: np.ndarray,
    hulls: Sequence[np.ndarray],
    cone: Tuple[np.ndarray, np.ndarray],
) -> float:
    """dist(target, Σ conv(hulls) + cone) with the cone given as (columns, lower)."""
    matrix, lower = cone
    blocks, bounds, rows = [matrix], [lower], []
    for points in hulls:
        if len(points) == 1:
            target = target - points[0]
            continue
        blocks.append(points.T)
        bounds.append(np.zeros(len(points)))
        rows.append(len(points))
    columns = np.hstack(blocks) if blocks else np.zeros((len(target), 0))
    if columns.shape[1] == 0:
        return float(np.linalg.norm(target))
    # heavily weighted rows keep each hull's weights on the simplex
    simplex = np.zeros((len(rows), columns.shape[1]))
    offset = matrix.shape[1]
    for i, size in enumerate(rows):
        simplex[i, offset : offset + size] = _SIMPLEX_WEIGHT
        offset += size
    system = np.vstack([columns, simplex])
    rhs = np.concatenate([target, np.full(len(rows), _SIMPLEX_WEIGHT)])
    a = _bounded_lstsq(system, rhs, np.concatenate(bounds))
    return float(np.linalg.norm(columns @ a - target))


def _union_distance(
    target: np.ndarray,
    reps: Sequence[SubdiffRep],
    cone: Tuple[np.ndarray, np.ndarray],
) -> float:
    choices = itertools.product(*(rep.pieces() for rep in reps))
    return min(hull_cone_distance(target, list(combo), cone) for combo in choices)


def _integrand_subdiff(
    dp: "DiscretizedProblem", x: np.ndarray, v: np.ndarray, t: float
) -> SubdiffRep:
    n = dp.n
    if dp.spec.f.has_kinks():
        return subdiff(
            dp.spec.f,
            np.concatenate([x, v]),
            state_names(n) + velocity_names(n),
            {"t": t},
        )
    _, fx, fv = dp.integrand(x, v, t)
    return SubdiffRep.singleton(np.concatenate([fx, fv]))


def euler_lagrange_pairs(
    dp: "DiscretizedProblem", traj: DiscreteTrajectory, mult: Multipliers
) -> List[np.ndarray]:
    """The pairs (A_j, B_j) that must lie in λ_0 ∂f_j + N(gph F_j).

    Tube multipliers enter like the tracking term and the energy multiplier
    like the step penalty.
    """
    h, p, l0 = dp.h, mult.p, mult.lambda0
    tube, energy = constraint_multipliers(dp, mult)
    track_weight = tube + (l0 if dp.mode is Mode.PK_TILDE else 0.0)
    theta_weight = energy + (l0 if dp.mode is Mode.PK else 0.0)
    step_theta = dp.theta(traj.nodes)
    tracking = dp.tracking(traj.nodes)
    pairs = []
    for j in range(1, dp.k + 1):
        a = (p[j] - p[j - 1] - track_weight[j - 1] * tracking[j - 1]) / h
        b = p[j - 1] - theta_weight * step_theta[j - 1] / h
        pairs.append(np.concatenate([a, b]))
    return pairs


def euler_lagrange_residuals(
    dp: "DiscretizedProblem", traj: DiscreteTrajectory, mult: Multipliers
) -> np.ndarray:
    exact = dp if dp.mu is None else dp.with_smoothing(None)
    nodes, v = traj.nodes, traj.velocities
    residuals = np.zeros(dp.k)
    for j, pair in enumerate(euler_lagrange_pairs(exact, traj, mult), start=1):
        t = dp.grid[j]
        cone = graph_normal_cone(dp.spec.dynamics, nodes[j], v[j - 1], t, GRAPH_TOL)
        columns = (np.vstack([cone.X, cone.Y]), cone.lower)
        df = _integrand_subdiff(exact, nodes[j], v[j - 1], t).scaled(mult.lambda0)
        residuals[j - 1] = _union_distance(pair, [df], columns)
    return residuals


def _endpoint_parts(
    dp: "DiscretizedProblem", x_k: np.ndarray, mult: Multipliers
) -> List[SubdiffRep]:
    spec, names = dp.spec, state_names(dp.n)
    reps = [subdiff(spec.phi0, x_k, names).scaled(mult.lambda0)]
    for i, expr in enumerate(spec.ineq, start=1):
        reps.append(subdiff(expr, x_k, names).scaled(mult.lam[i]))
    for i, expr in enumerate(spec.eq, start=spec.m + 1):
        reps.append(sym_subdiff(expr, x_k, names).scaled(mult.lam[i]))
    return reps


def transversality_residual(
    dp: "DiscretizedProblem", x_k: np.ndarray, mult: Multipliers
) -> float:
    """dist(−p_k, λ_0∂φ_0 + Σλ_i∂φ_i + Σλ_i∂⁰φ_i + N(x_k; Ω + η_k B))."""
    cone = inflated_normal_cone(dp.spec.omega_set, dp.eta_k, x_k, GRAPH_TOL)
    return _union_distance(-mult.p[-1], _endpoint_parts(dp, x_k, mult), cone.columns())


def check(
    dp: "DiscretizedProblem",
    result: "SolveResult",
    tol: Optional[float] = None,
    multipliers: Optional[Multipliers] = None,
) -> KKTReport:
    """Residuals of the sign, slackness, Euler-Lagrange and transversality conditions.

    Args:
        dp: The discrete problem
        result: Solution whose trajectory is checked
        tol: Pass threshold; defaults to 1e-6 (1 + |p_0|)
        multipliers: Dual elements to check instead of result.multipliers

    Raises:
        UnsupportedExpressionError: If a cost or constraint kink is outside the
            supported fragment
        PointNotOnGraphError: If a velocity leaves F at its node
    """
    mult = multipliers if multipliers is not None else result.multipliers
    traj = result.traj
    if mult.p.shape != traj.nodes.shape:
        raise InvalidProblemError(
            f"Adjoint shape {mult.p.shape} does not fit nodes {traj.nodes.shape}"
        )
    m = dp.spec.m
    if tol is None:
        tol = 1e-6 * (1.0 + float(np.linalg.norm(mult.p[0])))
    x_k = traj.nodes[-1]

    tube, energy = constraint_multipliers(dp, mult)
    sign = float(max(0.0, *(-mult.lam[: m + 1]), *(-tube), -energy))
    exact = dp if dp.mu is None else dp.with_smoothing(None)
    values = exact.endpoint(x_k)
    gap = traj.nodes[1:] - dp.ref_nodes[1:]
    slack = [0.0, *np.abs(tube * (np.sum(gap**2, axis=1) - dp.spec.eps**2 / 4.0))]
    if dp.mode is Mode.PK:
        budget = float(dp.penalties(traj.nodes).sum()) - dp.spec.eps / 2.0
        slack.append(abs(energy * budget))
    else:
        slack.append(abs(energy))
    for i in range(1, m + 1):
        slack.append(abs(mult.lam[i] * (values[f"ineq[{i}]"][0] - dp.bound)))
    for i in range(1, dp.spec.r + 1):
        lam_i = mult.lam[m + i]
        side = dp.bound if lam_i >= 0.0 else -dp.bound
        slack.append(abs(lam_i * (values[f"eq[{i}]"][0] - side)))

    steps = euler_lagrange_residuals(dp, traj, mult)
    report = KKTReport(
        sign=sign,
        slackness=float(max(slack)),
        euler_lagrange=float(steps.max()),
        transversality=transversality_residual(dp, x_k, mult),
        el_steps=steps,
        nontrivial=bool(np.any(mult.lam) or np.any(mult.p)),
        tol=float(tol),
    )
    log.debug("KKT residuals: %s", report.to_dict())
    return report


def _graph_columns(dp, nodes, v, j):
    cone = graph_normal_cone(
        dp.spec.dynamics, nodes[j], v[j - 1], dp.grid[j], GRAPH_TOL
    )
    return np.vstack([cone.X, cone.Y]), cone.lower


def _active_endpoint_columns(
    dp: "DiscretizedProblem", x_k: np.ndarray
) -> Tuple[List[np.ndarray], List[float], List[Tuple[int, float]]]:
    """Gradient columns of active endpoint constraints.

    Returns the columns, their lower bounds and, per column, the λ index and
    the sign it contributes with.
    """
    values = dp.endpoint(x_k)
    m = dp.spec.m
    columns, lower, owners = [], [], []
    for i in range(1, m + 1):
        value, grad = values[f"ineq[{i}]"]
        if value >= dp.bound - ACTIVE_TOL:
            columns.append(grad)
            lower.append(0.0)
            owners.append((i, 1.0))
    for i in range(1, dp.spec.r + 1):
        value, grad = values[f"eq[{i}]"]
        upper = value >= dp.bound - ACTIVE_TOL
        below = value <= -dp.bound + ACTIVE_TOL
        if upper and below:
            columns.append(grad)
            lower.append(-np.inf)
            owners.append((m + i, 1.0))
            continue
        if upper or below:
            sign = 1.0 if upper else -1.0
            columns.append(sign * grad)
            lower.append(0.0)
            owners.append((m + i, sign))
    return columns, lower, owners


def _active_constraint_rows(
    dp: "DiscretizedProblem", nodes: np.ndarray
) -> Tuple[List[int], bool]:
    """Steps whose tube constraint is active and whether the energy budget is."""
    gap = nodes[1:] - dp.ref_nodes[1:]
    tube = np.sum(gap**2, axis=1) - dp.spec.eps**2 / 4.0
    steps = [j for j in range(1, dp.k + 1) if tube[j - 1] >= -ACTIVE_TOL]
    energy = dp.mode is Mode.PK and (
        float(dp.penalties(nodes).sum()) - dp.spec.eps / 2.0 >= -ACTIVE_TOL
    )
    return steps, bool(energy)


def _solve_recovery(
    dp: "DiscretizedProblem",
    traj: DiscreteTrajectory,
    lambda0: float,
    hulls: Sequence[np.ndarray],
) -> Optional[Tuple[Multipliers, float]]:
    """Joint bounded least squares for one choice of integrand pieces.

    The unknowns are p, the graph cone coefficients, the hull weights, the
    endpoint λ with the Ω normals, and μ of the active tube and energy rows.
    With λ_0 = 0 the endpoint coefficients are normalized to sum to one; that
    attempt is skipped when no endpoint coefficient exists.

    Returns:
        The multipliers and the residual norm of the linear system
    """
    n, k, h = dp.n, dp.k, dp.h
    nodes, v = traj.nodes, traj.velocities
    step_theta, tracking = dp.theta(nodes), dp.tracking(nodes)

    graph = [_graph_columns(dp, nodes, v, j) for j in range(1, k + 1)]
    end_cols, end_lower, owners = _active_endpoint_columns(dp, nodes[-1])
    omega_cols, omega_lower = inflated_normal_cone(
        dp.spec.omega_set, dp.eta_k, nodes[-1], GRAPH_TOL
    ).columns()
    phi0 = dp.endpoint(nodes[-1])["phi0"][1]
    tube_steps, energy_active = _active_constraint_rows(dp, nodes)

    n_p = (k + 1) * n
    sizes = [g[0].shape[1] for g in graph]
    hull_sizes = [len(pts) if len(pts) > 1 else 0 for pts in hulls]
    n_end = len(end_cols) + omega_cols.shape[1]
    if lambda0 == 0.0 and n_end == 0:
        return None
    end_offset = n_p + sum(sizes) + sum(hull_sizes)
    mu_offset = end_offset + n_end
    tube_column = {j: mu_offset + i for i, j in enumerate(tube_steps)}
    energy_column = mu_offset + len(tube_steps) if energy_active else None
    total = mu_offset + len(tube_steps) + int(energy_active)
    rows: List[np.ndarray] = []
    rhs: List[np.ndarray] = []
    lower = np.concatenate(
        [np.full(n_p, -np.inf)]
        + [g[1] for g in graph]
        + [np.zeros(s) for s in hull_sizes]
        + [np.array(end_lower), omega_lower, np.zeros(total - mu_offset)]
    )

    graph_offset = n_p
    hull_offset = n_p + sum(sizes)
    for j in range(1, k + 1):
        block = np.zeros((2 * n, total))
        b = np.zeros(2 * n)
        prev, cur = slice((j - 1) * n, j * n), slice(j * n, (j + 1) * n)
        block[:n, cur] += np.eye(n) / h
        block[:n, prev] -= np.eye(n) / h
        block[n:, prev] += np.eye(n)
        if dp.mode is Mode.PK:
            b[n:] += lambda0 * step_theta[j - 1] / h
        else:
            b[:n] += lambda0 * tracking[j - 1] / h
        if j in tube_column:
            block[:n, tube_column[j]] -= tracking[j - 1] / h
        if energy_column is not None:
            block[n:, energy_column] -= step_theta[j - 1] / h
        size = sizes[j - 1]
        block[:, graph_offset : graph_offset + size] -= graph[j - 1][0]
        graph_offset += size
        points = hulls[j - 1]
        if len(points) == 1:
            b += lambda0 * points[0]
        else:
            width = len(points)
            block[:, hull_offset : hull_offset + width] -= lambda0 * points.T
            simplex = np.zeros((1, total))
            simplex[0, hull_offset : hull_offset + width] = _SIMPLEX_WEIGHT
            rows.append(simplex)
            rhs.append(np.array([_SIMPLEX_WEIGHT]))
            hull_offset += width
        rows.append(block)
        rhs.append(b)

    # −p_k = λ0 ∇φ0 + Σ λ_i ∇φ_i + N_Ω
    block = np.zeros((n, total))
    block[:, k * n : (k + 1) * n] = np.eye(n)
    for i, column in enumerate(end_cols):
        block[:, end_offset + i] = column
    block[:, end_offset + len(end_cols) : mu_offset] = omega_cols
    rows.append(block)
    rhs.append(-lambda0 * phi0)
    if lambda0 == 0.0:
        norm_row = np.zeros((1, total))
        norm_row[0, end_offset:mu_offset] = 1.0
        rows.append(norm_row)
        rhs.append(np.ones(1))

    system, target = np.vstack(rows), np.concatenate(rhs)
    upper = np.full(total, np.inf)
    if np.all(np.isneginf(lower)):
        solution = np.linalg.lstsq(system, target, rcond=None)[0]
    else:
        solution = lsq_linear(
            system, target, bounds=(lower, upper), method="bvls"
        ).x
    residual = float(np.linalg.norm(system @ solution - target))

    lam = np.zeros(1 + dp.spec.m + dp.spec.r)
    lam[0] = lambda0
    for i, (index, sign) in enumerate(owners):
        lam[index] += sign * solution[end_offset + i]
    p = solution[:n_p].reshape(k + 1, n)
    mu = np.zeros(k + 1)
    for j, column in tube_column.items():
        mu[j - 1] = solution[column]
    if energy_column is not None:
        mu[k] = solution[energy_column]
    return Multipliers(lam, p, theta(dp.ref, traj), mu), residual


def _recover(
    dp: "DiscretizedProblem", traj: DiscreteTrajectory, lambda0: float
) -> Optional[Multipliers]:
    """Recovery over the convex pieces of a nonconvex integrand subdifferential.

    Every combination of pieces is solved when there are at most
    ``_MAX_PIECE_COMBOS``; otherwise coordinate sweeps change the piece of one
    step at a time. The combination with the smallest residual wins.
    """
    nodes, v = traj.nodes, traj.velocities
    options = [
        _integrand_subdiff(dp, nodes[j], v[j - 1], dp.grid[j]).pieces()
        for j in range(1, dp.k + 1)
    ]
    kinked = [i for i, pieces in enumerate(options) if len(pieces) > 1]
    choice = [0] * dp.k

    def attempt() -> Tuple[Multipliers, float]:
        hulls = [options[i][c] for i, c in enumerate(choice)]
        return _solve_recovery(dp, traj, lambda0, hulls)

    best = attempt()
    if best is None or not kinked:
        return None if best is None else best[0]
    counts = [len(options[i]) for i in kinked]
    if np.prod(counts, dtype=float) <= _MAX_PIECE_COMBOS:
        for combo in itertools.product(*(range(c) for c in counts)):
            for i, c in zip(kinked, combo):
                choice[i] = c
            found = attempt()
            if found[1] < best[1]:
                best = found
        return best[0]
    for sweep in range(_PIECE_SWEEPS):
        improved = False
        for i in kinked:
            kept = choice[i]
            for c in range(len(options[i])):
                if c == kept:
                    continue
                choice[i] = c
                found = attempt()
                if found[1] < best[1] - 1e-12:
                    best, kept, improved = found, c, True
            choice[i] = kept
        log.debug("piece sweep %d: residual %.3e", sweep, best[1])
        if not improved:
            break
    return best[0]


def recover_adjoint(
    dp: "DiscretizedProblem",
    traj: DiscreteTrajectory,
    lambda0: Optional[float] = None,
    tol: float = 1e-8,
) -> Multipliers:
    """Construct normalized multipliers certifying the trajectory.

    Tries λ_0 = 1 and λ_0 = 0 (or only the given value) and keeps the set with
    the smaller residual, preferring λ_0 = 1 on ties.

    Raises:
        InfeasibleTrajectoryError: If traj violates the discrete problem
        TrivialMultipliersError: If no attempt produces nonzero multipliers
    """
    from .bolza import SolveResult, feasible

    report = feasible(dp, traj, tol)
    if not report.passed:
        raise InfeasibleTrajectoryError(
            f"Trajectory violates {report.failures()}: {report.margins}"
        )
    exact = dp if dp.mu is None else dp.with_smoothing(None)
    attempts = [1.0, 0.0] if lambda0 is None else [float(lambda0)]
    best, best_residual = None, np.inf
    for value in attempts:
        mult = _recover(exact, traj, value)
        if mult is None or not (np.any(mult.lam) or np.any(mult.p)):
            continue
        candidate = SolveResult(
            traj, np.zeros((dp.k, 0)), 0.0, mult, SolveStatus.OPTIMAL_LOCAL
        )
        result = check(exact, candidate, tol=np.inf, multipliers=normalize(mult))
        residual = max(result.euler_lagrange, result.transversality)
        log.debug("lambda0=%g recovery residual %.3e", value, residual)
        if residual < best_residual - tol:
            best, best_residual = mult, residual
    if best is None:
        raise TrivialMultipliersError("Adjoint recovery produced only zero multipliers")
    if best_residual > 1e-6:
        log.warning("best recovered multipliers leave residual %.3e", best_residual)
    return normalize(best)
