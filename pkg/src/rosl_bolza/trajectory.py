"""Reference and discrete trajectories, interval quadrature and CSV files."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.integrate import solve_ivp, trapezoid

from .errors import DimensionMismatchError, InvalidProblemError

PathLike = Union[str, Path]


def _read_rows(path: PathLike) -> Tuple[List[str], List[List[str]]]:
    with open(path, newline="", encoding="utf-8") as f:
        lines = [line for line in f if line.strip() and not line.startswith("#")]
    reader = csv.reader(lines)
    rows = [[cell.strip() for cell in row] for row in reader]
    if not rows:
        raise InvalidProblemError(f"{path} contains no header")
    return rows[0], rows[1:]


def _write_rows(
    path: PathLike,
    header: Sequence[str],
    rows: Iterable[Sequence[object]],
    comments: Sequence[str] = (),
) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        for line in comments:
            f.write(f"# {line}\n")
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_format(cell) for cell in row])


def _format(cell: object) -> str:
    if isinstance(cell, float):
        return "" if np.isnan(cell) else repr(cell)
    if isinstance(cell, np.floating):
        return _format(float(cell))
    return str(cell)


@dataclass(frozen=True)
class ReferenceTrajectory:
    """A feasible trajectory x̄ sampled on a fine grid together with its derivative."""

    times: np.ndarray
    states: np.ndarray
    derivatives: np.ndarray
    provenance: str = "analytic"

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        states = np.asarray(self.states, dtype=float)
        derivatives = np.asarray(self.derivatives, dtype=float)
        if states.ndim == 1:
            states = states[:, None]
        if derivatives.ndim == 1:
            derivatives = derivatives[:, None]
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "derivatives", derivatives)
        if len(times) < 2 or states.shape != derivatives.shape:
            raise InvalidProblemError("Reference needs >= 2 samples of x and xdot")
        if states.shape[0] != len(times):
            raise InvalidProblemError("Reference sample counts disagree")
        if times[0] != 0.0:
            raise InvalidProblemError(f"Reference must start at t=0, got {times[0]}")
        if np.any(np.diff(times) <= 0.0):
            raise InvalidProblemError("Reference times must be strictly increasing")

    @property
    def n(self) -> int:
        return self.states.shape[1]

    @property
    def T(self) -> float:
        return float(self.times[-1])

    def state_at(self, t: Union[float, np.ndarray]) -> np.ndarray:
        return self._interp(t, self.states)

    def derivative_at(self, t: Union[float, np.ndarray]) -> np.ndarray:
        return self._interp(t, self.derivatives)

    def _interp(self, t, values: np.ndarray) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        columns = [np.interp(t, self.times, values[:, i]) for i in range(self.n)]
        return np.stack(columns, axis=-1)

    def window(self, a: float, b: float) -> Tuple[np.ndarray, np.ndarray]:
        """Grid points of [a, b] with interpolated endpoints, and ẋ̄ there."""
        inside = (self.times > a) & (self.times < b)
        ts = np.concatenate([[a], self.times[inside], [b]])
        return ts, self.derivative_at(ts)

    def interval_integrals(self, grid: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Trapezoid values of ∫ẋ̄ and ∫|ẋ̄|² over each grid interval."""
        first = np.zeros((len(grid) - 1, self.n))
        second = np.zeros(len(grid) - 1)
        for j in range(1, len(grid)):
            ts, xdot = self.window(grid[j - 1], grid[j])
            first[j - 1] = trapezoid(xdot, ts, axis=0)
            second[j - 1] = trapezoid(np.sum(xdot**2, axis=1), ts)
        return first, second

    def velocity_penalties(
        self, grid: np.ndarray, velocities: np.ndarray
    ) -> np.ndarray:
        """Trapezoid values of ∫|v_j − ẋ̄|² per interval, expanded in A_j and B_j."""
        first, second = self.interval_integrals(grid)
        h = np.diff(grid)
        velocities = np.atleast_2d(velocities)
        return (
            h * np.sum(velocities**2, axis=1)
            - 2.0 * np.sum(velocities * first, axis=1)
            + second
        )

    def step_deviation(self, grid: np.ndarray, steps: np.ndarray) -> float:
        """∫|ẋ̄ − w| for a velocity w that is constant on each grid interval."""
        total = 0.0
        for j in range(1, len(grid)):
            ts, xdot = self.window(grid[j - 1], grid[j])
            total += trapezoid(np.linalg.norm(xdot - steps[j - 1], axis=1), ts)
        return float(total)

    def feasibility_residual(self, map) -> float:
        """max over samples of dist(ẋ̄(t), F(x̄(t), t))."""
        return float(
            max(
                map.evaluate(x, t).distance(v)
                for t, x, v in zip(self.times, self.states, self.derivatives)
            )
        )

    @classmethod
    def from_functions(
        cls,
        state: Callable[[np.ndarray], np.ndarray],
        derivative: Callable[[np.ndarray], np.ndarray],
        T: float,
        points: int,
    ) -> "ReferenceTrajectory":
        """Sample analytic x̄ and ẋ̄ on a uniform grid of ``points`` samples."""
        ts = np.linspace(0.0, T, points)
        return cls(ts, state(ts), derivative(ts), provenance="analytic")

    @classmethod
    def from_control(
        cls,
        map,
        x0: Sequence[float],
        control: Callable[[float], np.ndarray],
        T: float,
        points: int,
    ) -> "ReferenceTrajectory":
        """Integrate x' = g1(x, t) + M(t) u(t) and sample the exact derivative."""

        def rhs(t, x):
            u = np.atleast_1d(control(t))
            return map.g1_value(x, t) + map.control_matrix(t) @ u

        ts = np.linspace(0.0, T, points)
        solution = solve_ivp(
            rhs,
            (0.0, T),
            np.asarray(x0, dtype=float),
            method="DOP853",
            t_eval=ts,
            rtol=1e-11,
            atol=1e-12,
        )
        if not solution.success:
            raise InvalidProblemError(
                f"Reference integration failed: {solution.message}"
            )
        states = solution.y.T
        derivatives = np.array([rhs(t, x) for t, x in zip(ts, states)])
        return cls(ts, states, derivatives, provenance="integrated-control")

    @classmethod
    def from_discrete(
        cls, traj: "DiscreteTrajectory", refine: int = 16
    ) -> "ReferenceTrajectory":
        """Fine sampling of a discrete trajectory with its left-interval velocity."""
        ts = np.linspace(0.0, traj.T, traj.k * refine + 1)
        return cls(ts, traj.state_at(ts), traj.velocity_at(ts), provenance="discrete")

    @classmethod
    def read_csv(cls, path: PathLike) -> "ReferenceTrajectory":
        header, rows = _read_rows(path)
        n = (len(header) - 1) // 2
        expected = ["t"] + [f"x{i}" for i in range(1, n + 1)]
        expected += [f"xdot{i}" for i in range(1, n + 1)]
        if header != expected:
            raise InvalidProblemError(
                f"{path}: expected header {','.join(expected)}, got {','.join(header)}"
            )
        data = np.array(rows, dtype=float)
        return cls(data[:, 0], data[:, 1 : n + 1], data[:, n + 1 :], provenance="file")

    def to_csv(self, path: PathLike, comments: Sequence[str] = ()) -> None:
        header = ["t"] + [f"x{i}" for i in range(1, self.n + 1)]
        header += [f"xdot{i}" for i in range(1, self.n + 1)]
        rows = (
            [float(t), *map(float, x), *map(float, v)]
            for t, x, v in zip(self.times, self.states, self.derivatives)
        )
        _write_rows(path, header, rows, comments)


@dataclass(frozen=True)
class DiscreteTrajectory:
    """Nodes x_0..x_k on the uniform grid t_j = j h; velocities are derived."""

    nodes: np.ndarray
    h: float

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        if nodes.ndim == 1:
            nodes = nodes[:, None]
        if len(nodes) < 2:
            raise InvalidProblemError("A discrete trajectory needs k >= 1 steps")
        if self.h <= 0.0:
            raise InvalidProblemError(f"Step size must be positive, got {self.h}")
        object.__setattr__(self, "nodes", nodes)

    @property
    def k(self) -> int:
        return len(self.nodes) - 1

    @property
    def n(self) -> int:
        return self.nodes.shape[1]

    @property
    def T(self) -> float:
        return self.k * self.h

    @property
    def times(self) -> np.ndarray:
        return self.h * np.arange(self.k + 1)

    @property
    def velocities(self) -> np.ndarray:
        """v_1..v_k as a (k, n) array."""
        return np.diff(self.nodes, axis=0) / self.h

    @classmethod
    def from_velocities(
        cls, x0: Sequence[float], velocities: np.ndarray, h: float
    ) -> "DiscreteTrajectory":
        velocities = np.atleast_2d(np.asarray(velocities, dtype=float))
        x0 = np.asarray(x0, dtype=float)
        if velocities.shape[1] != x0.shape[0]:
            raise DimensionMismatchError("Velocity and state dimensions disagree")
        nodes = np.vstack([x0, x0 + h * np.cumsum(velocities, axis=0)])
        return cls(nodes, h)

    def state_at(self, t: Union[float, np.ndarray]) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        columns = [np.interp(t, self.times, self.nodes[:, i]) for i in range(self.n)]
        return np.stack(columns, axis=-1)

    def velocity_at(self, t: Union[float, np.ndarray]) -> np.ndarray:
        """Piecewise-constant velocity, v_j on (t_{j-1}, t_j]."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        index = np.clip(np.ceil(t / self.h - 1e-12).astype(int), 1, self.k)
        return self.velocities[index - 1]

    def to_csv(self, path: PathLike, comments: Sequence[str] = ()) -> None:
        header = ["j", "t"] + [f"x{i}" for i in range(1, self.n + 1)]
        header += [f"v{i}" for i in range(1, self.n + 1)]
        velocities = self.velocities
        rows = []
        for j in range(self.k + 1):
            v = velocities[j - 1] if j > 0 else np.full(self.n, np.nan)
            x = [float(c) for c in self.nodes[j]]
            rows.append([j, float(j * self.h), *x, *(float(c) for c in v)])
        _write_rows(path, header, rows, comments)

    @classmethod
    def read_csv(cls, path: PathLike) -> "DiscreteTrajectory":
        header, rows = _read_rows(path)
        n = (len(header) - 2) // 2
        nodes = np.array([[float(c) for c in row[2 : n + 2]] for row in rows])
        times = np.array([float(row[1]) for row in rows])
        return cls(nodes, float(times[1] - times[0]))


def write_table(
    path: PathLike,
    header: Sequence[str],
    rows: Iterable[Sequence[object]],
    comments: Optional[Sequence[str]] = None,
) -> None:
    _write_rows(path, header, rows, comments or ())
