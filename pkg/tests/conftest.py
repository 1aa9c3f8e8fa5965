import copy
import json

import numpy as np
import pytest

from rosl_bolza.bolza import BolzaSpec
from rosl_bolza.models.problem import SolverConfig
from rosl_bolza.setmap import AffineControlMap, SmoothInverseMap
from rosl_bolza.sets import Box
from rosl_bolza.trajectory import ReferenceTrajectory


def interval_map(T: float = 1.0, l: float = 0.0) -> AffineControlMap:
    """F(x, t) = [-1, 1] on the box [-5, 5]."""
    return AffineControlMap(
        domain_box=Box(lo=[-5.0], hi=[5.0]),
        rosl_l=l,
        m_F=1.0,
        horizon=T,
        g1=["0"],
        M=[["1"]],
        control_set=Box(lo=[-1.0], hi=[1.0]),
    )


@pytest.fixture
def unit_interval_map() -> AffineControlMap:
    """Constant interval right-hand side on [0, 1]."""
    return interval_map()


@pytest.fixture
def decay_map() -> AffineControlMap:
    """Single-valued F(x) = {-10 x}."""
    return AffineControlMap(
        domain_box=Box(lo=[-100.0], hi=[100.0]),
        rosl_l=-10.0,
        m_F=1000.0,
        horizon=2.0,
        g1=["-10*x1"],
        M=[["0"]],
        control_set=Box(lo=[0.0], hi=[0.0]),
    )


@pytest.fixture
def growth_map() -> AffineControlMap:
    """F(x) = x + [-1, 1], ROSL with l = 1."""
    return AffineControlMap(
        domain_box=Box(lo=[-10.0], hi=[10.0]),
        rosl_l=1.0,
        m_F=11.0,
        horizon=1.0,
        g1=["x1"],
        M=[["1"]],
        control_set=Box(lo=[-1.0], hi=[1.0]),
    )


@pytest.fixture
def cubic_inverse_map() -> SmoothInverseMap:
    """F(x) = {y : y^3 + y = x}."""
    return SmoothInverseMap(
        domain_box=Box(lo=[-10.0], hi=[10.0]),
        rosl_l=0.0,
        m_F=3.0,
        horizon=1.0,
        psi=["v1^3 + v1"],
    )


@pytest.fixture
def descent_spec() -> BolzaSpec:
    """Minimize x(1) with x' in [-1, 1], x(0) = 0; the optimum is x = -t."""
    return BolzaSpec(
        T=1.0, x0=[0.0], dynamics=interval_map(), phi0="x1", f="0", eps=10.0
    )


@pytest.fixture
def descent_ref() -> ReferenceTrajectory:
    return ReferenceTrajectory.from_functions(
        lambda t: -t, lambda t: -np.ones_like(t), 1.0, 1025
    )


@pytest.fixture
def quadratic_spec() -> BolzaSpec:
    """Minimize the integral of x^2 on [0, 2] with x' in [-1, 1], x(0) = 1."""
    return BolzaSpec(
        T=2.0, x0=[1.0], dynamics=interval_map(T=2.0), f="x1^2", eps=10.0
    )


@pytest.fixture
def quadratic_ref() -> ReferenceTrajectory:
    return ReferenceTrajectory.from_functions(
        lambda t: np.maximum(1.0 - t, 0.0),
        lambda t: np.where(t < 1.0, -1.0, 0.0),
        2.0,
        4097,
    )


@pytest.fixture
def fast_config() -> SolverConfig:
    return SolverConfig(n_starts=2, seeds=[7])


@pytest.fixture
def valid_problem() -> dict:
    """Fixture for a valid problem file document."""
    return {
        "meta": {"n": 1, "T": 1.0, "x0": [0.0]},
        "dynamics": {
            "class": "AffineControl",
            "g1": ["0"],
            "M": [["1"]],
            "control_set": {"type": "box", "lo": [-1.0], "hi": [1.0]},
            "domain_box": {"type": "box", "lo": [-5.0], "hi": [5.0]},
            "rosl_l": 0.0,
            "m_F": 1.0,
        },
        "cost": {"phi0": "x1", "f": "0"},
        "localization": {
            "eps": 10.0,
            "reference": {"state": ["-t"], "derivative": ["-1"], "points": 1025},
        },
        "solver": {"mode": "PkTilde", "n_starts": 2, "seeds": [3]},
    }


@pytest.fixture
def invalid_problem(valid_problem) -> dict:
    """Fixture for a problem whose x0 does not match n."""
    problem = copy.deepcopy(valid_problem)
    problem["meta"]["x0"] = [0.0, 1.0]
    return problem


@pytest.fixture
def problem_file(tmp_path, valid_problem) -> str:
    path = tmp_path / "problem.json"
    path.write_text(json.dumps(valid_problem))
    return str(path)
