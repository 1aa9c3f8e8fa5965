import numpy as np
import pytest
from pydantic import TypeAdapter, ValidationError

from rosl_bolza import errors
from rosl_bolza.setmap import (
    AffineControlMap,
    AnySetMap,
    SmoothInverseMap,
    avg_modulus,
    evaluate,
    project,
    rosl_check,
    support,
    uniform_bound,
)
from rosl_bolza.sets import Ball, Box, PolytopeV


def drifting_interval() -> AffineControlMap:
    """F(x, t) = t + [-1, 1]."""
    return AffineControlMap(
        domain_box=Box(lo=[-1.0], hi=[1.0]),
        rosl_l=0.0,
        m_F=2.0,
        g1=["t"],
        M=[["1"]],
        control_set=Box(lo=[-1.0], hi=[1.0]),
    )


def test_affine_control_evaluate(growth_map):
    """Test F(x, t) = g1(x, t) + M U as a set literal."""
    value = evaluate(growth_map, [2.0], 0.5)
    assert value.support([1.0])[0] == pytest.approx(3.0)
    assert value.support([-1.0])[0] == pytest.approx(-1.0)
    nearest, distance = project([5.0], value)
    np.testing.assert_allclose(nearest, [3.0])
    assert distance == pytest.approx(2.0)
    assert support(value, [1.0])[0] == pytest.approx(3.0)


def test_affine_control_jacobian():
    """Test g1 values and Jacobians."""
    dynamics = AffineControlMap(
        domain_box=Box(lo=[-2.0, -2.0], hi=[2.0, 2.0]),
        rosl_l=1.0,
        m_F=20.0,
        g1=["x2", "-sin(x1) + t"],
        M=[["0"], ["1"]],
        control_set=Box(lo=[-1.0], hi=[1.0]),
    )
    value, jac = dynamics.g1_jacobian(np.array([0.0, 1.0]), 0.5)
    np.testing.assert_allclose(value, [1.0, 0.5])
    np.testing.assert_allclose(jac, [[0.0, 1.0], [-1.0, 0.0]])
    assert dynamics.control_dimension == 1
    assert not dynamics.is_autonomous()
    assert not dynamics.g1_is_affine()


def test_g1_is_affine(growth_map):
    """Test the affine certificate of g1."""
    assert growth_map.g1_is_affine()
    assert growth_map.is_autonomous()


def test_domain_error(unit_interval_map):
    """Test evaluation outside the domain box or horizon."""
    with pytest.raises(errors.DomainError) as exc_info:
        evaluate(unit_interval_map, [6.0], 0.0)
    assert "outside the domain box" in str(exc_info.value)
    with pytest.raises(errors.DomainError) as exc_info:
        evaluate(unit_interval_map, [0.0], 1.5)
    assert "outside [0, 1.0]" in str(exc_info.value)


def test_smooth_inverse_evaluate(cubic_inverse_map):
    """Test F(x) = {y : y^3 + y = x}."""
    value = evaluate(cubic_inverse_map, [2.0], 0.0)
    assert isinstance(value, PolytopeV)
    np.testing.assert_allclose(value.vertices(), [[1.0]], atol=1e-12)
    assert cubic_inverse_map.is_autonomous()


def test_smooth_inverse_in_two_dimensions():
    """Test inversion of a coupled smooth map."""
    dynamics = SmoothInverseMap(
        domain_box=Box(lo=[-5.0, -5.0], hi=[5.0, 5.0]),
        rosl_l=0.0,
        m_F=10.0,
        psi=["v1 + v2^3", "v2 + 0.5 * v1"],
    )
    y = dynamics.invert(np.array([1.5, 1.5]), 0.0)
    value, _ = dynamics.psi_jacobian(y, 0.0)
    np.testing.assert_allclose(value, [1.5, 1.5], atol=1e-10)
    # the only real root lies far from the start point
    assert y[1] == pytest.approx(-1.6984, abs=1e-3)
    vertex = dynamics.evaluate([1.5, 1.5], 0.0).vertices()[0]
    np.testing.assert_allclose(vertex, y, atol=1e-8)


def test_smooth_inverse_without_solution():
    """Test the error when psi never reaches the requested value."""
    dynamics = SmoothInverseMap(
        domain_box=Box(lo=[-5.0, -5.0], hi=[5.0, 5.0]),
        rosl_l=0.0,
        m_F=10.0,
        psi=["v1^2 + 1", "v2"],
    )
    with pytest.raises(errors.RootFindingError) as exc_info:
        dynamics.invert(np.array([0.0, 0.0]), 0.0)
    assert "from 33 starts" in str(exc_info.value)


def test_invalid_map_definitions():
    """Test shape and variable checks of the map catalog."""
    box = {"domain_box": {"lo": [-1.0], "hi": [1.0]}, "rosl_l": 0.0, "m_F": 1.0}
    control = {"type": "box", "lo": [-1.0], "hi": [1.0]}
    with pytest.raises(ValidationError) as exc_info:
        AffineControlMap(**box, g1=["v1"], M=[["1"]], control_set=control)
    assert "uses ['v1']" in str(exc_info.value)
    with pytest.raises(ValidationError) as exc_info:
        AffineControlMap(**box, g1=["0"], M=[["x1"]], control_set=control)
    assert "may only depend on t" in str(exc_info.value)
    with pytest.raises(ValidationError) as exc_info:
        AffineControlMap(**box, g1=["0", "0"], M=[["1"]], control_set=control)
    assert "g1 must have 1 components" in str(exc_info.value)
    with pytest.raises(ValidationError) as exc_info:
        SmoothInverseMap(**box, psi=["abs(v1)"])
    assert "must be smooth" in str(exc_info.value)


def test_tagged_map_from_dict():
    """Test the class-tagged map union."""
    adapter = TypeAdapter(AnySetMap)
    dynamics = adapter.validate_python(
        {
            "class": "smooth_inverse",
            "domain_box": {"lo": [-1.0], "hi": [1.0]},
            "rosl_l": 0.0,
            "m_F": 1.0,
            "psi": ["v1"],
        }
    )
    assert isinstance(dynamics, SmoothInverseMap)


def test_ball_control_set():
    """Test an affine map with a ball of controls."""
    dynamics = AffineControlMap(
        domain_box=Box(lo=[-1.0, -1.0], hi=[1.0, 1.0]),
        rosl_l=0.0,
        m_F=2.0,
        g1=["0", "0"],
        M=[["2", "0"], ["0", "2"]],
        control_set=Ball(center=[0.0, 0.0], radius=1.0),
    )
    value = dynamics.evaluate([0.0, 0.0], 0.0)
    assert value.support([3.0, 4.0])[0] == pytest.approx(10.0)


def test_rosl_check_passes_for_decay(decay_map):
    """Test the sampled ROSL quotient of F(x) = {-10 x}."""
    worst, passed = rosl_check(decay_map, -10.0, 50, seed=0)
    assert worst == pytest.approx(-10.0)
    assert passed


def test_rosl_check_detects_wrong_claim(growth_map):
    """Test that an understated modulus is flagged."""
    worst, passed = rosl_check(growth_map, 0.5, 50, seed=1)
    assert worst == pytest.approx(1.0)
    assert not passed


def test_rosl_check_needs_samples(growth_map):
    """Test the empty-sample error."""
    with pytest.raises(errors.EmptySampleError):
        rosl_check(growth_map, 1.0, 0, seed=0)


def test_rosl_check_on_a_point_domain():
    """Test that a sample of coinciding pairs is rejected."""
    dynamics = AffineControlMap(
        domain_box=Box(lo=[0.0], hi=[0.0]),
        rosl_l=1.0,
        m_F=1.0,
        g1=["x1"],
        M=[["1"]],
        control_set=Box(lo=[-1.0], hi=[1.0]),
    )
    with pytest.raises(errors.EmptySampleError) as exc_info:
        rosl_check(dynamics, -5.0, 20, seed=0)
    assert "All 20 sampled pairs coincide" in str(exc_info.value)


def test_rosl_check_ignores_the_control_set():
    """Test that the quotient only depends on g1."""
    common = {
        "domain_box": Box(lo=[-1.0, -1.0], hi=[1.0, 1.0]),
        "rosl_l": 0.0,
        "m_F": 5.0,
        "g1": ["x2 - x1^3", "-x1 - x2"],
        "M": [["1", "0"], ["0", "1"]],
    }
    pinned = AffineControlMap(**common, control_set=Box(lo=[0.0, 0.0], hi=[0.0, 0.0]))
    spread = AffineControlMap(**common, control_set=Ball(center=[0.0, 0.0], radius=1.0))
    worst_pinned, _ = rosl_check(pinned, 0.0, 200, seed=4)
    worst_spread, _ = rosl_check(spread, 0.0, 200, seed=4)
    assert worst_spread == pytest.approx(worst_pinned, abs=1e-12)


def test_avg_modulus(unit_interval_map):
    """Test the averaged modulus of autonomous and drifting maps."""
    assert avg_modulus(unit_interval_map, 0.1) == 0.0
    tau = avg_modulus(drifting_interval(), 0.1)
    assert 0.09 < tau <= 0.1 + 1e-9


def test_avg_modulus_grows_with_the_step():
    """Test that the averaged modulus is nondecreasing in h."""
    values = [
        avg_modulus(drifting_interval(), h, t_grid=41) for h in [0.05, 0.1, 0.2, 0.4]
    ]
    assert all(b >= a - 1e-12 for a, b in zip(values, values[1:]))
    assert values[-1] > values[0]


def test_uniform_bound(unit_interval_map, growth_map):
    """Test the sampled bound on |F(x, t)|."""
    assert uniform_bound(unit_interval_map, 3) == (pytest.approx(1.0), True)
    m_hat, ok = uniform_bound(growth_map, 3)
    assert m_hat == pytest.approx(11.0)
    assert ok
