import numpy as np
import pytest

from rosl_bolza import errors
from rosl_bolza.implicit_step import (
    approximate_trajectory,
    euler_iterates,
    explicit_step,
    extend_and_compare,
    growth_factor,
    implicit_step,
    step_distance,
)
from rosl_bolza.setmap import AffineControlMap, SmoothInverseMap
from rosl_bolza.sets import Ball, Box
from rosl_bolza.trajectory import DiscreteTrajectory, ReferenceTrajectory


def test_implicit_step_on_stiff_decay(decay_map):
    """Test y = x / (1 + 10 h) for F(x) = {-10 x} with h = 0.5."""
    y, residual = implicit_step(decay_map, [1.0], 0.5, 0.5)
    np.testing.assert_allclose(y, [1.0 / 6.0])
    assert residual <= 1e-10


def test_explicit_step_on_stiff_decay(decay_map):
    """Test the explicit step x - 10 h x = -4 x."""
    np.testing.assert_allclose(explicit_step(decay_map, [1.0], 0.0, 0.5), [-4.0])


def test_euler_iterates_stiff_decay(decay_map):
    """Test that implicit iterates decay while explicit ones blow up."""
    implicit = euler_iterates(decay_map, [1.0], 0.5, 3)
    explicit = euler_iterates(decay_map, [1.0], 0.5, 3, explicit=True)
    np.testing.assert_allclose(implicit[:, 0], [1.0, 1 / 6, 1 / 36, 1 / 216])
    np.testing.assert_allclose(explicit[:, 0], [1.0, -4.0, 16.0, -64.0])


def test_implicit_step_selects_nearest_velocity(unit_interval_map):
    """Test that the guess selects the velocity of the interval."""
    y, _ = implicit_step(unit_interval_map, [0.0], 0.1, 0.1, guess=[-1.0])
    np.testing.assert_allclose(y, [-0.1])
    y, _ = implicit_step(unit_interval_map, [0.0], 0.1, 0.1, guess=[0.05])
    np.testing.assert_allclose(y, [0.05])


def test_implicit_step_growth(growth_map):
    """Test the resolvent of x' = x + u with u = 0."""
    y, residual = implicit_step(growth_map, [1.0], 0.25, 0.25, guess=[4.0 / 3.0])
    np.testing.assert_allclose(y, [4.0 / 3.0])
    assert step_distance(growth_map, np.array([1.0]), 0.25, 0.25, y) <= 1e-10
    assert residual <= 1e-10


def test_implicit_step_smooth_inverse(cubic_inverse_map):
    """Test y = x + h w with w^3 + w = y."""
    x, h = np.array([2.0]), 0.1
    y, residual = implicit_step(cubic_inverse_map, x, 0.1, h)
    w = (y - x) / h
    assert w[0] ** 3 + w[0] == pytest.approx(y[0], abs=1e-10)
    assert residual <= 1e-10


def test_stepsize_too_large(growth_map):
    """Test the l h < 1 requirement of a single step."""
    with pytest.raises(errors.StepsizeTooLargeError) as exc_info:
        implicit_step(growth_map, [0.0], 1.0, 1.0)
    assert "l*h < 1" in str(exc_info.value)


def test_nonpositive_step(unit_interval_map):
    """Test that h must be positive."""
    with pytest.raises(errors.StepsizeTooLargeError):
        implicit_step(unit_interval_map, [0.0], 0.0, 0.0)


def test_step_outside_domain(unit_interval_map):
    """Test the domain check of the previous node."""
    with pytest.raises(errors.DomainError):
        implicit_step(unit_interval_map, [7.0], 0.1, 0.1)


def test_failed_step_carries_index(growth_map):
    """Test that iterates leaving the domain name the failing step."""
    with pytest.raises(errors.StepFailedError) as exc_info:
        euler_iterates(growth_map, [9.5], 0.1, 3, explicit=True)
    assert exc_info.value.index == 2
    assert "Step 2 failed" in str(exc_info.value)


def test_growth_factor():
    """Test exp(2 l+ T)."""
    assert growth_factor(-3.0, 2.0) == 1.0
    assert growth_factor(0.5, 2.0) == pytest.approx(np.exp(2.0))


def test_approximation_of_feasible_line(unit_interval_map, descent_ref):
    """Test that z^k reproduces a reference with constant admissible slope."""
    traj, report = approximate_trajectory(unit_interval_map, descent_ref, 8)
    np.testing.assert_allclose(traj.nodes[:, 0], -np.arange(9) / 8, atol=1e-10)
    assert report.eta_k == pytest.approx(0.0, abs=1e-10)
    assert report.sup_err <= 1e-10
    assert report.bound_ok
    assert report.tau == 0.0


def test_approximation_converges(growth_map):
    """Test the error bound and its decrease in k."""
    ref = ReferenceTrajectory.from_control(
        growth_map, [0.0], lambda t: np.array([np.cos(3.0 * t)]), 1.0, 2049
    )
    errors_by_k = []
    for k in (8, 16, 32):
        traj, report = approximate_trajectory(growth_map, ref, k)
        assert report.bound_ok
        assert report.growth == pytest.approx(np.exp(2.0))
        assert report.eta_k == pytest.approx(
            report.zeta_k * report.growth + report.xi_k
        )
        assert report.sup_err <= report.eta_k + 1e-6
        errors_by_k.append(report.sup_err)
    assert errors_by_k[0] > errors_by_k[1] > errors_by_k[2]


def test_approximation_needs_small_steps(growth_map, descent_ref):
    """Test the l h < 1/2 requirement of the procedure."""
    with pytest.raises(errors.StepsizeTooLargeError) as exc_info:
        approximate_trajectory(growth_map, descent_ref, 2)
    assert "l*h < 1/2" in str(exc_info.value)


def test_approximation_rejects_infeasible_reference(unit_interval_map):
    """Test a reference whose derivative leaves F."""
    ref = ReferenceTrajectory.from_functions(
        lambda t: -2 * t, lambda t: -2 * np.ones_like(t), 1.0, 11
    )
    with pytest.raises(errors.InfeasibleTrajectoryError) as exc_info:
        approximate_trajectory(unit_interval_map, ref, 4)
    assert "leaves F" in str(exc_info.value)


def test_extend_and_compare(descent_ref):
    """Test uniform and velocity errors against the reference."""
    exact = DiscreteTrajectory(-np.arange(5) / 4, 0.25)
    assert extend_and_compare(exact, descent_ref) == (
        pytest.approx(0.0, abs=1e-12),
        pytest.approx(0.0, abs=1e-6),
    )
    shifted = DiscreteTrajectory(np.array([0.0, 0.0, -0.5, -0.75, -1.0]), 0.25)
    sup_err, w12_err = extend_and_compare(shifted, descent_ref)
    assert sup_err == pytest.approx(0.25)
    assert w12_err == pytest.approx(np.sqrt(0.5), rel=1e-6)


def test_extend_and_compare_horizon_mismatch(descent_ref):
    """Test trajectories on a different horizon."""
    with pytest.raises(errors.InconsistentTrajectoryError):
        extend_and_compare(DiscreteTrajectory(np.zeros(3), 0.25), descent_ref)


def test_step_bound_on_random_instances(
    decay_map, growth_map, unit_interval_map
):
    """Test |y - guess| <= dist(guess, x + h F(guess, t)) / (1 - l h)."""
    rotation = AffineControlMap(
        domain_box=Box(lo=[-2.0, -2.0], hi=[2.0, 2.0]),
        rosl_l=0.0,
        m_F=5.0,
        g1=["x2", "-x1"],
        M=[["1", "0"], ["0", "1"]],
        control_set=Ball(center=[0.0, 0.0], radius=1.0),
    )
    cubic = SmoothInverseMap(
        domain_box=Box(lo=[-10.0], hi=[10.0]), rosl_l=1.0, m_F=3.0, psi=["v1^3 + v1"]
    )
    rng = np.random.default_rng(2024)
    for dynamics in (decay_map, growth_map, unit_interval_map, rotation, cubic):
        for _ in range(100):
            x = rng.uniform(-1.0, 1.0, dynamics.n)
            guess = rng.uniform(-1.0, 1.0, dynamics.n)
            h = rng.uniform(0.01, 0.5)
            t = rng.uniform(0.0, dynamics.horizon)
            y, residual = implicit_step(dynamics, x, t, h, guess=guess)
            bound = step_distance(dynamics, x, t, h, guess) / (1 - dynamics.rosl_l * h)
            assert residual <= 1e-8
            assert np.linalg.norm(y - guess) <= bound + 1e-6


def test_approximation_of_a_sinusoidal_control():
    """Test uniform and W^{1,2} convergence for x' in -x + [-1, 1]."""
    dynamics = AffineControlMap(
        domain_box=Box(lo=[-2.0], hi=[2.0]),
        rosl_l=-1.0,
        m_F=3.0,
        g1=["-x1"],
        M=[["1"]],
        control_set=Box(lo=[-1.0], hi=[1.0]),
    )
    ref = ReferenceTrajectory.from_control(
        dynamics, [0.0], lambda t: np.array([np.sin(2.0 * np.pi * t)]), 1.0, 4097
    )
    reports = [approximate_trajectory(dynamics, ref, k)[1] for k in (16, 32, 64, 128)]
    assert all(report.bound_ok for report in reports)
    sup = [report.sup_err for report in reports]
    w12 = [report.w12_err for report in reports]
    assert all(a > b for a, b in zip(sup, sup[1:]))
    assert sup[-1] <= reports[-1].eta_k
    assert all(a > b for a, b in zip(w12, w12[1:]))
    # first order in h: an 8-fold refinement divides the error by about 8
    assert w12[-1] <= 0.15 * w12[0]


def test_fifty_steps_on_stiff_decay():
    """Test bounded implicit and divergent explicit iterates of x' = -10 x."""
    dynamics = AffineControlMap(
        domain_box=Box(lo=[-1e32], hi=[1e32]),
        rosl_l=-10.0,
        m_F=1e33,
        horizon=25.0,
        g1=["-10*x1"],
        M=[["0"]],
        control_set=Box(lo=[0.0], hi=[0.0]),
    )
    implicit = euler_iterates(dynamics, [1.0], 0.5, 50)[:, 0]
    assert np.all((implicit >= 0.0) & (implicit <= 1.0))
    explicit = euler_iterates(dynamics, [1.0], 0.5, 50, explicit=True)[:, 0]
    assert np.abs(explicit).max() > 10.0
    assert np.argmax(np.abs(explicit) > 10.0) == 2
