import numpy as np
import pytest
from pydantic import TypeAdapter, ValidationError

from rosl_bolza import errors
from rosl_bolza.models import HausdorffMethod
from rosl_bolza.sets import (
    AffineImage,
    Ball,
    Box,
    CompactConvexSet,
    PolytopeV,
    Segment,
    WholeSpace,
    hausdorff,
    project_onto_hull,
    simplify,
    sphere_directions,
    support_values,
)

square = PolytopeV(vertices=[[0, 0], [1, 0], [1, 1], [0, 1]])


def test_box_support_and_projection():
    """Test support function and projection of a box."""
    box = Box(lo=[0.0, 0.0], hi=[1.0, 2.0])
    value, point = box.support([1.0, -1.0])
    assert value == 1.0
    np.testing.assert_array_equal(point, [1.0, 0.0])
    nearest, distance = box.project([3.0, 1.0])
    np.testing.assert_array_equal(nearest, [1.0, 1.0])
    assert distance == 2.0


def test_box_invalid_bounds():
    """Test that lo > hi is rejected."""
    with pytest.raises(ValidationError) as exc_info:
        Box(lo=[1.0], hi=[0.0])
    assert "Box requires lo <= hi" in str(exc_info.value)


def test_ball_support_and_projection():
    """Test support function and projection of a ball."""
    ball = Ball(center=[1.0, 0.0], radius=2.0)
    value, point = ball.support([0.0, 3.0])
    assert value == pytest.approx(6.0)
    np.testing.assert_allclose(point, [1.0, 2.0])
    nearest, distance = ball.project([5.0, 0.0])
    np.testing.assert_allclose(nearest, [3.0, 0.0])
    assert distance == pytest.approx(2.0)
    assert ball.contains([2.0, 1.0])


def test_polytope_projection():
    """Test projection onto the convex hull of vertices."""
    nearest, distance = square.project([2.0, 0.5])
    np.testing.assert_allclose(nearest, [1.0, 0.5], atol=1e-7)
    assert distance == pytest.approx(1.0)
    nearest, _ = square.project([0.25, 0.75])
    np.testing.assert_allclose(nearest, [0.25, 0.75], atol=1e-7)


def test_polytope_projection_onto_vertex():
    """Test projection that lands on a vertex."""
    nearest, distance = square.project([-1.0, -1.0])
    np.testing.assert_allclose(nearest, [0.0, 0.0], atol=1e-7)
    assert distance == pytest.approx(np.sqrt(2.0))


def test_segment():
    """Test segment support and clipped projection."""
    segment = Segment(a=[0.0, 0.0], b=[2.0, 0.0])
    assert segment.support([1.0, 1.0])[0] == 2.0
    nearest, distance = segment.project([3.0, 4.0])
    np.testing.assert_array_equal(nearest, [2.0, 0.0])
    assert distance == pytest.approx(np.sqrt(17.0))


def test_affine_image_of_box():
    """Test an affine image and its simplification to a box."""
    image = AffineImage(matrix=[[2.0]], base=Box(lo=[-1.0], hi=[1.0]), offset=[1.0])
    assert image.support([1.0])[0] == 3.0
    assert image.support([-1.0])[0] == 1.0
    simple = simplify(image)
    assert isinstance(simple, Box)
    assert simple.lo == [-1.0] and simple.hi == [3.0]


def test_affine_image_of_ball_projection():
    """Test projection onto an ellipse."""
    ellipse = AffineImage(
        matrix=[[2.0, 0.0], [0.0, 1.0]], base=Ball(center=[0.0, 0.0], radius=1.0)
    )
    nearest, distance = ellipse.project([4.0, 0.0])
    np.testing.assert_allclose(nearest, [2.0, 0.0], atol=1e-6)
    assert distance == pytest.approx(2.0, abs=1e-6)
    assert ellipse.contains([1.0, 0.5], tol=1e-6)


def test_simplify_scaled_ball():
    """Test that a scaled ball image becomes a ball."""
    image = AffineImage(
        matrix=[[3.0, 0.0], [0.0, 3.0]],
        base=Ball(center=[1.0, 0.0], radius=1.0),
        offset=[0.0, 1.0],
    )
    simple = simplify(image)
    assert isinstance(simple, Ball)
    np.testing.assert_allclose(simple.c, [3.0, 1.0])
    assert simple.radius == 3.0


def test_nested_affine_image_flattens():
    """Test composition of nested affine images."""
    inner = AffineImage(matrix=[[2.0]], base=Box(lo=[0.0], hi=[1.0]), offset=[1.0])
    outer = AffineImage(matrix=[[3.0]], base=inner, offset=[-1.0])
    flat = outer.flattened()
    np.testing.assert_array_equal(flat.M, [[6.0]])
    np.testing.assert_array_equal(flat.shift, [2.0])
    assert outer.support([1.0])[0] == 8.0


def test_zero_direction():
    """Test that the support function needs a nonzero direction."""
    with pytest.raises(errors.ZeroDirectionError) as exc_info:
        Box(lo=[0.0], hi=[1.0]).support([0.0])
    assert "nonzero direction" in str(exc_info.value)


def test_dimension_mismatch():
    """Test a point of the wrong size."""
    with pytest.raises(errors.DimensionMismatchError) as exc_info:
        Box(lo=[0.0], hi=[1.0]).project([0.0, 1.0])
    assert "expected (1,)" in str(exc_info.value)


def test_whole_space():
    """Test the unconstrained endpoint set."""
    space = WholeSpace(n=2)
    nearest, distance = space.project([3.0, -4.0])
    np.testing.assert_array_equal(nearest, [3.0, -4.0])
    assert distance == 0.0
    assert space.support([1.0, 0.0])[0] == np.inf


def test_tagged_set_from_dict():
    """Test the type-tagged catalog union."""
    adapter = TypeAdapter(CompactConvexSet)
    ball = adapter.validate_python({"type": "ball", "center": [0.0], "radius": 1.0})
    assert isinstance(ball, Ball)
    with pytest.raises(ValidationError):
        adapter.validate_python({"type": "cone", "n": 1})


def test_hausdorff_boxes_exact():
    """Test the exact distance between polytopes."""
    report = hausdorff(Box(lo=[0.0], hi=[1.0]), Box(lo=[0.0], hi=[2.0]))
    assert report.value == pytest.approx(1.0)
    assert report.method == HausdorffMethod.EXACT
    assert report.error_bound == 0.0


def test_hausdorff_balls_exact():
    """Test the closed form for two balls."""
    a = Ball(center=[0.0, 0.0], radius=1.0)
    b = Ball(center=[3.0, 4.0], radius=2.0)
    report = hausdorff(a, b)
    assert report.value == pytest.approx(6.0)
    assert report.method == HausdorffMethod.EXACT


def test_hausdorff_sampled_reports_bound():
    """Test the direction-sampled distance of a ball and a square."""
    ball = Ball(center=[0.5, 0.5], radius=0.5)
    report = hausdorff(ball, square, n_dirs=360)
    exact = np.sqrt(0.5) - 0.5
    assert report.method == HausdorffMethod.DIRECTION_SAMPLED
    assert report.value <= exact + 1e-12
    assert exact - report.value <= report.error_bound
    assert report.n_dirs == 360


def random_box(rng) -> Box:
    lower = rng.uniform(-2.0, 2.0, 2)
    return Box(lo=lower.tolist(), hi=(lower + rng.uniform(0.0, 1.0, 2)).tolist())


def test_hausdorff_is_a_metric_on_boxes():
    """Test symmetry and the triangle inequality on random boxes."""
    rng = np.random.default_rng(11)
    for _ in range(100):
        a, b, c = random_box(rng), random_box(rng), random_box(rng)
        ab = hausdorff(a, b).value
        assert ab == hausdorff(b, a).value
        assert hausdorff(a, c).value <= ab + hausdorff(b, c).value + 1e-10
        assert hausdorff(a, a).value == 0.0


def test_support_is_subadditive():
    """Test σ(d1 + d2) <= σ(d1) + σ(d2) on random directions."""
    rng = np.random.default_rng(12)
    ellipse = AffineImage(
        matrix=[[1.0, 1.0], [0.0, 2.0]], base=Ball(center=[0.5, -1.0], radius=1.0)
    )
    sets = [square, ellipse, Box(lo=[-1.0, 0.0], hi=[0.0, 3.0])]
    for S in sets + [Ball(center=[1.0, 2.0], radius=0.5)]:
        for _ in range(100):
            d1, d2 = rng.normal(size=2), rng.normal(size=2)
            lhs = S.support(d1 + d2)[0]
            assert lhs <= S.support(d1)[0] + S.support(d2)[0] + 1e-10


def test_hausdorff_dimension_mismatch():
    """Test sets of different dimensions."""
    with pytest.raises(errors.DimensionMismatchError):
        hausdorff(Box(lo=[0.0], hi=[1.0]), square)


def test_support_values_match_support():
    """Test the vectorized support function against single directions."""
    directions, _ = sphere_directions(2, 16, seed=3)
    ellipse = AffineImage(
        matrix=[[1.0, 1.0], [0.0, 2.0]], base=Ball(center=[0.0, 0.0], radius=1.0)
    )
    for S in (square, ellipse, Box(lo=[-1.0, 0.0], hi=[0.0, 3.0])):
        expected = [S.support(d)[0] for d in directions]
        np.testing.assert_allclose(support_values(S, directions), expected)


def test_sphere_directions_are_unit_and_seeded():
    """Test direction sampling."""
    a, radius = sphere_directions(3, 50, seed=1)
    b, _ = sphere_directions(3, 50, seed=1)
    np.testing.assert_allclose(np.linalg.norm(a, axis=1), 1.0)
    np.testing.assert_array_equal(a, b)
    assert 0.0 < radius < 2.0


def test_project_onto_hull_single_point():
    """Test the degenerate hull of one point."""
    nearest = project_onto_hull(np.array([[1.0, 2.0]]), np.zeros(2))
    np.testing.assert_array_equal(nearest, [1.0, 2.0])


def test_max_norm():
    """Test the largest norm over a set."""
    assert square.max_norm() == pytest.approx(np.sqrt(2.0))
    assert Ball(center=[3.0, 0.0], radius=1.0).max_norm() == 4.0
