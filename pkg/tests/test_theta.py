import numpy as np
import pytest

from wotbounds.theta import PiecewiseLinear


def test_constructors_evaluate_exactly():
    z = np.linspace(-5, 5, 41)
    assert np.array_equal(PiecewiseLinear.positive_part()(z), np.maximum(z, 0.0))
    assert np.array_equal(PiecewiseLinear.absolute_value()(z), np.abs(z))
    assert np.allclose(PiecewiseLinear.w_shape()(z), np.minimum(np.abs(z - 1), np.abs(z + 1)), atol=1e-15)


def test_convexity_flags():
    assert PiecewiseLinear.positive_part().is_convex()
    assert not PiecewiseLinear.w_shape().is_convex()
    assert PiecewiseLinear.positive_part().negated().is_concave()


def test_envelope_of_w_shape_is_flat_bottom():
    env = PiecewiseLinear.w_shape().envelope()
    z = np.linspace(-3, 3, 61)
    assert env.is_convex()
    assert np.allclose(env(z), np.maximum(np.abs(z) - 1.0, 0.0), atol=1e-15)


def test_left_derivative_convention():
    pp = PiecewiseLinear.positive_part()
    assert pp.left_derivative(0.0) == 0.0
    assert pp.left_derivative(1e-9) == 1.0
    assert pp.left_derivative(-3.0) == 0.0


def test_kinks_and_round_trip():
    w = PiecewiseLinear.w_shape()
    assert w.kinks().tolist() == [-1.0, 0.0, 1.0]
    back = PiecewiseLinear.from_dict(w.to_dict())
    assert np.array_equal(back.knots, w.knots) and np.array_equal(back.values, w.values)


@pytest.mark.parametrize("knots,values", [([0.0], [1.0]), ([0.0, 0.0], [1.0, 2.0]), ([0.0, 1.0], [1.0, np.nan])])
def test_invalid(knots, values):
    with pytest.raises(ValueError):
        PiecewiseLinear(knots, values)
