import numpy as np
import pytest

from gatedformer import tensor as T
from gatedformer.tensor import Tensor
from gatedformer.verify import (COMPONENTS, finite_diff_grad, gradcheck_component,
                                relative_error)


def test_sum_of_squares():
    g = finite_diff_grad(lambda x: T.sum(T.mul(x, x)), Tensor([3.0]), 1e-5)
    assert abs(g[0] - 6.0) < 1e-6


def test_sigmoid_at_zero():
    g = finite_diff_grad(lambda x: T.sum(T.sigmoid(x)), Tensor([0.0]))
    assert abs(g[0] - 0.25) < 1e-9


@pytest.mark.parametrize("h", [1e-3, 1e-5, 1e-7])
def test_linear_is_exact(h):
    w = np.array([0.5, -2.0, 3.25])
    g = finite_diff_grad(lambda x: T.sum(T.mul(x, Tensor(w))), Tensor([1.0, 2.0, -1.0]), h)
    np.testing.assert_allclose(g, w, atol=1e-9)


def test_does_not_touch_tape():
    with T.Tape() as tape:
        finite_diff_grad(lambda x: T.sum(x), Tensor([1.0, 2.0]))
    assert tape.nodes == []


@pytest.mark.parametrize("x,h", [(Tensor([1.0]), 0.0), (Tensor([np.nan]), 1e-5)])
def test_invalid_arguments(x, h):
    with pytest.raises(ValueError):
        finite_diff_grad(lambda x: T.sum(x), x, h)


def test_non_finite_evaluation():
    with pytest.raises(FloatingPointError):
        finite_diff_grad(lambda x: float("inf"), Tensor([1.0]))


def test_relative_error_floor():
    assert relative_error(np.array([0.0]), np.array([0.0]))[0] == 0.0
    assert relative_error(np.array([1.0]), np.array([1.1]))[0] == pytest.approx(0.1 / 1.1)
    assert relative_error(np.array([1e-13]), np.array([0.0]))[0] == pytest.approx(0.1)


@pytest.mark.parametrize("component", COMPONENTS)
def test_components_pass(component):
    report = gradcheck_component(component, seed=0)
    assert report.passed, "\n".join(report.lines())
    assert report.tolerance == (1e-4 if component == "full_micro_model" else 1e-5)


def test_reports_are_deterministic():
    a, b = gradcheck_component("grc", seed=3), gradcheck_component("grc", seed=3)
    assert a.to_json() == b.to_json()


def test_unreachable_tolerance_fails_without_raising():
    report = gradcheck_component("eau", seed=0, tolerance=1e-15)
    assert not report.passed
    assert "FAIL" in report.lines()[0]


def test_every_leaf_is_checked():
    names = [c.name for c in gradcheck_component("eau").checks]
    assert names == ["w1", "b1", "w2", "b2", "w3", "b3", "x"]


def test_unknown_component():
    with pytest.raises(ValueError):
        gradcheck_component("conv")
