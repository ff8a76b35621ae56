"""Finite-difference spot checks; the full 100-trial sweep runs in acceptance."""

import numpy as np
import pytest

from labfew import verify
from labfew.gradcheck import check_gradients
from labfew.tensor import Tensor, tsum


def test_quadratic_is_machine_exact():
    x = Tensor(np.random.default_rng(0).uniform(0.5, 1.5, 12), requires_grad=True)
    err = check_gradients(lambda t: tsum(t * t), [x])
    assert err < 1e-9


def test_requires_float64():
    x = Tensor(np.ones(3, dtype=np.float32), requires_grad=True)
    with pytest.raises(ValueError, match="float64"):
        check_gradients(lambda t: tsum(t), [x])


def test_nonfinite_forward_aborts():
    x = Tensor(np.array([1.0]), requires_grad=True)

    def bad(t):
        return tsum(t * Tensor(np.array([np.inf])))

    with pytest.raises(FloatingPointError):
        check_gradients(bad, [x])


@pytest.mark.parametrize("name", sorted(verify.PRIMITIVE_CASES))
def test_primitive_gradients_spot(name):
    err = max(verify.check_case(name, seed=1, trial=t) for t in range(10))
    assert err < 1e-5, f"{name}: {err}"
