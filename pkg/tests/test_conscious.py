import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gravrec.conscious import ConsciousParams, gru_step, init_conscious
from gravrec.errors import ContractViolation
from gravrec.gradcheck import finite_difference_check
from gravrec.tape import Tape, reverse_gradients, sum_all


def zero_params(d_c, d_u):
    return ConsciousParams(*[np.zeros(s) for s in
                             [(d_c, d_u), (d_c, d_c), (d_c, d_u), (d_c, d_c),
                              (d_c, d_u), (d_c, d_c)]])


def test_zero_weights_zero_state_is_fixed_point():
    out = gru_step(zero_params(3, 2), np.zeros(3), np.ones(2))
    assert np.array_equal(out, np.zeros(3))


def test_zero_weights_scalar_case():
    # gates are 0.5 and the candidate is 0, so 0.8 interpolates to 0.4
    out = gru_step(zero_params(1, 1), np.array([0.8]), np.array([0.0]))
    assert out[0] == pytest.approx(0.4, abs=1e-15)


def test_candidate_equal_to_previous_state_is_fixed_point():
    # zero candidate weights with c_prev = 0 force candidate == c_prev while
    # the gates still vary with the input
    rng = np.random.default_rng(0)
    params = zero_params(2, 3)
    params.w_update = rng.normal(size=(2, 3))
    params.u_update = rng.normal(size=(2, 2))
    params.w_reset = rng.normal(size=(2, 3))
    out = gru_step(params, np.zeros(2), rng.normal(size=3))
    assert np.allclose(out, np.zeros(2), atol=0)


def test_shape_mismatch():
    with pytest.raises(ContractViolation):
        gru_step(zero_params(3, 2), np.zeros(4), np.zeros(2))


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_output_between_previous_and_candidate(seed):
    rng = np.random.default_rng(seed)
    d_c, d_u = 4, 3
    params = init_conscious(rng, d_c, d_u)
    c_prev = rng.normal(0, 1.5, d_c)
    e = rng.normal(0, 1.5, d_u)
    out = gru_step(params, c_prev, e)
    # recompute the candidate from the definition
    from gravrec.tape import affine, logistic
    g = logistic(affine(params.w_reset, e) + affine(params.u_reset, c_prev))
    candidate = np.tanh(affine(params.w_candidate, e) + affine(params.u_candidate, g * c_prev))
    low = np.minimum(c_prev, candidate)
    high = np.maximum(c_prev, candidate)
    assert np.all(out >= low - 1e-12) and np.all(out <= high + 1e-12)
    # convex combination with candidate in (-1, 1) bounds the output
    assert np.all(np.abs(out) <= np.maximum(np.abs(c_prev), 1.0) + 1e-12)


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(3)
    d_c, d_u = 3, 2
    arrays = {
        "w_update": rng.uniform(-1, 1, (d_c, d_u)),
        "u_update": rng.uniform(-1, 1, (d_c, d_c)),
        "w_candidate": rng.uniform(-1, 1, (d_c, d_u)),
        "u_candidate": rng.uniform(-1, 1, (d_c, d_c)),
        "w_reset": rng.uniform(-1, 1, (d_c, d_u)),
        "u_reset": rng.uniform(-1, 1, (d_c, d_c)),
    }
    c_prev = rng.normal(size=d_c)
    e = rng.normal(size=d_u)

    def f(params):
        out = gru_step(ConsciousParams(**params), c_prev, e)
        return float(np.sum(out))

    tape = Tape()
    lifted = {k: tape.parameter(k, v) for k, v in arrays.items()}
    out = sum_all(gru_step(ConsciousParams(**lifted), c_prev, e))
    grads = reverse_gradients(tape, out)
    report = finite_difference_check(f, arrays, grads, step=1e-6, tol=1e-6)
    assert report.passed, report.summary()
