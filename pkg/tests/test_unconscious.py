import numpy as np
import pytest

from gravrec.errors import ContractViolation
from gravrec.gradcheck import finite_difference_check
from gravrec.integrate import rk4_trajectory
from gravrec.tape import Tape, reverse_gradients, sum_all
from gravrec.unconscious import (
    GravityField,
    ShiftParams,
    acceleration,
    drift_field,
    float_batch_padded,
    float_state,
    potential,
    shift_state,
)


def one_item_field(softening=0.1):
    return GravityField(np.zeros((1, 2)), np.zeros(1), softening=softening,
                        accel_cap=None)


class TestAcceleration:
    def test_vanishing_masses(self):
        field = GravityField(np.ones((3, 2)), np.full(3, -100.0), softening=0.0,
                             accel_cap=None)
        a = acceleration(field, np.zeros(2))
        assert np.all(np.abs(a) <= 1e-30)

    def test_symmetric_pair_cancels(self):
        embeddings = np.array([[1.0, 2.0], [-1.0, -2.0]])
        field = GravityField(embeddings, np.zeros(2), softening=0.3, accel_cap=None)
        a = acceleration(field, np.zeros(2))
        assert np.allclose(a, 0.0, atol=1e-15)

    def test_hand_evaluated_single_source(self):
        # one item of mass 2 at displacement (3, 4): squared distance 25,
        # kernel exponent d/2 = 1, so a = 2 * (3, 4) / 25
        field = GravityField(np.array([[3.0, 4.0]]), np.array([np.log(2.0)]),
                             softening=0.0, accel_cap=None)
        a = acceleration(field, np.zeros(2))
        assert np.allclose(a, [0.24, 0.32], atol=1e-15)

    def test_translation_equivariance(self):
        rng = np.random.default_rng(1)
        embeddings = rng.normal(size=(5, 3))
        rho = rng.normal(size=5)
        u = rng.normal(size=3)
        w = rng.normal(size=3)
        a1 = acceleration(GravityField(embeddings, rho, 0.4, None), u)
        a2 = acceleration(GravityField(embeddings + w, rho, 0.4, None), u + w)
        assert np.allclose(a1, a2, atol=1e-12)

    def test_mass_monotonicity(self):
        rng = np.random.default_rng(2)
        embeddings = rng.normal(size=(4, 3))
        rho = rng.normal(size=4)
        u = rng.normal(size=3)
        for j in range(4):
            direction = embeddings[j] - u
            direction /= np.linalg.norm(direction)
            bigger = rho.copy()
            bigger[j] += 0.5
            before = acceleration(GravityField(embeddings, rho, 0.4, None), u)
            after = acceleration(GravityField(embeddings, bigger, 0.4, None), u)
            assert after @ direction > before @ direction

    def test_clamp_rescales_to_cap(self):
        field = GravityField(np.array([[0.1, 0.0]]), np.array([3.0]),
                             softening=0.0, accel_cap=1.0)
        a = acceleration(field, np.zeros(2))
        assert np.linalg.norm(a) == pytest.approx(1.0, abs=1e-12)
        unclamped = acceleration(
            GravityField(np.array([[0.1, 0.0]]), np.array([3.0]), 0.0, None),
            np.zeros(2))
        assert np.linalg.norm(unclamped) > 1.0
        # direction preserved
        assert np.allclose(a / np.linalg.norm(a),
                           unclamped / np.linalg.norm(unclamped), atol=1e-12)

    def test_batch_rows_match_single_calls(self):
        rng = np.random.default_rng(3)
        field = GravityField(rng.normal(size=(6, 3)), rng.normal(size=6), 0.5, 2.0)
        batch = rng.normal(size=(4, 3))
        stacked = acceleration(field, batch)
        for row, u in zip(stacked, batch):
            assert np.array_equal(row, acceleration(field, u))

    def test_gradients_with_and_without_clamp(self):
        rng = np.random.default_rng(4)
        base = {
            "embeddings": rng.normal(size=(5, 3)),
            "log_masses": rng.normal(size=5),
            "u": rng.normal(size=3),
        }
        # cap below the raw norm keeps the clamp active on both f(p +- step)
        for cap in (None, 0.05):
            def f(params):
                field = GravityField(params["embeddings"], params["log_masses"],
                                     0.5, cap)
                return float(np.sum(acceleration(field, params["u"]) ** 3))

            tape = Tape()
            lifted = {k: tape.parameter(k, v) for k, v in base.items()}
            field = GravityField(lifted["embeddings"], lifted["log_masses"], 0.5, cap)
            a = acceleration(field, lifted["u"])
            out = sum_all(a * a * a)
            grads = reverse_gradients(tape, out)
            report = finite_difference_check(f, base, grads, step=1e-6, tol=1e-5)
            assert report.passed, (cap, report.summary())


class TestPotential:
    def test_low_dimension_unsupported(self):
        with pytest.raises(ContractViolation):
            potential(one_item_field(), np.zeros(2))

    def test_vanishing_masses(self):
        field = GravityField(np.ones((3, 4)), np.full(3, -200.0), 0.5, None)
        assert abs(potential(field, np.zeros(4))) < 1e-60

    def test_translation_invariance(self):
        rng = np.random.default_rng(5)
        embeddings = rng.normal(size=(4, 3))
        rho = rng.normal(size=4)
        u = rng.normal(size=3)
        w = rng.normal(size=3)
        a = potential(GravityField(embeddings, rho, 0.4, None), u)
        b = potential(GravityField(embeddings + w, rho, 0.4, None), u + w)
        assert a == pytest.approx(b, rel=1e-12)

    def test_negative_gradient_is_acceleration(self):
        rng = np.random.default_rng(6)
        field = GravityField(rng.normal(size=(5, 4)), rng.normal(size=5), 0.5, None)
        u = rng.normal(size=4)
        a = acceleration(field, u)
        step = 1e-6
        for i in range(4):
            up, down = u.copy(), u.copy()
            up[i] += step
            down[i] -= step
            numeric = -(potential(field, up) - potential(field, down)) / (2 * step)
            assert numeric == pytest.approx(a[i], rel=1e-6)


class TestShift:
    def test_fixed_point_when_projection_matches(self):
        rng = np.random.default_rng(7)
        params = ShiftParams(projection=rng.normal(size=(4, 2)),
                             gate_input=rng.normal(size=(4, 2)),
                             gate_state=rng.normal(size=(4, 4)))
        c = rng.normal(size=2)
        h_prev = params.projection @ c
        shifted = shift_state(params, c, h_prev)
        assert np.allclose(shifted, h_prev, atol=1e-14)

    def test_zero_weights_halfway(self):
        params = ShiftParams(np.zeros((4, 2)), np.zeros((4, 2)), np.zeros((4, 4)))
        shifted, gate = shift_state(params, np.ones(2), np.array([2.0, 4.0, 0.0, 0.0]),
                                    return_gate=True)
        assert np.array_equal(gate, np.full(4, 0.5))
        assert np.allclose(shifted, [1.0, 2.0, 0.0, 0.0], atol=0)

    def test_componentwise_between(self):
        rng = np.random.default_rng(8)
        for _ in range(25):
            params = ShiftParams(projection=rng.normal(size=(6, 3)),
                                 gate_input=rng.normal(size=(6, 3)),
                                 gate_state=rng.normal(size=(6, 6)))
            c = rng.normal(size=3)
            h_prev = rng.normal(size=6)
            shifted = shift_state(params, c, h_prev)
            target = params.projection @ c
            low = np.minimum(target, h_prev) - 1e-12
            high = np.maximum(target, h_prev) + 1e-12
            assert np.all(shifted >= low) and np.all(shifted <= high)


class TestFloatState:
    def test_zero_duration_identity(self):
        field = one_item_field()
        h = np.array([1.0, 0.0, 0.2, -0.1])
        assert float_state(field, h, 0.0) is h

    def test_force_free_drift(self):
        field = GravityField(np.ones((2, 2)), np.full(2, -200.0), 0.5, None)
        h = np.array([1.0, -1.0, 0.5, 0.25])
        end = float_state(field, h, 1.2, n_steps=3)
        assert np.allclose(end[:2], h[:2] + 1.2 * h[2:], atol=1e-12)
        assert np.allclose(end[2:], h[2:], atol=1e-12)

    def test_fine_reference_oracle(self):
        # endpoint against a 10^4-step reference of the same dynamics
        field = one_item_field(softening=0.1)
        h = np.array([1.0, 0.0, 0.0, 0.0])
        reference = rk4_trajectory(drift_field(field), h, 0.1, 10_000)[-1]
        end = float_state(field, h, 0.1, steps_per_unit=10, min_steps=2)
        assert np.linalg.norm(end - reference) < 1e-8

    def test_negative_duration_rejected(self):
        with pytest.raises(ContractViolation):
            float_state(one_item_field(), np.zeros(4), -0.1)

    def test_fourth_order_convergence(self):
        # halving the step shrinks the endpoint error 16x up to higher-order
        # terms; the reference uses 16x more steps
        field = one_item_field(softening=0.1)
        h = np.array([1.0, 0.0, 0.0, 0.0])
        deriv = drift_field(field)

        def endpoint(n):
            return rk4_trajectory(deriv, h, 0.5, n)[-1]

        for n in (8, 16):
            e_n = np.linalg.norm(endpoint(n) - endpoint(16 * n))
            e_2n = np.linalg.norm(endpoint(2 * n) - endpoint(32 * n))
            assert 10.0 <= e_n / e_2n <= 24.0

    def test_energy_conservation(self):
        rng = np.random.default_rng(5)
        field = GravityField(rng.normal(0, 1.0, (6, 4)), np.full(6, -np.log(6.0)),
                             softening=0.5, accel_cap=None)
        h = np.concatenate([rng.normal(0, 0.5, 4), rng.normal(0, 0.3, 4)])
        trajectory = rk4_trajectory(drift_field(field), h, 1.0, 100)

        def energy(state):
            return 0.5 * state[4:] @ state[4:] + potential(field, state[:4])

        e0 = energy(trajectory[0])
        drift = max(abs(energy(s) - e0) for s in trajectory) / abs(e0)
        assert drift < 1e-6


class TestFloatBatchPadded:
    def field(self):
        rng = np.random.default_rng(9)
        return GravityField(rng.normal(size=(5, 3)), rng.normal(-1, 0.3, 5), 0.5, None)

    def test_single_member_full_pad_matches_float_state(self):
        field = self.field()
        h = np.arange(6.0) / 10
        padded = float_batch_padded(field, [h], [1.5], pad=1.5, steps_for_pad=12)[0]
        direct = float_state(field, h, 1.5, n_steps=12)
        assert np.array_equal(padded, direct)

    def test_grid_aligned_members_match_per_sample(self):
        field = self.field()
        rng = np.random.default_rng(10)
        states = [rng.normal(0, 0.5, 6) for _ in range(4)]
        pad, steps = 1.5, 12
        dts = [0.0, pad / 2, pad / 4, pad]
        padded = float_batch_padded(field, states, dts, pad=pad, steps_for_pad=steps)
        for state, dt, got in zip(states, dts, padded):
            k = int(round(dt / (pad / steps)))
            want = state if k == 0 else float_state(field, state, dt, n_steps=k)
            assert np.max(np.abs(got - want)) <= 1e-12

    def test_all_zero_durations_identity(self):
        field = self.field()
        states = [np.ones(6), np.zeros(6)]
        out = float_batch_padded(field, states, [0.0, 0.0])
        assert out[0] is states[0] and out[1] is states[1]

    def test_duration_above_pad_rejected(self):
        with pytest.raises(ContractViolation):
            float_batch_padded(self.field(), [np.zeros(6)], [1.6], pad=1.5)
