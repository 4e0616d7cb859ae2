import numpy as np
import pytest

from gravrec.decision import (
    DecisionParams,
    decision_state,
    recommend_top_k,
    score_items,
)
from gravrec.errors import ContractViolation


def zero_params(d_u, d_c):
    return DecisionParams(np.zeros((d_u, d_c)), np.zeros((d_u, d_c)),
                          np.zeros((d_u, d_u)))


class TestDecisionState:
    def test_projection_fixed_point(self):
        rng = np.random.default_rng(0)
        params = DecisionParams(projection=rng.normal(size=(3, 2)),
                                gate_input=rng.normal(size=(3, 2)),
                                gate_state=rng.normal(size=(3, 3)))
        c = rng.normal(size=2)
        u = params.projection @ c
        d = decision_state(params, c, u)
        assert np.allclose(d, u, atol=1e-14)

    def test_zero_gates_average(self):
        rng = np.random.default_rng(1)
        params = zero_params(3, 2)
        params.projection = rng.normal(size=(3, 2))
        c = rng.normal(size=2)
        u = rng.normal(size=3)
        d, gate = decision_state(params, c, u, return_gate=True)
        assert np.array_equal(gate, np.full(3, 0.5))
        assert np.allclose(d, (params.projection @ c + u) / 2, atol=1e-15)

    def test_ablation_returns_projection_exactly(self):
        rng = np.random.default_rng(2)
        params = DecisionParams(projection=rng.normal(size=(3, 2)),
                                gate_input=rng.normal(size=(3, 2)),
                                gate_state=rng.normal(size=(3, 3)))
        c = rng.normal(size=2)
        u = rng.normal(size=3)
        d, gate = decision_state(params, c, u, conscious_only=True, return_gate=True)
        assert np.array_equal(d, params.projection @ c)
        assert np.array_equal(gate, np.ones(3))

    def test_componentwise_between(self):
        rng = np.random.default_rng(3)
        for _ in range(25):
            params = DecisionParams(projection=rng.normal(size=(4, 3)),
                                    gate_input=rng.normal(size=(4, 3)),
                                    gate_state=rng.normal(size=(4, 4)))
            c = rng.normal(size=3)
            u = rng.normal(size=4)
            d = decision_state(params, c, u)
            target = params.projection @ c
            assert np.all(d >= np.minimum(target, u) - 1e-12)
            assert np.all(d <= np.maximum(target, u) + 1e-12)


class TestScoreItems:
    def test_equidistant_is_uniform(self):
        embeddings = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]])
        dist = score_items(np.zeros(2), embeddings)
        assert np.allclose(dist.probs, 0.25, atol=1e-15)

    def test_two_item_hand_value(self):
        # distances 0 and 1: softmax(0, -1)
        dist = score_items(np.zeros(1), np.array([[0.0], [1.0]]))
        assert dist.probs[0] == pytest.approx(0.7310585786300049, abs=1e-12)
        assert dist.probs[1] == pytest.approx(0.2689414213699951, abs=1e-12)
        assert np.array_equal(dist.ranked, [0, 1])

    def test_translation_invariance(self):
        rng = np.random.default_rng(4)
        embeddings = rng.normal(size=(6, 3))
        d = rng.normal(size=3)
        w = rng.normal(size=3)
        p1 = score_items(d, embeddings).probs
        p2 = score_items(d + w, embeddings + w).probs
        assert np.allclose(p1, p2, atol=1e-12)

    def test_probabilities_sum_to_one(self):
        rng = np.random.default_rng(5)
        for _ in range(50):
            embeddings = rng.normal(0, 3, size=(rng.integers(1, 30), 4))
            probs = score_items(rng.normal(0, 3, 4), embeddings).probs
            assert abs(probs.sum() - 1.0) <= 1e-12
            assert np.all(probs > 0) and np.all(probs <= 1.0)

    def test_far_embeddings_stay_stable(self):
        # max-subtraction keeps huge negative logits from underflowing the
        # normaliser
        embeddings = np.array([[1000.0], [1000.5]])
        probs = score_items(np.zeros(1), embeddings).probs
        assert np.all(np.isfinite(probs))
        assert abs(probs.sum() - 1.0) <= 1e-12


class TestRecommendTopK:
    def test_exact_match_ranks_first(self):
        rng = np.random.default_rng(6)
        embeddings = rng.normal(size=(5, 3))
        top = recommend_top_k(embeddings[3], embeddings, 2)
        assert top[0] == 3

    def test_tie_breaks_by_lower_index(self):
        embeddings = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0]])
        top = recommend_top_k(np.zeros(2), embeddings, 3)
        assert np.array_equal(top, [0, 1, 2])

    def test_hand_sorted_distances(self):
        # distances 2, 0.5, 1 with k=2
        embeddings = np.array([[2.0], [0.5], [1.0]])
        assert np.array_equal(recommend_top_k(np.zeros(1), embeddings, 2), [1, 2])

    def test_k_out_of_range(self):
        embeddings = np.zeros((3, 2))
        for k in (0, 4):
            with pytest.raises(ContractViolation):
                recommend_top_k(np.zeros(2), embeddings, k)


def test_argmax_consistency_over_random_draws():
    rng = np.random.default_rng(7)
    for _ in range(1000):
        n = int(rng.integers(2, 25))
        embeddings = rng.normal(0, 2, size=(n, 3))
        d = rng.normal(0, 2, size=3)
        dist = score_items(d, embeddings)
        top = recommend_top_k(d, embeddings, 1)
        assert dist.ranked[0] == top[0] == int(np.argmax(dist.probs))
