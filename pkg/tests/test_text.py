import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles as R
from dreamprvr import text as X
from dreamprvr.gradcheck import finite_difference_check
from dreamprvr.rng import Rng
from dreamprvr.tensor import Tensor


def unit_vectors_with_cosine(c, d=4):
    """Two unit vectors in R^d whose cosine is exactly c."""
    return np.array([1.0, 0, 0, 0][:d]), np.array([c, math.sqrt(1 - c * c), 0, 0][:d])


@pytest.fixture(scope="module")
def text_params():
    return X.init_text_params(Rng(0), 16, 8)


class TestEncodeQuery:
    def test_shape_and_finite(self, text_params):
        emb = X.encode_query(X.QueryTokens(Rng(1).normal((5, 16)), "v", "q"), text_params)
        assert emb.q.shape == (8,) and np.isfinite(emb.q.data).all()
        assert (emb.video_id, emb.query_id) == ("v", "q")

    def test_zero_pool_vector_gives_mean(self, text_params):
        p = dict(text_params)
        p["pool_u"] = Tensor(np.zeros_like(text_params["pool_u"].data))
        feats = Rng(2).normal((6, 16))
        arr = R.arrays(p)
        tokens = R.encoder_layer(R.linear(feats, arr["proj"]), arr["encoder"], 4)
        q = X.encode_query(X.QueryTokens(feats, "v", "q"), p).q.data
        np.testing.assert_allclose(q, tokens.mean(axis=0), atol=1e-12)

    def test_empty_tokens_rejected(self, text_params):
        with pytest.raises(ValueError):
            X.encode_query(X.QueryTokens(np.zeros((0, 16)), "v", "q"), text_params)

    def test_batch_encoder_matches_single(self, text_params):
        feats = [Rng(i).normal((n, 16)) for i, n in enumerate((3, 7, 5))]
        batch = X.encode_queries(feats, text_params).data
        for row, f in zip(batch, feats):
            np.testing.assert_allclose(row, X.encode_query(X.QueryTokens(f, "v", "q"), text_params).q.data, atol=1e-12)


class TestQsp:
    def test_symmetric_case_is_ln3(self):
        # four vectors with all pairwise cosines equal (regular simplex in R^3)
        Q = np.array([[1, 1, 1], [1, -1, -1], [-1, 1, -1], [-1, -1, 1]], dtype=float)
        loss = X.loss_qsp(Tensor(Q), ["a", "a", "b", "b"], tau=0.1).item()
        assert loss == pytest.approx(math.log(3), abs=1e-6)

    def test_two_query_closed_form(self):
        Q = np.array([[1.0, 0.0], [1.0, 0.0], [-1.0, 0.0]])
        # anchors 0 and 1 are mirror images; anchor 2 has no positive and drops out
        loss = X.loss_qsp(Tensor(Q), ["a", "a", "b"], tau=1.0).item()
        assert loss == pytest.approx(math.log1p(math.exp(-2)), abs=1e-6)

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_loop_oracle(self, seed):
        rng = Rng(seed)
        Q = rng.normal((16, 6))
        ids = [f"v{int(i)}" for i in rng.integers(0, 5, 16)]
        got = X.loss_qsp(Tensor(Q), ids, tau=0.1).item()
        assert abs(got - R.qsp_loop(Q, ids, 0.1)) <= 1e-10

    def test_no_positive_anywhere_is_zero(self):
        assert X.loss_qsp(Tensor(Rng(0).normal((3, 4))), ["a", "b", "c"]).item() == 0.0

    def test_bad_temperature(self):
        with pytest.raises(ValueError):
            X.loss_qsp(Tensor(np.ones((2, 2))), ["a", "a"], tau=0.0)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 10_000))
    def test_non_negative(self, seed):
        rng = Rng(seed)
        ids = [int(i) for i in rng.integers(0, 3, 8)]
        assert X.loss_qsp(Tensor(rng.normal((8, 5))), ids).item() >= -1e-12

    def test_gradient(self):
        ids = ["a", "a", "b", "b", "c"]
        assert finite_difference_check(lambda q: X.loss_qsp(q, ids), Tensor(Rng(3).normal((5, 4)), requires_grad=True)) <= 1e-4


class TestDiv:
    def test_single_query_is_zero(self):
        assert X.loss_div(Tensor(np.ones((1, 4)))).item() == 0.0

    def test_orthogonal_pair(self):
        q = Tensor(np.array([[1.0, 0.0], [0.0, 1.0]]))
        assert X.loss_div(q, 0.2, 5.0).item() == pytest.approx(math.log1p(math.e), abs=1e-6)
        assert X.loss_div(q, 0.2, 5.0).item() == pytest.approx(1.3133, abs=1e-4)

    def test_identical_pair(self):
        q = Tensor(np.array([[0.6, 0.8], [0.6, 0.8]]))
        assert X.loss_div(q, 0.2, 5.0).item() == pytest.approx(2 * math.log1p(math.exp(6)), abs=1e-6)
        assert X.loss_div(q, 0.2, 5.0).item() == pytest.approx(12.0049, abs=1e-4)

    @pytest.mark.parametrize("seed", range(3))
    def test_matches_pair_loop(self, seed):
        Q = Rng(seed).normal((5, 6))
        assert abs(X.loss_div(Tensor(Q)).item() - R.div_loop(Q, 0.2, 5.0)) <= 1e-10

    @settings(max_examples=40, deadline=None)
    @given(st.floats(-0.99, 0.98), st.floats(0.001, 0.5))
    def test_monotone_in_cosine(self, c, step):
        c2 = min(c + step, 0.99)
        lo = X.loss_div(Tensor(np.stack(unit_vectors_with_cosine(c)))).item()
        hi = X.loss_div(Tensor(np.stack(unit_vectors_with_cosine(c2)))).item()
        assert hi >= lo - 1e-12

    def test_batch_average_over_videos(self):
        Q = Rng(4).normal((5, 3))
        ids = ["a", "a", "b", "b", "c"]
        expected = (R.div_loop(Q[:2], 0.2, 5.0) + R.div_loop(Q[2:4], 0.2, 5.0)) / 3
        assert X.loss_div_batch(Tensor(Q), ids).item() == pytest.approx(expected, abs=1e-12)

    def test_gradient(self):
        assert finite_difference_check(lambda q: X.loss_div(q), Tensor(Rng(5).normal((4, 3)), requires_grad=True)) <= 1e-4


class TestTssl:
    ids = ["a", "a", "b", "b", "b", "c"]

    def test_zero_weights(self):
        assert X.loss_tssl(Tensor(Rng(0).normal((6, 4))), self.ids, 0.0, 0.0).item() == 0.0

    def test_div_only(self):
        q = Tensor(Rng(1).normal((6, 4)))
        assert X.loss_tssl(q, self.ids, 1.0, 0.0).item() == X.loss_div_batch(q, self.ids).item()

    def test_composition(self):
        q = Tensor(Rng(2).normal((6, 4)))
        expected = 0.7 * X.loss_div_batch(q, self.ids).item() + 0.3 * X.loss_qsp(q, self.ids).item()
        assert abs(X.loss_tssl(q, self.ids, 0.7, 0.3).item() - expected) <= 1e-12

    def test_negative_weight_rejected(self):
        with pytest.raises(ValueError):
            X.loss_tssl(Tensor(np.ones((2, 2))), ["a", "a"], -1.0, 0.0)

    def test_gradient(self):
        f = lambda q: X.loss_tssl(q, self.ids, 1.0, 0.5)
        assert finite_difference_check(f, Tensor(Rng(3).normal((6, 4)), requires_grad=True)) <= 1e-4


class TestTps:
    def test_gamma_zero_is_exact_and_rng_free(self):
        Q = Rng(0).normal((3, 8))
        q_m = Q.mean(axis=0)
        mu, sd = q_m.mean(), q_m.std()
        expected = (q_m - mu) / sd + mu
        a = X.tps_sample(Q, 0.0, 4, Rng(1)).q_hat
        b = X.tps_sample(Q, 0.0, 4, Rng(99)).q_hat
        assert a.shape == (4, 8)
        np.testing.assert_array_equal(a, b)
        np.testing.assert_allclose(a, np.tile(expected, (4, 1)), atol=1e-12)

    def test_constant_input_is_finite(self):
        out = X.tps_sample(np.full((2, 5), 3.0), 0.1, 3, Rng(0)).q_hat
        assert np.isfinite(out).all()

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            X.tps_sample(np.zeros((0, 4)), 0.1, 2, Rng(0))

    def test_monte_carlo_mean(self):
        Q = Rng(5).normal((2, 6))
        q_m = Q.mean(axis=0)
        q_bar = (q_m - q_m.mean()) / q_m.std()
        n = 20_000
        draws = X.tps_sample(Q, 0.1, n, Rng(6)).q_hat
        se = draws.std(axis=0) / np.sqrt(n)
        assert np.all(np.abs(draws.mean(axis=0) - (q_bar + q_m.mean())) < 4 * se)

    def test_independent_versus_tiled(self):
        Q = Rng(7).normal((2, 6))
        indep = X.tps_sample(Q, 0.1, 3, Rng(8)).q_hat
        tiled = X.tps_sample(Q, 0.1, 3, Rng(8), independent=False).q_hat
        assert not np.allclose(indep[0], indep[1])
        np.testing.assert_array_equal(tiled[0], tiled[2])
