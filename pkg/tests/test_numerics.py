import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vharmony import numerics
from vharmony.errors import (
    BadEpsilon,
    CacheMismatch,
    DimensionMismatch,
    EmptySupport,
    NonFiniteGradient,
    NonFiniteInput,
    SnapshotFormatError,
    TargetOffSupport,
)
from vharmony.numerics import AdamState, HiddenState, ModelParams


def random_problem(rng, n_in=5, n_out=4, d=4, h=6, L=2, B=3, T=6):
    params = ModelParams.init(n_in, n_out, d, h, L, rng)
    # push weights away from the init scale so every gate matters
    params = ModelParams({k: v + 0.3 * rng.standard_normal(v.shape) for k, v in params.items()})
    inputs = rng.integers(0, n_in, size=(B, T))
    targets = rng.integers(0, n_out, size=(B, T))
    weights = (rng.random((B, T)) < 0.7).astype(float)
    weights[0, 0] = 1.0
    return params, inputs, targets, weights


def naive_lstm(params, seq):
    """Single-sequence reference recurrence written step by step."""
    H = params.h
    x = params["embedding"][seq]
    for l in range(params.n_layers):
        h = np.zeros(H)
        c = np.zeros(H)
        out = []
        for t in range(len(seq)):
            z = x[t] @ params[f"lstm{l}.w_x"] + h @ params[f"lstm{l}.w_h"] + params[f"lstm{l}.bias"]
            i = 1 / (1 + np.exp(-z[:H]))
            f = 1 / (1 + np.exp(-z[H : 2 * H]))
            g = np.tanh(z[2 * H : 3 * H])
            o = 1 / (1 + np.exp(-z[3 * H :]))
            c = f * c + i * g
            h = o * np.tanh(c)
            out.append(h)
        x = np.array(out)
    return x


class TestParams:
    def test_shapes(self, rng):
        p = ModelParams.init(7, 5, 4, 6, 2, rng)
        assert (p.n_in, p.n_out, p.d, p.h, p.n_layers) == (7, 5, 4, 6, 2)
        assert p["lstm0.w_x"].shape == (4, 24)
        assert p["lstm1.w_x"].shape == (6, 24)
        assert p["out.w"].shape == (5, 6)
        assert p.all_finite()

    def test_inconsistent_shapes(self, rng):
        p = ModelParams.init(7, 5, 4, 6, 1, rng)
        t = dict(p.items())
        t["lstm0.w_h"] = np.zeros((5, 24))
        with pytest.raises(DimensionMismatch):
            ModelParams(t)

    def test_copy_is_deep(self, rng):
        p = ModelParams.init(3, 3, 2, 2, 1, rng)
        q = p.copy()
        q["out.b"][0] += 1
        assert p != q


class TestForward:
    def test_matches_reference_recurrence(self, rng):
        params, inputs, *_ = random_problem(rng)
        top, _ = numerics.lstm_forward(params, inputs)
        for b in range(inputs.shape[0]):
            np.testing.assert_allclose(top[b], naive_lstm(params, inputs[b]), atol=1e-12)

    def test_initial_state_default_zero(self, rng):
        params, inputs, *_ = random_problem(rng)
        zero = HiddenState.zeros(params.n_layers, inputs.shape[0], params.h)
        a, _ = numerics.lstm_forward(params, inputs)
        b, _ = numerics.lstm_forward(params, inputs, zero)
        np.testing.assert_array_equal(a, b)

    def test_state_carries_over(self, rng):
        params, inputs, *_ = random_problem(rng)
        full, _ = numerics.lstm_forward(params, inputs)
        _, c1 = numerics.lstm_forward(params, inputs[:, :3])
        tail, _ = numerics.lstm_forward(params, inputs[:, 3:], numerics.final_state(c1))
        np.testing.assert_allclose(full[:, 3:], tail, atol=1e-12)

    def test_dropout_needs_rng_and_is_seeded(self, rng):
        params, inputs, *_ = random_problem(rng)
        a, _ = numerics.lstm_forward(params, inputs, dropout=0.5, rng=np.random.default_rng(0))
        b, _ = numerics.lstm_forward(params, inputs, dropout=0.5, rng=np.random.default_rng(0))
        c, _ = numerics.lstm_forward(params, inputs)
        np.testing.assert_array_equal(a, b)
        assert not np.allclose(a, c)


class TestSoftmax:
    def test_restricted_support(self):
        logits = np.array([[1.0, 2.0, 3.0, 4.0]])
        p = numerics.masked_softmax(logits, [0, 2])
        assert p[0, 1] == 0.0 and p[0, 3] == 0.0
        assert abs(p.sum() - 1) < 1e-15
        np.testing.assert_allclose(p[0, [0, 2]], np.exp([1, 3]) / np.exp([1, 3]).sum())

    def test_large_logits_stable(self):
        p = numerics.masked_softmax(np.array([1000.0, 999.0]))
        assert np.isfinite(p).all()
        assert abs(p[0] / p[1] - np.e) < 1e-9

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(-50, 50), min_size=2, max_size=8), st.floats(-100, 100))
    def test_shift_invariance(self, logits, c):
        a = numerics.masked_softmax(np.array(logits))
        b = numerics.masked_softmax(np.array(logits) + c)
        np.testing.assert_allclose(a, b, atol=1e-12)

    def test_errors(self):
        with pytest.raises(EmptySupport):
            numerics.masked_softmax(np.zeros(3), np.zeros(3, dtype=bool))
        with pytest.raises(NonFiniteInput):
            numerics.masked_softmax(np.array([np.nan, 0.0]))
        with pytest.raises(TargetOffSupport):
            numerics.cross_entropy(np.array([1.0, 0.0]), 1)

    def test_cross_entropy_base(self):
        assert numerics.cross_entropy(np.array([0.25, 0.75]), 0, base=2) == pytest.approx(2.0)


class TestBackward:
    @pytest.mark.parametrize("seed", range(4))
    def test_gradient_check(self, seed):
        rng = np.random.default_rng(seed)
        params, inputs, targets, weights = random_problem(rng)
        _, grads = numerics.sequence_loss(params, inputs, targets, weights)
        loss_fn = lambda p: numerics.sequence_loss(p, inputs, targets, weights, with_grads=False)[0]
        assert numerics.finite_diff_check(params, loss_fn, grads, max_coords=None) < 1e-4

    def test_gradient_check_with_dropout_mask(self, rng):
        params, inputs, targets, weights = random_problem(rng)
        _, grads = numerics.sequence_loss(params, inputs, targets, weights, dropout=0.3, rng=np.random.default_rng(5))
        loss_fn = lambda p: numerics.sequence_loss(
            p, inputs, targets, weights, dropout=0.3, rng=np.random.default_rng(5), with_grads=False)[0]
        assert numerics.finite_diff_check(params, loss_fn, grads) < 1e-4

    def test_restricted_support_gradients(self, rng):
        params, inputs, targets, weights = random_problem(rng, n_out=5)
        targets = targets % 3
        support = [0, 1, 2]
        _, grads = numerics.sequence_loss(params, inputs, targets, weights, support)
        loss_fn = lambda p: numerics.sequence_loss(p, inputs, targets, weights, support, with_grads=False)[0]
        assert numerics.finite_diff_check(params, loss_fn, grads) < 1e-4
        # symbols off the support get no gradient through the output layer
        assert not grads["out.b"][3:].any()

    def test_cache_mismatch(self, rng):
        params, inputs, *_ = random_problem(rng)
        _, cache = numerics.lstm_forward(params, inputs)
        other = ModelParams.init(5, 4, 4, 7, 2, rng)
        with pytest.raises(CacheMismatch):
            numerics.backward(other, cache, np.zeros((3, 6, 4)))
        with pytest.raises(CacheMismatch):
            numerics.backward(params, cache, np.zeros((3, 6, 5)))

    def test_bad_epsilon(self, rng):
        params, inputs, targets, weights = random_problem(rng)
        _, grads = numerics.sequence_loss(params, inputs, targets, weights)
        with pytest.raises(BadEpsilon):
            numerics.finite_diff_check(params, lambda p: 0.0, grads, epsilon=0.0)


class TestAdam:
    def test_first_step_moves_by_lr(self, rng):
        params, inputs, targets, weights = random_problem(rng)
        _, grads = numerics.sequence_loss(params, inputs, targets, weights)
        new, state = numerics.adam_update(params, grads, AdamState.zeros_like(params), 1, lr=0.01)
        delta = new["out.b"] - params["out.b"]
        nz = grads["out.b"] != 0
        # bias-corrected first step is lr * sign(g) up to eps
        np.testing.assert_allclose(delta[nz], -0.01 * np.sign(grads["out.b"][nz]), rtol=1e-6)
        assert state.step == 1

    def test_inputs_untouched(self, rng):
        params, inputs, targets, weights = random_problem(rng)
        before = params.copy()
        _, grads = numerics.sequence_loss(params, inputs, targets, weights)
        numerics.adam_update(params, grads, AdamState.zeros_like(params), 1)
        assert params == before

    def test_descends_on_quadratic(self):
        p = ModelParams.zeros(2, 2, 1, 1, 1)
        target = {k: np.full(v.shape, 0.5) for k, v in p.items()}
        state = AdamState.zeros_like(p)
        for step in range(1, 2001):
            grads = {k: 2 * (v - target[k]) for k, v in p.items()}
            p, state = numerics.adam_update(p, grads, state, step, lr=0.01)
        for k, v in p.items():
            np.testing.assert_allclose(v, 0.5, atol=1e-3)

    def test_rejects_nonfinite(self, rng):
        p = ModelParams.zeros(2, 2, 1, 1, 1)
        grads = {k: np.full(v.shape, np.nan) for k, v in p.items()}
        with pytest.raises(NonFiniteGradient):
            numerics.adam_update(p, grads, AdamState.zeros_like(p), 1)


class TestSnapshot:
    def test_roundtrip_exact(self, rng):
        params, *_ = random_problem(rng)
        back = numerics.params_from_bytes(numerics.params_to_bytes(params))
        assert back == params
        assert list(back) == list(params)

    def test_bad_magic(self):
        with pytest.raises(SnapshotFormatError):
            numerics.params_from_bytes(b"nope" + bytes(20))
