"""Layer forward values, analytic gradients vs finite differences, optimizer."""

import numpy as np
import pytest

import breathvad.nn as nn

from oracles import finite_diff, rel_err

DENSE_TOL = 1e-6
RECURRENT_TOL = 1e-5


def _scalar_loss(layer, x, r):
    """sum(forward(x) * r), so dloss/dy = r."""
    return float((layer.forward(x, remember=False) * r).sum())


def _check_gradients(layer, x, rng, tol):
    """Compare backward() against central differences for x and every param."""
    y = layer.forward(x)
    r = rng.normal(size=y.shape)
    layer.zero_grads()
    dx = layer.backward(r)

    num_dx = finite_diff(lambda xv: _scalar_loss(layer, xv, r), x.copy())
    assert rel_err(dx, num_dx) <= tol, "input gradient"

    for prefix, leaf in layer.leaves():
        for name, p in leaf.params.items():
            def loss_at(pv, p=p):
                saved = p.copy()
                p[...] = pv
                try:
                    return _scalar_loss(layer, x, r)
                finally:
                    p[...] = saved

            num = finite_diff(loss_at, p.copy())
            err = rel_err(leaf.grads[name], num)
            assert err <= tol, f"{prefix}{name}: {err}"


class TestDense:
    def test_identity_weights(self):
        layer = nn.Dense(3, 3, np.random.default_rng(0))
        layer.params["W"] = np.eye(3)
        layer.params["b"] = np.zeros(3)
        x = np.random.default_rng(1).normal(size=(4, 3))
        assert np.array_equal(layer.forward(x), x)

    def test_zero_input_returns_bias(self):
        layer = nn.Dense(4, 2, np.random.default_rng(2))
        layer.params["b"] = np.array([0.5, -1.5])
        out = layer.forward(np.zeros((3, 4)))
        assert np.array_equal(out, np.tile([0.5, -1.5], (3, 1)))

    def test_leading_axes_pass_through(self):
        layer = nn.Dense(4, 2, np.random.default_rng(3))
        x = np.random.default_rng(4).normal(size=(2, 5, 4))
        out = layer.forward(x)
        assert out.shape == (2, 5, 2)
        # batched and single-row matmuls take different BLAS paths
        np.testing.assert_allclose(
            out[1, 3], layer.forward(x[1, 3:4])[0], rtol=1e-14, atol=1e-15
        )

    def test_gradient_check(self):
        rng = np.random.default_rng(5)
        layer = nn.Dense(4, 8, rng)
        x = rng.normal(size=(8, 4))
        _check_gradients(layer, x, rng, DENSE_TOL)

    def test_shape_mismatch_rejected(self):
        layer = nn.Dense(4, 2, np.random.default_rng(6))
        with pytest.raises(ValueError, match="trailing dim"):
            layer.forward(np.zeros((3, 5)))


class TestConv1D:
    def test_identity_tap(self):
        # single filter [0, 1, 0] with dilation 1 copies its channel through
        layer = nn.Conv1D(1, 1, 3, 1, np.random.default_rng(7))
        layer.params["K"] = np.array([[[0.0], [1.0], [0.0]]])
        layer.params["b"] = np.zeros(1)
        x = np.random.default_rng(8).normal(size=(2, 9, 1))
        np.testing.assert_allclose(layer.forward(x), x, rtol=0, atol=0)

    def test_zero_kernel_returns_bias(self):
        layer = nn.Conv1D(2, 3, 3, 1, np.random.default_rng(9))
        layer.params["K"][...] = 0.0
        layer.params["b"] = np.array([1.0, 2.0, 3.0])
        out = layer.forward(np.random.default_rng(10).normal(size=(1, 5, 2)))
        assert np.array_equal(out, np.tile([1.0, 2.0, 3.0], (1, 5, 1)))

    def test_output_length_preserved(self):
        for kernel, dilation in [(3, 1), (3, 2), (5, 3), (1, 1)]:
            layer = nn.Conv1D(2, 4, kernel, dilation, np.random.default_rng(11))
            out = layer.forward(np.zeros((1, 12, 2)))
            assert out.shape == (1, 12, 4)

    def test_matches_explicit_loops(self):
        rng = np.random.default_rng(12)
        layer = nn.Conv1D(2, 3, 3, 2, rng)
        x = rng.normal(size=(1, 10, 2))
        out = layer.forward(x)

        k, d = layer.kernel, layer.dilation
        xp = np.pad(x[0], ((layer.pad_left, layer.pad_right), (0, 0)))
        want = np.zeros((10, 3))
        for t in range(10):
            for f in range(3):
                acc = layer.params["b"][f]
                for j in range(k):
                    for c in range(2):
                        acc += layer.params["K"][f, j, c] * xp[t + j * d, c]
                want[t, f] = acc
        np.testing.assert_allclose(out[0], want, rtol=1e-13, atol=1e-15)

    def test_gradient_check(self):
        rng = np.random.default_rng(13)
        layer = nn.Conv1D(2, 4, 3, 2, rng)
        x = rng.normal(size=(1, 12, 2))
        _check_gradients(layer, x, rng, DENSE_TOL)

    def test_validation(self):
        rng = np.random.default_rng(14)
        with pytest.raises(ValueError):
            nn.Conv1D(1, 1, 0, 1, rng)
        with pytest.raises(ValueError):
            nn.Conv1D(1, 1, 3, 0, rng)
        layer = nn.Conv1D(2, 1, 3, 1, rng)
        with pytest.raises(ValueError, match="conv1d expects"):
            layer.forward(np.zeros((1, 5, 3)))


class TestLSTM:
    def test_zero_params_outputs_zero(self):
        layer = nn.LSTM(3, 4, np.random.default_rng(15))
        for name in layer.params:
            layer.params[name][...] = 0.0
        out = layer.forward(np.random.default_rng(16).normal(size=(2, 6, 3)))
        assert np.array_equal(out, np.zeros((2, 6, 4)))

    def test_length_one_equals_single_step(self):
        rng = np.random.default_rng(17)
        layer = nn.LSTM(3, 4, rng)
        x = rng.normal(size=(2, 1, 3))
        out = layer.forward(x)

        p = layer.params
        z = x[:, 0] @ p["Wx"] + p["b"]  # h0 = 0, so no recurrent term
        u = 4
        i = 1.0 / (1.0 + np.exp(-z[:, :u]))
        f = 1.0 / (1.0 + np.exp(-z[:, u:2 * u]))
        g = np.tanh(z[:, 2 * u:3 * u])
        o = 1.0 / (1.0 + np.exp(-z[:, 3 * u:]))
        want = o * np.tanh(i * g)
        np.testing.assert_allclose(out[:, 0], want, rtol=1e-12, atol=1e-14)

    def test_forget_bias_initialized_to_one(self):
        layer = nn.LSTM(3, 4, np.random.default_rng(18))
        b = layer.params["b"]
        assert np.array_equal(b[4:8], np.ones(4))
        assert not b[:4].any() and not b[8:].any()

    def test_gradient_check(self):
        rng = np.random.default_rng(19)
        layer = nn.LSTM(3, 4, rng)
        x = rng.normal(size=(2, 6, 3))
        _check_gradients(layer, x, rng, RECURRENT_TOL)

    def test_shape_mismatch_rejected(self):
        layer = nn.LSTM(3, 4, np.random.default_rng(20))
        with pytest.raises(ValueError, match="lstm expects"):
            layer.forward(np.zeros((2, 6, 5)))


class TestBidirectional:
    def _make(self, seed, n_in=3, units=4):
        rng = np.random.default_rng(seed)
        return nn.Bidirectional(nn.LSTM(n_in, units, rng), nn.LSTM(n_in, units, rng))

    def test_structure_forward_first(self):
        layer = self._make(21)
        x = np.random.default_rng(22).normal(size=(2, 5, 3))
        out = layer.forward(x)
        assert out.shape == (2, 5, 8)
        np.testing.assert_array_equal(out[..., :4], layer.fwd.forward(x))
        np.testing.assert_array_equal(
            out[..., 4:], layer.bwd.forward(x[:, ::-1])[:, ::-1]
        )

    def test_time_reversal_with_swapped_directions(self):
        # reversing the input and swapping direction parameters reverses the
        # output and swaps its halves
        layer = self._make(23)
        swapped = nn.Bidirectional(layer.bwd, layer.fwd)
        x = np.random.default_rng(24).normal(size=(1, 7, 3))
        a = layer.forward(x)
        b = swapped.forward(x[:, ::-1])[:, ::-1]
        np.testing.assert_allclose(a[..., :4], b[..., 4:], rtol=0, atol=0)
        np.testing.assert_allclose(a[..., 4:], b[..., :4], rtol=0, atol=0)

    def test_zero_params_outputs_zero(self):
        layer = self._make(25)
        for sub in (layer.fwd, layer.bwd):
            for name in sub.params:
                sub.params[name][...] = 0.0
        out = layer.forward(np.ones((1, 4, 3)))
        assert not out.any()

    def test_gradient_check(self):
        rng = np.random.default_rng(26)
        layer = self._make(27)
        x = rng.normal(size=(2, 5, 3))
        _check_gradients(layer, x, rng, RECURRENT_TOL)

    def test_width_mismatch_rejected(self):
        rng = np.random.default_rng(28)
        with pytest.raises(ValueError, match="widths"):
            nn.Bidirectional(nn.LSTM(3, 4, rng), nn.LSTM(3, 5, rng))


class TestTimeDistributed:
    def test_equals_folded_dense(self):
        rng = np.random.default_rng(29)
        inner = nn.Dense(3, 2, rng)
        layer = nn.TimeDistributed(inner)
        x = rng.normal(size=(4, 6, 3))
        out = layer.forward(x)
        want = inner.forward(x.reshape(-1, 3)).reshape(4, 6, 2)
        np.testing.assert_array_equal(out, want)

    def test_gradient_check(self):
        rng = np.random.default_rng(30)
        layer = nn.TimeDistributed(nn.Dense(3, 2, rng))
        x = rng.normal(size=(2, 4, 3))
        _check_gradients(layer, x, rng, DENSE_TOL)

    def test_needs_three_axes(self):
        layer = nn.TimeDistributed(nn.Dense(3, 2, np.random.default_rng(31)))
        with pytest.raises(ValueError, match="batch, time"):
            layer.forward(np.zeros((4, 3)))


class TestActivations:
    def test_forward_values(self):
        x = np.array([-2.0, -0.5, 0.0, 0.5, 2.0])
        assert np.array_equal(nn.Relu().forward(x), [0, 0, 0, 0.5, 2.0])
        np.testing.assert_allclose(nn.Tanh().forward(x), np.tanh(x), rtol=0, atol=0)
        np.testing.assert_allclose(
            nn.Sigmoid().forward(x), 1.0 / (1.0 + np.exp(-x)), rtol=1e-15, atol=0
        )

    def test_sigmoid_stable_at_extremes(self):
        out = nn.Sigmoid().forward(np.array([-1000.0, 1000.0]))
        assert np.all(np.isfinite(out))
        assert out[0] == 0.0 and out[1] == 1.0

    def test_gradient_checks(self):
        rng = np.random.default_rng(32)
        # keep relu inputs away from the kink
        x = rng.normal(size=(3, 5))
        x[np.abs(x) < 0.1] = 0.5
        for layer in (nn.Relu(), nn.Tanh(), nn.Sigmoid()):
            _check_gradients(layer, x.copy(), rng, DENSE_TOL)


class TestWeightedBce:
    def test_half_probability_gives_ln2(self):
        pred = np.full(10, 0.5)
        target = (np.arange(10) % 2).astype(float)
        loss, _ = nn.weighted_bce(pred, target)
        assert loss == pytest.approx(np.log(2.0), rel=1e-15)

    def test_unit_weights_reduce_to_plain_bce(self):
        rng = np.random.default_rng(33)
        pred = rng.uniform(0.05, 0.95, size=20)
        target = rng.integers(0, 2, size=20).astype(float)
        loss, _ = nn.weighted_bce(pred, target)
        want = -np.mean(target * np.log(pred) + (1 - target) * np.log1p(-pred))
        assert loss == pytest.approx(want, rel=1e-13)

    def test_class_weights_scale_terms(self):
        pred = np.array([0.8, 0.3])
        target = np.array([1.0, 0.0])
        loss, _ = nn.weighted_bce(pred, target, w_pos=2.0, w_neg=0.5)
        want = -(2.0 * np.log(0.8) + 0.5 * np.log(0.7)) / 2.0
        assert loss == pytest.approx(want, rel=1e-13)

    def test_mask_restricts_the_mean(self):
        pred = np.array([0.9, 0.5, 0.1])
        target = np.array([1.0, 1.0, 1.0])
        mask = np.array([True, False, True])
        loss, dpred = nn.weighted_bce(pred, target, mask=mask)
        want = -(np.log(0.9) + np.log(0.1)) / 2.0
        assert loss == pytest.approx(want, rel=1e-13)
        assert dpred[1] == 0.0

    def test_empty_mask_rejected(self):
        with pytest.raises(ValueError, match="mask"):
            nn.weighted_bce(np.array([0.5]), np.array([1.0]), mask=np.array([False]))

    def test_gradient_check(self):
        rng = np.random.default_rng(34)
        pred = rng.uniform(0.1, 0.9, size=12)
        target = rng.integers(0, 2, size=12).astype(float)
        mask = rng.uniform(size=12) > 0.25

        _, dpred = nn.weighted_bce(pred, target, w_pos=1.7, w_neg=0.6, mask=mask)
        num = finite_diff(
            lambda p: nn.weighted_bce(p, target, w_pos=1.7, w_neg=0.6, mask=mask)[0],
            pred.copy(),
        )
        assert rel_err(dpred, num) <= DENSE_TOL

    def test_clamp_keeps_loss_finite(self):
        loss, dpred = nn.weighted_bce(np.array([0.0, 1.0]), np.array([1.0, 0.0]))
        assert np.isfinite(loss)
        # the clamp is flat at the rails, so no gradient flows there
        assert np.array_equal(dpred, np.zeros(2))

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError):
            nn.weighted_bce(np.zeros(3), np.zeros(4))


class TestAdam:
    def test_zero_gradient_is_a_noop(self):
        params = {"w": np.array([1.0, -2.0])}
        grads = {"w": np.zeros(2)}
        before = params["w"].copy()
        nn.adam_step(params, grads, nn.AdamState(), lr=0.1)
        assert np.array_equal(params["w"], before)

    def test_quadratic_converges(self):
        # f(theta) = theta^2 from theta = 1 at lr 0.1
        params = {"theta": np.array([1.0])}
        state = nn.AdamState()
        for _ in range(200):
            grads = {"theta": 2.0 * params["theta"]}
            nn.adam_step(params, grads, state, lr=0.1)
        assert abs(float(params["theta"][0])) < 1e-2

    def test_deterministic(self):
        def run():
            rng = np.random.default_rng(35)
            params = {"w": rng.normal(size=5)}
            state = nn.AdamState()
            for _ in range(20):
                grads = {"w": np.sin(params["w"])}
                nn.adam_step(params, grads, state, lr=0.01)
            return params["w"]

        assert np.array_equal(run(), run())

    def test_step_counter_shared_across_params(self):
        params = {"a": np.zeros(2), "b": np.zeros(3)}
        grads = {"a": np.ones(2), "b": np.ones(3)}
        state = nn.AdamState()
        nn.adam_step(params, grads, state)
        assert state.t == 1
        nn.adam_step(params, grads, state)
        assert state.t == 2


class TestCheckpoint:
    def test_round_trip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(36)
        tensors = {
            "dense.W": rng.normal(size=(4, 3)),
            "dense.b": rng.normal(size=4),
            "lstm.Wx": rng.normal(size=(3, 16)),
            "scalar": np.asarray(rng.normal()),
        }
        path = str(tmp_path / "model.ckpt")
        nn.write_checkpoint(path, "bilstm", 100, tensors)
        arch, width, back = nn.read_checkpoint(path)
        assert arch == "bilstm" and width == 100
        assert set(back) == set(tensors)
        for name, tensor in tensors.items():
            got = back[name]
            assert got.shape == np.asarray(tensor).shape
            assert got.tobytes() == np.asarray(tensor, dtype="<f8").tobytes()

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "bogus.ckpt"
        path.write_bytes(b"\x00" * 64)
        with pytest.raises(ValueError, match="not a checkpoint"):
            nn.read_checkpoint(str(path))

    def test_unsupported_version_rejected(self, tmp_path):
        import struct

        path = tmp_path / "future.ckpt"
        path.write_bytes(struct.pack("<qqq", 0x4256434B50543031, 99, 10))
        with pytest.raises(ValueError, match="version"):
            nn.read_checkpoint(str(path))


class TestFiniteTripwire:
    def test_dense_flags_non_finite_output(self):
        layer = nn.Dense(2, 2, np.random.default_rng(37))
        with pytest.raises(FloatingPointError, match="dense"):
            layer.forward(np.array([[np.inf, 0.0]]))
