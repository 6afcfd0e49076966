import math
import time

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from trackforge.errors import FormatError, ShapeMismatch
from trackforge.models import TrackNet, build_model
from trackforge.neural.gradcheck import check_gradients
from trackforge.neural.layers import lstm_cell_forward, lstm_layer_forward, softmax
from trackforge.neural.losses import cross_entropy_loss, mse_loss, softmax_cross_entropy
from trackforge.neural.network import RecurrentNet
from trackforge.neural.optim import AdamState, adam_step, clip_global_norm
from trackforge.neural.serialize import dumps, load_weights, loads, save_weights

from oracles import random_gradient_case


# --- cell and layer -------------------------------------------------------


def test_zero_cell():
    z = np.zeros(4)
    h, c = lstm_cell_forward(np.zeros(3), z, z, np.zeros((16, 3)), np.zeros((16, 4)), np.zeros(16))
    assert not h.any() and not c.any()


def test_scalar_cell_by_hand():
    h, c = lstm_cell_forward(np.zeros(1), np.zeros(1), np.array([2.0]), np.zeros((4, 1)), np.zeros((4, 1)),
                             np.zeros(4))
    assert c[0] == pytest.approx(1.0, abs=1e-15)
    assert h[0] == pytest.approx(0.380797, abs=1e-6)


@pytest.mark.parametrize("D,H", [(1, 1), (6, 3), (2, 7)])
def test_cell_shapes(D, H):
    rng = np.random.default_rng(D * H)
    h, c = lstm_cell_forward(rng.normal(size=D), np.zeros(H), np.zeros(H), rng.normal(size=(4 * H, D)),
                             rng.normal(size=(4 * H, H)), np.zeros(4 * H))
    assert h.shape == (H,) and c.shape == (H,)


def test_length_one_sequence_matches_cell():
    rng = np.random.default_rng(1)
    W, U, b = rng.normal(size=(12, 2)), rng.normal(size=(12, 3)), rng.normal(size=12)
    x = rng.normal(size=(1, 1, 2))
    hs, _, _ = lstm_layer_forward(x, W, U, b)
    h, _ = lstm_cell_forward(x[0, 0], np.zeros(3), np.zeros(3), W, U, b)
    np.testing.assert_allclose(hs[0, 0], h, rtol=0, atol=1e-15)


def test_zero_weights_zero_hidden():
    net = RecurrentNet(3, 4, 2, 1)
    for v in net.params.values():
        v[...] = 0
    _, _, cache = net.forward(np.random.default_rng(0).normal(size=(2, 5, 3)))
    assert not cache.top.any()


def test_stateful_chunks_match_whole_sequence():
    net = RecurrentNet(4, 8, 2, 3, rng=np.random.default_rng(2))
    xs = np.random.default_rng(3).normal(size=(2, 10, 4))
    whole, _, _ = net.forward(xs)
    state, parts = None, []
    for t in range(10):
        y, state, _ = net.forward(xs[:, t:t + 1], state)
        parts.append(y)
    np.testing.assert_allclose(np.concatenate(parts, axis=1), whole, rtol=0, atol=1e-12)


def test_tracknet_step_matches_run():
    model = TrackNet("pred-pos", 2, 16, rng=np.random.default_rng(4))
    obs = np.cumsum(np.random.default_rng(5).normal(size=(1, 100, 6)) * 100, axis=1) + 5e4
    whole = model.run(obs)
    carry, out = model.zero_carry(1), []
    for t in range(100):
        y, carry = model.step(obs[:, t], carry)
        out.append(y)
    np.testing.assert_allclose(np.stack(out, axis=1), whole, rtol=0, atol=1e-12 * np.abs(whole).max())


# --- bidirectional --------------------------------------------------------


def _scalar_bilstm():
    net = RecurrentNet(1, 1, 1, 1, bidirectional=True)
    p = net.params
    p["lstm0f.W"][:, 0] = [0.5, -0.3, 0.8, 0.2]
    p["lstm0f.U"][:, 0] = [0.1, 0.4, -0.6, 0.3]
    p["lstm0f.b"][:] = [0, 1, 0, 0]
    p["lstm0b.W"][:, 0] = [-0.2, 0.6, 0.4, -0.5]
    p["lstm0b.U"][:, 0] = [0.3, -0.1, 0.2, 0.7]
    p["lstm0b.b"][:] = [0.1, 1, -0.1, 0]
    p["head.W"][0] = [0.7, -1.1]
    p["head.b"][:] = 0.05
    return net


def test_bilstm_two_step_by_hand():
    ys, _, _ = _scalar_bilstm().forward(np.array([[[1.0], [-2.0]]]))
    # evaluated independently with scalar math.exp / math.tanh
    np.testing.assert_allclose(ys[0, :, 0], [0.29486571189806315, 0.413376376930756], rtol=0, atol=1e-14)


def test_bilstm_palindrome():
    net = RecurrentNet(2, 5, 1, 3, bidirectional=True, rng=np.random.default_rng(6))
    for k in "WUb":
        net.params[f"lstm0b.{k}"][...] = net.params[f"lstm0f.{k}"]
    net.params["head.W"][:, 5:] = net.params["head.W"][:, :5]
    half = np.random.default_rng(7).normal(size=(1, 4, 2))
    xs = np.concatenate([half, half[:, ::-1]], axis=1)
    ys, _, cache = net.forward(xs)
    np.testing.assert_allclose(ys[0, ::-1], ys[0], atol=1e-13)
    top = cache.top[0]
    np.testing.assert_allclose(top[::-1][:, [*range(5, 10), *range(5)]], top, atol=1e-13)


def test_bilstm_length_one_concat_order():
    net = RecurrentNet(2, 3, 1, 1, bidirectional=True, rng=np.random.default_rng(8))
    x = np.random.default_rng(9).normal(size=(1, 1, 2))
    _, _, cache = net.forward(x)
    hf, _ = lstm_cell_forward(x[0, 0], np.zeros(3), np.zeros(3), *net._lw("lstm0f"))
    hb, _ = lstm_cell_forward(x[0, 0], np.zeros(3), np.zeros(3), *net._lw("lstm0b"))
    np.testing.assert_allclose(cache.top[0, 0], np.concatenate([hf, hb]), atol=1e-15)


# --- losses ---------------------------------------------------------------


def test_cross_entropy_examples():
    assert cross_entropy_loss([0, 1, 0], [0, 1, 0]) == 0
    assert cross_entropy_loss([0.5, 0.5], [1, 0]) == pytest.approx(math.log(2), abs=1e-12)
    assert cross_entropy_loss([1.0, 0.0], [0, 1]) == pytest.approx(27.631021, abs=1e-6)
    with pytest.raises(ShapeMismatch):
        cross_entropy_loss([0.5, 0.5], [1, 0, 0])


def test_mse_examples():
    assert mse_loss([1, 2], [1, 2])[0] == 0
    assert mse_loss([0, 0, 0], [3, 4, 12])[0] == pytest.approx(169 / 3)
    _, g = mse_loss([1.5, -2.0], [1.5, -2.0])
    assert not g.any()
    with pytest.raises(ShapeMismatch):
        mse_loss([1, 2], [1, 2, 3])


@settings(max_examples=30, deadline=None)
@given(k=st.floats(0.1, 100), seed=st.integers(0, 1000))
def test_mse_homogeneity(k, seed):
    rng = np.random.default_rng(seed)
    a, b = rng.normal(size=5), rng.normal(size=5)
    assert mse_loss(k * a, k * b)[0] == pytest.approx(k * k * mse_loss(a, b)[0], rel=1e-10)


def test_softmax_ce_gradient_identity():
    rng = np.random.default_rng(10)
    z = rng.normal(size=(1, 5))
    _, d, s = softmax_cross_entropy(z, np.array([2]))
    t = np.eye(5)[2]
    np.testing.assert_allclose(d[0], s[0] - t, atol=1e-15)
    eps = 1e-6
    num = [(softmax_cross_entropy(z + eps * np.eye(5)[j], np.array([2]))[0]
            - softmax_cross_entropy(z - eps * np.eye(5)[j], np.array([2]))[0]) / (2 * eps) for j in range(5)]
    np.testing.assert_allclose(num, s[0] - t, atol=1e-8)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=1, max_size=12))
def test_softmax_is_simplex(z):
    s = softmax(np.array(z))
    assert np.all(s >= 0) and abs(s.sum() - 1) < 1e-9


# --- gradients ------------------------------------------------------------


def test_gradient_suite():
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(100):
        params, loss, grads = random_gradient_case(rng)
        worst = max(worst, check_gradients(loss, params, grads, eps=1e-5))
    assert worst < 1e-4
    assert time.perf_counter() - t0 < 60


def test_input_gradient():
    net = RecurrentNet(3, 4, 2, 2, rng=np.random.default_rng(11))
    xs, ys = np.random.default_rng(12).normal(size=(2, 3, 3)), np.random.default_rng(13).normal(size=(2, 3, 2))
    out, _, cache = net.forward(xs)
    _, dxs = net.backward(mse_loss(out, ys)[1], cache)
    err = check_gradients(lambda: mse_loss(net.forward(xs)[0], ys)[0], {"x": xs}, {"x": dxs})
    assert err < 1e-4


# --- optimizer ------------------------------------------------------------


def test_adam_zero_gradient_is_noop():
    p = {"w": np.array([1.0, -2.0])}
    adam_step(p, {"w": np.zeros(2)}, AdamState())
    np.testing.assert_array_equal(p["w"], [1.0, -2.0])


def test_adam_first_step():
    p = {"w": np.zeros(3)}
    st_ = AdamState(lr=1e-3)
    adam_step(p, {"w": np.ones(3)}, st_)
    np.testing.assert_allclose(p["w"], -1e-3 / (1 + 1e-8), rtol=1e-12)
    assert st_.t == 1


def test_adam_sign_equivariant():
    rng = np.random.default_rng(14)
    gs = [rng.normal(size=4) for _ in range(5)]
    a, b = {"w": np.zeros(4)}, {"w": np.zeros(4)}
    sa, sb = AdamState(), AdamState()
    for g in gs:
        adam_step(a, {"w": g.copy()}, sa)
        adam_step(b, {"w": -g}, sb)
    np.testing.assert_allclose(a["w"], -b["w"], atol=1e-15)


def test_clip_global_norm():
    g = {"a": np.array([3.0, 0.0]), "b": np.array([4.0])}
    assert clip_global_norm(g, 1.0) == pytest.approx(5.0)
    assert math.sqrt(sum(float((v ** 2).sum()) for v in g.values())) == pytest.approx(1.0)


def test_adam_reduces_regression_loss():
    rng = np.random.default_rng(15)
    net = RecurrentNet(2, 8, 1, 1, rng=rng)
    xs = rng.normal(size=(16, 5, 2))
    ys = np.cumsum(xs[..., :1], axis=1) * 0.3
    st_ = AdamState(lr=1e-2)
    first = None
    for _ in range(200):
        out, _, cache = net.forward(xs)
        loss, d = mse_loss(out, ys)
        first = loss if first is None else first
        adam_step(net.params, net.backward(d, cache)[0], st_)
    assert mse_loss(net.forward(xs)[0], ys)[0] < 0.1 * first


# --- weight files ---------------------------------------------------------


@pytest.mark.parametrize("arch", ["assoc-bilstm-2x4", "assoc-lstm-1x3", "pred-pos-2x5", "filter-1x2"])
def test_weights_round_trip(tmp_path, arch):
    model = build_model(arch, rng=np.random.default_rng(16))
    save_weights(model, tmp_path / "a.tfwt")
    back = load_weights(tmp_path / "a.tfwt")
    assert back.architecture == arch
    for k, v in model.params.items():
        np.testing.assert_array_equal(back.params[k], v)
    save_weights(back, tmp_path / "b.tfwt")
    assert (tmp_path / "a.tfwt").read_bytes() == (tmp_path / "b.tfwt").read_bytes()


def test_weights_header_layout():
    buf = dumps("filter-1x2", TrackNet("filter", 1, 2).params)
    assert buf[:4] == b"TFWT" and int.from_bytes(buf[4:8], "little") == 1


def test_truncated_and_corrupt_files():
    buf = dumps("filter-1x2", TrackNet("filter", 1, 2).params)
    with pytest.raises(FormatError):
        loads(buf[:-7])
    bad = bytearray(buf)
    bad[60] ^= 0xFF
    with pytest.raises(FormatError):
        loads(bytes(bad))
    with pytest.raises(FormatError):
        loads(b"XXXX" + buf[4:])


def test_dimension_mismatch_names_layer(tmp_path):
    save_weights(TrackNet("filter", 1, 2), tmp_path / "w.tfwt")
    other = TrackNet("filter", 1, 2)
    other.params["head.W"] = np.zeros((3, 3))
    buf = dumps("filter-1x2", other.params)
    (tmp_path / "x.tfwt").write_bytes(buf)
    with pytest.raises(FormatError, match="head"):
        load_weights(tmp_path / "x.tfwt", TrackNet("filter", 1, 2))
    with pytest.raises(FormatError):
        load_weights(tmp_path / "w.tfwt", TrackNet("filter", 1, 3))


def test_unknown_architecture():
    with pytest.raises(FormatError):
        build_model("resnet-50")
