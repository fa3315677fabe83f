import numpy as np
import pytest

from _gradcheck import check_params, fd_grad, rel_error
from qrmnet.neural import (
    AdamState,
    Conv2d,
    Dense,
    Dropout,
    GRUCell,
    ReLU,
    Sequential,
    WeightFileError,
    adam_step,
    cross_entropy,
    cross_entropy_backward,
    diagnostics,
    load_params,
    mse,
    mse_backward,
    save_params,
    softmax,
    softmax_backward,
    zeros_like_params,
)

TOL = 1e-4


def _layer_check(layer, x, rng, **fwd):
    """Gradient check of params and input for a single-input layer."""
    P = layer.init(rng)
    for v in P.values():  # non-zero biases exercise every path
        v += 0.1 * rng.standard_normal(v.shape)
    y, cache = layer.forward(P, x, **fwd)
    w = rng.standard_normal(y.shape)

    def f():
        return float(np.sum(layer.forward(P, x, **fwd)[0] * w))

    G = zeros_like_params(P)
    dx = layer.backward(P, cache, w, G)
    err = check_params(f, P, G, rng) if P else 0.0
    idx = rng.choice(x.size, size=min(8, x.size), replace=False)
    err = max(err, rel_error(dx.reshape(-1)[idx], fd_grad(f, x, idx)))
    return err


@pytest.mark.parametrize("seed", range(10))
def test_dense_gradients(seed):
    rng = np.random.default_rng(seed)
    n_in, n_out = rng.integers(1, 9, 2)
    x = rng.standard_normal((int(rng.integers(1, 5)), 3, n_in))
    assert _layer_check(Dense("d", n_in, n_out), x, rng) < TOL


@pytest.mark.parametrize("seed", range(5))
def test_relu_gradients(seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((4, 7))
    x[np.abs(x) < 1e-3] = 0.5  # keep clear of the kink
    assert _layer_check(ReLU(), x, rng) < TOL


@pytest.mark.parametrize("seed", range(10))
def test_conv_gradients(seed):
    rng = np.random.default_rng(seed)
    k = int(rng.choice([1, 3, 5]))
    pad = int(rng.integers(0, k // 2 + 1))
    c_in, c_out = (int(v) for v in rng.integers(1, 4, 2))
    x = rng.standard_normal((2, c_in, int(rng.integers(k, k + 4)), int(rng.integers(k, k + 5))))
    assert _layer_check(Conv2d("c", c_in, c_out, k, padding=pad), x, rng) < TOL


@pytest.mark.parametrize("seed", range(10))
def test_gru_gradients(seed):
    rng = np.random.default_rng(seed)
    n_in, n_h = (int(v) for v in rng.integers(1, 7, 2))
    cell = GRUCell("g", n_in, n_h)
    P = cell.init(rng)
    for v in P.values():
        v += 0.1 * rng.standard_normal(v.shape)
    x = rng.standard_normal((3, n_in))
    h = 0.5 * rng.standard_normal((3, n_h))
    w = rng.standard_normal((3, n_h))

    def f():
        return float(np.sum(cell.forward(P, x, h)[0] * w))

    G = zeros_like_params(P)
    dx, dh = cell.backward(P, cell.forward(P, x, h)[1], w, G)
    assert check_params(f, P, G, rng) < TOL
    assert rel_error(dx.ravel(), fd_grad(f, x, range(x.size))) < TOL
    assert rel_error(dh.ravel(), fd_grad(f, h, range(h.size))) < TOL


def test_sequential_dropout_gradient_uses_mask():
    rng = np.random.default_rng(0)
    net = Sequential([Dense("a", 4, 6), ReLU(), Dropout(0.5), Dense("b", 6, 2)])
    P = net.init(rng)
    x = rng.standard_normal((5, 4))
    seed = 11

    def f():
        y, _ = net.forward(P, x, training=True, rng=np.random.default_rng(seed))
        return float(y.sum())

    _, caches = net.forward(P, x, training=True, rng=np.random.default_rng(seed))
    G = zeros_like_params(P)
    net.backward(P, caches, np.ones((5, 2)), G)
    assert check_params(f, P, G, rng) < TOL


def test_softmax_zero_logits_uniform():
    assert np.allclose(softmax(np.zeros((3, 4))), 0.25)


def test_softmax_rows_sum_to_one_extreme_logits():
    rng = np.random.default_rng(1)
    p = softmax(rng.standard_normal((50, 7)) * 500)
    assert np.all(np.isfinite(p))
    assert np.allclose(p.sum(-1), 1.0)


def test_softmax_backward_matches_fd():
    rng = np.random.default_rng(2)
    z = rng.standard_normal((3, 5))
    w = rng.standard_normal((3, 5))
    f = lambda: float(np.sum(softmax(z) * w))  # noqa: E731
    assert rel_error(softmax_backward(softmax(z), w).ravel(), fd_grad(f, z, range(z.size))) < TOL


def test_dense_identity():
    d = Dense("d", 3, 3)
    P = {"d.W": np.eye(3), "d.b": np.zeros(3)}
    x = np.arange(6.0).reshape(2, 3)
    assert np.array_equal(d.forward(P, x)[0], x)


def test_dense_width_mismatch():
    with pytest.raises(ValueError):
        Dense("d", 3, 2).forward({"d.W": np.zeros((3, 2)), "d.b": np.zeros(2)}, np.zeros((1, 4)))


def test_dropout_eval_identity_and_bounds():
    x = np.random.default_rng(0).standard_normal((4, 4))
    assert np.array_equal(Dropout(0.3).forward({}, x)[0], x)
    for p in (-0.1, 1.0, 1.5):
        with pytest.raises(ValueError):
            Dropout(p)


def test_dropout_training_preserves_mean():
    x = np.ones(200_000)
    y, _ = Dropout(0.3).forward({}, x, training=True, rng=np.random.default_rng(1))
    assert np.mean(y) == pytest.approx(1.0, abs=0.01)
    assert np.mean(y == 0) == pytest.approx(0.3, abs=0.01)


def test_cross_entropy_examples():
    assert cross_entropy(np.eye(4), np.arange(4)) == 0.0
    assert cross_entropy(np.full((5, 4), 0.25), np.zeros(5, dtype=int)) == pytest.approx(5 * np.log(4))


def test_cross_entropy_clamps_zero_probability():
    before = diagnostics["ce_clamped"]
    val = cross_entropy(np.array([[1.0, 0.0]]), np.array([1]))
    assert np.isfinite(val) and val == pytest.approx(-np.log(1e-12))
    assert diagnostics["ce_clamped"] == before + 1


def test_cross_entropy_backward():
    p = np.array([[0.2, 0.8], [0.5, 0.5]])
    g = cross_entropy_backward(p, np.array([1, 0]))
    assert np.allclose(g, [[0, -1.25], [-2.0, 0]])


def test_mse_and_gradient():
    assert mse([1.0, 3.0], [1.0, 1.0]) == pytest.approx(2.0)
    rng = np.random.default_rng(3)
    a, b = rng.standard_normal(6), rng.standard_normal(6)
    assert rel_error(mse_backward(a, b), fd_grad(lambda: mse(a, b), a, range(6))) < TOL


def test_adam_zero_gradient_no_change():
    P = {"w": np.array([1.0, -2.0])}
    adam_step(P, {"w": np.zeros(2)}, AdamState())
    assert np.array_equal(P["w"], [1.0, -2.0])


def test_adam_constant_gradient_step_size():
    P = {"w": np.zeros(3)}
    st = AdamState(lr=1e-3)
    for _ in range(5):
        before = P["w"].copy()
        adam_step(P, {"w": np.array([0.5, -2.0, 10.0])}, st)
        assert np.allclose(before - P["w"], 1e-3 * np.array([1, -1, 1]), rtol=1e-4)


def test_adam_converges_on_quadratic():
    A = np.diag([1.0, 4.0, 0.5])
    P = {"w": np.array([3.0, -2.0, 1.0])}
    st = AdamState(lr=1e-2)
    for _ in range(5000):
        g = A @ P["w"]
        if np.linalg.norm(g) < 1e-6:
            break
        adam_step(P, {"w": g}, st)
    assert np.linalg.norm(A @ P["w"]) < 1e-6


def test_adam_skips_non_finite():
    P = {"w": np.ones(2)}
    st = AdamState()
    before = diagnostics["adam_skipped"]
    adam_step(P, {"w": np.array([np.nan, 1.0])}, st)
    assert np.array_equal(P["w"], [1.0, 1.0]) and st.step == 0
    assert diagnostics["adam_skipped"] == before + 1


def test_gru_hidden_stays_bounded():
    rng = np.random.default_rng(4)
    cell = GRUCell("g", 3, 5)
    P = cell.init(rng)
    h = np.zeros((10, 5))
    for _ in range(100):
        h, _ = cell.forward(P, rng.standard_normal((10, 3)), h)
        assert np.all(np.abs(h) < 1.0)
    # huge inputs saturate tanh to exactly +-1 in float64 but never beyond
    for _ in range(20):
        h, _ = cell.forward(P, 1e3 * rng.standard_normal((10, 3)), h)
        assert np.all(np.abs(h) <= 1.0)


def test_weight_round_trip_bit_identical(tmp_path):
    rng = np.random.default_rng(5)
    P = Sequential([Dense("a", 3, 4), Conv2d("c", 2, 1, 3)]).init(rng)
    path = tmp_path / "w.bin"
    save_params(path, P, "abc123")
    Q, h = load_params(path)
    assert h == "abc123" and list(Q) == list(P)
    for k in P:
        assert Q[k].shape == P[k].shape and Q[k].tobytes() == P[k].tobytes()


def test_weight_file_corruption(tmp_path):
    path = tmp_path / "w.bin"
    save_params(path, {"a": np.ones((2, 2))})
    data = path.read_bytes()
    (tmp_path / "short.bin").write_bytes(data[:-3])
    (tmp_path / "bad.bin").write_bytes(b"XXXX" + data[4:])
    for name in ("short.bin", "bad.bin"):
        with pytest.raises(WeightFileError):
            load_params(tmp_path / name)
