import numpy as np
import pytest

from qrmnet.chanest import (
    NMSE_FLOOR_DB,
    SRCNN,
    DivergenceError,
    IncompleteObservationError,
    SingularPilotError,
    SrcnnHyper,
    assemble_pilot_tensor,
    from_planes,
    gaussian_kernel,
    interpolate,
    lmmse_estimate,
    lmmse_kernel,
    ls_estimate,
    ls_pilot_tensor,
    nmse,
    srcnn_forward,
    srcnn_train,
    to_planes,
)
from qrmnet.channel import ChannelProfile, apply_awgn, draw_channel, frequency_correlation
from qrmnet.grid import GridConfig, build_grid
from qrmnet.neural import zeros_like_params


@pytest.fixture(scope="module")
def grid():
    return build_grid()


def test_ls_identity_pilots():
    assert np.allclose(ls_estimate([1 + 1j, 2], [1, 1]), [1 + 1j, 2])


def test_ls_diagonal_pilots():
    assert np.allclose(ls_estimate([1j, 2], [1j, -1]), [1, -2])


def test_ls_noiseless_exact():
    rng = np.random.default_rng(0)
    p = np.exp(1j * rng.uniform(0, 2 * np.pi, 16))
    h = rng.standard_normal(16) + 1j * rng.standard_normal(16)
    assert np.allclose(ls_estimate(p * h, p), h, atol=1e-12)


def test_ls_zero_pilot():
    with pytest.raises(SingularPilotError):
        ls_estimate([1, 2], [1, 0])


def test_assemble_single_link():
    h = np.arange(4) + 1j
    assert np.array_equal(assemble_pilot_tensor({(0, 0): h}, 1, 1)[:, 0, 0], h)


def test_assemble_links_and_order_independence():
    est = {(m, n): np.full(3, 10 * m + n + 0j) for m in range(2) for n in range(2)}
    T = assemble_pilot_tensor(est, 2, 2)
    for (m, n), v in est.items():
        assert np.array_equal(T[:, m, n], v)
    rev = dict(reversed(list(est.items())))
    assert np.array_equal(assemble_pilot_tensor(rev, 2, 2), T)


def test_assemble_missing_link():
    with pytest.raises(IncompleteObservationError):
        assemble_pilot_tensor({(0, 0): np.ones(3)}, 2, 2)


def test_ls_pilot_tensor_noiseless(grid):
    rng = np.random.default_rng(1)
    H = draw_channel(ChannelProfile(), 14, 48, 2, 2, rng)
    y, _ = apply_awgn(grid.compose(np.zeros((grid.n_data, 2))), H, np.inf, rng)
    Hp = ls_pilot_tensor(y, grid)
    for n in range(2):
        s, c = grid.pilot_positions[n].T
        assert np.allclose(Hp[:, :, n], H[s, c, :, n], atol=1e-12)


def test_kernel_rows_normalised(grid):
    K = gaussian_kernel(grid)
    assert K.shape == (2, 14 * 48, 32)
    assert np.all(K >= 0)
    assert np.allclose(K.sum(-1), 1.0)


def test_interpolate_constant(grid):
    Hp = np.full((32, 2, 2), 0.3 - 0.7j)
    out = interpolate(Hp, gaussian_kernel(grid), grid.shape)
    assert out.shape == (14, 48, 2, 2)
    assert np.allclose(out, 0.3 - 0.7j)


def test_interpolate_impulse(grid):
    K = gaussian_kernel(grid)
    Hp = np.zeros((32, 1, 2), dtype=complex)
    Hp[5, 0, 1] = 1.0
    out = interpolate(Hp, K, grid.shape)
    assert np.allclose(out[..., 0, 1].ravel(), K[1, :, 5])
    assert np.allclose(out[..., 0, 0], 0)


def test_interpolate_linear(grid):
    rng = np.random.default_rng(2)
    K = gaussian_kernel(grid)
    A, B = (rng.standard_normal((32, 2, 2)) + 1j * rng.standard_normal((32, 2, 2)) for _ in range(2))
    lhs = interpolate(2.0 * A - 0.5j * B, K, grid.shape)
    rhs = 2.0 * interpolate(A, K, grid.shape) - 0.5j * interpolate(B, K, grid.shape)
    assert np.allclose(lhs, rhs)


def test_interpolate_ramp_dense_pilots():
    # one antenna, every subcarrier of two symbols is a pilot; narrow kernel
    g = build_grid(GridConfig(n_tx=1, n_pilots=96))
    slope = 0.01
    pos = g.pilot_positions[0]
    Hp = (slope * pos[:, 1])[:, None, None].astype(complex)
    out = interpolate(Hp, gaussian_kernel(g, s_f=0.5, s_t=4.0), g.shape)[..., 0, 0]
    truth = slope * np.arange(48)
    interior = slice(4, 44)  # away from the band edges where smoothing is one-sided
    assert np.max(np.abs(out[:, interior] - truth[interior])) < 0.05 * slope * 1.0


def test_nmse_examples():
    label = np.array([1 + 1j, 2 - 1j])
    assert nmse(label, label) == NMSE_FLOOR_DB
    assert nmse(np.zeros(2), label) == pytest.approx(0.0)
    assert nmse(1.1 * label, label) == pytest.approx(-20.0)
    with pytest.raises(ValueError):
        nmse(label, np.zeros(2))
    with pytest.raises(ValueError):
        nmse(label, label[:1])


def test_lmmse_flat_channel_noise_free(grid):
    prof = ChannelProfile(n_taps=1)
    rng = np.random.default_rng(3)
    H = draw_channel(prof, 14, 48, 2, 2, rng)
    y, _ = apply_awgn(grid.compose(np.zeros((grid.n_data, 2))), H, np.inf, rng)
    est = lmmse_estimate(y, grid, frequency_correlation(prof, 48), 1e-10)
    assert np.allclose(est, H, atol=1e-6)


def test_lmmse_shrinks_to_zero(grid):
    rng = np.random.default_rng(4)
    prof = ChannelProfile()
    H = draw_channel(prof, 14, 48, 2, 2, rng)
    y, _ = apply_awgn(grid.compose(np.zeros((grid.n_data, 2))), H, 10.0, rng)
    est = lmmse_estimate(y, grid, frequency_correlation(prof, 48), 1e12)
    assert np.abs(est).max() < 1e-9


def test_lmmse_kernel_layout(grid):
    K = lmmse_kernel(grid, frequency_correlation(ChannelProfile(), 48), 0.1)
    assert K.shape == (2, 14 * 48, 32)


def test_planes_round_trip():
    rng = np.random.default_rng(5)
    H = rng.standard_normal((3, 14, 48, 2, 2)) + 1j * rng.standard_normal((3, 14, 48, 2, 2))
    P = to_planes(H)
    assert P.shape == (2 * 3 * 4, 1, 14, 48)
    assert np.array_equal(from_planes(P, H.shape), H)


def test_srcnn_layer_shapes():
    P = SRCNN().init(np.random.default_rng(0))
    assert P["srcnn.conv1.W"].shape == (64, 1, 9, 9)
    assert P["srcnn.conv2.W"].shape == (32, 64, 1, 1)
    assert P["srcnn.conv3.W"].shape == (1, 32, 5, 5)


def test_srcnn_zero_weights_gives_bias_map():
    P = zeros_like_params(SRCNN(8, 4).init(np.random.default_rng(0)))
    H = np.ones((14, 48, 2, 2), dtype=complex)
    assert np.array_equal(srcnn_forward(H, P), np.zeros_like(H))
    P["srcnn.conv3.b"][:] = 0.25
    out = srcnn_forward(H, P)
    assert np.allclose(out, 0.25 + 0.25j)


def test_srcnn_preserves_grid_shape():
    P = SRCNN(4, 2).init(np.random.default_rng(0))
    H = np.zeros((14, 48, 2, 2), dtype=complex)
    assert srcnn_forward(H, P).shape == H.shape


def test_srcnn_overfit_small_set():
    rng = np.random.default_rng(6)
    X = rng.standard_normal((10, 6, 8, 1, 1)) * 0.5 + 0j
    Y = 0.5 * X
    hyper = SrcnnHyper(h1=8, h2=4, dropout=0.0, lr=3e-3, epochs=200, batch_ttis=1, seed=0)
    P, hist = srcnn_train(X, Y, hyper)  # 2000 steps
    assert hist[-1][1] < 1e-4


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_srcnn_divergence_reported():
    X = np.full((2, 6, 8, 1, 1), 1e200 + 0j)
    with pytest.raises(DivergenceError) as err:
        srcnn_train(X, X, SrcnnHyper(h1=2, h2=2, epochs=1, lr=0.5))
    assert err.value.epoch == 1 and err.value.lr == 0.5


def test_srcnn_heldout_mse_decreases(grid):
    rng = np.random.default_rng(7)
    prof = ChannelProfile()
    K = gaussian_kernel(grid)

    def batch(n):
        X, Y = [], []
        for _ in range(n):
            H = draw_channel(prof, 14, 48, 2, 2, rng)
            y, _ = apply_awgn(grid.compose(np.zeros((grid.n_data, 2))), H, 25.0, rng)
            X.append(interpolate(ls_pilot_tensor(y, grid), K, grid.shape))
            Y.append(H)
        return np.array(X), np.array(Y)

    X, Y = batch(6)
    val = batch(2)
    _, hist = srcnn_train(X, Y, SrcnnHyper(h1=8, h2=4, epochs=4, batch_ttis=1, residual=True), val=val)
    assert hist[-1][2] < hist[0][2]


def test_srcnn_all_steps_skipped_is_divergence(monkeypatch):
    import qrmnet.chanest as ce

    monkeypatch.setattr(ce, "mse_backward", lambda out, y: np.full_like(out, np.nan))
    X = np.ones((2, 6, 8, 1, 1), dtype=complex)
    with pytest.raises(DivergenceError):
        srcnn_train(X, X, SrcnnHyper(h1=2, h2=2, epochs=2))
