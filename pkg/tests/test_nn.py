import math

import numpy as np
import pytest

from dcfmn import nn

from conftest import finite_difference_grad, naive_conv2d, rel_err

F64 = np.float64


# ---------------------------------------------------------------------------
# conv2d forward
# ---------------------------------------------------------------------------


def test_conv2d_identity_kernel():
    x = np.arange(9, dtype=np.float32).reshape(1, 1, 3, 3)
    w = np.zeros((1, 1, 3, 3), dtype=np.float32)
    w[0, 0, 1, 1] = 1.0
    spec = nn.ConvSpec(1, 1, 3)
    y = nn.conv2d(x, w, None, spec)
    np.testing.assert_array_equal(y, x)


def test_conv2d_ones_kernel_padding_arithmetic():
    c = 0.7
    x = np.full((1, 1, 5, 5), c, dtype=np.float64)
    w = np.ones((1, 1, 3, 3), dtype=np.float64)
    y = nn.conv2d(x, w, None, nn.ConvSpec(1, 1, 3))
    assert y[0, 0, 2, 2] == pytest.approx(9 * c)
    for corner in [(0, 0), (0, 4), (4, 0), (4, 4)]:
        assert y[0, 0][corner] == pytest.approx(4 * c)
    # edge midpoints see a 2x3 window
    assert y[0, 0, 0, 2] == pytest.approx(6 * c)


def test_conv2d_dilated_matches_loop_oracle(rng):
    x = rng.standard_normal((1, 2, 5, 5))
    w = rng.standard_normal((2, 2, 3, 3))
    b = rng.standard_normal((1, 2, 1, 1))
    spec = nn.ConvSpec(2, 2, 3, dilation=2)
    got = nn.conv2d(x, w, b, spec)
    want = naive_conv2d(x, w, b, kernel=3, dilation=2, groups=1)
    assert rel_err(got, want) < 1e-6


@pytest.mark.parametrize("groups,cin,cout,k,d", [
    (2, 4, 6, 3, 1),
    (4, 4, 4, 3, 2),
    (1, 3, 5, 5, 1),
    (8, 8, 8, 3, 3),
])
def test_conv2d_grouped_matches_loop_oracle(rng, groups, cin, cout, k, d):
    x = rng.standard_normal((2, cin, 6, 7))
    w = rng.standard_normal((cout, cin // groups, k, k))
    spec = nn.ConvSpec(cin, cout, k, dilation=d, groups=groups)
    got = nn.conv2d(x, w, None, spec)
    want = naive_conv2d(x, w, None, kernel=k, dilation=d, groups=groups)
    assert rel_err(got, want) < 1e-10


def test_conv2d_linear_in_input(rng):
    spec = nn.ConvSpec(3, 4, 3)
    w = rng.standard_normal(spec.weight_shape).astype(np.float32)
    x = rng.standard_normal((1, 3, 8, 8)).astype(np.float32)
    y = rng.standard_normal((1, 3, 8, 8)).astype(np.float32)
    a, b = 1.3, -0.4
    lhs = nn.conv2d(a * x + b * y, w, None, spec)
    rhs = a * nn.conv2d(x, w, None, spec) + b * nn.conv2d(y, w, None, spec)
    assert rel_err(lhs, rhs) < 1e-5


def test_conv2d_depthwise_equals_per_channel_convs(rng):
    c = 5
    x = rng.standard_normal((2, c, 6, 6))
    w = rng.standard_normal((c, 1, 3, 3))
    spec = nn.ConvSpec(c, c, 3, groups=c)
    got = nn.conv2d(x, w, None, spec)
    for ch in range(c):
        single = nn.conv2d(
            x[:, ch : ch + 1], w[ch : ch + 1], None, nn.ConvSpec(1, 1, 3)
        )
        assert rel_err(got[:, ch : ch + 1], single) < 1e-12


def test_conv2d_shape_and_config_errors(rng):
    x = rng.standard_normal((1, 3, 4, 4))
    w = rng.standard_normal((4, 3, 3, 3))
    with pytest.raises(nn.ShapeError):
        nn.conv2d(x, w, None, nn.ConvSpec(4, 4, 3))  # channel mismatch
    with pytest.raises(nn.ShapeError):
        nn.conv2d(x, w[:, :2], None, nn.ConvSpec(3, 4, 3))  # weight extents
    with pytest.raises(nn.ConfigError):
        nn.ConvSpec(3, 4, 3, groups=2)  # groups must divide channels
    with pytest.raises(nn.ConfigError):
        nn.ConvSpec(3, 4, 4)  # even kernel


# ---------------------------------------------------------------------------
# conv2d vjp
# ---------------------------------------------------------------------------


def test_conv2d_vjp_zero_upstream(rng):
    x = rng.standard_normal((1, 2, 4, 4))
    spec = nn.ConvSpec(2, 3, 3)
    w = rng.standard_normal(spec.weight_shape)
    b = rng.standard_normal((1, 3, 1, 1))
    dx, dw, db = nn.conv2d_vjp(x, w, b, spec, np.zeros((1, 3, 4, 4)))
    assert not dx.any() and not dw.any() and not db.any()


def test_conv2d_vjp_1x1_scalar_case(rng):
    x = rng.standard_normal((2, 1, 3, 3))
    up = rng.standard_normal((2, 1, 3, 3))
    w = rng.standard_normal((1, 1, 1, 1))
    _, dw, _ = nn.conv2d_vjp(x, w, None, nn.ConvSpec(1, 1, 1), up)
    assert dw[0, 0, 0, 0] == pytest.approx((x * up).sum())


@pytest.mark.parametrize("groups,cin,cout,k,d", [
    (1, 2, 3, 3, 1),
    (1, 2, 2, 3, 2),
    (2, 4, 4, 3, 1),
    (4, 4, 4, 5, 2),
])
def test_conv2d_vjp_finite_difference(rng, groups, cin, cout, k, d):
    x = rng.standard_normal((2, cin, 6, 6))
    spec = nn.ConvSpec(cin, cout, k, dilation=d, groups=groups)
    w = rng.standard_normal(spec.weight_shape)
    b = rng.standard_normal((1, cout, 1, 1))
    up = rng.standard_normal((2, cout, 6, 6))

    dx, dw, db = nn.conv2d_vjp(x, w, b, spec, up)
    fd_x = finite_difference_grad(lambda v: (nn.conv2d(v, w, b, spec) * up).sum(), x)
    fd_w = finite_difference_grad(lambda v: (nn.conv2d(x, v, b, spec) * up).sum(), w)
    fd_b = finite_difference_grad(lambda v: (nn.conv2d(x, w, v, spec) * up).sum(), b)
    assert rel_err(dx, fd_x) < 1e-4
    assert rel_err(dw, fd_w) < 1e-4
    assert rel_err(db, fd_b) < 1e-4


# ---------------------------------------------------------------------------
# gelu
# ---------------------------------------------------------------------------


def test_gelu_values():
    x = np.array([[[[0.0, 10.0, 1.0]]]])
    y = nn.gelu(x)
    assert y[0, 0, 0, 0] == 0.0
    assert y[0, 0, 0, 1] == pytest.approx(10.0, abs=1e-6)
    # independent oracle: x * Phi(x) via the stdlib erf
    phi1 = 0.5 * (1.0 + math.erf(1.0 / math.sqrt(2.0)))
    assert y[0, 0, 0, 2] == pytest.approx(1.0 * phi1, abs=1e-12)
    assert y[0, 0, 0, 2] == pytest.approx(0.841345, abs=1e-5)


def test_gelu_vjp_finite_difference(rng):
    x = rng.standard_normal((1, 2, 3, 3))
    up = rng.standard_normal(x.shape)
    got = nn.gelu_vjp(x, up)
    fd = finite_difference_grad(lambda v: (nn.gelu(v) * up).sum(), x)
    assert rel_err(got, fd) < 1e-4


# ---------------------------------------------------------------------------
# layer_norm
# ---------------------------------------------------------------------------


def _ln_params(c, dtype=F64):
    return np.ones((1, c, 1, 1), dtype=dtype), np.zeros((1, c, 1, 1), dtype=dtype)


def test_layer_norm_constant_channels():
    x = np.full((1, 4, 2, 2), 3.25)
    g, b = _ln_params(4)
    y = nn.layer_norm(x, g, b)
    np.testing.assert_allclose(y, 0.0, atol=1e-3)


def test_layer_norm_two_channel_symmetry():
    eps = 1e-6
    x = np.zeros((1, 2, 1, 1))
    x[0, 0] = -1.0
    x[0, 1] = 1.0
    g, b = _ln_params(2)
    y = nn.layer_norm(x, g, b, eps=eps)
    expected = 1.0 / math.sqrt(1.0 + eps)
    assert y[0, 0, 0, 0] == pytest.approx(-expected, abs=1e-9)
    assert y[0, 1, 0, 0] == pytest.approx(expected, abs=1e-9)


def test_layer_norm_statistics(rng):
    x = rng.standard_normal((2, 16, 5, 5)) * 3.0 + 1.0
    g, b = _ln_params(16)
    y = nn.layer_norm(x, g, b)
    assert np.abs(y.mean(axis=1)).max() < 1e-6
    assert np.abs(y.var(axis=1) - 1.0).max() < 1e-4


def test_layer_norm_vjp_finite_difference(rng):
    x = rng.standard_normal((2, 6, 3, 3))
    g = rng.standard_normal((1, 6, 1, 1))
    b = rng.standard_normal((1, 6, 1, 1))
    up = rng.standard_normal(x.shape)
    dx, dg, db = nn.layer_norm_vjp(x, g, b, up)
    fd_x = finite_difference_grad(lambda v: (nn.layer_norm(v, g, b) * up).sum(), x)
    fd_g = finite_difference_grad(lambda v: (nn.layer_norm(x, v, b) * up).sum(), g)
    fd_b = finite_difference_grad(lambda v: (nn.layer_norm(x, g, v) * up).sum(), b)
    assert rel_err(dx, fd_x) < 1e-4
    assert rel_err(dg, fd_g) < 1e-4
    assert rel_err(db, fd_b) < 1e-4


# ---------------------------------------------------------------------------
# chunk4 / concat4
# ---------------------------------------------------------------------------


def test_chunk4_channel_ranges():
    x = np.zeros((1, 8, 2, 2))
    for i in range(8):
        x[0, i] = i
    parts = nn.chunk4(x)
    for j, part in enumerate(parts):
        assert part.shape == (1, 2, 2, 2)
        np.testing.assert_array_equal(part[0, 0], np.full((2, 2), 2 * j))
        np.testing.assert_array_equal(part[0, 1], np.full((2, 2), 2 * j + 1))


def test_chunk4_concat4_inverse(rng):
    x = rng.standard_normal((2, 12, 4, 5))
    np.testing.assert_array_equal(nn.concat4(nn.chunk4(x)), x)


def test_chunk4_rejects_bad_channel_count():
    with pytest.raises(nn.ConfigError):
        nn.chunk4(np.zeros((1, 6, 2, 2)))


def test_concat4_basic_and_errors():
    a = np.full((1, 1, 2, 2), 2.0)
    b = np.full((1, 1, 2, 2), 5.0)
    y = nn.concat4([a, b])
    assert y.shape == (1, 2, 2, 2)
    assert y[0, 0, 0, 0] == 2.0 and y[0, 1, 0, 0] == 5.0
    with pytest.raises(nn.ShapeError):
        nn.concat4([a, np.zeros((1, 1, 3, 2))])


def test_concat4_vjp_splits(rng):
    up = rng.standard_normal((1, 6, 2, 2))
    parts = nn.concat4_vjp(up, [2, 1, 3])
    assert [p.shape[1] for p in parts] == [2, 1, 3]
    np.testing.assert_array_equal(np.concatenate(parts, axis=1), up)


# ---------------------------------------------------------------------------
# pixel_shuffle
# ---------------------------------------------------------------------------


def test_pixel_shuffle_shape():
    y = nn.pixel_shuffle(np.zeros((1, 4, 2, 2)), 2)
    assert y.shape == (1, 1, 4, 4)


def test_pixel_shuffle_identity_at_s1(rng):
    x = rng.standard_normal((1, 3, 4, 4))
    np.testing.assert_array_equal(nn.pixel_shuffle(x, 1), x)


def test_pixel_shuffle_tile_pattern():
    # channel k constant k, s = 2: every 2x2 output tile is [[0, 1], [2, 3]],
    # from output(o, y, x) = input(o*s^2 + (y%s)*s + (x%s), y//s, x//s).
    x = np.zeros((1, 4, 2, 2))
    for k in range(4):
        x[0, k] = k
    y = nn.pixel_shuffle(x, 2)
    want_tile = np.array([[0.0, 1.0], [2.0, 3.0]])
    np.testing.assert_array_equal(y[0, 0], np.tile(want_tile, (2, 2)))


def test_pixel_shuffle_vjp_is_exact_inverse(rng):
    x = rng.standard_normal((2, 8, 3, 3))
    y = nn.pixel_shuffle(x, 2)
    np.testing.assert_array_equal(nn.pixel_shuffle_vjp(y, 2), x)


def test_pixel_shuffle_rejects_bad_channels():
    with pytest.raises(nn.ConfigError):
        nn.pixel_shuffle(np.zeros((1, 3, 2, 2)), 2)


def test_pixel_shuffle_vjp_finite_difference(rng):
    x = rng.standard_normal((1, 4, 2, 2))
    up = rng.standard_normal((1, 1, 4, 4))
    got = nn.pixel_shuffle_vjp(up, 2)
    fd = finite_difference_grad(lambda v: (nn.pixel_shuffle(v, 2) * up).sum(), x)
    assert rel_err(got, fd) < 1e-4


# ---------------------------------------------------------------------------
# se_block
# ---------------------------------------------------------------------------


def _se_params(c, mid, rng=None):
    if rng is None:
        w1 = np.zeros((mid, c, 1, 1))
        b1 = np.zeros((1, mid, 1, 1))
        w2 = np.zeros((c, mid, 1, 1))
        b2 = np.zeros((1, c, 1, 1))
    else:
        w1 = rng.standard_normal((mid, c, 1, 1))
        b1 = rng.standard_normal((1, mid, 1, 1))
        w2 = rng.standard_normal((c, mid, 1, 1))
        b2 = rng.standard_normal((1, c, 1, 1))
    return w1, b1, w2, b2


def test_se_block_zero_weights_halves_input(rng):
    x = rng.standard_normal((2, 4, 3, 3))
    y = nn.se_block(x, *_se_params(4, 1))
    np.testing.assert_allclose(y, 0.5 * x, atol=1e-12)


def test_se_block_zero_input(rng):
    w1, b1, w2, b2 = _se_params(4, 2, rng)
    y = nn.se_block(np.zeros((1, 4, 2, 2)), w1, b1, w2, b2)
    assert not y.any()


def test_se_block_matches_direct_oracle(rng):
    c, mid = 8, 2
    x = rng.standard_normal((2, c, 4, 5))
    w1, b1, w2, b2 = _se_params(c, mid, rng)
    got = nn.se_block(x, w1, b1, w2, b2)
    # direct oracle: explicit pool and two matrix products
    want = np.empty_like(x)
    for b in range(2):
        pooled = x[b].mean(axis=(1, 2))
        hid = w1[:, :, 0, 0] @ pooled + b1[0, :, 0, 0]
        hid = np.maximum(hid, 0.0)
        logits = w2[:, :, 0, 0] @ hid + b2[0, :, 0, 0]
        gate = 1.0 / (1.0 + np.exp(-logits))
        want[b] = x[b] * gate[:, None, None]
    assert rel_err(got, want) < 1e-6


def test_se_block_vjp_finite_difference(rng):
    c, mid = 4, 2
    x = rng.standard_normal((2, c, 3, 3))
    w1, b1, w2, b2 = _se_params(c, mid, rng)
    up = rng.standard_normal(x.shape)
    dx, dw1, db1, dw2, db2 = nn.se_block_vjp(x, w1, b1, w2, b2, up)
    pairs = [
        (dx, x, lambda v: nn.se_block(v, w1, b1, w2, b2)),
        (dw1, w1, lambda v: nn.se_block(x, v, b1, w2, b2)),
        (db1, b1, lambda v: nn.se_block(x, w1, v, w2, b2)),
        (dw2, w2, lambda v: nn.se_block(x, w1, b1, v, b2)),
        (db2, b2, lambda v: nn.se_block(x, w1, b1, w2, v)),
    ]
    for got, arg, f in pairs:
        fd = finite_difference_grad(lambda v: (f(v) * up).sum(), arg)
        assert rel_err(got, fd) < 1e-4


def test_se_block_shape_errors(rng):
    x = rng.standard_normal((1, 4, 2, 2))
    w1, b1, w2, b2 = _se_params(4, 2, rng)
    with pytest.raises(nn.ShapeError):
        nn.se_block(x, w1[:, :3], b1, w2, b2)


# ---------------------------------------------------------------------------
# elementwise helpers
# ---------------------------------------------------------------------------


def test_add_roundtrip(rng):
    a = rng.standard_normal((1, 2, 3, 3))
    b = rng.standard_normal(a.shape)
    np.testing.assert_array_equal(nn.add(a, np.zeros_like(a)), a)
    np.testing.assert_allclose(nn.add(a, b) - b, a, atol=1e-12)
    with pytest.raises(nn.ShapeError):
        nn.add(a, b[:, :1])


def test_add_vjp_passthrough(rng):
    up = rng.standard_normal((1, 2, 2, 2))
    da, db = nn.add_vjp(up)
    assert da is up and db is up


def test_scale_and_vjp(rng):
    x = rng.standard_normal((1, 2, 2, 2))
    up = rng.standard_normal(x.shape)
    np.testing.assert_allclose(nn.scale(x, 2.5), 2.5 * x)
    got = nn.scale_vjp(up, 2.5)
    fd = finite_difference_grad(lambda v: (nn.scale(v, 2.5) * up).sum(), x)
    assert rel_err(got, fd) < 1e-4


# ---------------------------------------------------------------------------
# property sweep: every vjp against finite differences on random instances
# ---------------------------------------------------------------------------


def test_vjp_sweep_random_instances():
    rng = np.random.default_rng(777)
    checked = 0
    for trial in range(20):
        cin = int(rng.integers(1, 4)) * 2
        cout = int(rng.integers(1, 3)) * 2
        k = int(rng.choice([1, 3]))
        d = int(rng.integers(1, 3))
        groups = 2 if (cin % 2 == 0 and cout % 2 == 0 and rng.integers(2)) else 1
        h = int(rng.integers(3, 6))
        x = rng.standard_normal((1, cin, h, h))
        spec = nn.ConvSpec(cin, cout, k, dilation=d, groups=groups)
        w = rng.standard_normal(spec.weight_shape)
        up = rng.standard_normal((1, cout, h, h))
        dx, dw, _ = nn.conv2d_vjp(x, w, None, spec, up)
        fd_x = finite_difference_grad(lambda v: (nn.conv2d(v, w, None, spec) * up).sum(), x)
        fd_w = finite_difference_grad(lambda v: (nn.conv2d(x, v, None, spec) * up).sum(), w)
        assert rel_err(dx, fd_x) < 1e-4
        assert rel_err(dw, fd_w) < 1e-4

        xe = rng.standard_normal((1, 4, 4, 4))
        ue = rng.standard_normal(xe.shape)
        assert rel_err(
            nn.gelu_vjp(xe, ue),
            finite_difference_grad(lambda v: (nn.gelu(v) * ue).sum(), xe),
        ) < 1e-4
        g = rng.standard_normal((1, 4, 1, 1))
        b = rng.standard_normal((1, 4, 1, 1))
        dxl, _, _ = nn.layer_norm_vjp(xe, g, b, ue)
        assert rel_err(
            dxl,
            finite_difference_grad(lambda v: (nn.layer_norm(v, g, b) * ue).sum(), xe),
        ) < 1e-4
        checked += 1
    assert checked == 20
