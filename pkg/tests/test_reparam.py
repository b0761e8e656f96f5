import numpy as np
import pytest

from dcfmn import nn, reparam

from conftest import rel_err


def _stack_spec(stages, channels=2):
    return reparam.DilatedStackSpec(tuple(stages), channels)


def _run_stack(x, spec, weights, biases):
    """Sequential-forward oracle: apply each dilated stage with nn.conv2d."""
    c = spec.channels
    out = x
    for (k, d), w, b in zip(spec.stages, weights, biases):
        out = nn.conv2d(out, w, b, nn.ConvSpec(c, c, k, dilation=d, groups=c))
    return out


def _random_stack(rng, spec):
    weights = [
        rng.standard_normal((spec.channels, 1, k, k)) for k, _ in spec.stages
    ]
    biases = [rng.standard_normal((1, spec.channels, 1, 1)) for _ in spec.stages]
    return weights, biases


# ---------------------------------------------------------------------------
# effective_kernel_size
# ---------------------------------------------------------------------------


def test_effective_kernel_size_two_3x3():
    assert reparam.effective_kernel_size(_stack_spec([(3, 1), (3, 1)])) == 5


def _measured_support(spec, rng):
    weights, _ = _random_stack(rng, spec)
    dense, _ = reparam.compose_stack_to_dense(spec, weights)
    nz = np.abs(dense) > 1e-12
    assert nz.any()
    return dense.shape[2]


def test_effective_kernel_size_vs_composition_oracle(rng):
    for stages, want in [([(3, 1), (3, 2)], 7), ([(3, 2), (3, 3), (3, 3)], 17)]:
        spec = _stack_spec(stages)
        assert reparam.effective_kernel_size(spec) == want
        # compose explicit kernels and measure the support directly
        assert _measured_support(spec, rng) == want


def test_effective_kernel_size_random_specs_match_support():
    rng = np.random.default_rng(42)
    for _ in range(50):
        n_stages = int(rng.integers(1, 4))
        stages = [
            (int(rng.choice([1, 3, 5])), int(rng.integers(1, 4)))
            for _ in range(n_stages)
        ]
        spec = _stack_spec(stages, channels=1)
        assert reparam.effective_kernel_size(spec) == _measured_support(spec, rng)


def test_effective_kernel_size_is_odd():
    rng = np.random.default_rng(5)
    for _ in range(20):
        stages = [
            (int(rng.choice([3, 5])), int(rng.integers(1, 5)))
            for _ in range(int(rng.integers(1, 4)))
        ]
        assert reparam.effective_kernel_size(_stack_spec(stages)) % 2 == 1


# ---------------------------------------------------------------------------
# dilate_kernel_to_dense
# ---------------------------------------------------------------------------


def test_dilate_identity_at_d1(rng):
    w = rng.standard_normal((3, 1, 3, 3))
    np.testing.assert_array_equal(reparam.dilate_kernel_to_dense(w, 1), w)


def test_dilate_3x3_d2_layout(rng):
    w = rng.standard_normal((1, 1, 3, 3))
    dense = reparam.dilate_kernel_to_dense(w, 2)
    assert dense.shape == (1, 1, 5, 5)
    np.testing.assert_array_equal(dense[0, 0, ::2, ::2], w[0, 0])
    mask = np.ones((5, 5), dtype=bool)
    mask[::2, ::2] = False
    assert not dense[0, 0][mask].any()


def test_dilated_conv_equals_densified_conv(rng):
    c = 3
    x = rng.standard_normal((1, c, 12, 12)).astype(np.float32)
    w = rng.standard_normal((c, 1, 3, 3)).astype(np.float32)
    dilated = nn.conv2d(x, w, None, nn.ConvSpec(c, c, 3, dilation=3, groups=c))
    dense = reparam.dilate_kernel_to_dense(w, 3)
    densified = nn.conv2d(x, dense, None, nn.ConvSpec(c, c, 7, dilation=1, groups=c))
    assert rel_err(dilated, densified) < 1e-6


# ---------------------------------------------------------------------------
# compose_stack_to_dense
# ---------------------------------------------------------------------------


def _delta(c, k):
    w = np.zeros((c, 1, k, k))
    w[:, :, k // 2, k // 2] = 1.0
    return w


def test_compose_two_deltas_is_delta():
    spec = _stack_spec([(3, 1), (3, 1)], channels=2)
    dense, bias = reparam.compose_stack_to_dense(spec, [_delta(2, 3), _delta(2, 3)])
    np.testing.assert_allclose(dense, _delta(2, 5), atol=1e-15)
    assert not bias.any()


def test_compose_delta_absorbs_into_padded_kernel(rng):
    a = rng.standard_normal((2, 1, 3, 3))
    spec = _stack_spec([(3, 1), (3, 2)], channels=2)
    dense, _ = reparam.compose_stack_to_dense(spec, [a, _delta(2, 3)])
    assert dense.shape == (2, 1, 7, 7)
    np.testing.assert_allclose(dense[:, :, 2:5, 2:5], a, atol=1e-15)
    mask = np.ones((7, 7), dtype=bool)
    mask[2:5, 2:5] = False
    assert np.abs(dense[:, :, :, :][:, :, mask]).max() < 1e-15


@pytest.mark.parametrize("stages", [
    [(3, 1), (3, 1)],
    [(3, 1), (3, 2)],
    [(3, 2), (3, 2), (3, 2)],
    [(3, 2), (3, 3), (3, 3)],
])
def test_compose_matches_sequential_forward_on_interior(rng, stages):
    spec = _stack_spec(stages, channels=4)
    weights, biases = _random_stack(rng, spec)
    c = spec.channels
    K = reparam.effective_kernel_size(spec)
    margin = (K - 1) // 2
    size = 2 * margin + 6
    x = rng.standard_normal((2, c, size, size)).astype(np.float32)

    seq = _run_stack(x, spec, weights, biases)
    dense, bias = reparam.compose_stack_to_dense(spec, weights, biases)
    fused = nn.conv2d(x, dense.astype(np.float64), bias.astype(np.float64),
                      nn.ConvSpec(c, c, K, dilation=1, groups=c))

    inner = (slice(None), slice(None), slice(margin, -margin), slice(margin, -margin))
    assert rel_err(seq[inner], fused[inner]) < 1e-5


def test_compose_zero_bias_case(rng):
    spec = _stack_spec([(3, 1), (3, 2)], channels=2)
    weights, _ = _random_stack(rng, spec)
    c = spec.channels
    K = reparam.effective_kernel_size(spec)
    margin = (K - 1) // 2
    x = rng.standard_normal((1, c, 16, 16))
    seq = _run_stack(x, spec, weights, [None, None])
    dense, bias = reparam.compose_stack_to_dense(spec, weights)
    assert not bias.any()
    fused = nn.conv2d(x, dense, None, nn.ConvSpec(c, c, K, dilation=1, groups=c))
    inner = (slice(None), slice(None), slice(margin, -margin), slice(margin, -margin))
    assert rel_err(seq[inner], fused[inner]) < 1e-5


def test_compose_rejects_nonlinearity():
    spec = _stack_spec([(3, 1)], channels=1)
    with pytest.raises(reparam.UnsupportedFusionError):
        reparam.compose_stack_to_dense(
            spec, [_delta(1, 3)], nonlinearity_between_stages=True
        )


# ---------------------------------------------------------------------------
# fuse_parallel_3x3
# ---------------------------------------------------------------------------


def test_fuse_single_branch_unchanged(rng):
    w = rng.standard_normal((4, 4, 3, 3))
    b = rng.standard_normal((1, 4, 1, 1))
    fw, fb = reparam.fuse_parallel_3x3([w], [b], include_identity=False)
    np.testing.assert_allclose(fw, w, atol=1e-15)
    np.testing.assert_allclose(fb, b, atol=1e-15)


def test_fuse_opposite_branches_cancel(rng):
    w = rng.standard_normal((3, 3, 3, 3))
    fw, fb = reparam.fuse_parallel_3x3([w, -w], None, include_identity=False)
    assert np.abs(fw).max() < 1e-15
    assert not fb.any()


def test_fuse_with_identity_matches_multibranch_forward(rng):
    c = 6
    ws = [rng.standard_normal((c, c, 3, 3)).astype(np.float32) for _ in range(2)]
    bs = [rng.standard_normal((1, c, 1, 1)).astype(np.float32) for _ in range(2)]
    fw, fb = reparam.fuse_parallel_3x3(ws, bs, include_identity=True)
    spec = nn.ConvSpec(c, c, 3)
    for _ in range(100):
        x = rng.standard_normal((1, c, 7, 9)).astype(np.float32)
        want = sum(nn.conv2d(x, w, b, spec) for w, b in zip(ws, bs)) + x
        got = nn.conv2d(x, fw, fb, spec)
        assert rel_err(got, want) < 1e-5


def test_fuse_shape_errors(rng):
    a = rng.standard_normal((2, 2, 3, 3))
    with pytest.raises(nn.ShapeError):
        reparam.fuse_parallel_3x3([a, rng.standard_normal((2, 2, 5, 5))])
    with pytest.raises(nn.ShapeError):
        reparam.fuse_parallel_3x3([rng.standard_normal((2, 3, 3, 3))],
                                  include_identity=True)
    with pytest.raises(nn.ShapeError):
        reparam.fuse_parallel_3x3([])
