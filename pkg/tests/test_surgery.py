import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dsa_forge.graph import (Conv3x3, Dense, DepthwiseSeparable, FCHead, GraphError, ModelGraph,
                             ShortcutBlock, is_vgg_type, output_shape, validate)
from dsa_forge.surgery import (compress_channels, impulse_block, lower_all, lower_depthwise_separable,
                               lower_fc_head, lower_shortcut, zero_block)
from dsa_forge.tensor import (KernelStack, add_ref, conv3x3_ref, depthwise3x3_ref, pointwise_ref,
                              relu_ref)


def run_convs(layers, x):
    for layer in layers:
        x = conv3x3_ref(x, layer.kernels, layer.padding)
        if layer.relu:
            x = relu_ref(x)
    return x


def shortcut_formula(x, w1, w2):
    return relu_ref(add_ref(x, conv3x3_ref(relu_ref(conv3x3_ref(x, w1)), w2)))


def test_impulse_block_is_identity(rng):
    x = rng.normal(size=(5, 6, 6))
    assert np.array_equal(conv3x3_ref(x, KernelStack(impulse_block(5))), x)
    assert not conv3x3_ref(x, KernelStack(zero_block(5))).any()


def test_stacked_impulse_adds_halves(rng):
    x = rng.normal(size=(6, 5, 5))
    stacked = KernelStack(np.concatenate([impulse_block(3), impulse_block(3)], axis=1))
    assert np.allclose(conv3x3_ref(x, stacked), x[:3] + x[3:], atol=0)


def test_shortcut_identity_branch(rng):
    x = rng.uniform(0, 2, size=(1, 8, 8))
    b = ShortcutBlock(KernelStack(impulse_block(1)), KernelStack(zero_block(1)))
    assert np.array_equal(run_convs(lower_shortcut(b), x), x)


def test_shortcut_doubles(rng):
    x = rng.uniform(0, 2, size=(1, 8, 8))
    b = ShortcutBlock(KernelStack(impulse_block(1)), KernelStack(impulse_block(1)))
    assert np.array_equal(run_convs(lower_shortcut(b), x), 2 * x)


def test_shortcut_structure():
    b = ShortcutBlock(KernelStack(np.full((2, 2, 3, 3), 7.0)), KernelStack(np.full((2, 2, 3, 3), 5.0)))
    a, bb, c = lower_shortcut(b)
    assert (a.in_ch, a.out_ch, a.relu) == (2, 4, True)
    assert (bb.in_ch, bb.out_ch, bb.relu) == (4, 4, False)
    assert (c.in_ch, c.out_ch, c.relu) == (4, 2, True)
    assert np.all(a.kernels.weights[:2] == 7.0)
    assert np.array_equal(a.kernels.weights[2:], impulse_block(2))
    w = bb.kernels.weights
    assert np.all(w[:2, :2] == 5.0)
    assert np.array_equal(w[2:, 2:], impulse_block(2))
    assert not w[:2, 2:].any() and not w[2:, :2].any()
    assert np.array_equal(c.kernels.weights, np.concatenate([impulse_block(2)] * 2, axis=1))


@pytest.mark.parametrize("n", [1, 2, 4, 8])
def test_shortcut_equivalence_random(n, rng):
    w1 = KernelStack(rng.normal(size=(n, n, 3, 3)), rng.normal(size=n))
    w2 = KernelStack(rng.normal(size=(n, n, 3, 3)), rng.normal(size=n))
    x = rng.uniform(0, 3, size=(n, 8, 8))
    got = run_convs(lower_shortcut(ShortcutBlock(w1, w2)), x)
    assert np.max(np.abs(got - shortcut_formula(x, w1, w2))) <= 1e-12


@settings(max_examples=25, deadline=None)
@given(st.sampled_from([1, 2, 4, 8]), st.integers(0, 2**32 - 1))
def test_shortcut_equivalence_property(n, seed):
    r = np.random.default_rng(seed)
    w1 = KernelStack(r.normal(size=(n, n, 3, 3)))
    w2 = KernelStack(r.normal(size=(n, n, 3, 3)))
    x = np.abs(r.normal(size=(n, 8, 8)))
    got = run_convs(lower_shortcut(ShortcutBlock(w1, w2)), x)
    assert np.max(np.abs(got - shortcut_formula(x, w1, w2))) <= 1e-12


def test_shortcut_needs_non_negative_input():
    b = ShortcutBlock(KernelStack(impulse_block(2)), KernelStack(zero_block(2)))
    linear = Conv3x3(KernelStack(impulse_block(2)), relu=False)
    with pytest.raises(GraphError, match="non-negative"):
        lower_all(ModelGraph((2, 6, 6), [linear, b]))
    relu = Conv3x3(KernelStack(impulse_block(2)), relu=True)
    assert is_vgg_type(lower_all(ModelGraph((2, 6, 6), [relu, b])))


def dws_direct(x, layer):
    y = depthwise3x3_ref(x, layer.depthwise, layer.depthwise_bias)
    y = pointwise_ref(y, layer.pointwise, layer.pointwise_bias)
    return relu_ref(y) if layer.relu else y


def test_dws_identity(rng):
    x = rng.normal(size=(1, 5, 5))
    layer = DepthwiseSeparable(impulse_block(1)[0], np.ones((1, 1)))
    assert np.array_equal(run_convs(lower_depthwise_separable(layer), x), x)


def test_dws_zero_pointwise(rng):
    x = rng.normal(size=(3, 5, 5))
    layer = DepthwiseSeparable(rng.normal(size=(3, 3, 3)), np.zeros((2, 3)))
    assert not run_convs(lower_depthwise_separable(layer), x).any()


def test_dws_structure(rng):
    layer = DepthwiseSeparable(rng.normal(size=(3, 3, 3)), rng.normal(size=(2, 3)))
    first, second = lower_depthwise_separable(layer)
    w = first.kernels.weights
    for i in range(3):
        for j in range(3):
            assert np.array_equal(w[i, j], layer.depthwise[i] if i == j else np.zeros((3, 3)))
    centre = second.kernels.weights
    assert np.array_equal(centre[:, :, 1, 1], layer.pointwise)
    centre[:, :, 1, 1] = 0
    assert not centre.any()


@pytest.mark.parametrize("relu", [False, True])
def test_dws_equivalence_random(rng, relu):
    layer = DepthwiseSeparable(rng.normal(size=(3, 3, 3)), rng.normal(size=(2, 3)),
                               rng.normal(size=3), rng.normal(size=2), relu)
    x = rng.normal(size=(3, 6, 6))
    got = run_convs(lower_depthwise_separable(layer), x)
    assert np.max(np.abs(got - dws_direct(x, layer))) <= 1e-12


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 8), st.integers(1, 8), st.integers(0, 2**32 - 1))
def test_dws_equivalence_property(p, q, seed):
    r = np.random.default_rng(seed)
    layer = DepthwiseSeparable(r.normal(size=(p, 3, 3)), r.normal(size=(q, p)))
    x = r.normal(size=(p, 6, 6))
    got = run_convs(lower_depthwise_separable(layer), x)
    assert np.max(np.abs(got - dws_direct(x, layer))) <= 1e-12


def test_fc_head_shapes():
    layers = lower_fc_head(FCHead(7, 16, [32, 32], 2))
    g = ModelGraph((16, 7, 7), layers)
    assert [s for s in validate(g)] == [(32, 5, 5), (32, 3, 3), (2, 1, 1)]
    assert [layer.padding for layer in layers] == ["valid"] * 3
    assert [layer.relu for layer in layers] == [True, True, False]


def test_fc_head_single_stage():
    layers = lower_fc_head(FCHead(3, 8, [], 10))
    assert validate(ModelGraph((8, 3, 3), layers)) == [(10, 1, 1)]


def test_fc_head_even_spatial():
    with pytest.raises(GraphError):
        FCHead(4, 8, [], 2)


def test_fc_head_carries_weights(rng):
    stages = (KernelStack(rng.normal(size=(4, 2, 3, 3))), KernelStack(rng.normal(size=(3, 4, 3, 3))))
    layers = lower_fc_head(FCHead(5, 2, [4], 3, stages))
    assert [layer.kernels for layer in layers] == list(stages)


def vgg_like(rng, final_ch=512, spatial=7):
    w = KernelStack(rng.normal(size=(final_ch, 4, 3, 3)), rng.normal(size=final_ch))
    return ModelGraph((4, spatial, spatial), [
        Conv3x3(KernelStack(rng.normal(size=(4, 4, 3, 3)))),
        Conv3x3(w),
        Dense(rng.normal(size=(16, final_ch * spatial * spatial))),
    ])


def test_compress_to_one_channel(rng):
    g = compress_channels(vgg_like(rng), 1, 1)
    assert output_shape(g) == (1, 7, 7)
    assert int(np.prod(output_shape(g))) == 49
    assert not any(isinstance(layer, Dense) for layer in g.layers)


def test_compress_keeps_first_k(rng):
    g0 = vgg_like(rng)
    g = compress_channels(g0, 1, 8)
    assert int(np.prod(output_shape(g))) == 392
    assert np.array_equal(g.layers[1].kernels.weights, g0.layers[1].kernels.weights[:8])
    assert np.array_equal(g.layers[1].kernels.bias, g0.layers[1].kernels.bias[:8])


def test_compress_full_width_only_drops_dense(rng):
    g0 = vgg_like(rng, final_ch=8)
    g = compress_channels(g0, 1, 8)
    assert g.layers == g0.layers[:2]


def test_compress_errors(rng):
    g = vgg_like(rng, final_ch=8)
    with pytest.raises(GraphError):
        compress_channels(g, 1, 9)
    with pytest.raises(GraphError, match="final"):
        compress_channels(g, 0, 2)
    with pytest.raises(GraphError):
        compress_channels(g, 2, 1)


def test_lower_all_fixed_point(rng):
    g = ModelGraph((3, 8, 8), [Conv3x3(KernelStack(rng.normal(size=(4, 3, 3, 3)))),
                               Conv3x3(KernelStack(rng.normal(size=(2, 4, 3, 3))))])
    assert lower_all(g) == g


def test_lower_all_inserts_shortcut_in_place(rng):
    first = Conv3x3(KernelStack(rng.normal(size=(2, 3, 3, 3))))
    last = Conv3x3(KernelStack(rng.normal(size=(1, 2, 3, 3))))
    sc = ShortcutBlock(KernelStack(rng.normal(size=(2, 2, 3, 3))), KernelStack(rng.normal(size=(2, 2, 3, 3))))
    report = []
    out = lower_all(ModelGraph((3, 8, 8), [first, sc, last]), report)
    assert len(out.layers) == 5
    assert out.layers[0] == first and out.layers[-1] == last
    assert len(report) == 1 and "shortcut" in report[0]


def test_lower_all_mixed_graph(rng):
    sc = ShortcutBlock(KernelStack(rng.normal(size=(3, 3, 3, 3))), KernelStack(rng.normal(size=(3, 3, 3, 3))))
    dws = DepthwiseSeparable(rng.normal(size=(3, 3, 3)), rng.normal(size=(4, 3)), relu=True)
    g = ModelGraph((3, 7, 7), [sc, dws, FCHead(7, 4, [4, 4], 2)])
    out = lower_all(g)
    assert is_vgg_type(out)
    assert output_shape(out) == (2, 1, 1)
    assert lower_all(out) == out


def test_parameter_growth_of_shortcut(rng):
    n = 4
    b = ShortcutBlock(KernelStack(rng.normal(size=(n, n, 3, 3))), KernelStack(rng.normal(size=(n, n, 3, 3))))
    before = b.w1.weights.size + b.w2.weights.size
    after = sum(layer.kernels.weights.size for layer in lower_shortcut(b))
    assert before == 2 * 9 * n * n
    assert after == 9 * (2 * n * n + 2 * n * 2 * n + n * 2 * n)
