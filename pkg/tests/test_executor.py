import numpy as np
import pytest

from dsa_forge import surgery
from dsa_forge.executor import compare, preprocess, run_quantized, run_reference, tile_grid
from dsa_forge.graph import (Conv3x3, DepthwiseSeparable, FCHead, GraphError, ModelGraph,
                             ShortcutBlock)
from dsa_forge.surgery import impulse_block
from dsa_forge.tensor import KernelStack
from dsa_forge.zoo import vgg_graph


def identity_model(c=3, hw=8, relu=True):
    return ModelGraph((c, hw, hw), [Conv3x3(KernelStack(impulse_block(c)), relu=relu)])


def exact_image(rng, shape):
    # k/16 with k < 16 sits on the unsigned activation grid
    return (rng.integers(0, 16, shape) * 16).astype(np.uint8)


def test_reference_identity(rng):
    img = rng.integers(0, 256, (3, 8, 8), dtype=np.uint8)
    out = run_reference(identity_model(), img)
    assert np.array_equal(out, img / 256.0)


def test_reference_head_output_shape(rng):
    stages = (KernelStack(rng.normal(size=(32, 4, 3, 3))), KernelStack(rng.normal(size=(32, 32, 3, 3))),
              KernelStack(rng.normal(size=(2, 32, 3, 3))))
    g = ModelGraph((4, 7, 7), [FCHead(7, 4, [32, 32], 2, stages)])
    out = run_reference(g, rng.uniform(size=(4, 7, 7)))
    assert out.shape == (2, 1, 1)
    lowered = surgery.lower_all(g)
    x = rng.uniform(size=(4, 7, 7))
    assert np.abs(run_reference(lowered, x) - run_reference(g, x)).max() <= 1e-12


def test_reference_lowered_composites_agree(rng):
    n = 3
    g = ModelGraph((n, 8, 8), [
        Conv3x3(KernelStack(rng.normal(size=(n, n, 3, 3)), rng.normal(size=n))),
        ShortcutBlock(KernelStack(rng.normal(size=(n, n, 3, 3))), KernelStack(rng.normal(size=(n, n, 3, 3)))),
        DepthwiseSeparable(rng.normal(size=(n, 3, 3)), rng.normal(size=(5, n)), relu=True),
    ])
    x = rng.uniform(size=(n, 8, 8))
    direct = run_reference(g, x)
    lowered = run_reference(surgery.lower_all(g), x)
    assert np.abs(direct - lowered).max() <= 1e-12


def test_reference_shape_mismatch():
    with pytest.raises(GraphError, match="does not match"):
        run_reference(identity_model(), np.zeros((3, 9, 8), np.uint8))


def test_preprocess():
    assert preprocess(np.array([255], np.uint8))[0] == 255 / 256
    assert preprocess(np.array([0.3]))[0] == 0.3


@pytest.mark.parametrize("hw,tiles", [(14, 1), (15, 4), (28, 4), (224, 256)])
def test_tile_grid(hw, tiles):
    ny, nx = tile_grid(hw, hw)
    assert ny * nx == tiles


def test_quantized_tiled_matches_untiled(rng):
    g = vgg_graph([4, "M", 3], input_shape=(2, 28, 28), rng=rng, scale=0.3)
    img = rng.integers(0, 256, (2, 28, 28), dtype=np.uint8)
    tiled = run_quantized(g, img)
    direct = run_quantized(g, img, tiled=False)
    assert tiled.tiles == [4, 1]
    assert np.array_equal(tiled.output.steps, direct.output.steps)
    assert tiled.output.values().shape == (3, 14, 14)


def test_quantized_zero_image():
    g = vgg_graph([4], input_shape=(1, 28, 28), rng=np.random.default_rng(0))
    out = run_quantized(g, np.zeros((1, 28, 28), np.uint8))
    assert not out.output.values().any()


def test_quantized_exact_toy_model(rng):
    g = identity_model(3, 20)
    img = exact_image(rng, (3, 20, 20))
    q = run_quantized(g, img)
    r = run_reference(g, img)
    assert compare(q.output.values(), r).max_abs == 0.0


def test_quantized_threads_identical(rng):
    g = vgg_graph([3], input_shape=(2, 30, 30), rng=rng, scale=0.3)
    img = rng.integers(0, 256, (2, 30, 30), dtype=np.uint8)
    a = run_quantized(g, img, threads=1)
    b = run_quantized(g, img, threads=4)
    assert np.array_equal(a.output.steps, b.output.steps)
    assert a.engine_steps == b.engine_steps == 9 * 16


def test_quantized_close_to_reference(rng):
    g = vgg_graph([8, 8], input_shape=(3, 16, 16), rng=rng, scale=0.2)
    img = rng.integers(0, 256, (3, 16, 16), dtype=np.uint8)
    ref = run_reference(g, img)
    err = compare(run_quantized(g, img).output.values(), ref)
    # a few units in the last place of a 4-5 bit mantissa, per layer
    assert err.max_abs < 0.1 * np.abs(ref).max()
    assert err.mean_abs < 0.02 * np.abs(ref).max()


def test_quantized_needs_vgg_type(rng):
    n = 2
    g = ModelGraph((n, 8, 8), [ShortcutBlock(KernelStack(np.zeros((n, n, 3, 3))),
                                             KernelStack(np.zeros((n, n, 3, 3))))])
    with pytest.raises(GraphError, match="lowering"):
        run_quantized(g, np.zeros((n, 8, 8), np.uint8))


def test_linear_last_layer_is_signed(rng):
    q = run_quantized(identity_model(2, 8, relu=False), exact_image(rng, (2, 8, 8)))
    assert q.output.signed


def test_compare_examples():
    a = np.array([1.0, 2.0, 0.0])
    r = compare(a, np.array([1.0, 2.5, 0.0]))
    assert r.max_abs == 0.5 and r.max_rel == pytest.approx(0.2)
    assert r.argmax_agree is None
    assert compare(a, a).summary().startswith("max_abs 0\n")
    heads = compare(np.array([1.0, 3.0]).reshape(2, 1, 1), np.array([2.0, 1.0]).reshape(2, 1, 1))
    assert heads.argmax_agree is False
    with pytest.raises(ValueError):
        compare(a, a[:2])


def test_pixel_change_stays_local(rng):
    g = ModelGraph((1, 12, 12), [Conv3x3(KernelStack(np.full((1, 1, 3, 3), 0.125)), relu=False)])
    img = exact_image(rng, (1, 12, 12))
    base = run_quantized(g, img).output.steps[0]
    img[0, 6, 6] = 17
    moved = run_quantized(g, img).output.steps[0]
    rows, cols = np.nonzero(base != moved)
    assert len(rows) > 0
    assert all(5 <= r <= 7 and 5 <= c <= 7 for r, c in zip(rows, cols))
