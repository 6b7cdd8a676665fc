import numpy as np
import pytest

from denseprop import fixtures
from denseprop.backward import (ErrorMask, apply_mask, avgpool_backward,
                                conv_backward_data, conv_backward_kernel,
                                dense_backward, maxpool_backward,
                                nonlin_backward)
from denseprop.forward import (dense_forward, dilated_avgpool_forward,
                               dilated_conv_forward, dilated_maxpool_forward,
                               nonlin_forward)
from denseprop.netspec import ConvLayerSpec, PoolLayerSpec, parse_spec, seeded_weights
from denseprop.oracle import patch_backward_batch
from denseprop.plan import DilatedConv, DilatedPool, compile_plan

STEP = 1e-5


def conv_layer(out, inc, k, d, seed=0):
    w, b = seeded_weights(out, inc, k, seed)
    return DilatedConv(ConvLayerSpec(out, inc, k, 1, w, b, weights_source=f"seed:{seed}"), d)


def pool_layer(kind, p, d):
    return DilatedPool(PoolLayerSpec(kind, p, 1), d)


def directional_fd(f, x, direction, step=STEP):
    """Central finite difference of scalar f(x) along `direction`."""
    return (f(x + step * direction) - f(x - step * direction)) / (2 * step)


class TestConvBackwardData:
    def test_one_by_one_kernel_scales_delta(self):
        layer = conv_layer(1, 1, 1, 3)
        w = layer.base.weights[0, 0, 0, 0]
        delta = np.random.default_rng(0).normal(size=(1, 4, 4))
        dx = conv_backward_data(delta, layer)
        assert dx.shape == delta.shape
        assert np.allclose(dx, w * delta, rtol=0, atol=0)

    def test_single_output_pixel_footprint(self):
        # one nonzero delta spreads onto the 4 taps of a 2x2 kernel
        layer = conv_layer(1, 1, 2, 1, seed=3)
        delta = np.zeros((1, 3, 3))
        delta[0, 1, 2] = 1.0
        dx = conv_backward_data(delta, layer)
        assert dx.shape == (1, 4, 4)
        w = layer.base.weights[0, 0]
        expected = np.zeros((1, 4, 4))
        for i in range(2):
            for j in range(2):
                expected[0, 1 + i, 2 + j] = w[i, j]
        assert np.array_equal(dx, expected)
        assert np.count_nonzero(dx) == 4

    def test_matches_transpose_jacobian_fd(self):
        rng = np.random.default_rng(1)
        layer = conv_layer(2, 3, 3, 2, seed=7)
        x = rng.normal(size=(3, 8, 8))
        delta = rng.normal(size=(2, 4, 4))
        direction = rng.normal(size=x.shape)

        def loss(xv):
            return float(np.sum(dilated_conv_forward(xv, layer) * delta))

        analytic = float(np.sum(conv_backward_data(delta, layer) * direction))
        fd = directional_fd(loss, x, direction)
        assert analytic == pytest.approx(fd, rel=1e-8)


class TestConvBackwardKernel:
    def test_zero_delta_zero_gradients(self):
        layer = conv_layer(2, 2, 2, 2)  # extent 3, so 7x7 input -> 5x5 output
        x = np.random.default_rng(2).normal(size=(2, 7, 7))
        dw, db = conv_backward_kernel(x, np.zeros((2, 5, 5)), layer)
        assert not dw.any() and not db.any()
        assert dw.shape == layer.base.weights.shape

    @pytest.mark.parametrize("dilation", [1, 2, 3])
    def test_constant_inputs_count_output_positions(self, dilation):
        layer = conv_layer(1, 1, 2, dilation)
        e = layer.extent
        x = np.ones((1, 10, 10))
        ho = 10 - e + 1
        dw, db = conv_backward_kernel(x, np.ones((1, ho, ho)), layer)
        assert np.all(dw == ho * ho)
        assert np.all(db == ho * ho)

    def test_matches_finite_differences_per_entry(self):
        rng = np.random.default_rng(3)
        layer = conv_layer(2, 2, 3, 2, seed=11)
        x = rng.normal(size=(2, 9, 9))
        delta = rng.normal(size=(2, 5, 5))
        dw, db = conv_backward_kernel(x, delta, layer)
        w = layer.base.weights

        def loss():
            return float(np.sum(dilated_conv_forward(x, layer) * delta))

        for idx in [(0, 0, 0, 0), (1, 1, 2, 2), (0, 1, 1, 0), (1, 0, 0, 2)]:
            keep = w[idx]
            w[idx] = keep + STEP
            up = loss()
            w[idx] = keep - STEP
            down = loss()
            w[idx] = keep
            fd = (up - down) / (2 * STEP)
            assert abs(dw[idx] - fd) / max(abs(fd), 1e-12) < 1e-4
        for o in range(2):
            keep = layer.base.bias[o]
            layer.base.bias[o] = keep + STEP
            up = loss()
            layer.base.bias[o] = keep - STEP
            down = loss()
            layer.base.bias[o] = keep
            fd = (up - down) / (2 * STEP)
            assert abs(db[o] - fd) / max(abs(fd), 1e-12) < 1e-4

    def test_gradients_shaped_like_original_kernel(self):
        # dilation 4 stores nothing for the inserted zero rows/columns
        layer = conv_layer(3, 2, 3, 4)
        x = np.random.default_rng(4).normal(size=(2, 12, 12))
        delta = np.random.default_rng(5).normal(size=(3, 4, 4))
        dw, db = conv_backward_kernel(x, delta, layer)
        assert dw.shape == (3, 2, 3, 3)
        assert db.shape == (3,)


class TestMaxPoolBackward:
    def test_all_argmax_at_first_tap(self):
        layer = pool_layer("max", 2, 1)
        delta = np.ones((1, 3, 3))
        arg = np.zeros((1, 3, 3), dtype=np.int32)
        dx = maxpool_backward(delta, arg, layer)
        expected = np.zeros((1, 4, 4))
        expected[0, :3, :3] = 1.0
        assert np.array_equal(dx, expected)

    def test_zero_delta(self):
        layer = pool_layer("max", 3, 2)
        delta = np.zeros((2, 4, 4))
        arg = np.zeros((2, 4, 4), dtype=np.int32)
        assert not maxpool_backward(delta, arg, layer).any()

    def test_overlap_accumulates_instead_of_overwriting(self):
        # stride-1 windows overlap: one input pixel can win several windows
        layer = pool_layer("max", 2, 1)
        x = np.zeros((1, 3, 3))
        x[0, 1, 1] = 5.0  # wins all four 2x2 windows
        y, arg = dilated_maxpool_forward(x, layer)
        assert np.all(y == 5.0)
        delta = np.ones((1, 2, 2))
        dx = maxpool_backward(delta, arg, layer)
        assert dx[0, 1, 1] == 4.0  # += from all four windows
        assert dx.sum() == 4.0

    def test_matches_finite_differences(self):
        rng = np.random.default_rng(6)
        layer = pool_layer("max", 2, 2)
        x = rng.normal(size=(2, 6, 6))
        y, arg = dilated_maxpool_forward(x, layer)
        delta = rng.normal(size=y.shape)
        direction = rng.normal(size=x.shape)

        def loss(xv):
            out, _ = dilated_maxpool_forward(xv, layer)
            return float(np.sum(out * delta))

        analytic = float(np.sum(maxpool_backward(delta, arg, layer) * direction))
        fd = directional_fd(loss, x, direction)
        assert analytic == pytest.approx(fd, rel=1e-6)


class TestAvgPoolBackward:
    def test_p_one_is_identity(self):
        layer = pool_layer("avg", 1, 3)
        delta = np.random.default_rng(7).normal(size=(2, 5, 5))
        assert np.array_equal(avgpool_backward(delta, layer), delta)

    def test_quarter_shares(self):
        layer = pool_layer("avg", 2, 1)
        dx = avgpool_backward(np.ones((1, 1, 1)), layer)
        assert np.array_equal(dx, np.full((1, 2, 2), 0.25))

    def test_matches_finite_differences(self):
        rng = np.random.default_rng(8)
        layer = pool_layer("avg", 2, 3)
        x = rng.normal(size=(1, 8, 8))
        y = dilated_avgpool_forward(x, layer)
        delta = rng.normal(size=y.shape)
        direction = rng.normal(size=x.shape)

        def loss(xv):
            return float(np.sum(dilated_avgpool_forward(xv, layer) * delta))

        analytic = float(np.sum(avgpool_backward(delta, layer) * direction))
        fd = directional_fd(loss, x, direction)
        assert analytic == pytest.approx(fd, rel=1e-8)


class TestNonlinBackward:
    def test_identity_passes_through(self):
        delta = np.random.default_rng(9).normal(size=(1, 3, 3))
        x = np.random.default_rng(10).normal(size=(1, 3, 3))
        assert np.array_equal(nonlin_backward(delta, x, "identity"), delta)

    def test_tanh_prime_at_zero_is_one(self):
        delta = np.random.default_rng(11).normal(size=(2, 2, 2))
        assert np.array_equal(nonlin_backward(delta, np.zeros((2, 2, 2)), "tanh"), delta)

    def test_relu_prime_at_zero_is_zero(self):
        delta = np.ones((1, 2, 2))
        x = np.array([[[0.0, -1.0], [2.0, 0.0]]])
        dx = nonlin_backward(delta, x, "relu")
        assert np.array_equal(dx, np.array([[[0.0, 0.0], [1.0, 0.0]]]))

    def test_matches_finite_differences(self):
        rng = np.random.default_rng(12)
        x = rng.normal(size=(1, 5, 5))
        delta = rng.normal(size=(1, 5, 5))
        direction = rng.normal(size=x.shape)
        for kind in ("tanh", "identity"):
            def loss(xv):
                return float(np.sum(nonlin_forward(xv, kind) * delta))
            analytic = float(np.sum(nonlin_backward(delta, x, kind) * direction))
            assert analytic == pytest.approx(directional_fd(loss, x, direction), rel=1e-7)


class TestApplyMask:
    def test_full_mask_is_identity(self):
        delta = np.random.default_rng(13).normal(size=(3, 4, 5))
        mask = ErrorMask.full(4, 5)
        assert np.array_equal(apply_mask(delta, mask), delta)

    def test_empty_mask_zeroes_everything(self):
        delta = np.ones((2, 3, 3))
        mask = ErrorMask.of(3, 3, [])
        assert not apply_mask(delta, mask).any()

    def test_single_pixel_keeps_channel_column(self):
        delta = np.random.default_rng(14).normal(size=(3, 4, 4))
        mask = ErrorMask.of(4, 4, [(0, 0)])
        out = apply_mask(delta, mask)
        assert np.array_equal(out[:, 0, 0], delta[:, 0, 0])
        out[:, 0, 0] = 0
        assert not out.any()

    def test_out_of_bounds_pixel_rejected(self):
        with pytest.raises(ValueError):
            ErrorMask.of(4, 4, [(4, 0)])

    def test_mask_parse(self):
        mask = ErrorMask.parse("1 2\n3 0\n", 4, 4)
        assert mask.selected == {(1, 2), (3, 0)}
        assert len(ErrorMask.parse("all", 3, 3)) == 9


class TestDenseBackward:
    @pytest.fixture()
    def setup(self):
        spec = parse_spec(fixtures.plain_cnn1_text(3, channels=(4, 4, 2), pool1=(2, 2)))
        plan = compile_plan(spec)
        rng = np.random.default_rng(15)
        img = rng.uniform(-0.5, 0.5, (3, 8, 8))
        cache = dense_forward(plan, img)
        delta = rng.uniform(-1, 1, cache.output.shape)
        return spec, plan, img, cache, delta

    def test_empty_mask_gives_zero_gradients(self, setup):
        spec, plan, img, cache, delta = setup
        grads = dense_backward(plan, cache, delta, ErrorMask.of(8, 8, []))
        assert grads.max_abs() == 0.0

    def test_full_mask_matches_summed_patch_gradients(self, setup):
        spec, plan, img, cache, delta = setup
        grads = dense_backward(plan, cache, delta, ErrorMask.full(8, 8))
        pixels = [(y, x) for y in range(8) for x in range(8)]
        patch = patch_backward_batch(spec, img, pixels,
                                     [delta[:, y, x] for y, x in pixels])
        assert grads.max_abs_diff(patch) < 1e-10

    def test_three_pixel_mask_matches_three_patches(self, setup):
        spec, plan, img, cache, delta = setup
        pixels = [(0, 0), (5, 2), (7, 7)]
        grads = dense_backward(plan, cache, delta, ErrorMask.of(8, 8, pixels))
        patch = patch_backward_batch(spec, img, pixels,
                                     [delta[:, y, x] for y, x in pixels])
        assert grads.max_abs_diff(patch) < 1e-10

    def test_disjoint_masks_add(self, setup):
        spec, plan, img, cache, delta = setup
        a = [(0, 0), (1, 3), (4, 4)]
        b = [(2, 2), (7, 1)]
        ga = dense_backward(plan, cache, delta, ErrorMask.of(8, 8, a))
        gb = dense_backward(plan, cache, delta, ErrorMask.of(8, 8, b))
        gu = dense_backward(plan, cache, delta, ErrorMask.of(8, 8, a + b))
        assert gu.max_abs_diff(ga + gb) < 1e-10

    def test_shape_mismatch_rejected(self, setup):
        spec, plan, img, cache, delta = setup
        with pytest.raises(ValueError):
            dense_backward(plan, cache, delta[:, :4, :4], ErrorMask.full(8, 8))
        with pytest.raises(ValueError):
            dense_backward(plan, cache, delta, ErrorMask.full(4, 4))

    def test_gradients_finite(self, setup):
        spec, plan, img, cache, delta = setup
        grads = dense_backward(plan, cache, delta, ErrorMask.full(8, 8))
        for arr in grads.kernel + grads.bias:
            if arr is not None:
                assert np.isfinite(arr).all()

    def test_input_delta_on_request(self, setup):
        spec, plan, img, cache, delta = setup
        grads = dense_backward(plan, cache, delta, ErrorMask.full(8, 8))
        assert grads.input_delta is None
        grads = dense_backward(plan, cache, delta, ErrorMask.full(8, 8),
                               with_input_grad=True)
        assert grads.input_delta is not None
        assert grads.input_delta.shape == img.shape
        # directional finite-difference through the whole dense net
        rng = np.random.default_rng(16)
        direction = rng.normal(size=img.shape)

        def loss(imgv):
            return float(np.sum(dense_forward(plan, imgv).output * delta))

        analytic = float(np.sum(grads.input_delta * direction))
        fd = directional_fd(loss, img, direction)
        assert analytic == pytest.approx(fd, rel=1e-5)
