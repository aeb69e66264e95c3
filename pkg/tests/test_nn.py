import numpy as np
import pytest

from dsic import faults
from dsic.errors import DegenerateOutput, InvalidFactor, ShapeMismatch
from dsic.gradcheck import check_gradients
from dsic.nn import (
    ConvParams,
    bilinear_upsample,
    channel_l2_normalize,
    conv2d,
    f_down,
    f_up,
    global_pool,
    identity_center_conv,
    identity_conv,
    init_conv,
)
from dsic.oracles import naive_conv2d, reference_upsample
from dsic.tensor import Tensor, constant, weighted_sum

# hand-evaluated: 1-D samples of [0, 1] at centers -0.25 (clamped), 0.25, 0.75, 1.25 (clamped)
RAMP = np.array([0.0, 0.25, 0.75, 1.0])
HAND_2X2_UP = 2 * RAMP[:, None] + RAMP[None, :]


class TestConv:
    def test_identity_1x1(self, rng):
        x = Tensor(rng.normal(size=(2, 3, 5, 5)))
        assert np.array_equal(conv2d(x, identity_conv(3)).data, x.data)

    def test_stride_two_shape(self, rng):
        p = init_conv(rng, 2, 3, kernel=3, stride=2, padding=1)
        assert conv2d(Tensor(np.zeros((1, 2, 16, 16))), p).shape == (1, 3, 8, 8)

    @pytest.mark.parametrize("kernel,stride,padding", [(1, 1, 0), (3, 1, 1), (3, 2, 1), (3, 1, 0), (1, 2, 0)])
    def test_matches_naive_loops(self, rng, kernel, stride, padding):
        x = rng.normal(size=(2, 3, 7, 6))
        p = init_conv(rng, 3, 4, kernel=kernel, stride=stride, padding=padding)
        p.bias.data = rng.normal(size=(1, 4, 1, 1))
        ref = naive_conv2d(x, p.weight.data, p.bias.data, stride, padding)
        np.testing.assert_allclose(conv2d(Tensor(x), p).data, ref, rtol=0, atol=1e-10)

    def test_channel_mismatch(self, rng):
        with pytest.raises(ShapeMismatch):
            conv2d(Tensor(np.zeros((1, 2, 4, 4))), init_conv(rng, 3, 1))

    def test_degenerate_output(self, rng):
        with pytest.raises(DegenerateOutput):
            conv2d(Tensor(np.zeros((1, 1, 2, 2))), init_conv(rng, 1, 1, kernel=3, padding=0))

    def test_kernel_size_validated(self):
        with pytest.raises(ShapeMismatch):
            ConvParams(Tensor(np.zeros((1, 1, 5, 5))), Tensor(np.zeros((1, 1, 1, 1))), 1, 2)

    @pytest.mark.parametrize("kernel,stride", [(1, 1), (3, 1), (3, 2)])
    def test_gradients(self, rng, kernel, stride):
        x = Tensor(rng.normal(size=(2, 2, 5, 5)), requires_grad=True)
        p = init_conv(rng, 2, 3, kernel=kernel, stride=stride)
        w = rng.normal(size=conv2d(x, p).shape)
        report = check_gradients(lambda: weighted_sum(conv2d(x, p), w), [x, p.weight, p.bias], rng)
        assert report.ok(1e-4), report


class TestBilinear:
    def test_constant_stays_constant(self):
        out = bilinear_upsample(constant(3.5, (1, 2, 3, 3)), 2)
        assert out.shape == (1, 2, 6, 6)
        np.testing.assert_allclose(out.data, 3.5, rtol=0, atol=1e-15)

    def test_single_pixel_edge_clamp(self):
        out = bilinear_upsample(constant(-2.0, (1, 1, 1, 1)), 4)
        assert out.shape == (1, 1, 4, 4)
        assert np.all(out.data == -2.0)

    def test_hand_evaluated_2x2(self):
        x = Tensor(np.array([[0.0, 1.0], [2.0, 3.0]]).reshape(1, 1, 2, 2))
        np.testing.assert_allclose(bilinear_upsample(x, 2).data[0, 0], HAND_2X2_UP, rtol=0, atol=1e-15)

    @pytest.mark.parametrize("factor", [2, 4, 8])
    def test_matches_pointwise_oracle(self, rng, factor):
        x = rng.normal(size=(1, 2, 3, 4))
        np.testing.assert_allclose(
            bilinear_upsample(Tensor(x), factor).data, reference_upsample(x, factor), rtol=0, atol=1e-12
        )

    @pytest.mark.parametrize("factor", [0, 1, 3, 16])
    def test_invalid_factor(self, factor):
        with pytest.raises(InvalidFactor):
            bilinear_upsample(constant(1.0, (1, 1, 2, 2)), factor)

    def test_fault_corrupts_kernel(self):
        x = Tensor(np.array([[0.0, 1.0], [2.0, 3.0]]).reshape(1, 1, 2, 2))
        with faults.inject("bilinear"):
            bad = bilinear_upsample(x, 2).data[0, 0]
        assert not np.allclose(bad, HAND_2X2_UP)


class TestResampling:
    def test_f_down_shape(self, rng):
        ps = [init_conv(rng, 2, 2, kernel=3, stride=2) for _ in range(2)]
        assert f_down(Tensor(np.zeros((1, 2, 16, 16))), 2, ps).shape == (1, 2, 4, 4)

    def test_f_down_identity_center_keeps_constants(self):
        ps = [identity_center_conv(3)]
        out = f_down(constant(1.25, (1, 3, 8, 8)), 1, ps)
        assert np.all(out.data == 1.25)

    def test_f_down_is_composition(self, rng):
        x = Tensor(rng.normal(size=(1, 2, 8, 8)))
        ps = [init_conv(rng, 2, 2, kernel=3, stride=2) for _ in range(2)]
        np.testing.assert_array_equal(f_down(x, 2, ps).data, conv2d(conv2d(x, ps[0]), ps[1]).data)

    def test_f_down_needs_one_conv_per_octave(self, rng):
        with pytest.raises(ValueError):
            f_down(Tensor(np.zeros((1, 2, 8, 8))), 2, [init_conv(rng, 2, 2, kernel=3, stride=2)])

    @pytest.mark.parametrize("t,size", [(1, 4), (3, 2)])
    def test_f_up_shape(self, t, size):
        assert f_up(constant(0.0, (1, 1, size, size)), t).shape == (1, 1, size << t, size << t)

    def test_f_up_is_repeated_octaves(self, rng):
        x = Tensor(rng.normal(size=(1, 2, 3, 3)))
        twice = bilinear_upsample(bilinear_upsample(x, 2), 2)
        np.testing.assert_allclose(f_up(x, 2).data, twice.data, rtol=0, atol=1e-14)

    def test_f_up_differs_from_single_wide_step(self):
        # one x4 step and two x2 steps disagree near the borders
        x = Tensor(np.array([0.0, 1.0]).reshape(1, 1, 1, 2))
        x = Tensor(np.repeat(x.data, 2, axis=2))
        assert not np.allclose(f_up(x, 2).data, bilinear_upsample(x, 4).data)


class TestPooling:
    @pytest.mark.parametrize("kind", ["avg", "max"])
    def test_constant(self, kind):
        assert np.all(global_pool(kind, constant(0.3, (2, 3, 4, 4))).data == 0.3)

    def test_average(self):
        x = Tensor(np.array([[1.0, 3.0], [5.0, 7.0]]).reshape(1, 1, 2, 2))
        assert global_pool("avg", x).data.item() == 4.0

    def test_max_routes_to_first_maximum(self):
        x = Tensor(np.array([[2.0, 5.0], [5.0, 1.0]]).reshape(1, 1, 2, 2), requires_grad=True)
        from dsic.tensor import Tape, backward, sum_all

        with Tape() as tape:
            loss = sum_all(global_pool("max", x))
        np.testing.assert_array_equal(backward(tape, loss)[x][0, 0], [[0.0, 1.0], [0.0, 0.0]])

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            global_pool("median", constant(0.0, (1, 1, 2, 2)))


class TestNormalize:
    def test_unit_norm(self, rng):
        out = channel_l2_normalize(Tensor(rng.normal(size=(2, 5, 3, 3)))).data
        np.testing.assert_allclose(np.sqrt((out**2).sum(axis=1)), 1.0, atol=1e-5)

    def test_zero_is_safe(self):
        assert np.all(channel_l2_normalize(constant(0.0, (1, 3, 2, 2))).data == 0.0)

    def test_gradient(self, rng):
        x = Tensor(rng.normal(size=(1, 3, 3, 3)) + 1.0, requires_grad=True)
        w = rng.normal(size=x.shape)
        report = check_gradients(lambda: weighted_sum(channel_l2_normalize(x), w), [x], rng)
        assert report.ok(1e-4), report
