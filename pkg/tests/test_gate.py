import math

import numpy as np
import pytest

from dsic.errors import ConfigError, ShapeMismatch
from dsic.gate import GateMode, forced_signal, gate_apply, gate_openness, make_signals
from dsic.nn import identity_conv, init_conv
from dsic.tensor import Tape, Tensor, backward, constant, sum_all


def raw(value, c=1):
    return Tensor(np.full((1, c, 1, 1), float(value)), requires_grad=True)


class TestGateMode:
    @pytest.mark.parametrize(
        "text,mode",
        [("softmax", GateMode.SOFTMAX_GROUP), ("tanh", GateMode.RECTIFIED_TANH), ("sigmoid", GateMode.SIGMOID)],
    )
    def test_aliases(self, text, mode):
        assert GateMode.parse(text) is mode

    def test_unknown(self):
        with pytest.raises(ConfigError):
            GateMode.parse("relu6")


class TestGateApply:
    def test_closed_gate_annihilates(self, rng):
        x = Tensor(rng.normal(size=(1, 3, 4, 4)))
        out = gate_apply(forced_signal(0.0, (1, 3, 1, 1)), x)
        assert np.all(out.data == 0.0)

    def test_saturated_gate_passes_input(self, rng):
        x = Tensor(rng.normal(size=(1, 2, 3, 3)))
        sig = make_signals([raw(30.0, 2)], GateMode.RECTIFIED_TANH)[0]
        np.testing.assert_allclose(gate_apply(sig, x, [identity_conv(2)]).data, x.data, atol=1e-12)

    def test_scalar_oracle(self):
        sig = make_signals([raw(1.0)], GateMode.RECTIFIED_TANH)[0]
        out = gate_apply(sig, constant(2.0, (1, 1, 1, 1)), [identity_conv(1)])
        # frozen from 2 * math.tanh(1.0)
        assert out.data.item() == pytest.approx(1.5231883119115297, abs=1e-15)
        assert out.data.item() == pytest.approx(2 * math.tanh(1.0), abs=1e-15)

    def test_outer_placement_squashes_product(self):
        sig = make_signals([raw(-1.0)], GateMode.RECTIFIED_TANH)[0]
        out = gate_apply(sig, constant(-2.0, (1, 1, 1, 1)), placement="outer")
        assert out.data.item() == pytest.approx(math.tanh(2.0))

    def test_outer_softmax_rejected(self):
        sig = make_signals([raw(0.0)], GateMode.SOFTMAX_GROUP)[0]
        with pytest.raises(ConfigError):
            gate_apply(sig, constant(1.0, (1, 1, 1, 1)), mode=GateMode.SOFTMAX_GROUP, placement="outer")

    def test_unknown_placement(self):
        with pytest.raises(ConfigError):
            gate_apply(forced_signal(1.0, (1, 1, 1, 1)), constant(1.0, (1, 1, 2, 2)), placement="inner")

    def test_signal_width_checked(self):
        with pytest.raises(ShapeMismatch):
            gate_apply(forced_signal(1.0, (1, 2, 1, 1)), constant(1.0, (1, 3, 2, 2)))

    def test_adapter_changes_width(self, rng):
        out = gate_apply(forced_signal(1.0, (1, 5, 1, 1)), constant(1.0, (1, 3, 2, 2)), [init_conv(rng, 3, 5)])
        assert out.shape == (1, 5, 2, 2)

    def test_closed_gate_kills_gradient(self, rng):
        x = Tensor(rng.normal(size=(1, 2, 3, 3)), requires_grad=True)
        eps = Tensor(np.full((1, 2, 1, 1), -8.0), requires_grad=True)
        with Tape() as tape:
            sig = make_signals([eps], GateMode.RECTIFIED_TANH)[0]
            loss = sum_all(gate_apply(sig, x))
        g = backward(tape, loss)
        assert np.all(g[x] == 0.0)
        assert np.all(g[eps] == 0.0)


class TestOpenness:
    def test_closed(self):
        assert np.all(gate_openness(forced_signal(0.0, (2, 3, 1, 1))) == 0.0)

    def test_saturated(self):
        value = gate_openness(make_signals([raw(10.0)], GateMode.RECTIFIED_TANH)[0]).item()
        assert 0.99 < value < 1.0

    def test_softmax_group_of_equal_signals(self):
        sigs = make_signals([raw(0.7) for _ in range(4)], GateMode.SOFTMAX_GROUP)
        assert all(gate_openness(s).item() == pytest.approx(0.25) for s in sigs)
