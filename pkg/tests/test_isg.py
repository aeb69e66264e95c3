import numpy as np
import pytest

from dsic.errors import ShapeMismatch
from dsic.gate import GateMode
from dsic.gradcheck import check_gradients
from dsic.isg import (
    StageBlocks,
    coarse_select,
    fine_select,
    init_coarse_params,
    isg_forward,
)
from dsic.tensor import Tape, Tensor, backward, elementwise, weighted_sum


def make_stage(rng, n_blocks, c=3, hw=4, stage=2, stride=1, n=1, grad=False):
    blocks = [Tensor(rng.normal(size=(n, c, hw, hw)), requires_grad=grad) for _ in range(n_blocks)]
    return StageBlocks(stage, blocks, stride)


def make_stages(rng, blocks=(2, 3, 4, 1), channels=(3, 4, 4, 5), size=8, n=1, stride=1, grad=False):
    return [
        make_stage(rng, nb, c, size >> s, s + 2, stride, n, grad)
        for s, (nb, c) in enumerate(zip(blocks, channels))
    ]


def params_for(rng, stages, gate_init="closed"):
    return [init_coarse_params(rng, s.shape[1], len(s.former_indices()), gate_init) for s in stages]


class TestStageBlocks:
    def test_blocks_share_shape(self, rng):
        with pytest.raises(ShapeMismatch):
            StageBlocks(2, [Tensor(np.zeros((1, 2, 4, 4))), Tensor(np.zeros((1, 3, 4, 4)))])

    @pytest.mark.parametrize(
        "n,stride,expected",
        [(1, 1, []), (3, 1, [0, 1]), (4, 2, [1]), (3, 2, [0]), (2, 2, [])],
    )
    def test_former_indices(self, rng, n, stride, expected):
        assert make_stage(rng, n, stride=stride).former_indices() == expected


class TestCoarse:
    def test_single_block_fuses_nothing(self, rng):
        res = coarse_select(make_stage(rng, 1), None)
        assert np.all(res.fused.data == 0.0)

    def test_closed_gates(self, rng):
        st = make_stage(rng, 3)
        res = coarse_select(st, None, force_b=0.0)
        assert np.all(res.fused.data == 0.0)

    def test_open_gates_sum_exactly(self, rng):
        st = make_stage(rng, 3)
        res = coarse_select(st, None, force_b=1.0)
        assert np.array_equal(res.fused.data, st.blocks[0].data + st.blocks[1].data)

    def test_param_count_checked(self, rng):
        st = make_stage(rng, 3)
        with pytest.raises(ShapeMismatch):
            coarse_select(st, init_coarse_params(rng, 3, 1))

    def test_default_init_starts_closed(self, rng):
        st = make_stage(rng, 3)
        res = coarse_select(st, init_coarse_params(rng, 3, 2, "zero"))
        assert all(np.all(s.squashed.data == 0.0) for s in res.b_signals)


class TestFine:
    def test_a_zero_keeps_last(self, rng):
        st = make_stage(rng, 2)
        cs = coarse_select(st, None, force_b=1.0)
        assert np.array_equal(fine_select(cs, st.last, force_a=0.0).selected.data, st.last.data)

    def test_a_one_keeps_coarse(self, rng):
        st = make_stage(rng, 2)
        cs = coarse_select(st, None, force_b=1.0)
        assert np.array_equal(fine_select(cs, st.last, force_a=1.0).selected.data, cs.fused.data)

    @pytest.mark.parametrize("mode", list(GateMode))
    def test_convex_combination(self, rng, mode):
        st = make_stage(rng, 3)
        cs = coarse_select(st, init_coarse_params(rng, 3, 2), mode=mode)
        fs = fine_select(cs, st.last, mode)
        a = fs.a_signal.data
        assert np.all((a >= 0) & (a < 1))
        np.testing.assert_allclose(fs.selected.data, a * cs.fused.data + (1 - a) * st.last.data, atol=1e-14)


class TestForward:
    def test_single_block_stages_are_noop(self, rng):
        stages = make_stages(rng, blocks=(1, 1, 1, 1))
        out, _ = isg_forward(stages, [None] * 4)
        assert all(np.array_equal(o.data, s.last.data) for o, s in zip(out, stages))

    def test_disable_fs_with_open_gates(self, rng):
        stages = make_stages(rng, blocks=(2, 2, 2, 2))
        out, _ = isg_forward(stages, [None] * 4, fs_enabled=False, force_b=1.0)
        for o, s in zip(out, stages):
            assert np.array_equal(o.data, s.blocks[0].data + s.blocks[1].data)

    @pytest.mark.parametrize("fs_enabled,force_a", [(False, None), (True, 0.0)])
    def test_closed_coarse_gates_reproduce_last_blocks(self, rng, fs_enabled, force_a):
        stages = make_stages(rng, blocks=(2, 3, 4, 3), n=2)
        out, _ = isg_forward(stages, params_for(rng, stages), fs_enabled=fs_enabled, force_b=0.0, force_a=force_a)
        assert all(np.array_equal(o.data, s.last.data) for o, s in zip(out, stages))

    def test_stage_parameters_are_independent(self, rng):
        stages = make_stages(rng, blocks=(3, 3, 3, 3))
        params = params_for(rng, stages)
        for p in params:
            p.proj[0].bias.data[:] = 0.5
        before, _ = isg_forward(stages, params)
        params[1].mix.weight.data += 0.3
        after, _ = isg_forward(stages, params)
        for s in (0, 2, 3):
            assert np.array_equal(before[s].data, after[s].data)
        assert not np.array_equal(before[1].data, after[1].data)

    def test_stride_two_skips_odd_blocks(self, rng):
        stages = make_stages(rng, blocks=(4, 4, 4, 4), stride=2, grad=True)
        params = params_for(rng, stages)
        for p in params:
            for q in p.proj:
                q.bias.data[:] = 0.5
        probes = [rng.normal(size=s.shape) for s in stages]
        with Tape() as tape:
            out, rec = isg_forward(stages, params)
            loss = weighted_sum(out[0], probes[0])
            for o, w in zip(out[1:], probes[1:]):
                loss = elementwise("add", loss, weighted_sum(o, w))
        g = backward(tape, loss)
        assert rec.b_blocks[0] == [2]
        for st in stages:
            assert g.get(st.blocks[0]) is None or np.all(g[st.blocks[0]] == 0.0)
            assert g.get(st.blocks[2]) is None or np.all(g[st.blocks[2]] == 0.0)
            assert np.any(g[st.blocks[1]] != 0.0)
            assert np.any(g[st.blocks[3]] != 0.0)

    def test_record_ranges(self, rng):
        stages = make_stages(rng, n=3)
        _, rec = isg_forward(stages, params_for(rng, stages))
        for b, a in zip(rec.b, rec.a):
            assert np.all((b >= 0) & (b <= 1))
            assert a is None or np.all((a >= 0) & (a <= 1))
        assert rec.a[3] is None  # single-block stage bypasses fine selection


def test_gradients(rng):
    stages = make_stages(rng, grad=True)
    params = params_for(rng, stages)
    for p in params:
        if p is not None:
            for q in p.proj:
                q.bias.data[:] = 0.5
    probes = [rng.normal(size=s.shape) for s in stages]

    def loss():
        out, _ = isg_forward(stages, params)
        total = weighted_sum(out[0], probes[0])
        for o, w in zip(out[1:], probes[1:]):
            total = elementwise("add", total, weighted_sum(o, w))
        return total

    tensors = [b for s in stages for b in s.blocks]
    tensors += [t for p in params if p is not None for q in [p.mix, *p.proj] for t in (q.weight, q.bias)]
    report = check_gradients(loss, tensors, rng, coords_per_tensor=4)
    assert report.ok(1e-4), report
