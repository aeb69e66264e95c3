"""Named oracle and property checks run by ``dsic verify``.

Each check returns ``(passed, detail)``. Gradient checks run first, then the
connector equivalences, then the kernel oracles and invariants.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .config import RunConfig
from .csg import CSGForcing, ccu, csg_forward, init_csg_params, build_lattice, project_inputs
from .gate import GateMode, gate_apply, make_signals
from .gradcheck import check_gradients
from .isg import StageBlocks, init_coarse_params, isg_forward
from .model import heatmap_loss, init_model, model_forward, named_tensors
from .nn import (
    bilinear_upsample,
    channel_l2_normalize,
    conv2d,
    f_down,
    f_up,
    global_pool,
    identity_conv,
    init_conv,
)
from .oracles import naive_conv2d, reference_f_up, reference_upsample
from .pyramids import FPNParams, fc_fpn_forward, fpn_forward
from .synth import generate_sample
from .tensor import (
    Tape,
    Tensor,
    activation,
    backward,
    concat_channels,
    elementwise,
    mean_all,
    mse,
    softmax_over_group,
    split_channels,
    weighted_sum,
)
from .train import stack_batch

UNIT_TOL = 1e-4
E2E_TOL = 1e-3
EQUIV_TOL = 1e-9
GRAD_SEEDS = (1, 2, 3)


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float


def _away_from_zero(rng, shape, margin=0.1):
    v = rng.normal(size=shape)
    return np.sign(v) * (margin + np.abs(v))


def _leaf(arr, name=None) -> Tensor:
    return Tensor(np.array(arr, dtype=np.float64), requires_grad=True, name=name)


def _probe(rng, shape):
    return rng.normal(size=shape)


def _worst(reports) -> tuple[float, str]:
    worst = max(reports, key=lambda r: r[1].max_rel_err)
    return worst[1].max_rel_err, f"{worst[0]}: {worst[1].worst}"


def _grad_cases(cases, tol) -> tuple[bool, str]:
    reports = []
    for label, build in cases:
        for seed in GRAD_SEEDS:
            rng = np.random.default_rng(seed)
            loss_fn, tensors = build(rng)
            reports.append((f"{label}[seed {seed}]", check_gradients(loss_fn, tensors, rng)))
    err, where = _worst(reports)
    checked = sum(r.checked for _, r in reports)
    skipped = sum(r.skipped for _, r in reports)
    return err <= tol, f"max rel err {err:.2e} over {checked} coords, {skipped} kink-straddling skipped (worst {where})"


# ---------------------------------------------------------------- gradient checks


def check_grad_tensor_ops():
    def elementwise_case(kind, b_shape):
        def build(rng):
            a = _leaf(rng.normal(size=(2, 3, 4, 4)), "a")
            b = _leaf(rng.normal(size=b_shape), "b")
            w = _probe(rng, a.shape)
            return (lambda: weighted_sum(elementwise(kind, a, b), w)), [a, b]
        return build

    def activation_case(kind):
        def build(rng):
            x = _leaf(_away_from_zero(rng, (2, 3, 4, 4)), "x")
            w = _probe(rng, x.shape)
            return (lambda: weighted_sum(activation(kind, x), w)), [x]
        return build

    def softmax_case(rng):
        xs = [_leaf(rng.normal(size=(2, 3, 2, 2)), f"x{i}") for i in range(4)]
        ws = [_probe(rng, x.shape) for x in xs]

        def loss():
            outs = softmax_over_group(xs)
            return weighted_sum(concat_channels(outs), np.concatenate(ws, axis=1))
        return loss, xs

    def concat_split_case(rng):
        a = _leaf(rng.normal(size=(1, 2, 3, 3)), "a")
        b = _leaf(rng.normal(size=(1, 3, 3, 3)), "b")
        w = [_probe(rng, (1, 1, 3, 3)), _probe(rng, (1, 4, 3, 3))]

        def loss():
            p, q = split_channels(concat_channels([a, b]), [1, 4])
            return weighted_sum(concat_channels([p, q]), np.concatenate(w, axis=1))
        return loss, [a, b]

    def reduce_case(rng):
        a = _leaf(rng.normal(size=(2, 2, 3, 3)), "a")
        t = _leaf(rng.normal(size=(2, 2, 3, 3)), "t")
        return (lambda: elementwise("add", mse(a, t), mean_all(a))), [a, t]

    cases = [
        ("add", elementwise_case("add", (2, 3, 4, 4))),
        ("sub/broadcast", elementwise_case("sub", (1, 3, 1, 1))),
        ("hadamard/channel", elementwise_case("hadamard", (2, 3, 1, 1))),
        ("hadamard/map", elementwise_case("hadamard", (2, 1, 4, 4))),
        ("softmax_group", softmax_case),
        ("concat/split", concat_split_case),
        ("mse/mean", reduce_case),
    ] + [(f"act/{k}", activation_case(k)) for k in ("tanh", "sigmoid", "relu", "rectified_tanh")]
    return _grad_cases(cases, UNIT_TOL)


def check_grad_nn_ops():
    def conv_case(k, stride, pad):
        def build(rng):
            x = _leaf(rng.normal(size=(2, 3, 6, 6)), "x")
            p = init_conv(rng, 3, 4, kernel=k, stride=stride, padding=pad)
            p.weight.name, p.bias.name = "weight", "bias"
            w = _probe(rng, conv2d(x, p).shape)
            return (lambda: weighted_sum(conv2d(x, p), w)), [x, p.weight, p.bias]
        return build

    def up_case(factor):
        def build(rng):
            x = _leaf(rng.normal(size=(1, 2, 3, 3)), "x")
            w = _probe(rng, (1, 2, 3 * factor, 3 * factor))
            return (lambda: weighted_sum(bilinear_upsample(x, factor), w)), [x]
        return build

    def f_up_case(rng):
        x = _leaf(rng.normal(size=(1, 2, 2, 2)), "x")
        w = _probe(rng, (1, 2, 16, 16))
        return (lambda: weighted_sum(f_up(x, 3), w)), [x]

    def f_down_case(rng):
        x = _leaf(rng.normal(size=(1, 2, 8, 8)), "x")
        ps = [init_conv(rng, 2, 2, kernel=3, stride=2, padding=1) for _ in range(2)]
        w = _probe(rng, (1, 2, 2, 2))
        return (lambda: weighted_sum(f_down(x, 2, ps), w)), [x, ps[0].weight, ps[1].weight]

    def pool_case(kind):
        def build(rng):
            # distinct entries spaced well beyond eps so the argmax never flips
            vals = rng.permutation(36).astype(float).reshape(1, 1, 6, 6) * 0.1
            x = _leaf(np.concatenate([vals, -vals], axis=1), "x")
            w = _probe(rng, (1, 2, 1, 1))
            return (lambda: weighted_sum(global_pool(kind, x), w)), [x]
        return build

    def norm_case(rng):
        x = _leaf(rng.normal(size=(2, 3, 4, 4)), "x")
        w = _probe(rng, x.shape)
        return (lambda: weighted_sum(channel_l2_normalize(x), w)), [x]

    cases = [
        ("conv1x1", conv_case(1, 1, 0)),
        ("conv3x3", conv_case(3, 1, 1)),
        ("conv3x3/s2", conv_case(3, 2, 1)),
        ("bilinear x2", up_case(2)),
        ("bilinear x4", up_case(4)),
        ("f_up t=3", f_up_case),
        ("f_down t=2", f_down_case),
        ("gap", pool_case("avg")),
        ("gmp", pool_case("max")),
        ("l2norm", norm_case),
    ]
    return _grad_cases(cases, UNIT_TOL)


def check_grad_gate():
    def case(mode, placement):
        def build(rng):
            x = _leaf(rng.normal(size=(2, 3, 4, 4)), "x")
            raws = [_leaf(_away_from_zero(rng, (2, 3, 1, 1)), f"eps{i}") for i in range(3)]
            adapter = init_conv(rng, 3, 3, kernel=1)
            w = _probe(rng, x.shape)

            def loss():
                sigs = make_signals(raws, mode)
                outs = [gate_apply(s, x, [adapter], mode, placement) for s in sigs]
                return weighted_sum(concat_channels(outs), np.concatenate([w] * 3, axis=1))
            return loss, [x, adapter.weight] + raws
        return build

    cases = [
        (f"{m.value}/signal", case(m, "signal")) for m in GateMode
    ] + [(f"{m.value}/outer", case(m, "outer")) for m in (GateMode.SIGMOID, GateMode.RECTIFIED_TANH)]
    return _grad_cases(cases, UNIT_TOL)


def _random_stages(rng, channels=(3, 4, 4, 5), blocks=(1, 2, 3, 4), size=8, n=1, stride=1):
    stages = []
    for s, (c, nb) in enumerate(zip(channels, blocks)):
        hw = size >> s
        stages.append(
            StageBlocks(s + 2, [_leaf(rng.normal(size=(n, c, hw, hw)), f"B{s + 2}{j + 1}") for j in range(nb)], stride)
        )
    return stages


def check_grad_isg():
    def build(rng):
        stages = _random_stages(rng)
        params = [init_coarse_params(rng, s.shape[1], len(s.former_indices())) for s in stages]
        for p in params:
            if p is not None:
                for q in p.proj:  # keep coarse gates open so they are exercised
                    q.bias.data[:] = 0.5
        probes = [_probe(rng, s.shape) for s in stages]

        def loss():
            out, _ = isg_forward(stages, params)
            total = weighted_sum(out[0], probes[0])
            for o, w in zip(out[1:], probes[1:]):
                total = elementwise("add", total, weighted_sum(o, w))
            return total
        tensors = [b for s in stages for b in s.blocks] + [t for _, t in named_tensors(params)]
        return loss, tensors

    return _grad_cases([("isg_forward", build)], UNIT_TOL)


def _random_pyramid(rng, channels=(3, 4, 4, 5), size=8, n=1, leaf=True, offset=0.0):
    make = _leaf if leaf else (lambda a, name=None: Tensor(a))
    return [
        make(offset + rng.normal(size=(n, c, size >> i, size >> i)), f"C{i + 2}")
        for i, c in enumerate(channels)
    ]


def check_grad_csg():
    def build(rng):
        # offset inputs keep channel norms away from 0, where the normalization
        # curves too sharply for a 1e-3 stencil
        pyr = _random_pyramid(rng, offset=2.0)
        params = init_csg_params(rng, [3, 4, 4, 5], 4)
        for u in params.ccu:  # bias the gates open so the w and s paths carry gradient
            u.w_out.bias.data[:] = 0.5
            u.s_shared.bias.data[:] = 0.5
        probes = [_probe(rng, (1, 4, 8 >> i, 8 >> i)) for i in range(4)]

        def loss():
            out, _ = csg_forward(pyr, params)
            total = weighted_sum(out[0], probes[0])
            for o, w in zip(out[1:], probes[1:]):
                total = elementwise("add", total, weighted_sum(o, w))
            return total
        named = list(named_tensors(params))
        for name, t in named:
            t.name = name
        return loss, pyr + [t for _, t in named]

    return _grad_cases([("csg_forward", build)], UNIT_TOL)


def e2e_config(seed: int) -> RunConfig:
    return RunConfig(
        seed=seed, image_size=32, channels=(4, 6, 6, 8), blocks=(2, 2, 3, 2), d=6, batch_size=1
    )


def check_grad_end_to_end():
    reports = []
    for seed in GRAD_SEEDS:
        cfg = e2e_config(seed)
        rng = np.random.default_rng([seed, 7])
        params = init_model(cfg, rng)
        for u in params.csg.ccu:
            u.w_out.bias.data[:] = 0.5
            u.s_shared.bias.data[:] = 0.5
        for p in params.isg:
            if p is not None:
                for q in p.proj:
                    q.bias.data[:] = 0.5
        sample = generate_sample(seed, (2, 4), size=cfg.image_size)
        images, targets = stack_batch([sample])
        named = list(named_tensors(params))
        sizes = np.array([t.data.size for _, t in named], dtype=float)
        picks = rng.choice(len(named), size=20, replace=True, p=sizes / sizes.sum())
        chosen = {}
        for i in picks:
            chosen[named[i][0]] = named[i][1]

        def loss():
            preds, _ = model_forward(images, params, cfg)
            return heatmap_loss(preds, targets)

        # one coordinate per pick, 20 parameters in total
        per = max(1, 20 // len(chosen))
        reports.append(
            (f"seed {seed}", check_gradients(loss, list(chosen.values()), rng, per, names=list(chosen)))
        )
    err, where = _worst(reports)
    return err <= E2E_TOL, f"max rel err {err:.2e} (worst {where})"


# ---------------------------------------------------------------- equivalences


def _identity_setup(rng, d=4, n=1, size=16):
    pyr = _random_pyramid(rng, (d,) * 4, size=size, n=n, leaf=False)
    params = init_csg_params(rng, [d] * 4, d)
    params.proj = [identity_conv(d) for _ in range(4)]
    return pyr, params


def check_fpn_subset(trials: int = 10):
    worst = 0.0
    w = np.array([[1.0 if i >= k else 0.0 for k in range(4)] for i in range(4)])
    for t in range(trials):
        rng = np.random.default_rng(100 + t)
        pyr, params = _identity_setup(rng)
        out, _ = csg_forward(pyr, params, forcing=CSGForcing(w=w, s=1.0))
        ref = fpn_forward(pyr, FPNParams([identity_conv(4) for _ in range(4)]), upsample=reference_f_up)
        worst = max(worst, max(np.abs(a.data - b.data).max() for a, b in zip(out, ref)))
    return worst <= EQUIV_TOL, f"max abs diff {worst:.2e} over {trials} pyramids"


def check_fc_fpn_superset(trials: int = 10):
    worst = 0.0
    for t in range(trials):
        rng = np.random.default_rng(200 + t)
        pyr, params = _identity_setup(rng)
        out, _ = csg_forward(pyr, params, forcing=CSGForcing(w=np.ones((4, 4)), s=1.0))
        ref = fc_fpn_forward(pyr, [identity_conv(4) for _ in range(4)], params.down, upsample=reference_f_up)
        worst = max(worst, max(np.abs(a.data - b.data).max() for a, b in zip(out, ref)))
    return worst <= EQUIV_TOL, f"max abs diff {worst:.2e} over {trials} pyramids"


def check_isg_degeneracy():
    rng = np.random.default_rng(5)
    stages = _random_stages(rng, blocks=(2, 3, 4, 3), n=2)
    params = [init_coarse_params(rng, s.shape[1], len(s.former_indices())) for s in stages]
    # the coarse route is closed either by dropping fine selection or by also
    # closing its gate a on the coarse branch
    routes = {
        "fs off": isg_forward(stages, params, fs_enabled=False, force_b=0.0)[0],
        "fs on, a=0": isg_forward(stages, params, force_b=0.0, force_a=0.0)[0],
    }
    bad = [k for k, out in routes.items() if not all(np.array_equal(o.data, s.last.data) for o, s in zip(out, stages))]
    if bad:
        return False, f"mismatch with closed coarse gates ({', '.join(bad)})"
    return True, "closed coarse gates reproduce last-block inputs bit-exactly (fs off; fs on with a=0)"


def check_fpn_unrolled(trials: int = 5):
    worst = 0.0
    for t in range(trials):
        rng = np.random.default_rng(300 + t)
        pyr = _random_pyramid(rng, (3, 4, 4, 5), size=16, leaf=False)
        lateral = [init_conv(rng, c, 4, kernel=1) for c in (3, 4, 4, 5)]
        out = fpn_forward(pyr, FPNParams(lateral), upsample=reference_f_up)
        lat = [naive_conv2d(x.data, p.weight.data, p.bias.data, 1, 0) for x, p in zip(pyr, lateral)]
        for k in range(4):
            ref = lat[k].copy()
            for i in range(k + 1, 4):
                up = lat[i]
                for _ in range(i - k):
                    up = reference_upsample(up, 2)
                ref += up
            worst = max(worst, np.abs(out[k].data - ref).max())
    return worst <= 1e-10, f"max abs diff {worst:.2e}"


# ---------------------------------------------------------------- kernels and invariants


def check_softmax_normalization(trials: int = 100):
    worst = 0.0
    for t in range(trials):
        rng = np.random.default_rng(400 + t)
        xs = [Tensor(rng.normal(scale=5.0, size=(2, 3, 2, 2))) for _ in range(4)]
        worst = max(worst, np.abs(sum(o.data for o in softmax_over_group(xs)) - 1.0).max())
    for t in range(trials):
        rng = np.random.default_rng(500 + t)
        column = [Tensor(rng.normal(size=(1, 3, 2, 2))) for _ in range(4)]
        params = init_csg_params(rng, [3] * 4, 3).ccu[t % 4]
        out = ccu(column, t % 4, params, GateMode.SOFTMAX_GROUP)
        worst = max(worst, np.abs(sum(s.squashed.data for s in out.w) - 1.0).max())
    return worst <= 1e-12, f"max |sum - 1| = {worst:.2e}"


def check_bilinear_oracle():
    rng = np.random.default_rng(9)
    worst = 0.0
    x = Tensor(np.array([[[[0.0, 1.0], [2.0, 3.0]]]]))
    worst = max(worst, np.abs(bilinear_upsample(x, 2).data - reference_upsample(x.data, 2)).max())
    for factor in (2, 4, 8):
        y = Tensor(rng.normal(size=(1, 2, 3, 2)))
        worst = max(worst, np.abs(bilinear_upsample(y, factor).data - reference_upsample(y.data, factor)).max())
    const = bilinear_upsample(Tensor(np.full((1, 1, 3, 3), 2.5)), 4).data
    worst = max(worst, np.abs(const - 2.5).max())
    return worst <= 1e-12, f"max abs diff {worst:.2e}"


def check_conv_oracle():
    worst = 0.0
    for seed, (k, s, p) in enumerate([(3, 1, 1), (3, 2, 1), (1, 1, 0), (3, 1, 0)]):
        rng = np.random.default_rng(seed)
        x = Tensor(rng.normal(size=(2, 3, 7, 7)))
        cp = init_conv(rng, 3, 4, kernel=k, stride=s, padding=p)
        ref = naive_conv2d(x.data, cp.weight.data, cp.bias.data, s, p)
        worst = max(worst, np.abs(conv2d(x, cp).data - ref).max())
    return worst <= 1e-10, f"max abs diff {worst:.2e}"


def check_closed_gate_gradient():
    rng = np.random.default_rng(11)
    x = _leaf(rng.normal(size=(1, 3, 4, 4)))
    raw = _leaf(np.full((1, 3, 1, 1), -8.0))
    with Tape() as tape:
        sig = make_signals([raw], GateMode.RECTIFIED_TANH)[0]
        loss = weighted_sum(gate_apply(sig, x), rng.normal(size=x.shape))
    grads = backward(tape, loss)
    dead_x = not np.any(grads.get(x, np.zeros(1)))
    dead_raw = not np.any(grads.get(raw, np.zeros(1)))
    # and the CSG path: closed w kills the gradient into the lattice entry
    pyr, params = _identity_setup(rng)
    pyr = [_leaf(p.data) for p in pyr]
    w = np.eye(4)
    w[3, 0] = 0.0
    with Tape() as tape:
        out, _ = csg_forward(pyr, params, forcing=CSGForcing(w=w, s=1.0))
        loss = weighted_sum(out[0], rng.normal(size=out[0].shape))
    g5 = backward(tape, loss).get(pyr[3])
    dead_path = g5 is None or not np.any(g5)
    ok = dead_x and dead_raw and dead_path
    return ok, f"gate dead: x={dead_x} signal={dead_raw} csg path={dead_path}"


def check_sample_independence():
    rng = np.random.default_rng(12)
    pyr = _random_pyramid(rng, size=8, n=2, leaf=False)
    params = init_csg_params(rng, [3, 4, 4, 5], 6)
    out_a, rec_a = csg_forward(pyr, params)
    changed = [Tensor(p.data.copy()) for p in pyr]
    for p in changed:
        p.data[0] = rng.normal(size=p.data[0].shape)
    out_b, rec_b = csg_forward(changed, params)
    same = all(np.array_equal(a.data[1], b.data[1]) for a, b in zip(out_a, out_b))
    same = same and np.array_equal(rec_a.w[1], rec_b.w[1])
    return same, "sample 1 unaffected by sample 0" if same else "cross-sample leakage"


def check_lattice_shapes():
    rng = np.random.default_rng(13)
    pyr = _random_pyramid(rng, (3, 4, 4, 5), size=16, leaf=False)
    params = init_csg_params(rng, [3, 4, 4, 5], 4)
    M = build_lattice(project_inputs(pyr, params), params.down)
    ok = all(M[i][k].shape == (1, 4, 16 >> k, 16 >> k) for i in range(4) for k in range(4))
    return ok, "M[i][k] matches level-k resolution for all 16 cells" if ok else "bad lattice shape"


CHECKS: list[tuple[str, Callable[[], tuple[bool, str]]]] = [
    ("grad_tensor_ops", check_grad_tensor_ops),
    ("grad_nn_ops", check_grad_nn_ops),
    ("grad_gate", check_grad_gate),
    ("grad_isg", check_grad_isg),
    ("grad_csg", check_grad_csg),
    ("grad_end_to_end", check_grad_end_to_end),
    ("fpn_subset_equivalence", check_fpn_subset),
    ("fc_fpn_superset_equivalence", check_fc_fpn_superset),
    ("isg_degeneracy", check_isg_degeneracy),
    ("fpn_unrolled_oracle", check_fpn_unrolled),
    ("softmax_normalization", check_softmax_normalization),
    ("bilinear_oracle", check_bilinear_oracle),
    ("conv_oracle", check_conv_oracle),
    ("closed_gate_gradient", check_closed_gate_gradient),
    ("sample_independence", check_sample_independence),
    ("lattice_shapes", check_lattice_shapes),
]


def run_checks(names: list[str] | None = None, report: Callable[[CheckResult], None] | None = None) -> list[CheckResult]:
    results = []
    for name, fn in CHECKS:
        if names is not None and name not in names:
            continue
        start = time.perf_counter()
        try:
            passed, detail = fn()
        except Exception as exc:  # a crashing check is a failing check
            passed, detail = False, f"{type(exc).__name__}: {exc}"
        res = CheckResult(name, bool(passed), detail, time.perf_counter() - start)
        results.append(res)
        if report is not None:
            report(res)
    return results
