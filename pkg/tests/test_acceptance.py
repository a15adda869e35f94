"""Acceptance suite: one test per criterion, each at its stated tolerance.

The terminal summary (see conftest.py) prints a PASS/FAIL line per criterion.
"""

import time

import numpy as np
import pytest

import oracles
from smallbig import autograd as ag
from smallbig import cli
from smallbig.analytics import count_flops, count_params
from smallbig.autograd import Var
from smallbig.harness.gradcheck import gradcheck_net
from smallbig.harness.sampling import ViewRunner, multiview_predict, three_crop_offsets
from smallbig.harness.serialization import param_payload_bytes, read_weight_file, load_weights, save_weights
from smallbig.harness.synthetic import gen_synth
from smallbig.harness.train import TrainConfig, accuracy, fit
from smallbig.network import NetSpec, build_net, copy_matching, plain_twin, tiny_spec
from smallbig.tensor_ops import BNState, ConvSpec, PoolSpec, bn_forward, conv3d, count_macs, pool3d
from smallbig.units import (
    BNParams,
    NonLocalParams,
    NonLocalSpec,
    SmallBigParams,
    SmallBigUnitSpec,
    nonlocal_unit,
    smallbig_unit,
    temconv_unit,
)

R23 = dict(depth="R23", num_classes=400, input_shape=(3, 8, 224, 224))
FULL = dict(R23, block_kinds=["SB_Full"] * 4)


def _net(**kw):
    return build_net(NetSpec(**kw), seed=None)


def _within(value, target, rel):
    return abs(value - target) <= rel * target


def _rel_err(a, b):
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300))


def test_criterion_01_parameter_counts():
    t0 = time.perf_counter()
    plain = count_params(_net(**R23)).params
    nl = count_params(_net(**R23, nonlocal_stages=["res3", "res4"])).params
    shared_rep = count_params(_net(**FULL))
    unshared = count_params(_net(**FULL, share=False)).params
    elapsed = time.perf_counter() - t0
    shared = shared_rep.params
    delta = unshared - shared
    print(f"plain R23 {plain:,}  NL-R23 {nl:,}  SB-Full shared {shared:,}  unshared {unshared:,}  delta {delta:,}")
    print(shared_rep.summary())
    assert _within(plain, 11.3e6, 0.03)
    assert _within(nl, 18.7e6, 0.05)
    assert _within(delta, 8.7e6, 0.10)
    assert delta == oracles.duplicated_weights_unshared_full()
    assert _within(shared, 13.4e6, 0.08)
    assert plain == oracles.plain_r23_params()
    assert elapsed < 1.0


def test_criterion_02_flop_counts():
    t0 = time.perf_counter()
    plain = count_flops(_net(**R23)).flops
    single = count_flops(_net(**FULL, bn_policy="single")).flops
    indiv = count_flops(_net(**FULL)).flops
    elapsed = time.perf_counter() - t0
    print(f"plain {plain / 1e9:.3f}G  single-BN {single / 1e9:.3f}G  individual-BN {indiv / 1e9:.3f}G "
          f"ratio {indiv / single:.3f}")
    assert _within(plain, 17e9, 0.10)
    assert plain == oracles.plain_r23_macs()
    assert _within(single, plain, 0.02)
    assert _within(indiv / single, 31 / 17, 0.15)
    assert elapsed < 1.0

    # instrumented forward on a tiny input equals the analytic count exactly
    x = np.random.default_rng(0).standard_normal((1, 3, 2, 16, 16)).astype(np.float32)
    for kw in (dict(R23), dict(FULL), dict(FULL, bn_policy="single"), dict(FULL, share=False),
               dict(R23, nonlocal_stages=["res3", "res4"]), dict(R23, block_kinds=["Temporal3x1x1"] * 4)):
        kw["input_shape"] = (3, 2, 16, 16)
        net = build_net(NetSpec(**kw), seed=0)
        with ag.no_grad(), count_macs() as box:
            net.forward(x, training=False)
        assert box[0] == count_flops(net).flops, kw


SB_VARIANTS = [
    dict(block_kinds=[k] * 4, share=s, pool_mode=m)
    for k in ("SB_TemporalPool", "SB_TubePool", "SB_Typical", "SB_Full")
    for s in (True, False)
    for m in ("max", "avg")
] + [
    dict(block_kinds=["SB_Full"] * 4, extra_position="output"),
    dict(block_kinds=["SB_Full"] * 4, middle_pool_order="conv_then_pool"),
    dict(block_kinds=["Plain2D", "Plain2D", "SB_Typical", "SB_Typical"]),
]


def _randomize_small_view(net, rng):
    """Random BN affine/statistics everywhere except the zero-initialized big views."""
    for name, v in net.store.params.items():
        if net.store.init[name] == "zero":
            continue
        if name.endswith((".gamma", ".beta")):
            v.data[...] = rng.uniform(0.5, 1.5, v.shape) if name.endswith("gamma") else rng.normal(0, 0.2, v.shape)
    for st in net.store.bn_states.values():
        st.running_mean[...] = rng.normal(0, 0.1, st.running_mean.shape)
        st.running_var[...] = rng.uniform(0.5, 2.0, st.running_var.shape)


def test_criterion_03_zero_init_identity():
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    worst = 0.0
    for kw in SB_VARIANTS:
        sb = build_net(tiny_spec(**kw), np.float32, seed=11)
        _randomize_small_view(sb, rng)
        plain = build_net(plain_twin(sb.spec), np.float32, seed=None)
        copy_matching(plain, sb)
        with ag.no_grad():
            for _ in range(20):
                x = rng.standard_normal((1,) + sb.spec.input_shape).astype(np.float32)
                a = sb.forward(x, training=False).data
                b = plain.forward(x, training=False).data
                worst = max(worst, float(np.abs(a - b).max()))
    print(f"{len(SB_VARIANTS)} variants x 20 inputs, max |logit diff| {worst:.2e}")
    assert worst <= 1e-5
    assert time.perf_counter() - t0 < 10


def test_criterion_04_single_bn_equivalence():
    worst = 0.0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        n, c, o = rng.integers(2, 5), rng.integers(1, 6), rng.integers(1, 6)
        t, h, w = rng.integers(2, 7, 3)
        kernel = [(1, 1, 1), (1, 3, 3)][seed % 2]
        stride = (1, 1 + seed % 3 // 2, 1 + seed % 3 // 2)
        cs = ConvSpec.same(int(c), int(o), kernel, stride)
        x = rng.standard_normal((n, c, t, h, w)).astype(np.float32)
        wt = (rng.standard_normal(cs.weight_shape) * 0.5).astype(np.float32)
        gamma = rng.uniform(0.5, 1.5, o).astype(np.float32)
        beta = rng.normal(0, 0.3, o).astype(np.float32)
        pool = PoolSpec(((3, 3, 3), ("T", 3, 3), (3, 1, 1))[seed % 3], "max")
        for training in (True, False):
            mean = rng.normal(0, 0.5, o).astype(np.float32)
            var = rng.uniform(0.5, 3.0, o).astype(np.float32)
            big = pool3d(x, pool)[0]
            s_out = conv3d(x, wt, None, cs.stride, cs.pad)[0]
            b_out = conv3d(big, wt, None, cs.stride, cs.pad)[0]
            lhs = bn_forward(s_out + b_out, gamma, beta, BNState(mean.copy(), var.copy()), training)[0]
            wv = Var(wt)
            p = SmallBigParams(wv, wv, BNParams(Var(gamma), Var(beta), BNState(mean.copy(), var.copy())))
            rhs = smallbig_unit(Var(x), SmallBigUnitSpec(cs, pool, True, "single"), p, training).data
            worst = max(worst, float(np.abs(lhs - rhs).max()))
    print(f"max |bn(conv(s)+conv(b)) - bn(conv(s+b))| = {worst:.2e}")
    assert worst <= 1e-5


def _oracle_case(seed):
    rng = np.random.default_rng(seed)
    n, c, o = (int(v) for v in rng.integers(1, 7, 3))
    t, h, w = (int(v) for v in rng.integers(1, 7, 3))
    return rng, int(n), int(c), int(o), t, h, w


def test_criterion_05_oracle_equivalence():
    t0 = time.perf_counter()
    worst = {"conv3d": 0.0, "pool3d": 0.0, "temconv": 0.0, "nonlocal": 0.0}
    for seed in range(200):
        rng, n, c, o, t, h, w = _oracle_case(seed)
        x = rng.standard_normal((n, c, t, h, w))

        kernel = tuple(int(rng.choice([1, 3, 5])) for _ in range(3))
        stride = tuple(int(rng.integers(1, 3)) for _ in range(3))
        pad = tuple(int(rng.integers(0, k // 2 + 1)) for k in kernel)
        dims_ok = all((L + 2 * p - k) >= 0 for L, p, k in zip((t, h, w), pad, kernel))
        if dims_ok:
            wt = rng.standard_normal((o, c) + kernel)
            b = rng.standard_normal(o)
            got = conv3d(x, wt, b, stride, pad)[0]
            worst["conv3d"] = max(worst["conv3d"], _rel_err(got, oracles.conv3d_ref(x, wt, b, stride, pad)))

        window = tuple(rng.choice(["1", "3", "5", "T"]) for _ in range(3))
        window = tuple("T" if k == "T" else int(k) for k in window)
        for mode in ("max", "avg"):
            got = pool3d(x, PoolSpec(window, mode))[0]
            worst["pool3d"] = max(worst["pool3d"], _rel_err(got, oracles.pool3d_ref(x, window, mode)))

        theta = rng.standard_normal((o, c, 3, 1, 1))
        bias = rng.standard_normal(o)
        got = temconv_unit(Var(x), Var(theta), Var(bias)).data
        worst["temconv"] = max(worst["temconv"], _rel_err(got, oracles.temconv_ref(x, theta, bias)))

        spec = NonLocalSpec(c)
        e = spec.bottleneck
        ws = [rng.standard_normal((e, c, 1, 1, 1)) * 0.5 for _ in range(3)]
        wo = rng.standard_normal((c, e, 1, 1, 1))
        got = nonlocal_unit(Var(x), spec, NonLocalParams(*(Var(a) for a in ws), Var(wo))).data
        worst["nonlocal"] = max(worst["nonlocal"], _rel_err(got, oracles.nonlocal_ref(x, *ws, wo)))
    elapsed = time.perf_counter() - t0
    print(" ".join(f"{k} {v:.1e}" for k, v in worst.items()), f"({elapsed:.1f}s)")
    assert max(worst.values()) < 1e-6
    assert elapsed < 60


def test_criterion_06_gradient_checks():
    t0 = time.perf_counter()
    cases = [
        tiny_spec(block_kinds=["SB_Full"] * 4),
        tiny_spec(block_kinds=["SB_Typical"] * 4, share=False, nonlocal_stages=["res3"]),
        tiny_spec(block_kinds=["SB_Full"] * 4, bn_policy="single"),
        tiny_spec(block_kinds=["Temporal3x1x1", "SB_TubePool", "SB_TemporalPool", "SB_Typical"],
                  pool_mode="avg"),
    ]
    for spec in cases:
        r = gradcheck_net(spec, tol=1e-4)
        print(f"{spec.block_kinds} share={spec.share} bn={spec.bn_policy}: "
              f"rel err {r.rel_error:.2e} over {r.checked} entries")
        assert r.passed
        assert r.checked >= 3 * len(r.per_tensor)
    assert time.perf_counter() - t0 < 120


def test_criterion_07_time_reversal_equivariance():
    windows = [(3, 3, 3), (1, 3, 3), (3, 1, 1), (5, 3, 5), ("T", 3, 3), ("T", 1, 1), (7, 5, 1)]
    for seed in range(100):
        rng = np.random.default_rng(seed)
        shape = (2, 3) + tuple(int(v) for v in rng.integers(1, 9, 3))
        x = rng.standard_normal(shape).astype(np.float32)
        if seed % 4 == 0:
            x = np.round(x)  # plenty of ties
        for win in windows:
            for mode in ("max", "avg"):
                spec = PoolSpec(win, mode)
                a = pool3d(x[:, :, ::-1], spec)[0]
                b = pool3d(x, spec)[0][:, :, ::-1]
                assert np.array_equal(a, b), (seed, win, mode)


def test_criterion_08_learning_behavior():
    # overfit capacity: 32 clips, at most 200 epochs, under 5 minutes
    t0 = time.perf_counter()
    small = gen_synth(32, 3)
    net = build_net(tiny_spec(), np.float32, seed=0)
    hist = fit(net, small.clips, small.labels, TrainConfig(epochs=200, base_lr=0.05, batch_size=8),
               stop_at_accuracy=1.0)
    overfit_acc = accuracy(net, small.clips, small.labels)
    overfit_time = time.perf_counter() - t0
    print(f"overfit: train acc {overfit_acc:.3f} after {len(hist)} epochs in {overfit_time:.1f}s")

    # context separation on the seeded 2000/500 split
    t0 = time.perf_counter()
    train, val = gen_synth(2500, 7).split(2000)
    cfg = TrainConfig(epochs=4, base_lr=0.05, batch_size=16, seed=0)
    accs = {}
    for spec in (tiny_spec(), plain_twin(tiny_spec())):
        net = build_net(spec, np.float32, seed=0)
        fit(net, train.clips, train.labels, cfg)
        accs[spec.block_kinds[0]] = accuracy(net, val.clips, val.labels)
    gap_time = time.perf_counter() - t0
    gap = 100 * (accs["SB_Typical"] - accs["Plain2D"])
    print(f"val acc SB_Typical {accs['SB_Typical']:.3f} Plain2D {accs['Plain2D']:.3f} "
          f"gap {gap:.1f} points in {gap_time:.0f}s")
    assert overfit_acc == 1.0 and len(hist) <= 200 and overfit_time < 300
    assert gap >= 15
    assert gap_time < 1200


def test_criterion_09_protocol_fidelity(tmp_path, capsys):
    net = build_net(tiny_spec(), np.float32, seed=0)
    video = gen_synth(2, 5).clips[0]
    runner = ViewRunner(net)
    probs, logits = multiview_predict(net, video, clips=2, crops=3, runner=runner)
    assert runner.forwards == 6
    assert logits.shape == (6, 2)
    assert np.abs(probs - oracles.softmax_mean_ref(logits)).max() <= 1e-6
    assert abs(probs.sum() - 1) <= 1e-6
    assert three_crop_offsets(454, 256) == (0, 99, 198)

    weights = tmp_path / "w.sbw"
    weights.write_bytes(save_weights(net.store))
    code = cli.main(["eval", "--weights", str(weights), "--n", "2", "--clips", "2", "--crops", "3"])
    assert code == 0
    out = capsys.readouterr().out
    assert "forwards_per_video 6 forwards 12 " in out


def test_criterion_10_serialization():
    for kw in (dict(FULL), dict(FULL, share=False), dict(R23, nonlocal_stages=["res3"])):
        net = build_net(NetSpec(**kw), np.float32, seed=1)
        buf = save_weights(net.store)
        twin = build_net(NetSpec(**kw), np.float32, seed=None)
        load_weights(buf, twin.store)
        assert save_weights(twin.store) == buf
        assert twin.store.checksum() == net.store.checksum()
        assert param_payload_bytes(buf) == 4 * count_params(net).params
    shared = build_net(NetSpec(**FULL), seed=None).store
    unshared = build_net(NetSpec(**FULL, share=False), seed=None).store
    n_shared = len(read_weight_file(save_weights(shared)))
    n_unshared = len(read_weight_file(save_weights(unshared)))
    assert n_unshared - n_shared == len(shared.share_groups())
    assert len(shared.share_groups()) > 0
