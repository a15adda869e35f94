import csv
import io
import json

import numpy as np
import pytest

import oracles
from smallbig.analytics import FLOP_CONVENTION, count_flops, count_params, parse_shape
from smallbig.harness.serialization import param_payload_bytes, save_weights
from smallbig.network import NetSpec, _conv_macs, _conv_params, build_net, tiny_spec
from smallbig.tensor_ops import ConvSpec


@pytest.fixture(scope="module")
def r23_full():
    return build_net(NetSpec(block_kinds=["SB_Full"] * 4), seed=None)


def test_single_conv_counts():
    spec = ConvSpec(2, 3, has_bias=True)
    assert _conv_params(spec) == 9
    assert _conv_macs(ConvSpec(2, 3), (1, 4, 4)) == 96


def test_plain_r23_equals_the_table_arithmetic():
    net = build_net(NetSpec(), seed=None)
    assert count_params(net).params == oracles.plain_r23_params()
    assert count_flops(net).flops == oracles.plain_r23_macs()


def test_totals_are_column_sums(r23_full):
    rep = count_flops(r23_full)
    rows = list(csv.reader(io.StringIO(rep.to_csv())))
    body = [r for r in rows if r and not r[0].startswith("#") and r[0] != "layer"]
    layers = [r for r in body if r[1] not in ("subtotal", "total")]
    total = [r for r in body if r[1] == "total"][0]
    assert sum(int(r[2]) for r in layers) == int(total[2]) == rep.params
    assert sum(int(r[3]) for r in layers) == int(total[3]) == rep.flops
    subs = [r for r in body if r[1] == "subtotal"]
    assert sum(int(r[2]) for r in subs) == rep.params
    assert sum(int(r[3]) for r in subs) == rep.flops


def test_reports_are_deterministic():
    a = count_flops(build_net(NetSpec(block_kinds=["SB_Typical"] * 4), seed=None))
    b = count_flops(build_net(NetSpec(block_kinds=["SB_Typical"] * 4), seed=None))
    assert a.to_csv() == b.to_csv() and a.to_json() == b.to_json()


def test_report_headers_state_the_convention(r23_full):
    rep = count_flops(r23_full)
    assert rep.to_csv().startswith(f"# {FLOP_CONVENTION}\n")
    doc = json.loads(rep.to_json())
    assert doc["convention"] == FLOP_CONVENTION
    assert doc["totals"] == {"params": rep.params, "flops": rep.flops}
    assert doc["config"]["share"] is True and doc["config"]["bn_policy"] == "individual"
    assert doc["subtotals"]["extra"]["params"] > 0


@pytest.mark.parametrize("spec", [tiny_spec(), tiny_spec(share=False), tiny_spec(bn_policy="single"),
                                  tiny_spec(block_kinds=["SB_Full"] * 4, nonlocal_stages=["res4"])],
                         ids=["typical", "unshared", "single", "full_nl"])
def test_every_parameter_counted_once(spec):
    net = build_net(spec, seed=0)
    assert count_params(net).params == net.store.num_params()
    assert param_payload_bytes(save_weights(net.store)) == 4 * count_params(net).params


def test_individual_bn_counts_block_convs_twice():
    plain = count_flops(build_net(NetSpec(), seed=None)).subtotals()
    sb = count_flops(build_net(NetSpec(block_kinds=["SB_Typical"] * 4), seed=None)).subtotals()
    single = count_flops(build_net(NetSpec(block_kinds=["SB_Typical"] * 4, bn_policy="single"),
                                   seed=None)).subtotals()
    assert sb["block_conv"]["flops"] == plain["block_conv"]["flops"]
    assert sb["block_conv_big"]["flops"] == sb["block_conv"]["flops"]
    assert single["block_conv_big"]["flops"] == 0
    assert single["block_conv"]["flops"] == plain["block_conv"]["flops"]


def test_single_bn_full_is_plain_plus_extra_terms():
    plain = count_flops(build_net(NetSpec(), seed=None))
    single = count_flops(build_net(NetSpec(block_kinds=["SB_Full"] * 4, bn_policy="single"), seed=None))
    indiv = count_flops(build_net(NetSpec(block_kinds=["SB_Full"] * 4), seed=None))
    extra = single.subtotals()["extra"]["flops"]
    assert single.flops == plain.flops + extra
    halved = indiv.flops - indiv.subtotals()["block_conv_big"]["flops"]
    assert abs(single.flops - halved) / halved < 0.02


def test_extra_unit_cost_does_not_scale_with_resolution():
    net = build_net(NetSpec(block_kinds=["SB_Full"] * 4), seed=None)
    a = count_flops(net, (3, 8, 224, 224)).subtotals()["extra"]["flops"]
    b = count_flops(net, (3, 16, 112, 112)).subtotals()["extra"]["flops"]
    assert a == b


def test_nonlocal_attention_subtotal_is_reported():
    rep = count_flops(build_net(NetSpec(nonlocal_stages=["res3", "res4"]), seed=None))
    assert rep.subtotals()["nonlocal_attention"]["flops"] > 0
    assert "subtotal:nonlocal_attention" in rep.to_csv()


@pytest.mark.parametrize("kind", ["Plain2D", "SB_Typical", "SB_Full"])
def test_adding_a_block_increases_both_totals(kind):
    base = NetSpec(block_kinds=[kind] * 4)
    a = build_net(base, seed=None)
    for stage in range(4):
        blocks = list(base.blocks)
        blocks[stage] += 1
        b = build_net(base.replace(blocks=blocks), seed=None)
        assert count_params(b).params > count_params(a).params
        assert count_flops(b).flops > count_flops(a).flops


def test_flops_accept_batched_shape_and_reject_batches():
    net = build_net(tiny_spec(), seed=None)
    assert count_flops(net, (1, 1, 8, 32, 32)).flops == count_flops(net).flops
    with pytest.raises(ValueError):
        count_flops(net, (2, 1, 8, 32, 32))


def test_parse_shape():
    assert parse_shape("3x8x224x224") == (3, 8, 224, 224)
    for bad in ("3x8x224", "axbxcxd", "3x0x2x2"):
        with pytest.raises(ValueError):
            parse_shape(bad)


def test_instrumented_count_on_unshared_nonlocal_net():
    from smallbig import tensor_ops as ops

    spec = NetSpec(block_kinds=["SB_Full"] * 4, share=False, nonlocal_stages=["res3"],
                   input_shape=(3, 2, 16, 16))
    net = build_net(spec, seed=0)
    with ops.count_macs() as box:
        net.forward(np.zeros((1, 3, 2, 16, 16), np.float32))
    assert box[0] == count_flops(net).flops
