"""Analytic parameter and MAC accounting over a built network.

Convention: 1 MAC = 1 FLOP.  BN, activations and pooling cost nothing.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

from .network import CostRow, Net

FLOP_CONVENTION = "1 MAC = 1 FLOP; BN/activation/pooling cost 0"


# subtotal groups printed with every report; together they partition the rows
def _group(r: CostRow) -> str:
    if r.name.startswith("stem"):
        return "stem"
    if r.name.startswith("fc"):
        return "fc"
    if "downsample" in r.name:
        return "downsample"
    return {
        "conv": "block_conv",
        "conv_big": "block_conv_big",
        "bn": "block_bn",
        "bn_big": "block_bn",
    }.get(r.kind, r.kind)


GROUPS = ("stem", "block_conv", "block_conv_big", "block_bn", "downsample",
          "extra", "nonlocal", "nonlocal_attention", "fc")


@dataclass
class CountReport:
    rows: list[CostRow]
    input_shape: tuple | None = None
    config: dict = field(default_factory=dict)

    @property
    def params(self) -> int:
        return sum(r.params for r in self.rows)

    @property
    def flops(self) -> int:
        return sum(r.flops for r in self.rows)

    def subtotals(self) -> dict:
        out = {g: {"params": 0, "flops": 0} for g in GROUPS}
        for r in self.rows:
            t = out[_group(r)]
            t["params"] += r.params
            t["flops"] += r.flops
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(f"# {FLOP_CONVENTION}\n")
        shape = "x".join(map(str, self.input_shape)) if self.input_shape else "-"
        buf.write(f"# input={shape} bn_policy={self.config.get('bn_policy')} "
                  f"share={self.config.get('share')}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["layer", "kind", "params", "flops"])
        for r in self.rows:
            w.writerow([r.name, r.kind, r.params, r.flops])
        for g, t in self.subtotals().items():
            w.writerow([f"subtotal:{g}", "subtotal", t["params"], t["flops"]])
        w.writerow(["total", "total", self.params, self.flops])
        return buf.getvalue()

    def to_json(self) -> str:
        doc = {
            "convention": FLOP_CONVENTION,
            "input_shape": list(self.input_shape) if self.input_shape else None,
            "config": self.config,
            "rows": [
                {"layer": r.name, "kind": r.kind, "params": r.params, "flops": r.flops}
                for r in self.rows
            ],
            "subtotals": self.subtotals(),
            "totals": {"params": self.params, "flops": self.flops},
        }
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"

    def summary(self) -> str:
        lines = [f"params {self.params / 1e6:.2f}M  flops {self.flops / 1e9:.2f}G  ({FLOP_CONVENTION})"]
        for g, t in self.subtotals().items():
            if t["params"] or t["flops"]:
                lines.append(f"  {g:<20} params {t['params']:>11,d}  flops {t['flops']:>15,d}")
        return "\n".join(lines)


def _walk(net: Net, input_shape) -> list[CostRow]:
    rows: list[CostRow] = []
    shape = net.stem.cost(tuple(input_shape), rows)
    if net.stem_pool is not None:
        c, t, h, w = shape
        shape = (c, t, (h + 1) // 2, (w + 1) // 2)
    for _, blocks in net.stages:
        for blk in blocks:
            shape = blk.cost(shape, rows)
    c = shape[0]
    k = net.spec.num_classes
    rows.append(CostRow("fc", "fc", c * k + k, c * k))
    return rows


def _config_echo(net: Net) -> dict:
    s = net.spec
    return {
        "name": s.name,
        "blocks": list(s.blocks),
        "block_kinds": list(s.block_kinds),
        "share": s.share,
        "bn_policy": s.bn_policy,
        "pool_mode": s.pool_mode,
        "nonlocal_stages": list(s.nonlocal_stages),
        "num_classes": s.num_classes,
    }


def count_params(net: Net) -> CountReport:
    """Per-layer parameter counts; shared filters appear once, running stats never."""
    rows = [CostRow(r.name, r.kind, r.params, 0) for r in _walk(net, net.spec.input_shape)]
    return CountReport(rows, None, _config_echo(net))


def count_flops(net: Net, input_shape=None) -> CountReport:
    """Per-clip MACs for an input of shape (C, T, H, W) or (1, C, T, H, W)."""
    shape = tuple(input_shape or net.spec.input_shape)
    if len(shape) == 5:
        if shape[0] != 1:
            raise ValueError("count_flops reports per-clip cost; use batch 1")
        shape = shape[1:]
    return CountReport(_walk(net, shape), shape, _config_echo(net))


def parse_shape(text: str) -> tuple:
    """'3x8x224x224' -> (3, 8, 224, 224)."""
    try:
        dims = tuple(int(p) for p in text.lower().split("x"))
    except ValueError as e:
        raise ValueError(f"bad shape {text!r}") from e
    if len(dims) != 4 or min(dims) <= 0:
        raise ValueError(f"shape must be CxTxHxW with positive entries, got {text!r}")
    return dims
