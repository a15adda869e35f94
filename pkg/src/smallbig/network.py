"""Residual SmallBig blocks, the ResNet23/50 skeleton and initialization."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import autograd as ag
from .autograd import Var
from .params import ParamStore
from .tensor_ops import GLOBAL, ConvSpec, PoolSpec, ShapeError
from .units import (
    BNParams,
    ExtraParams,
    ExtraUnitSpec,
    NonLocalParams,
    NonLocalSpec,
    SmallBigParams,
    SmallBigUnitSpec,
    apply_bn,
    extra_unit,
    nonlocal_unit,
    smallbig_unit,
)

BLOCK_KINDS = (
    "Plain2D",
    "Temporal3x1x1",
    "SB_TemporalPool",
    "SB_TubePool",
    "SB_Typical",
    "SB_Full",
)

# big-view pool window of each of the three block layers (None = plain conv)
DEFAULT_POOLS = {
    "Plain2D": (None, None, None),
    "Temporal3x1x1": (None, None, None),
    "SB_TemporalPool": ((3, 1, 1), None, None),
    "SB_TubePool": ((3, 3, 3), None, None),
    "SB_Typical": ((3, 3, 3), (3, 3, 3), (GLOBAL, 3, 3)),
    "SB_Full": ((3, 3, 3), (3, 3, 3), (GLOBAL, 3, 3)),
}

DEPTHS = {"R23": (1, 2, 3, 1), "R50": (3, 4, 6, 3), "R101": (3, 4, 23, 3)}
STAGES = ("res2", "res3", "res4", "res5")


class ConfigError(ValueError):
    pass


class InitError(ValueError):
    pass


def parse_window(w):
    """'3x3x3' / 'Tx3x3' / [3,3,3] / None -> tuple with GLOBAL entries."""
    if w is None:
        return None
    if isinstance(w, str):
        parts = w.lower().split("x")
        if len(parts) != 3:
            raise ConfigError(f"bad pool window {w!r}")
        return tuple(GLOBAL if p == "t" else int(p) for p in parts)
    return tuple(GLOBAL if (isinstance(p, str) and p.upper() == "T") else int(p) for p in w)


def window_label(w) -> str | None:
    if w is None:
        return None
    return "x".join(str(p) for p in w)


@dataclass
class NetSpec:
    depth: str = "R23"
    blocks: tuple | None = None
    widths: tuple = (64, 128, 256, 512)
    expansion: int = 4
    in_channels: int = 3
    stem_channels: int = 64
    stem_kernel: tuple = (1, 7, 7)
    stem_stride: tuple = (1, 2, 2)
    stem_pool: bool = True
    stage_strides: tuple = (1, 2, 2, 2)
    block_kinds: tuple = ("Plain2D",) * 4
    pools: tuple | None = None
    pool_mode: str = "max"
    share: bool = True
    bn_policy: str = "individual"
    nonlocal_stages: tuple = ()
    extra_position: str = "input"
    middle_pool_order: str = "pool_then_conv"
    num_classes: int = 400
    input_shape: tuple = (3, 8, 224, 224)
    name: str = ""

    def __post_init__(self):
        if isinstance(self.block_kinds, str):
            self.block_kinds = (self.block_kinds,) * 4
        self.block_kinds = tuple(self.block_kinds)
        for k in self.block_kinds:
            if k not in BLOCK_KINDS:
                raise ConfigError(f"unknown block kind {k!r}; expected one of {BLOCK_KINDS}")
        if len(self.block_kinds) != 4:
            raise ConfigError("block_kinds needs one entry per stage (4)")
        if self.blocks is None:
            if self.depth not in DEPTHS:
                raise ConfigError(f"unknown depth {self.depth!r}")
            self.blocks = DEPTHS[self.depth]
        self.blocks = tuple(int(b) for b in self.blocks)
        self.widths = tuple(int(w) for w in self.widths)
        if len(self.blocks) != 4 or len(self.widths) != 4:
            raise ConfigError("blocks and widths need 4 entries")
        if self.pools is not None:
            self.pools = tuple(parse_window(p) for p in self.pools)
            if len(self.pools) != 3:
                raise ConfigError("pools needs one entry per block layer (3)")
        self.stem_kernel = tuple(self.stem_kernel)
        self.stem_stride = tuple(self.stem_stride)
        self.stage_strides = tuple(self.stage_strides)
        self.nonlocal_stages = tuple(self.nonlocal_stages)
        self.input_shape = tuple(int(v) for v in self.input_shape)
        if self.bn_policy not in ("individual", "single"):
            raise ConfigError(f"unknown bn_policy {self.bn_policy!r}")
        if self.bn_policy == "single" and not self.share:
            raise ConfigError("bn_policy 'single' requires share=true")
        if self.pool_mode not in ("max", "avg"):
            raise ConfigError(f"unknown pool_mode {self.pool_mode!r}")
        if self.extra_position not in ("input", "output"):
            raise ConfigError(f"unknown extra_position {self.extra_position!r}")
        if self.middle_pool_order not in ("pool_then_conv", "conv_then_pool"):
            raise ConfigError(f"unknown middle_pool_order {self.middle_pool_order!r}")
        if self.middle_pool_order == "conv_then_pool" and self.bn_policy == "single":
            raise ConfigError("conv_then_pool cannot use a single BN")
        for s in self.nonlocal_stages:
            if s not in STAGES:
                raise ConfigError(f"unknown stage {s!r} in nonlocal_stages")
        if self.input_shape[0] != self.in_channels:
            raise ConfigError("input_shape channels must equal in_channels")

    @property
    def outs(self) -> tuple:
        return tuple(w * self.expansion for w in self.widths)

    def pools_for(self, kind: str) -> tuple:
        if self.pools is not None and kind.startswith("SB_"):
            return self.pools
        return DEFAULT_POOLS[kind]

    @classmethod
    def from_dict(cls, d: dict) -> "NetSpec":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known - {"comment"}
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**{k: v for k, v in d.items() if k in known})

    def to_dict(self) -> dict:
        d = asdict(self)
        if self.pools is not None:
            d["pools"] = [window_label(p) for p in self.pools]
        return json.loads(json.dumps(d))

    def replace(self, **kw) -> "NetSpec":
        d = self.to_dict()
        d.update(kw)
        return NetSpec.from_dict(d)


def load_config(path) -> NetSpec:
    try:
        d = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    if not isinstance(d, dict):
        raise ConfigError(f"config {path} must be a JSON object")
    try:
        return NetSpec.from_dict(d)
    except TypeError as e:
        raise ConfigError(str(e)) from e


# --------------------------------------------------------------------------
# runtime context and rows for analytic counting


@dataclass
class Runtime:
    training: bool = False
    update_stats: bool = True
    trace: list | None = None

    def record(self, name: str, v: Var):
        if self.trace is not None:
            self.trace.append((name, v))


@dataclass
class CostRow:
    name: str
    kind: str
    params: int
    flops: int


def _conv_macs(spec: ConvSpec, out_dims) -> int:
    return spec.out_channels * spec.in_channels * int(np.prod(spec.kernel)) * int(np.prod(out_dims))


def _conv_params(spec: ConvSpec) -> int:
    return spec.out_channels * spec.in_channels * int(np.prod(spec.kernel)) + (
        spec.out_channels if spec.has_bias else 0
    )


def _add_bn(store: ParamStore, name: str, c: int, zero: bool = False) -> BNParams:
    g = store.add(f"{name}.gamma", (c,), init="zero" if zero else "one")
    b = store.add(f"{name}.beta", (c,), init="zero")
    return BNParams(g, b, store.add_bn_state(name, c))


# --------------------------------------------------------------------------
# layers


class ConvBN:
    """Convolution followed by BN (bias disabled)."""

    kind = "conv"

    def __init__(self, store, name, spec: ConvSpec, bn_name=None):
        self.name, self.spec = name, spec
        self.w = store.add(f"{name}.weight", spec.weight_shape, decay=True)
        self.bn_name = bn_name
        self.bn = _add_bn(store, bn_name, spec.out_channels) if bn_name else None

    def forward(self, x, rt: Runtime):
        y = ag.conv3d(x, self.w, None, self.spec.stride, self.spec.pad)
        if self.bn is not None:
            y = apply_bn(y, self.bn, rt.training, rt.update_stats)
        return y

    def cost(self, shape, rows):
        c, *dims = shape
        if c != self.spec.in_channels:
            raise ShapeError(f"{self.name}: expected {self.spec.in_channels} channels, got {c}")
        out = self.spec.out_dims(dims)
        rows.append(CostRow(self.name, "conv", _conv_params(self.spec), _conv_macs(self.spec, out)))
        if self.bn is not None:
            rows.append(CostRow(self.bn_name, "bn", 2 * self.spec.out_channels, 0))
        return (self.spec.out_channels, *out)


class SmallBigConvBN:
    """One block layer realised as a SmallBig unit with per-view BN."""

    kind = "smallbig"

    def __init__(self, store, name, bn_name, spec: SmallBigUnitSpec, conv_then_pool=False):
        self.name, self.bn_name, self.spec = name, bn_name, spec
        self.conv_then_pool = conv_then_pool
        c = spec.conv
        w = store.add(f"{name}.weight", c.weight_shape, decay=True)
        if spec.share:
            wb = store.alias(f"{name}_big.weight", f"{name}.weight")
        else:
            wb = store.add(f"{name}_big.weight", c.weight_shape, decay=True)
        bn_s = _add_bn(store, bn_name, c.out_channels)
        bn_b = None
        if spec.bn_policy == "individual":
            bn_b = _add_bn(store, f"{bn_name}_big", c.out_channels, zero=spec.big_bn_zero_init)
        self.p = SmallBigParams(w, wb, bn_s, bn_b)

    def forward(self, x, rt: Runtime):
        if not self.conv_then_pool:
            return smallbig_unit(x, self.spec, self.p, rt.training, rt.update_stats)
        c = self.spec.conv
        small = apply_bn(ag.conv3d(x, self.p.w_small, None, c.stride, c.pad),
                         self.p.bn_small, rt.training, rt.update_stats)
        big = ag.pool3d(ag.conv3d(x, self.p.w_big, None, c.stride, c.pad), self.spec.pool)
        big = apply_bn(big, self.p.bn_big, rt.training, rt.update_stats)
        return ag.add(small, big)

    def cost(self, shape, rows):
        c, *dims = shape
        cs = self.spec.conv
        if c != cs.in_channels:
            raise ShapeError(f"{self.name}: expected {cs.in_channels} channels, got {c}")
        out = cs.out_dims(dims)
        macs = _conv_macs(cs, out)
        rows.append(CostRow(self.name, "conv", _conv_params(cs), macs))
        if self.spec.bn_policy == "individual":
            rows.append(CostRow(f"{self.name}_big", "conv_big",
                                0 if self.spec.share else _conv_params(cs), macs))
        rows.append(CostRow(self.bn_name, "bn", 2 * cs.out_channels, 0))
        if self.spec.bn_policy == "individual":
            rows.append(CostRow(f"{self.bn_name}_big", "bn_big", 2 * cs.out_channels, 0))
        return (cs.out_channels, *out)


class ExtraLayer:
    kind = "extra"

    def __init__(self, store, name, spec: ExtraUnitSpec):
        self.name, self.spec = name, spec
        c, r = spec.channels, spec.reduce
        w1 = store.add(f"{name}.w1.weight", (r, c, 1, 1, 1), decay=True)
        if spec.share:
            w1b = store.alias(f"{name}.w1_big.weight", f"{name}.w1.weight")
        else:
            w1b = store.add(f"{name}.w1_big.weight", (r, c, 1, 1, 1), decay=True)
        bn_s = bn_b = None
        if spec.bn_policy in ("individual", "single"):
            bn_s = _add_bn(store, f"{name}.bn1", r)
        if spec.bn_policy == "individual":
            bn_b = _add_bn(store, f"{name}.bn1_big", r, zero=True)
        w2 = store.add(f"{name}.w2.weight", (c, r, 1, 1, 1), decay=True)
        b2 = store.add(f"{name}.w2.bias", (c,), init="zero")
        gate = store.add(f"{name}.gate", (c,), init="zero")
        self.p = ExtraParams(w1, w1b, w2, b2, bn_s, bn_b, gate)

    def forward(self, x, rt: Runtime):
        return extra_unit(x, self.spec, self.p, rt.training, rt.update_stats)

    def cost(self, shape, rows):
        c = shape[0]
        if c != self.spec.channels:
            raise ShapeError(f"{self.name}: expected {self.spec.channels} channels, got {c}")
        r = self.spec.reduce
        w1 = c * r
        views = 1 if self.spec.bn_policy == "single" else 2
        rows.append(CostRow(f"{self.name}.w1", "extra", w1, w1))
        if views == 2:
            rows.append(CostRow(f"{self.name}.w1_big", "extra",
                                0 if self.spec.share else w1, w1))
        bn = 2 * r * (1 if self.spec.bn_policy == "single" else 2)
        rows.append(CostRow(f"{self.name}.bn", "extra", bn, 0))
        rows.append(CostRow(f"{self.name}.w2", "extra", r * c + c, r * c))
        rows.append(CostRow(f"{self.name}.gate", "extra", c, 0))
        return tuple(shape)


class NonLocalLayer:
    kind = "nonlocal"

    def __init__(self, store, name, channels):
        self.name = name
        self.spec = NonLocalSpec(channels)
        e = self.spec.bottleneck
        self.p = NonLocalParams(
            store.add(f"{name}.theta.weight", (e, channels, 1, 1, 1), decay=True),
            store.add(f"{name}.phi.weight", (e, channels, 1, 1, 1), decay=True),
            store.add(f"{name}.g.weight", (e, channels, 1, 1, 1), decay=True),
            store.add(f"{name}.out.weight", (channels, e, 1, 1, 1), decay=True, init="zero"),
        )

    def forward(self, x, rt: Runtime):
        return nonlocal_unit(x, self.spec, self.p)

    def cost(self, shape, rows):
        c, t, h, w = shape
        if c != self.spec.channels:
            raise ShapeError(f"{self.name}: expected {self.spec.channels} channels, got {c}")
        e, pos = self.spec.bottleneck, t * h * w
        rows.append(CostRow(f"{self.name}.embed", "nonlocal", 3 * c * e, 3 * c * e * pos))
        rows.append(CostRow(f"{self.name}.out", "nonlocal", e * c, e * c * pos))
        rows.append(CostRow(f"{self.name}.attention", "nonlocal_attention", 0, 2 * pos * pos * e))
        return tuple(shape)


class Block:
    """Bottleneck residual block y = relu(shortcut(x) + F(x))."""

    def __init__(self, store, name, kind, in_ch, mid_ch, out_ch, stride,
                 share=True, bn_policy="individual", pools=None, pool_mode="max",
                 nonlocal_after=False, extra_position="input",
                 middle_pool_order="pool_then_conv"):
        if kind not in BLOCK_KINDS:
            raise ConfigError(f"unknown block kind {kind!r}")
        if min(in_ch, mid_ch, out_ch) <= 0 or stride <= 0:
            raise ConfigError(f"{name}: invalid channels/stride {in_ch},{mid_ch},{out_ch},{stride}")
        self.name, self.kind = name, kind
        self.in_ch, self.mid_ch, self.out_ch, self.stride = in_ch, mid_ch, out_ch, stride
        pools = DEFAULT_POOLS[kind] if pools is None else pools
        k1 = (3, 1, 1) if kind == "Temporal3x1x1" else (1, 1, 1)
        convs = [
            ConvSpec.same(in_ch, mid_ch, k1),
            ConvSpec.same(mid_ch, mid_ch, (1, 3, 3), (1, stride, stride)),
            ConvSpec.same(mid_ch, out_ch, (1, 1, 1)),
        ]
        self.layers = []
        for i, (cs, win) in enumerate(zip(convs, pools), start=1):
            cname, bname = f"{name}.conv{i}", f"{name}.bn{i}"
            if win is None:
                self.layers.append(ConvBN(store, cname, cs, bname))
            else:
                us = SmallBigUnitSpec(cs, PoolSpec(win, pool_mode), share, bn_policy)
                self.layers.append(SmallBigConvBN(
                    store, cname, bname, us,
                    conv_then_pool=(i == 2 and middle_pool_order == "conv_then_pool")))
        self.shortcut = None
        if in_ch != out_ch or stride != 1:
            self.shortcut = ConvBN(store, f"{name}.downsample.conv",
                                   ConvSpec(in_ch, out_ch, 1, (1, stride, stride)),
                                   f"{name}.downsample.bn")
        self.extra = None
        self.extra_position = extra_position
        if kind == "SB_Full":
            ch = in_ch if extra_position == "input" else out_ch
            self.extra = ExtraLayer(store, f"{name}.extra", ExtraUnitSpec(ch, share, bn_policy, pool_mode))
        self.nonlocal_layer = NonLocalLayer(store, f"{name}.nl", out_ch) if nonlocal_after else None

    def forward(self, x, rt: Runtime):
        if self.extra is not None and self.extra_position == "input":
            x = self.extra.forward(x, rt)
        h = x
        for i, layer in enumerate(self.layers):
            h = layer.forward(h, rt)
            if i < 2:
                h = ag.relu(h)
        sc = x if self.shortcut is None else self.shortcut.forward(x, rt)
        y = ag.relu(ag.add(h, sc))
        if self.extra is not None and self.extra_position == "output":
            y = self.extra.forward(y, rt)
        if self.nonlocal_layer is not None:
            y = self.nonlocal_layer.forward(y, rt)
        rt.record(self.name, y)
        return y

    def cost(self, shape, rows):
        if self.extra is not None and self.extra_position == "input":
            shape = self.extra.cost(shape, rows)
        h = shape
        for layer in self.layers:
            h = layer.cost(h, rows)
        if self.shortcut is not None:
            sc = self.shortcut.cost(shape, rows)
            if sc != h:
                raise ShapeError(f"{self.name}: shortcut {sc} vs residual {h}")
        elif tuple(shape) != tuple(h):
            raise ShapeError(f"{self.name}: identity shortcut {shape} vs residual {h}")
        if self.extra is not None and self.extra_position == "output":
            h = self.extra.cost(h, rows)
        if self.nonlocal_layer is not None:
            h = self.nonlocal_layer.cost(h, rows)
        return h


def build_block(store, name, kind, in_ch, bottleneck_ch, out_ch, stride, **kw) -> Block:
    return Block(store, name, kind, in_ch, bottleneck_ch, out_ch, stride, **kw)


class Net:
    """Stem, four residual stages and a global-average-pool + fc head."""

    def __init__(self, spec: NetSpec, store: ParamStore):
        self.spec, self.store = spec, store
        self.stem = ConvBN(store, "stem.conv",
                           ConvSpec.same(spec.in_channels, spec.stem_channels,
                                         spec.stem_kernel, spec.stem_stride),
                           "stem.bn")
        self.stem_pool = PoolSpec((1, 3, 3), "max") if spec.stem_pool else None
        self.stages: list[tuple[str, list[Block]]] = []
        cin = spec.stem_channels
        for si, stage in enumerate(STAGES):
            blocks = []
            for b in range(spec.blocks[si]):
                kind = spec.block_kinds[si]
                blocks.append(build_block(
                    store, f"{stage}.{b + 1}", kind, cin, spec.widths[si], spec.outs[si],
                    spec.stage_strides[si] if b == 0 else 1,
                    share=spec.share, bn_policy=spec.bn_policy,
                    pools=spec.pools_for(kind), pool_mode=spec.pool_mode,
                    nonlocal_after=stage in spec.nonlocal_stages,
                    extra_position=spec.extra_position,
                    middle_pool_order=spec.middle_pool_order,
                ))
                cin = spec.outs[si]
            self.stages.append((stage, blocks))
        self.fc_w = store.add("fc.weight", (spec.num_classes, cin), decay=True, init="fc")
        self.fc_b = store.add("fc.bias", (spec.num_classes,), init="zero")
        self.feature_channels = cin

    def blocks(self):
        for _, blocks in self.stages:
            yield from blocks

    def forward(self, x, training=False, update_stats=True, trace=None) -> Var:
        """Logits (N, num_classes) for an (N, C, T, H, W) clip batch."""
        rt = Runtime(training, update_stats, trace)
        if not isinstance(x, Var):
            x = Var(np.asarray(x, dtype=self.store.dtype))
        if x.data.ndim != 5 or x.shape[1] != self.spec.in_channels:
            raise ShapeError(f"input: expected (N,{self.spec.in_channels},T,H,W), got {x.shape}")
        h = ag.relu(self.stem.forward(x, rt))
        rt.record("stem", h)
        if self.stem_pool is not None:
            h = ag.subsample(ag.pool3d(h, self.stem_pool), (1, 2, 2))
            rt.record("pool1", h)
        for stage, blocks in self.stages:
            try:
                for blk in blocks:
                    h = blk.forward(h, rt)
            except ShapeError as e:
                raise ShapeError(f"{stage}: {e}") from e
            rt.record(stage, h)
        feat = ag.reshape(ag.global_pool(h, "avg"), (h.shape[0], h.shape[1]))
        logits = ag.linear(feat, self.fc_w, self.fc_b)
        rt.record("fc", logits)
        return logits

    def stage_shapes(self, input_shape=None) -> dict:
        """Analytic (C, T, H, W) after stem, pool1 and every stage."""
        shape = tuple(input_shape or self.spec.input_shape)
        rows: list[CostRow] = []
        out = {}
        shape = self.stem.cost(shape, rows)
        out["conv1"] = shape
        if self.stem_pool is not None:
            c, t, h, w = shape
            shape = (c, t, (h + 1) // 2, (w + 1) // 2)
            out["pool1"] = shape
        for stage, blocks in self.stages:
            for blk in blocks:
                try:
                    shape = blk.cost(shape, rows)
                except ShapeError as e:
                    raise ShapeError(f"{stage}: {e}") from e
            out[stage] = shape
        return out


def build_net(spec: NetSpec, dtype=np.float32, seed: int | None = 0) -> Net:
    """Construct the network graph and its ParamStore; He-initialize when seed is given."""
    store = ParamStore(dtype)
    net = Net(spec, store)
    if seed is not None:
        init_net(net, "random_he", seed=seed)
    return net


# --------------------------------------------------------------------------
# initialization


def _is_big_view(name: str) -> bool:
    base = name.rsplit(".", 1)[0]
    return base.endswith("_big")


def init_net(net: Net, scheme: str = "random_he", seed: int = 0, weights=None,
             zero_fc: bool = False, strict: bool = True) -> None:
    """Initialize every parameter in place.

    ``random_he``: He-normal convolution filters, N(0, 0.01) fc, unit BN scale.
    ``inflate_from_2d``: start from random_he, then copy ``weights`` (name ->
    array from a 2-D network).  Kernels with kt > 1 replicate the donor 1xkxk
    filter over time divided by kt; big-view filters copy their small-view
    donor.  Big-view BN scales, gate scales and nonlocal output filters stay
    zero in both schemes.
    """
    store = net.store
    rng = np.random.default_rng(seed)
    for name, v in store.params.items():
        kind = store.init[name]
        if kind == "he":
            fan_in = int(np.prod(v.shape[1:]))
            v.data[...] = rng.standard_normal(v.shape) * np.sqrt(2.0 / fan_in)
        elif kind == "fc":
            v.data[...] = 0.0 if zero_fc else rng.standard_normal(v.shape) * 0.01
        elif kind == "one":
            v.data[...] = 1.0
        else:
            v.data[...] = 0.0
    for st in store.bn_states.values():
        st.running_mean[...] = 0.0
        st.running_var[...] = 1.0
    if scheme == "random_he":
        return
    if scheme != "inflate_from_2d":
        raise ValueError(f"unknown init scheme {scheme!r}")
    if weights is None:
        raise InitError("inflate_from_2d needs donor weights")
    _inflate(store, weights, strict)


def _inflate(store: ParamStore, donor: dict, strict: bool) -> None:
    optional = (".extra.", ".nl.")
    for name, v in store.params.items():
        if store.init[name] == "zero" and _is_big_view(name):
            continue
        src = name.replace("_big.weight", ".weight") if name.endswith("_big.weight") else name
        if _is_big_view(src) or src not in donor:
            if strict and not any(o in name for o in optional) and not _is_big_view(name):
                raise InitError(f"donor weights lack {src!r}")
            continue
        d = np.asarray(donor[src])
        if d.shape == v.shape:
            v.data[...] = d
        elif (d.ndim == 5 and v.data.ndim == 5 and d.shape[2] == 1
              and d.shape[:2] == v.shape[:2] and d.shape[3:] == v.shape[3:]):
            kt = v.shape[2]
            v.data[...] = np.repeat(d, kt, axis=2) / kt
        else:
            raise InitError(f"donor {src!r} has shape {d.shape}, target {name!r} needs {v.shape}")


def copy_matching(dst: Net, src: Net) -> int:
    """Copy every same-named, same-shaped parameter and BN state from src; return count."""
    n = 0
    for name, v in dst.store.params.items():
        if name in src.store.params and src.store.params[name].shape == v.shape:
            v.data[...] = src.store.params[name].data
            n += 1
    for name, st in dst.store.bn_states.items():
        if name in src.store.bn_states:
            st.running_mean[...] = src.store.bn_states[name].running_mean
            st.running_var[...] = src.store.bn_states[name].running_var
    return n


def plain_twin(spec: NetSpec) -> NetSpec:
    """Same skeleton with every block replaced by the 2-D block."""
    return spec.replace(block_kinds=["Plain2D"] * 4, pools=None, nonlocal_stages=[])


def tiny_spec(**kw) -> NetSpec:
    """Desk-scale net for 1x8x32x32 synthetic clips (stages of one block)."""
    base = dict(
        blocks=(1, 1, 1, 1), widths=(16, 16, 32, 32), expansion=2,
        in_channels=1, stem_channels=16, stem_kernel=(1, 3, 3), stem_stride=(1, 2, 2),
        stem_pool=True, stage_strides=(1, 2, 2, 2),
        block_kinds=("SB_Typical",) * 4, num_classes=2, input_shape=(1, 8, 32, 32),
        name="tiny",
    )
    base.update(kw)
    return NetSpec(**base)
