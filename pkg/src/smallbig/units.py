"""Context-aggregation operators built from the differentiable primitives.

``temconv_unit``   3x1x1 temporal convolution.
``smallbig_unit``  small view (pointwise/spatial conv of x) plus big view
                   (same conv applied to a max-pooled tube around each position).
``nonlocal_unit``  embedded-Gaussian attention over every position, residual.
``extra_unit``     global two-view channel gate used by the full block.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from . import autograd as ag
from .autograd import Var
from .tensor_ops import GLOBAL, BNState, ConvSpec, PoolSpec, ShapeError

BN_POLICIES = ("individual", "single", "none")


@dataclass
class BNParams:
    gamma: Var
    beta: Var
    state: BNState


def apply_bn(x: Var, bn: BNParams, training: bool, update_stats: bool = True) -> Var:
    return ag.batch_norm(x, bn.gamma, bn.beta, bn.state, training, update_stats)


# --------------------------------------------------------------------------
# temporal convolution


def temconv_unit(x: Var, theta: Var, bias: Var | None = None) -> Var:
    """y_t = theta[:, :, 1] x_t + theta[:, :, 0] x_{t-1} + theta[:, :, 2] x_{t+1}.

    ``theta`` has shape (out, in, 3, 1, 1); frames outside the clip are zero.
    """
    if theta.shape[2:] != (3, 1, 1):
        raise ShapeError(f"temporal filter must be 3x1x1, got {theta.shape[2:]}")
    if x.shape[1] != theta.shape[1]:
        raise ShapeError(f"temconv channel mismatch: {x.shape[1]} vs {theta.shape[1]}")
    return ag.conv3d(x, theta, bias, (1, 1, 1), (1, 0, 0))


# --------------------------------------------------------------------------
# SmallBig unit


@dataclass(frozen=True)
class SmallBigUnitSpec:
    conv: ConvSpec
    pool: PoolSpec = field(default_factory=PoolSpec)
    share: bool = True
    bn_policy: str = "individual"
    big_bn_zero_init: bool = True

    def __post_init__(self):
        if self.bn_policy not in BN_POLICIES:
            raise ValueError(f"unknown bn_policy {self.bn_policy!r}")
        if self.bn_policy == "single" and not self.share:
            raise ValueError("bn_policy='single' requires shared small/big filters")


@dataclass
class SmallBigParams:
    w_small: Var
    w_big: Var
    bn_small: BNParams | None = None
    bn_big: BNParams | None = None


def smallbig_unit(x: Var, spec: SmallBigUnitSpec, p: SmallBigParams,
                  training: bool = False, update_stats: bool = True) -> Var:
    """individual: BN(conv(x)) + BN'(conv'(maxpool(x)))
    single:     BN(conv(x + maxpool(x)))        (shared filter only)
    none:       conv(x) + conv'(maxpool(x))
    """
    if spec.share and p.w_small is not p.w_big:
        raise ValueError("shared spec but distinct small/big filters")
    c = spec.conv
    big_in = ag.pool3d(x, spec.pool)
    if spec.bn_policy == "single":
        y = ag.conv3d(ag.add(x, big_in), p.w_small, None, c.stride, c.pad)
        return apply_bn(y, p.bn_small, training, update_stats)
    small = ag.conv3d(x, p.w_small, None, c.stride, c.pad)
    big = ag.conv3d(big_in, p.w_big, None, c.stride, c.pad)
    if spec.bn_policy == "individual":
        small = apply_bn(small, p.bn_small, training, update_stats)
        big = apply_bn(big, p.bn_big, training, update_stats)
    return ag.add(small, big)


# --------------------------------------------------------------------------
# nonlocal


@dataclass(frozen=True)
class NonLocalSpec:
    channels: int

    @property
    def bottleneck(self) -> int:
        return max(1, self.channels // 2)


@dataclass
class NonLocalParams:
    theta: Var
    phi: Var
    g: Var
    out: Var


def nonlocal_unit(x: Var, spec: NonLocalSpec, p: NonLocalParams, return_attention=False):
    """y = x + V_o sum_k softmax_k(theta(x_i) . phi(x_k)) g(x_k)."""
    n, c, t, h, w = x.shape
    if c != spec.channels:
        raise ShapeError(f"nonlocal expects {spec.channels} channels, got {c}")
    e = spec.bottleneck
    pos = t * h * w
    th = ag.reshape(ag.conv3d(x, p.theta), (n, e, pos))
    ph = ag.reshape(ag.conv3d(x, p.phi), (n, e, pos))
    gx = ag.reshape(ag.conv3d(x, p.g), (n, e, pos))
    sim = ag.bmm(ag.transpose(th, (0, 2, 1)), ph)          # (n, P, P)
    attn = ag.softmax(sim, axis=-1)
    agg = ag.bmm(gx, ag.transpose(attn, (0, 2, 1)))        # (n, e, P)
    y = ag.add(x, ag.conv3d(ag.reshape(agg, (n, e, t, h, w)), p.out))
    if return_attention:
        return y, attn.data
    return y


# --------------------------------------------------------------------------
# extra (global) unit


@dataclass(frozen=True)
class ExtraUnitSpec:
    channels: int
    share: bool = True
    bn_policy: str = "individual"
    pool_mode: str = "max"

    def __post_init__(self):
        if self.bn_policy not in BN_POLICIES:
            raise ValueError(f"unknown bn_policy {self.bn_policy!r}")
        if self.bn_policy == "single" and not self.share:
            raise ValueError("bn_policy='single' requires shared small/big filters")

    @property
    def reduce(self) -> int:
        return max(1, self.channels // 4)

    @property
    def pool(self) -> PoolSpec:
        return PoolSpec((GLOBAL, GLOBAL, GLOBAL), self.pool_mode)


@dataclass
class ExtraParams:
    w1_small: Var
    w1_big: Var
    w2: Var
    b2: Var
    bn_small: BNParams | None
    bn_big: BNParams | None
    gate: Var | None = None


def extra_attention(x: Var, spec: ExtraUnitSpec, p: ExtraParams,
                    training: bool = False, update_stats: bool = True) -> Var:
    """Channel attention a in (0,1), shape (N, C, 1, 1, 1).

    Small view is the clip's mean feature, big view its global max; both go
    through the 4:1 filter, the 1:4 filter then maps back to C channels.
    """
    if x.shape[1] != spec.channels:
        raise ShapeError(f"extra unit expects {spec.channels} channels, got {x.shape[1]}")
    small = ag.global_pool(x, "avg")
    big = ag.global_pool(x, spec.pool_mode)
    if spec.bn_policy == "single":
        z = apply_bn(ag.conv3d(ag.add(small, big), p.w1_small), p.bn_small, training, update_stats)
    else:
        zs = ag.conv3d(small, p.w1_small)
        zb = ag.conv3d(big, p.w1_big)
        if spec.bn_policy == "individual":
            zs = apply_bn(zs, p.bn_small, training, update_stats)
            zb = apply_bn(zb, p.bn_big, training, update_stats)
        z = ag.add(zs, zb)
    return ag.sigmoid(ag.conv3d(ag.relu(z), p.w2, p.b2))


def extra_unit(x: Var, spec: ExtraUnitSpec, p: ExtraParams,
               training: bool = False, update_stats: bool = True) -> Var:
    """y = x + s * (x * a), a broadcast over (T, H, W), s a per-channel scale.

    ``s`` starts at zero like every big-view BN scale, so the unit begins as
    the identity.  With ``p.gate`` None the scale is 1: y = x + x * a.
    """
    a = extra_attention(x, spec, p, training, update_stats)
    gated = ag.mul(x, a)
    if p.gate is not None:
        gated = ag.mul(gated, ag.reshape(p.gate, (1, spec.channels, 1, 1, 1)))
    return ag.add(x, gated)
