"""Clip sampling, crops and multi-view score fusion."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import autograd as ag
from ..tensor_ops import softmax_over

SAMPLING_MODES = ("strided", "segmented")
CROPS = ("random_scale_crop", "three_crop")


@dataclass
class ClipPlan:
    mode: str = "strided"
    frames: int = 8
    window: int = 64
    stride: int = 8
    clip_index: int | None = None  # None means a random training clip
    num_clips: int = 1
    crop: str = "three_crop"
    seed: int = 0

    def __post_init__(self):
        if self.mode not in SAMPLING_MODES:
            raise ValueError(f"unknown sampling mode {self.mode!r}")
        if self.crop not in CROPS:
            raise ValueError(f"unknown crop {self.crop!r}")
        if self.frames < 1 or self.stride < 1 or self.num_clips < 1:
            raise ValueError("frames, stride and num_clips must be positive")
        if self.clip_index is not None and not 0 <= self.clip_index < self.num_clips:
            raise ValueError(f"clip_index {self.clip_index} outside [0, {self.num_clips})")


def sample_clip(source_len: int, plan: ClipPlan, rng=None) -> np.ndarray:
    """Frame indices for one clip of ``plan.frames`` frames.

    Strided: ``start + stride * k``, start random for training and the centre
    of the i-th of ``num_clips`` equal bins for evaluation.  Segmented: one
    index per equal segment, random in training and the segment midpoint in
    evaluation.  Indices wrap modulo ``source_len``.
    """
    if source_len < 1:
        raise ValueError("source_len must be at least 1")
    if rng is None:
        rng = np.random.default_rng(plan.seed)
    n = plan.frames
    if plan.mode == "strided":
        span = max(source_len - plan.window, 0)
        if plan.clip_index is None:
            start = int(rng.integers(0, span + 1))
        else:
            start = span * (2 * plan.clip_index + 1) // (2 * plan.num_clips)
        return (start + plan.stride * np.arange(n)) % source_len
    lo = (np.arange(n) * source_len) // n
    hi = (np.arange(1, n + 1) * source_len) // n
    width = np.maximum(hi - lo, 1)
    if plan.clip_index is None:
        off = rng.integers(0, width)
    else:
        off = (width - 1) // 2
    return (lo + off) % source_len


# --------------------------------------------------------------------------
# spatial transforms on (T, C, H, W) frames


def resize_bilinear(frames: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Half-pixel-centred bilinear resize of the last two axes."""
    h, w = frames.shape[-2:]

    def taps(n_in, n_out):
        pos = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
        pos = np.clip(pos, 0, n_in - 1)
        i0 = np.floor(pos).astype(np.int64)
        i1 = np.minimum(i0 + 1, n_in - 1)
        return i0, i1, (pos - i0).astype(frames.dtype)

    r0, r1, fr = taps(h, out_h)
    c0, c1, fc = taps(w, out_w)
    rows = frames[..., r0, :] * (1 - fr)[:, None] + frames[..., r1, :] * fr[:, None]
    return rows[..., c0] * (1 - fc) + rows[..., c1] * fc


def scaled_size(h: int, w: int, shorter: int) -> tuple:
    """Shorter side to ``shorter``, aspect kept, long side rounded half up."""
    if h < 1 or w < 1:
        raise ValueError(f"degenerate frame size {h}x{w}")
    if h <= w:
        return shorter, int(np.floor(w * shorter / h + 0.5))
    return int(np.floor(h * shorter / w + 0.5)), shorter


def three_crop_offsets(length: int, size: int) -> tuple:
    if length < size:
        raise ValueError(f"cannot take {size}-pixel crops from length {length}")
    return 0, (length - size) // 2, length - size


def eval_transform(frames: np.ndarray, size: int = 256) -> list:
    """Rescale so the shorter side is ``size`` and take left/middle/right crops."""
    h, w = frames.shape[-2:]
    nh, nw = scaled_size(h, w, size)
    frames = frames if (nh, nw) == (h, w) else resize_bilinear(frames, nh, nw)
    if nw >= nh:
        return [frames[..., :, o:o + size] for o in three_crop_offsets(nw, size)]
    return [frames[..., o:o + size, :] for o in three_crop_offsets(nh, size)]


def random_scale_crop(frames: np.ndarray, rng, shorter=(256, 320), size=224, flip=False):
    """Shorter side uniform in ``shorter``, then a random ``size`` square crop."""
    h, w = frames.shape[-2:]
    nh, nw = scaled_size(h, w, int(rng.integers(shorter[0], shorter[1] + 1)))
    frames = resize_bilinear(frames, nh, nw)
    top = int(rng.integers(0, nh - size + 1))
    left = int(rng.integers(0, nw - size + 1))
    out = frames[..., top:top + size, left:left + size]
    if flip and rng.random() < 0.5:
        out = out[..., ::-1]
    return np.ascontiguousarray(out)


# --------------------------------------------------------------------------
# score fusion


def fuse_scores(score_lists) -> np.ndarray:
    """Mean of the softmaxed logit vectors; any leading axes are flattened."""
    if len(score_lists) == 0:
        raise ValueError("no scores to fuse")
    arrs = [np.asarray(s, dtype=np.float64) for s in score_lists]
    k = arrs[0].shape[-1]
    if any(a.shape[-1] != k for a in arrs):
        raise ValueError("score vectors have different class counts")
    probs = [softmax_over(a.reshape(-1, k), -1)[0] for a in arrs]
    return np.concatenate(probs).mean(axis=0)


def fuse_ensemble(model_probs) -> np.ndarray:
    """Average already-fused per-model probability vectors."""
    if len(model_probs) == 0:
        raise ValueError("no models to fuse")
    return np.mean(np.stack([np.asarray(p, dtype=np.float64) for p in model_probs]), axis=0)


class ViewRunner:
    """Runs one eval-mode forward per view and counts them."""

    def __init__(self, net):
        self.net = net
        self.forwards = 0

    def __call__(self, clip):
        self.forwards += 1
        with ag.no_grad():
            return self.net.forward(clip[None], training=False).data[0]


def multiview_predict(net, video: np.ndarray, clips: int, crops: int, plan: ClipPlan | None = None,
                      runner: ViewRunner | None = None):
    """Fused class probabilities over ``clips`` x ``crops`` views of one video.

    ``video`` is (C, T, H, W).  Crops are taken at the net's spatial input
    size; ``crops`` may be 1 (centre) or 3.  Returns ``(probs, logits)``.
    """
    if crops not in (1, 3):
        raise ValueError("crops must be 1 or 3")
    _, t_in, size, _ = net.spec.input_shape
    plan = plan or ClipPlan(frames=t_in, window=video.shape[1], stride=1)
    runner = runner or ViewRunner(net)
    logits = []
    for i in range(clips):
        p = ClipPlan(plan.mode, plan.frames, plan.window, plan.stride, i, clips, plan.crop, plan.seed)
        idx = sample_clip(video.shape[1], p)
        frames = video[:, idx].transpose(1, 0, 2, 3)  # (T, C, H, W)
        views = eval_transform(frames, size)
        if crops == 1:
            views = views[1:2]
        for v in views:
            logits.append(runner(np.ascontiguousarray(v.transpose(1, 0, 2, 3))))
    return fuse_scores(logits), np.stack(logits)
