"""Temporal co-occurrence clips: does the second blob appear within one frame of the first?"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .serialization import DataError, read_records, write_records

FRAMES, SIZE, BLOB = 8, 32, 5
NEAR, FAR = 1, 3  # class 1: |dt| <= NEAR, class 0: |dt| >= FAR


@dataclass
class SyntheticVideoSet:
    clips: np.ndarray   # (N, 1, FRAMES, SIZE, SIZE) float32
    labels: np.ndarray  # (N,) int64
    times: np.ndarray   # (N, 2) event frames
    corners: np.ndarray  # (N, 2, 2) top-left (row, col) of each blob
    seed: int

    def __len__(self):
        return len(self.labels)

    def split(self, n_train: int):
        a = SyntheticVideoSet(self.clips[:n_train], self.labels[:n_train], self.times[:n_train],
                              self.corners[:n_train], self.seed)
        b = SyntheticVideoSet(self.clips[n_train:], self.labels[n_train:], self.times[n_train:],
                              self.corners[n_train:], self.seed)
        return a, b


def _draw_times(rng, label):
    while True:
        t = rng.integers(0, FRAMES, size=2)
        dt = abs(int(t[0]) - int(t[1]))
        if (label == 1 and dt <= NEAR) or (label == 0 and dt >= FAR):
            return t


def gen_synth(n: int, seed: int) -> SyntheticVideoSet:
    """n clips with exactly n//2 of class 0; each holds two 5x5 single-frame blobs."""
    if n < 2:
        raise ValueError("need at least 2 clips")
    rng = np.random.default_rng(seed)
    labels = np.array([0] * (n // 2) + [1] * (n - n // 2), dtype=np.int64)
    labels = labels[rng.permutation(n)]
    clips = np.zeros((n, 1, FRAMES, SIZE, SIZE), dtype=np.float32)
    times = np.zeros((n, 2), dtype=np.int64)
    corners = rng.integers(0, SIZE - BLOB + 1, size=(n, 2, 2))
    for i in range(n):
        times[i] = _draw_times(rng, labels[i])
        for e in range(2):
            r, c = corners[i, e]
            clips[i, 0, times[i, e], r:r + BLOB, c:c + BLOB] = 1.0
    return SyntheticVideoSet(clips, labels, times, corners, seed)


def check_labels(ds: SyntheticVideoSet) -> bool:
    """Recover event frames from the pixels alone and confirm every label."""
    for clip, label in zip(ds.clips, ds.labels):
        frames = np.flatnonzero(clip[0].reshape(FRAMES, -1).max(axis=1) > 0)
        if len(frames) == 1:
            dt = 0
        elif len(frames) == 2:
            dt = int(frames[1] - frames[0])
        else:
            return False
        if label == 1 and dt > NEAR:
            return False
        if label == 0 and dt < FAR:
            return False
    return True


DATA_MAGIC = b"SBD1"


def save_dataset(ds: SyntheticVideoSet) -> bytes:
    """Tensor records (same framing as weight files) followed by a label block."""
    body = write_records({"clips": ds.clips}, magic=DATA_MAGIC)
    labels = np.asarray(ds.labels, dtype="<u4")
    return body + struct.pack("<I", len(labels)) + labels.tobytes()


def load_dataset(buf: bytes) -> SyntheticVideoSet:
    records, offset = read_records(buf, magic=DATA_MAGIC)
    if "clips" not in records:
        raise DataError("data container has no 'clips' record")
    if len(buf) < offset + 4:
        raise DataError("truncated label block")
    (count,) = struct.unpack_from("<I", buf, offset)
    end = offset + 4 + 4 * count
    if len(buf) < end:
        raise DataError("truncated label block")
    labels = np.frombuffer(buf, dtype="<u4", count=count, offset=offset + 4).astype(np.int64)
    clips = records["clips"]
    if len(labels) != len(clips):
        raise DataError(f"{len(clips)} clips but {len(labels)} labels")
    n = len(labels)
    return SyntheticVideoSet(clips, labels, np.zeros((n, 2), np.int64),
                             np.zeros((n, 2, 2), np.int64), -1)
