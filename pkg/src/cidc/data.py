"""Synthetic temporal-order task and the clip container format.

A clip is a single-channel video of a bright 4x4 square traversing a noisy
frame at uniform speed. Class 0 moves left to right and class 2 top to
bottom; classes 1 and 3 are exact temporal reversals of freshly generated
class-0 / class-2 clips, with the noise drawn before the reversal so a
reversal pair differs only in frame order, never in frame content.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ArgumentError, DimensionError
from .tensor import DTYPE, Tensor

SQUARE = 4
NOISE_HIGH = 0.05
N_CLASSES = 4

FILE_MAGIC = b"CIDC"
FILE_VERSION = 1


@dataclass
class ClipRecord:
    clip: Tensor      # (1, t, size, size) float64 in [0, 1]
    label: int


def _offsets(t: int, size: int) -> list[int]:
    """Leading-edge positions of a uniform traversal, one per frame."""
    span = size - SQUARE
    return [int(round(i * span / (t - 1))) for i in range(t)]


def square_centers(class_id: int, t: int = 8, size: int = 36) -> np.ndarray:
    """(row, col) center of the square in every frame, deterministic per class."""
    _validate(class_id, t, size)
    offs = _offsets(t, size)
    fixed = (size - SQUARE) // 2 + (SQUARE - 1) / 2.0
    half = (SQUARE - 1) / 2.0
    if class_id in (0, 1):
        centers = [(fixed, o + half) for o in offs]
    else:
        centers = [(o + half, fixed) for o in offs]
    if class_id in (1, 3):
        centers = centers[::-1]
    return np.asarray(centers, dtype=DTYPE)


def _validate(class_id: int, t: int, size: int) -> None:
    if class_id not in range(N_CLASSES):
        raise ArgumentError(f"class id must be 0..3, got {class_id}")
    if t < 2:
        raise ArgumentError(f"a direction needs at least 2 frames, got {t}")
    if size < SQUARE + 1:
        raise ArgumentError(f"frame size {size} cannot fit a moving {SQUARE}x{SQUARE} square")


def gen_synthetic_clip(
    class_id: int, rng: np.random.Generator, t: int = 8, size: int = 36
) -> ClipRecord:
    """One labeled clip; values are clipped to [0, 1]."""
    _validate(class_id, t, size)
    frames = np.zeros((t, size, size), dtype=DTYPE)
    offs = _offsets(t, size)
    fixed = (size - SQUARE) // 2
    for i, o in enumerate(offs):
        if class_id in (0, 1):
            frames[i, fixed : fixed + SQUARE, o : o + SQUARE] = 1.0
        else:
            frames[i, o : o + SQUARE, fixed : fixed + SQUARE] = 1.0
    frames += rng.uniform(0.0, NOISE_HIGH, size=frames.shape)
    np.clip(frames, 0.0, 1.0, out=frames)
    if class_id in (1, 3):
        frames = frames[::-1].copy()
    return ClipRecord(frames[None], class_id)


def make_dataset(
    n: int, rng: np.random.Generator, t: int = 8, size: int = 36
) -> tuple[Tensor, np.ndarray]:
    """n clips with exactly equal class counts, cycling labels 0,1,2,3."""
    if n < 1 or n % N_CLASSES != 0:
        raise ArgumentError(f"dataset size must be a positive multiple of {N_CLASSES}, got {n}")
    clips = np.empty((n, 1, t, size, size), dtype=DTYPE)
    labels = np.empty(n, dtype=np.int64)
    for i in range(n):
        rec = gen_synthetic_clip(i % N_CLASSES, rng, t, size)
        clips[i] = rec.clip
        labels[i] = rec.label
    return clips, labels


def write_clip_file(path: str | Path, records: list[ClipRecord]) -> None:
    """Serialize records: 'CIDC' magic, version byte, then per record four
    little-endian uint32 extents (C, T, W, H), one label byte, and the clip
    as little-endian float32 values in row-major order."""
    with open(path, "wb") as fh:
        fh.write(FILE_MAGIC)
        fh.write(bytes([FILE_VERSION]))
        for rec in records:
            clip = np.asarray(rec.clip)
            if clip.ndim != 4:
                raise DimensionError(f"clips are rank 4, got {clip.ndim}")
            if not 0 <= rec.label < 256:
                raise ArgumentError(f"label {rec.label} does not fit one byte")
            fh.write(struct.pack("<IIII", *clip.shape))
            fh.write(bytes([rec.label]))
            fh.write(np.ascontiguousarray(clip, dtype="<f4").tobytes())


def read_clip_file(path: str | Path) -> list[ClipRecord]:
    blob = Path(path).read_bytes()
    if len(blob) < 5 or blob[:4] != FILE_MAGIC:
        raise ArgumentError(f"{path} is not a clip file (bad magic)")
    if blob[4] != FILE_VERSION:
        raise ArgumentError(f"unsupported clip file version {blob[4]}")
    records = []
    pos = 5
    while pos < len(blob):
        if pos + 17 > len(blob):
            raise ArgumentError("truncated record header")
        c, t, w, h = struct.unpack_from("<IIII", blob, pos)
        label = blob[pos + 16]
        pos += 17
        count = c * t * w * h
        end = pos + 4 * count
        if end > len(blob):
            raise ArgumentError("truncated record payload")
        clip = np.frombuffer(blob, dtype="<f4", count=count, offset=pos)
        records.append(ClipRecord(clip.reshape(c, t, w, h).astype(DTYPE), int(label)))
        pos = end
    return records
