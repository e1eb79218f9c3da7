"""Dataset ingestion and binary task assembly.

Tasks are one-vs-rest character discriminations: positives of one character
against a shared pool of negative characters.  Images come either from the
EMNIST balanced IDX files or from a procedural glyph generator that needs
no files at all.
"""

from __future__ import annotations

import gzip
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801

NEGATIVE_POOL = ("P", "Q", "R", "S")
REQUIRED_CHARS = ("0", "1", "2", "3", "O", "Z") + NEGATIVE_POOL


@dataclass
class LabeledImages:
    pixels: np.ndarray  # (count, 28, 28) uint8
    labels: np.ndarray  # (count,) int
    char_to_class: dict[str, int]

    @property
    def count(self) -> int:
        return len(self.labels)

    def lookup(self, char: str) -> int:
        if char not in self.char_to_class:
            raise ValueError(f"character {char!r} is not in the class mapping")
        return self.char_to_class[char]

    def of_char(self, char: str) -> np.ndarray:
        """Flattened [0, 1] vectors of every sample of ``char``."""
        idx = np.flatnonzero(self.labels == self.lookup(char))
        return self.pixels[idx].reshape(len(idx), -1).astype(np.float64) / 255.0


@dataclass(frozen=True)
class TaskSpec:
    positive_char: str
    negative_chars: tuple[str, ...] = NEGATIVE_POOL
    n_pos_train: int = 100
    n_neg_train_per_char: int = 100

    def __post_init__(self):
        if self.positive_char in self.negative_chars:
            raise ValueError(f"{self.positive_char!r} cannot be its own negative")
        if self.n_pos_train < 1 or self.n_neg_train_per_char < 1:
            raise ValueError("sample counts must be >= 1")


@dataclass
class TaskDataset:
    spec: TaskSpec
    seed: int
    train_pos: np.ndarray  # (n, 784) float64 in [0, 1]
    train_neg: np.ndarray
    test_pos: np.ndarray
    test_neg: np.ndarray

    def train_xy(self) -> tuple[np.ndarray, np.ndarray]:
        x = np.concatenate([self.train_pos, self.train_neg])
        y = np.concatenate([np.ones(len(self.train_pos)), np.zeros(len(self.train_neg))])
        return x, y

    def test_xy(self) -> tuple[np.ndarray, np.ndarray]:
        x = np.concatenate([self.test_pos, self.test_neg])
        y = np.concatenate([np.ones(len(self.test_pos)), np.zeros(len(self.test_neg))])
        return x, y


def _maybe_gunzip(raw: bytes) -> bytes:
    if raw[:2] == b"\x1f\x8b":
        return gzip.decompress(raw)
    return raw


def parse_idx(raw: bytes) -> np.ndarray:
    """Decode an IDX byte stream into a uint8 array.

    Image files (magic 0x803) give (count, rows, cols); label files
    (magic 0x801) give (count,).  Gzip payloads are decompressed first.
    """
    raw = _maybe_gunzip(raw)
    if len(raw) < 4:
        raise ValueError(f"IDX stream too short: {len(raw)} bytes")
    (magic,) = struct.unpack(">I", raw[:4])
    if magic == IMAGE_MAGIC:
        ndim = 3
    elif magic == LABEL_MAGIC:
        ndim = 1
    else:
        raise ValueError(f"bad IDX magic 0x{magic:08x}; expected 0x{IMAGE_MAGIC:08x} "
                         f"(images) or 0x{LABEL_MAGIC:08x} (labels)")
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise ValueError("IDX stream truncated inside the dimension header")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    n_payload = math.prod(dims)
    payload = raw[header:]
    if len(payload) != n_payload:
        raise ValueError(
            f"IDX payload holds {len(payload)} bytes but dimensions {dims} need {n_payload}"
        )
    return np.frombuffer(payload, dtype=np.uint8).reshape(dims)


def serialize_idx(arr: np.ndarray) -> bytes:
    """Inverse of parse_idx, for fixtures and round-trip checks."""
    arr = np.ascontiguousarray(arr, dtype=np.uint8)
    if arr.ndim == 3:
        magic = IMAGE_MAGIC
    elif arr.ndim == 1:
        magic = LABEL_MAGIC
    else:
        raise ValueError(f"can only serialize 1-d labels or 3-d images, got ndim={arr.ndim}")
    header = struct.pack(f">{1 + arr.ndim}I", magic, *arr.shape)
    return header + arr.tobytes()


def _read_mapping(path: Path) -> dict[str, int]:
    mapping: dict[str, int] = {}
    for line in path.read_text().splitlines():
        line = line.strip()
        if not line:
            continue
        cls, codepoint = line.split()
        mapping[chr(int(codepoint))] = int(cls)
    return mapping


def load_emnist(image_path, label_path, mapping_path) -> LabeledImages:
    """Load one EMNIST balanced split (plain or gzipped IDX files).

    EMNIST stores images transposed; they are flipped upright here.
    """
    images = parse_idx(Path(image_path).read_bytes())
    labels = parse_idx(Path(label_path).read_bytes())
    if images.ndim != 3:
        raise ValueError(f"{image_path} is not an image file")
    if labels.ndim != 1:
        raise ValueError(f"{label_path} is not a label file")
    if images.shape[0] != labels.shape[0]:
        raise ValueError(
            f"image count {images.shape[0]} != label count {labels.shape[0]}"
        )
    mapping = _read_mapping(Path(mapping_path))
    missing = [c for c in REQUIRED_CHARS if c not in mapping]
    if missing:
        raise ValueError(f"mapping at {mapping_path} lacks required characters: {missing}")
    return LabeledImages(
        pixels=images.transpose(0, 2, 1).copy(),
        labels=labels.astype(np.int64),
        char_to_class=mapping,
    )


def build_task(
    train_split: LabeledImages,
    test_split: LabeledImages,
    spec: TaskSpec,
    seed: int,
) -> TaskDataset:
    """Draw a seeded training subset; the test side takes every available sample."""
    rng = np.random.default_rng(seed)

    def draw(split: LabeledImages, char: str, n: int) -> np.ndarray:
        pool = split.of_char(char)
        if len(pool) < n:
            raise ValueError(
                f"need {n} samples of {char!r} but only {len(pool)} available "
                f"(short {n - len(pool)})"
            )
        idx = rng.choice(len(pool), size=n, replace=False)
        return pool[np.sort(idx)]

    train_pos = draw(train_split, spec.positive_char, spec.n_pos_train)
    train_neg = np.concatenate(
        [draw(train_split, c, spec.n_neg_train_per_char) for c in spec.negative_chars]
    )
    test_pos = test_split.of_char(spec.positive_char)
    test_neg = np.concatenate([test_split.of_char(c) for c in spec.negative_chars])
    if len(test_pos) == 0:
        raise ValueError(f"test split has no samples of {spec.positive_char!r}")
    return TaskDataset(spec, seed, train_pos, train_neg, test_pos, test_neg)


# ---------------------------------------------------------------------------
# Procedural glyphs
#
# Each character maps to one or more style variants (writer styles); a
# variant is a list of stroke primitives in a unit box (y grows down):
#   ("poly", [(u, v), ...])                      polyline through the points
#   ("ellipse", cx, cy, rx, ry, deg0, deg1)      arc, 0 deg = +x, CCW in (u,v)
#
# '0' and 'O' are near-identical ellipses and '2'/'Z' share their diagonal
# and bottom bar, so similarity-driven transfer and confusion between those
# pairs shows up without any real handwriting data.  '3' and the negative
# 'S' share a double-curve skeleton, which keeps '3' a genuinely hard task.
# Multiple variants per character force classifiers onto thinner,
# multi-region decision boundaries, the way handwriting diversity does.

_TEMPLATES: dict[str, list] = {
    "0": [
        [("ellipse", 0.50, 0.50, 0.16, 0.29, 0, 360)],
    ],
    "O": [
        [("ellipse", 0.50, 0.50, 0.20, 0.28, 0, 360)],
    ],
    "1": [
        [("poly", [(0.40, 0.32), (0.52, 0.20), (0.52, 0.80)])],
    ],
    "2": [
        [("ellipse", 0.50, 0.31, 0.19, 0.10, 175, 340),
         ("poly", [(0.68, 0.35), (0.32, 0.78), (0.72, 0.78)])],
    ],
    "3": [
        [("poly", [(0.35, 0.22), (0.55, 0.20), (0.66, 0.31), (0.50, 0.46)]),
         ("poly", [(0.50, 0.46), (0.68, 0.58), (0.56, 0.77), (0.33, 0.78)])],
    ],
    "Z": [
        [("poly", [(0.31, 0.25), (0.69, 0.25), (0.31, 0.78), (0.72, 0.78)])],
    ],
    "P": [
        [("poly", [(0.40, 0.20), (0.40, 0.80)]),
         ("poly", [(0.40, 0.22), (0.57, 0.24), (0.61, 0.32), (0.55, 0.40), (0.40, 0.43)])],
        [("poly", [(0.38, 0.20), (0.38, 0.80)]),
         ("poly", [(0.38, 0.22), (0.60, 0.26), (0.64, 0.37), (0.56, 0.47), (0.38, 0.50)])],
        [("poly", [(0.44, 0.20), (0.44, 0.80)]),
         ("poly", [(0.34, 0.20), (0.56, 0.20)]),
         ("poly", [(0.44, 0.24), (0.58, 0.28), (0.60, 0.36), (0.52, 0.42), (0.44, 0.44)])],
    ],
    "Q": [
        [("ellipse", 0.48, 0.46, 0.22, 0.24, 0, 360),
         ("poly", [(0.53, 0.60), (0.74, 0.84)])],
        [("ellipse", 0.50, 0.47, 0.19, 0.26, 0, 360),
         ("poly", [(0.47, 0.62), (0.66, 0.86)])],
        [("ellipse", 0.50, 0.45, 0.21, 0.23, 0, 360),
         ("poly", [(0.40, 0.72), (0.68, 0.58)])],
    ],
    "R": [
        [("poly", [(0.40, 0.20), (0.40, 0.80)]),
         ("poly", [(0.40, 0.22), (0.57, 0.24), (0.61, 0.32), (0.55, 0.40), (0.40, 0.43)]),
         ("poly", [(0.46, 0.43), (0.64, 0.72)])],
        [("poly", [(0.38, 0.20), (0.38, 0.80)]),
         ("poly", [(0.38, 0.22), (0.59, 0.25), (0.62, 0.34), (0.54, 0.43), (0.38, 0.46)]),
         ("poly", [(0.44, 0.46), (0.68, 0.80)])],
        [("poly", [(0.36, 0.20), (0.36, 0.80)]),
         ("poly", [(0.36, 0.24), (0.54, 0.26), (0.56, 0.33), (0.48, 0.38), (0.36, 0.40)]),
         ("poly", [(0.36, 0.40), (0.68, 0.78)])],
    ],
    "S": [
        [("poly", [(0.66, 0.27), (0.52, 0.20), (0.37, 0.29), (0.46, 0.44),
                   (0.60, 0.53), (0.64, 0.67), (0.50, 0.79), (0.33, 0.72)])],
        [("poly", [(0.64, 0.25), (0.46, 0.21), (0.36, 0.33), (0.50, 0.45),
                   (0.63, 0.56), (0.60, 0.72), (0.40, 0.78)])],
        [("poly", [(0.64, 0.22), (0.38, 0.26), (0.58, 0.50), (0.36, 0.52), (0.62, 0.78)])],
    ],
    # extra characters for the fifth-task sweep; deliberately unlike 0-3
    "I": [
        [("poly", [(0.50, 0.22), (0.50, 0.78)]),
         ("poly", [(0.37, 0.22), (0.63, 0.22)]),
         ("poly", [(0.37, 0.78), (0.63, 0.78)])],
    ],
    "J": [
        [("poly", [(0.48, 0.23), (0.70, 0.23)]),
         ("poly", [(0.62, 0.23), (0.62, 0.52), (0.60, 0.70), (0.46, 0.80), (0.34, 0.70)])],
    ],
    "X": [
        [("poly", [(0.33, 0.22), (0.68, 0.78)]),
         ("poly", [(0.68, 0.22), (0.33, 0.78)])],
    ],
}

SYNTHETIC_CHARS = tuple(_TEMPLATES)

_GRID = np.stack(
    np.meshgrid(np.arange(28, dtype=np.float64), np.arange(28, dtype=np.float64)),
    axis=-1,
).reshape(-1, 2)  # pixel centers as (x, y), row-major


def _primitive_points(prim) -> np.ndarray:
    if prim[0] == "poly":
        return np.asarray(prim[1], dtype=np.float64)
    _, cx, cy, rx, ry, d0, d1 = prim
    t = np.radians(np.linspace(d0, d1, 28))
    return np.stack([cx + rx * np.cos(t), cy + ry * np.sin(t)], axis=1)


def _render_glyph(char: str, rng: np.random.Generator) -> np.ndarray:
    """One distorted glyph: jittered strokes plus handwriting-like noise."""
    scale_y = rng.uniform(0.85, 1.15)
    scale_x = scale_y * rng.uniform(0.95, 1.05)
    dx, dy = rng.uniform(-2.5, 2.5, size=2)
    radius = rng.uniform(0.5, 1.0)  # stroke thickness 1-2 px
    theta = rng.uniform(-0.28, 0.28)
    shear = rng.uniform(-0.33, 0.33)
    wobble = rng.uniform(0.010, 0.035)
    rot = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])

    variants = _TEMPLATES[char]
    variant = variants[rng.integers(len(variants))] if len(variants) > 1 else variants[0]
    starts, ends = [], []
    for prim in variant:
        pts = _primitive_points(prim) - 0.5
        pts += rng.normal(0.0, wobble, size=pts.shape)  # hand-wobble per stroke point
        pts = pts @ rot.T
        pts[:, 0] += shear * pts[:, 1]
        pts[:, 0] *= scale_x
        pts[:, 1] *= scale_y
        pts = 13.5 + pts * 28.0 + (dx, dy)
        starts.append(pts[:-1])
        ends.append(pts[1:])
    a = np.concatenate(starts)
    b = np.concatenate(ends)

    ab = b - a  # (S, 2)
    denom = np.maximum((ab * ab).sum(axis=1), 1e-12)
    ap = _GRID[:, None, :] - a[None, :, :]  # (784, S, 2)
    t = np.clip((ap * ab[None, :, :]).sum(axis=2) / denom, 0.0, 1.0)
    gap = ap - t[:, :, None] * ab[None, :, :]
    dist = np.sqrt((gap * gap).sum(axis=2).min(axis=1))

    peak = rng.uniform(0.48, 1.0)
    intensity = peak * np.clip((radius + 0.7 - dist) / 0.7, 0.0, 1.0)
    noise = rng.normal(0.0, rng.uniform(0.04, 0.15), size=intensity.shape)
    intensity = np.clip(intensity + noise, 0.0, 1.0)
    return (intensity * 255.0).astype(np.uint8).reshape(28, 28)


def synthetic_glyphs(
    chars: list[str] | tuple[str, ...], per_char: int, seed: int
) -> tuple[LabeledImages, LabeledImages]:
    """Seeded (train, test) splits of procedurally drawn glyphs.

    The test split is generated from an independent substream, so no image
    ever appears in both splits.
    """
    if per_char < 1:
        raise ValueError(f"per_char must be >= 1: {per_char}")
    unknown = [c for c in chars if c not in _TEMPLATES]
    if unknown:
        raise ValueError(f"no glyph template for characters {unknown}; "
                         f"supported: {sorted(_TEMPLATES)}")
    char_to_class = {c: i for i, c in enumerate(chars)}
    seq = np.random.SeedSequence([seed, 0x617]).spawn(2)

    def make(split_seed, count) -> LabeledImages:
        rng = np.random.default_rng(split_seed)
        pixels = np.empty((count * len(chars), 28, 28), dtype=np.uint8)
        labels = np.empty(count * len(chars), dtype=np.int64)
        i = 0
        for c in chars:
            for _ in range(count):
                pixels[i] = _render_glyph(c, rng)
                labels[i] = char_to_class[c]
                i += 1
        return LabeledImages(pixels, labels, dict(char_to_class))

    test_count = max(per_char // 3, 1)
    return make(seq[0], per_char), make(seq[1], test_count)
