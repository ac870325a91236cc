"""Benchmark construction: goal patches sampled from source images.

Benchmark pairs are (goal, start).  Starts are either blank canvases or
seeded random canvases, mirroring the two evaluation settings (reproduce
from noise vs. reproduce from scratch).  When no source images are
given, deterministic synthetic color-field sources are generated.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .perception import PatchSpec

START_BLANK = "blank"
START_RANDOM = "random"


@dataclass(frozen=True)
class BenchmarkSpec:
    patch: PatchSpec
    patch_count: int = 100
    start_mode: str = START_BLANK

    def __post_init__(self):
        if self.patch_count < 1:
            raise ValueError("patch_count must be >= 1")
        if self.start_mode not in (START_BLANK, START_RANDOM):
            raise ValueError(f"unknown start mode {self.start_mode!r}")


def synthetic_source(height: int, width: int, seed: int, cells: int = 5) -> np.ndarray:
    """Smooth random color field: bilinear upsampling of a coarse RGB grid."""
    rng = np.random.default_rng(seed)
    coarse = rng.random((cells, cells, 3))
    rows = np.linspace(0, cells - 1, height)
    cols = np.linspace(0, cells - 1, width)
    r0 = np.floor(rows).astype(int)
    c0 = np.floor(cols).astype(int)
    r1 = np.minimum(r0 + 1, cells - 1)
    c1 = np.minimum(c0 + 1, cells - 1)
    fr = (rows - r0)[:, None, None]
    fc = (cols - c0)[None, :, None]
    top = coarse[r0][:, c0] * (1 - fc) + coarse[r0][:, c1] * fc
    bottom = coarse[r1][:, c0] * (1 - fc) + coarse[r1][:, c1] * fc
    return top * (1 - fr) + bottom * fr


def default_sources(patch: PatchSpec, seed: int, count: int = 4) -> list:
    side_h = max(patch.height * 3, patch.height + 1)
    side_w = max(patch.width * 3, patch.width + 1)
    return [synthetic_source(side_h, side_w, seed + i) for i in range(count)]


def make_benchmark(spec: BenchmarkSpec, sources, seed: int) -> list:
    """Deterministic (goal, start) pairs; goals are exact source windows."""
    if not sources:
        raise ValueError("benchmark needs at least one source image")
    for src in sources:
        if src.shape[0] < spec.patch.height or src.shape[1] < spec.patch.width:
            raise ValueError("source image smaller than the patch size")
    rng = np.random.default_rng(seed)
    pairs = []
    for i in range(spec.patch_count):
        src = sources[int(rng.integers(0, len(sources)))]
        r0 = int(rng.integers(0, src.shape[0] - spec.patch.height + 1))
        c0 = int(rng.integers(0, src.shape[1] - spec.patch.width + 1))
        goal = src[r0 : r0 + spec.patch.height, c0 : c0 + spec.patch.width].copy()
        if spec.start_mode == START_BLANK:
            start = "blank"
        else:
            start = ("random", int(rng.integers(0, 2**31 - 1)))
        pairs.append((goal, start))
    return pairs
