"""Observation encoding, the L2 objective and the per-step reward.

The observation packs four equally sized tiles: egocentric and global
views of both the working canvas and the goal image.  Egocentric tiles
are windows centered at the brush, shifted inward near the edges so the
full window always lies on-canvas.  Global tiles are exact area-average
downsamplings of the whole images.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .canvas import BrushState

# Guard on the initial loss; episodes whose goal equals the start state
# have an undefined normalized reward and are skipped.
DEGENERATE_EPS = 1e-8


class DegenerateEpisodeError(Exception):
    """Raised when the start state already equals the goal (initial loss ~ 0)."""


@dataclass(frozen=True)
class PatchSpec:
    """Observation tile size in pixels."""

    height: int
    width: int

    def __post_init__(self):
        if self.height < 1 or self.width < 1:
            raise ValueError(f"patch dimensions must be >= 1, got {self.height}x{self.width}")


@dataclass(frozen=True)
class Observation:
    """Four-tile view of the canvas/goal pair plus the brush position."""

    ego_canvas: np.ndarray
    global_canvas: np.ndarray
    ego_ref: np.ndarray
    global_ref: np.ndarray
    brush: BrushState


def patch_window(center: float, patch_len: int, canvas_len: int) -> int:
    """Start index of the patch window, shifted inward so it fits on-canvas."""
    start = int(round(center)) - patch_len // 2
    return int(np.clip(start, 0, canvas_len - patch_len))


def extract_patch(canvas: np.ndarray, center: BrushState, spec: PatchSpec) -> np.ndarray:
    """Egocentric window around the brush; clamped inward near the edges."""
    height, width = canvas.shape[:2]
    if spec.height > height or spec.width > width:
        raise ValueError(
            f"patch {spec.height}x{spec.width} larger than canvas {height}x{width}"
        )
    r0 = patch_window(center.row, spec.height, height)
    c0 = patch_window(center.col, spec.width, width)
    return canvas[r0 : r0 + spec.height, c0 : c0 + spec.width].copy()


def _area_weights(n_in: int, n_out: int) -> np.ndarray:
    """Row-stochastic (n_out, n_in) matrix of exact interval-overlap weights."""
    weights = np.zeros((n_out, n_in), dtype=np.float64)
    scale = n_in / n_out
    for i in range(n_out):
        lo, hi = i * scale, (i + 1) * scale
        j0, j1 = int(np.floor(lo)), int(min(np.ceil(hi), n_in))
        for j in range(j0, j1):
            overlap = min(hi, j + 1) - max(lo, j)
            if overlap > 0:
                weights[i, j] = overlap
        weights[i] /= weights[i].sum()
    return weights


def downsample(canvas: np.ndarray, spec: PatchSpec) -> np.ndarray:
    """Area-average resize of the whole image to the patch size."""
    height, width = canvas.shape[:2]
    if spec.height > height or spec.width > width:
        raise ValueError("downsample target larger than source")
    if (height, width) == (spec.height, spec.width):
        return canvas.copy()
    wh = _area_weights(height, spec.height)
    ww = _area_weights(width, spec.width)
    return np.einsum("ij,jkc,lk->ilc", wh, canvas, ww)


def observe(
    canvas: np.ndarray, goal: np.ndarray, brush: BrushState, spec: PatchSpec
) -> Observation:
    """Build the four-tile observation of a canvas/goal pair."""
    if canvas.shape != goal.shape:
        raise ValueError(f"canvas {canvas.shape} and goal {goal.shape} shapes differ")
    return Observation(
        ego_canvas=extract_patch(canvas, brush, spec),
        global_canvas=downsample(canvas, spec),
        ego_ref=extract_patch(goal, brush, spec),
        global_ref=downsample(goal, spec),
        brush=brush.clamped(canvas.shape[0], canvas.shape[1]),
    )


def l2_loss(a: np.ndarray, b: np.ndarray) -> float:
    """Mean squared per-entry difference between two images."""
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    diff = a - b
    return float(np.mean(diff * diff))


def step_reward(prev: np.ndarray, curr: np.ndarray, goal: np.ndarray, initial_loss: float) -> float:
    """Fractional loss improvement of one step, normalized by the initial loss."""
    if initial_loss <= DEGENERATE_EPS:
        raise DegenerateEpisodeError(f"initial loss {initial_loss} below {DEGENERATE_EPS}")
    return (l2_loss(prev, goal) - l2_loss(curr, goal)) / initial_loss
