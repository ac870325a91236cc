"""Canvas state and the deterministic stroke renderer.

A canvas is a dense H x W x 3 float64 array of channel values in [0, 1].
Strokes are circular stamps deposited at unit spacing along the straight
segment between the old and new brush positions, with opaque color
replacement and clipping at the canvas edges.  All operations are pure:
inputs are never mutated.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

WHITE = (1.0, 1.0, 1.0)
BLACK = (0.0, 0.0, 0.0)

# Action vector layout: (dh, dw, width, colorR, colorG, colorB), all in [0, 1].
ACTION_DIM = 6

DEFAULT_MAX_RADIUS = 8


@dataclass(frozen=True)
class BrushState:
    """Brush position in pixel coordinates, clamped to canvas bounds."""

    row: float
    col: float

    def clamped(self, height: int, width: int) -> "BrushState":
        return BrushState(
            row=float(np.clip(self.row, 0.0, height - 1)),
            col=float(np.clip(self.col, 0.0, width - 1)),
        )


def blank_canvas(height: int, width: int, fill=WHITE) -> np.ndarray:
    """Constant-fill canvas; default fill is white."""
    if height < 1 or width < 1:
        raise ValueError(f"canvas dimensions must be >= 1, got {height}x{width}")
    canvas = np.empty((height, width, 3), dtype=np.float64)
    canvas[...] = np.asarray(fill, dtype=np.float64)
    return canvas


def random_canvas(height: int, width: int, seed: int) -> np.ndarray:
    """Uniform-random canvas; bit-identical for a given seed."""
    if height < 1 or width < 1:
        raise ValueError(f"canvas dimensions must be >= 1, got {height}x{width}")
    rng = np.random.default_rng(seed)
    return rng.random((height, width, 3), dtype=np.float64)


def clamp_action(action: np.ndarray) -> np.ndarray:
    """Clamp all six action components to [0, 1]."""
    action = np.asarray(action, dtype=np.float64)
    if action.shape != (ACTION_DIM,):
        raise ValueError(f"action must have shape ({ACTION_DIM},), got {action.shape}")
    return np.clip(action, 0.0, 1.0)


def stamp_radius(width_value: float, max_radius: int = DEFAULT_MAX_RADIUS) -> int:
    """Map the normalized width component to a pixel radius."""
    return int(round(1 + float(width_value) * (max_radius - 1)))


def offset_from_action(value: float, max_offset: float) -> float:
    """Map a [0,1] action component to a signed pixel offset in [-max_offset, max_offset]."""
    return (2.0 * float(value) - 1.0) * max_offset


def _stamp(canvas: np.ndarray, row: float, col: float, radius: int, color: np.ndarray) -> None:
    """Deposit one opaque disc, clipped at the canvas edges.  Mutates canvas."""
    height, width = canvas.shape[:2]
    r0 = max(int(np.floor(row - radius)), 0)
    r1 = min(int(np.ceil(row + radius)), height - 1)
    c0 = max(int(np.floor(col - radius)), 0)
    c1 = min(int(np.ceil(col + radius)), width - 1)
    if r0 > r1 or c0 > c1:
        return
    rows = np.arange(r0, r1 + 1, dtype=np.float64)
    cols = np.arange(c0, c1 + 1, dtype=np.float64)
    dist2 = (rows[:, None] - row) ** 2 + (cols[None, :] - col) ** 2
    mask = dist2 <= radius * radius
    canvas[r0 : r1 + 1, c0 : c1 + 1][mask] = color


def render_action(
    canvas: np.ndarray,
    brush: BrushState,
    action: np.ndarray,
    max_offset_row: float,
    max_offset_col: float,
    max_radius: int = DEFAULT_MAX_RADIUS,
) -> tuple[np.ndarray, BrushState]:
    """Render one brush action, returning a new canvas and the moved brush.

    The brush moves from its current position to the clamped endpoint given
    by the symmetric offset mapping; a stroke of the action's color and
    width is laid down as discs at unit spacing along the segment.  A
    zero-length move deposits a single stamp.
    """
    height, width = canvas.shape[:2]
    action = clamp_action(action)
    dh, dw, stroke_width = action[0], action[1], action[2]
    color = action[3:6].copy()

    start = brush.clamped(height, width)
    end = BrushState(
        row=start.row + offset_from_action(dh, max_offset_row),
        col=start.col + offset_from_action(dw, max_offset_col),
    ).clamped(height, width)

    radius = stamp_radius(stroke_width, max_radius)
    out = canvas.copy()

    length = float(np.hypot(end.row - start.row, end.col - start.col))
    n_stamps = max(int(np.ceil(length)), 1) + 1
    for i in range(n_stamps):
        t = i / (n_stamps - 1) if n_stamps > 1 else 0.0
        _stamp(
            out,
            start.row + t * (end.row - start.row),
            start.col + t * (end.col - start.col),
            radius,
            color,
        )
    return out, end
