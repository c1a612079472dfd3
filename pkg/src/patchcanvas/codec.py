"""Encoder/decoder boundary and seam-free tiled decoding.

Large latents are decoded tile by tile in four half-tile-shifted tilings so
that tile edges and corners of one tiling fall inside the interior of
another. Each decoded tile is weighted by a separable Hann window (evaluated
with a half-sample offset so no pixel ever gets zero weight), sums are
accumulated together with the weights, and the result is normalized by the
total weight. Tiles clamped at the canvas border get a one-sided flat window
extension on the clamped side.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np


@dataclass(frozen=True)
class Codec:
    """Latent <-> pixel pair; decode may upscale by an integer factor."""

    encode: Callable[[np.ndarray], np.ndarray]
    decode: Callable[[np.ndarray], np.ndarray]
    scale: int = 1


def identity_codec() -> Codec:
    return Codec(encode=lambda x: x, decode=lambda x: x, scale=1)


def gain_codec(factor: float) -> Codec:
    """Pixelwise test codec that multiplies by a constant."""
    return Codec(encode=lambda x: x / factor, decode=lambda x: x * factor, scale=1)


def hann_window(n: int) -> np.ndarray:
    """Periodic Hann weights on half-sample offsets: never zero."""
    k = np.arange(n) + 0.5
    return 0.5 * (1.0 - np.cos(2.0 * np.pi * k / n))


def _axis_plan(dim: int, tile: int, offset: int) -> list[tuple[int, bool, bool]]:
    """Clamped tile starts of one shifted tiling along one axis.

    Returns (start, flat_low, flat_high) per tile; the flat flags mark sides
    where the conceptual tile stuck out past the canvas and was clamped.
    """
    plans = []
    s = offset - tile if offset > 0 else offset
    while s < dim:
        if s + tile > 0:
            clamped = min(max(s, 0), dim - tile)
            plans.append((clamped, s < 0, s > dim - tile))
        s += tile
    return plans


def _axis_window(n: int, flat_low: bool, flat_high: bool) -> np.ndarray:
    w = hann_window(n).copy()
    half = n // 2
    low_val, high_val = w[half], w[half - 1]
    if flat_low:
        w[:half] = low_val
    if flat_high:
        w[half:] = high_val
    return w


def hann_decode(latent, codec: Codec, tile_h: int, tile_w: int,
                tile_order: list[int] | None = None) -> np.ndarray:
    """Seam-free decode of a latent canvas through four overlapping tilings.

    ``tile_order`` only permutes the order in which tiles are decoded
    (mirroring concurrent completion); accumulation always runs in the
    canonical tiling order, so the output is order-independent.
    """
    values = latent.values if hasattr(latent, "values") else np.asarray(latent, dtype=float)
    _, height, width = values.shape
    if tile_h > height or tile_w > width:
        raise ValueError(f"tile {tile_h}x{tile_w} larger than latent {height}x{width}")
    if tile_h % 2 or tile_w % 2:
        raise ValueError("tile dims must be even")

    configs = ((0, 0), (0, tile_w // 2), (tile_h // 2, 0), (tile_h // 2, tile_w // 2))
    jobs = []
    for oh, ow in configs:
        for r0, flat_top, flat_bottom in _axis_plan(height, tile_h, oh):
            for c0, flat_left, flat_right in _axis_plan(width, tile_w, ow):
                jobs.append((r0, c0, flat_top, flat_bottom, flat_left, flat_right))

    order = range(len(jobs)) if tile_order is None else tile_order
    if sorted(order) != list(range(len(jobs))):
        raise ValueError(f"tile_order must be a permutation of range({len(jobs)})")

    s = codec.scale
    decoded: dict[int, np.ndarray] = {}
    for i in order:
        r0, c0, *_ = jobs[i]
        decoded[i] = np.asarray(codec.decode(values[:, r0:r0 + tile_h, c0:c0 + tile_w]), dtype=float)

    out_channels = decoded[0].shape[0]
    acc = np.zeros((out_channels, height * s, width * s))
    weight = np.zeros((height * s, width * s))
    for i, (r0, c0, flat_top, flat_bottom, flat_left, flat_right) in enumerate(jobs):
        win = np.outer(_axis_window(tile_h * s, flat_top, flat_bottom),
                       _axis_window(tile_w * s, flat_left, flat_right))
        rows = slice(r0 * s, (r0 + tile_h) * s)
        cols = slice(c0 * s, (c0 + tile_w) * s)
        acc[:, rows, cols] += decoded[i] * win
        weight[rows, cols] += win
    if not np.all(weight > 0):
        raise AssertionError("zero accumulated weight; tiling construction is broken")
    return acc / weight
