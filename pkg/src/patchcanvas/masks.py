"""Hierarchical mask generation: sample low-res, clean, upsample.

Segmentation masks carry integer labels in {0..N} with 0 meaning unknown.
A mask is produced by running the random-patch sampler on a dedicated mask
world conditioned only on a binary context prompt, then quantizing the
continuous field to labels. Cleaning zeroes the seam pixels between touching
regions of distinct labels and erases components too small to contain a
k x k square; upsampling interpolates per-label indicators and takes the
argmax, so no new labels can appear.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .sampler import SamplerRun, sample_random_patch, with_mask
from .world import AnalyticDenoiser, GaussianWorld


@dataclass
class SegmentationMask:
    labels: np.ndarray
    context: int = 0

    def __post_init__(self):
        self.labels = np.asarray(self.labels)
        if self.labels.ndim != 2 or not np.issubdtype(self.labels.dtype, np.integer):
            raise ValueError("mask labels must be a 2-D integer grid")
        if self.labels.min() < 0:
            raise ValueError("mask labels must be non-negative")

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]


def generate_mask(world: GaussianWorld, context: int, low_h: int, low_w: int,
                  run: SamplerRun, n_labels: int,
                  scale: float = 1.0, offset: float = 0.0) -> SegmentationMask:
    """Sample a raw (uncleaned) low-resolution mask for one context prompt.

    The continuous field is drawn by the random-patch sampler over the mask
    world, conditioned uniformly on class ``context + 1``; labels are then
    ``clip(round(scale * field + offset), 0, n_labels)``.
    """
    if low_h < run.patch_h or low_w < run.patch_w:
        raise ValueError("low-resolution extent must cover at least one sampler patch")
    if not 0 <= context < world.n_classes:
        raise ValueError(f"context {context} has no class mean in the mask world")
    if n_labels < 1:
        raise ValueError("need at least one label value")
    cond = np.full((low_h, low_w), context + 1, dtype=np.int64)
    mask_run = with_mask(run, cond)
    mask_run.denoiser = AnalyticDenoiser(world, run.schedule)
    field = sample_random_patch(mask_run, low_h, low_w).values[0]
    labels = np.clip(np.rint(scale * field + offset), 0, n_labels).astype(np.int64)
    return SegmentationMask(labels, context)


def clean_mask(m: SegmentationMask, minpool_k: int) -> SegmentationMask:
    """Zero seam pixels between distinct non-zero labels, then erase every
    labelled connected component that cannot contain a minpool_k square."""
    if minpool_k < 1 or minpool_k % 2 == 0:
        raise ValueError(f"minpool_k must be odd and >= 1, got {minpool_k}")
    labels = m.labels.copy()

    # seam zeroing: a pixel whose 4-neighbourhood holds a different non-zero
    # label is a boundary artifact, and both sides of the seam are erased
    conflict = np.zeros_like(labels, dtype=bool)
    v_pair = (labels[:-1, :] > 0) & (labels[1:, :] > 0) & (labels[:-1, :] != labels[1:, :])
    conflict[:-1, :] |= v_pair
    conflict[1:, :] |= v_pair
    h_pair = (labels[:, :-1] > 0) & (labels[:, 1:] > 0) & (labels[:, :-1] != labels[:, 1:])
    conflict[:, :-1] |= h_pair
    conflict[:, 1:] |= h_pair
    labels[conflict] = 0

    # small-component erasure per label: a component survives only if the
    # k x k erosion of its indicator is non-empty somewhere inside it
    for value in np.unique(labels):
        if value == 0:
            continue
        ind = labels == value
        eroded = ndimage.minimum_filter(ind.astype(np.uint8), size=minpool_k,
                                        mode="constant", cval=0).astype(bool)
        comp, _ = ndimage.label(ind)
        keep = np.unique(comp[eroded])
        labels[ind & ~np.isin(comp, keep)] = 0
    return SegmentationMask(labels, m.context)


def _interp_axis(arr: np.ndarray, target: int, axis: int) -> np.ndarray:
    n = arr.shape[axis]
    if target == n:
        return arr
    if n == 1:
        reps = [1] * arr.ndim
        reps[axis] = target
        return np.tile(arr, reps)
    x = np.linspace(0.0, n - 1.0, target)
    i0 = np.minimum(x.astype(np.int64), n - 2)
    frac = x - i0
    a0 = np.take(arr, i0, axis=axis)
    a1 = np.take(arr, i0 + 1, axis=axis)
    shape = [1] * arr.ndim
    shape[axis] = target
    frac = frac.reshape(shape)
    return a0 * (1.0 - frac) + a1 * frac


def upsample_mask(m: SegmentationMask, target_h: int, target_w: int) -> SegmentationMask:
    """Nearest-label upsampling via linear interpolation of label indicators
    followed by argmax; ties go to the lower label."""
    if target_h < m.height or target_w < m.width:
        raise ValueError(f"cannot downscale a {m.height}x{m.width} mask to {target_h}x{target_w}")
    if (target_h, target_w) == (m.height, m.width):
        return SegmentationMask(m.labels.copy(), m.context)
    values = np.unique(m.labels)  # ascending, so argmax ties pick the lower label
    stack = np.stack([(m.labels == v).astype(float) for v in values])
    stack = _interp_axis(stack, target_h, axis=1)
    stack = _interp_axis(stack, target_w, axis=2)
    out = values[np.argmax(stack, axis=0)]
    return SegmentationMask(out.astype(np.int64), m.context)
