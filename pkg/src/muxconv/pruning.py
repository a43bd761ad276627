"""Deterministic and random connection pruning for convolution kernels.

The deterministic rule keeps, in each (in_map, out_map) kernel slice, the
single position whose flat index matches the in_map index modulo the kernel
area: ``col + row * kernel_w == k (mod kernel_w * kernel_h)``. The kept
position depends only on the input map, never on the output map, which is
what lets the hardware share one windowed input row across all output maps
processed in parallel. Because the rule is a pure function of the
dimensions, masks are regenerated on demand and never serialized.

Random masks (m positions removed per slice, independently) exist for
robustness studies only; the hardware path does not support them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensors import KernelTensor

DETERMINISTIC = "deterministic"
RANDOM = "random"


def kept_position(k: int, kernel_w: int, kernel_h: int) -> tuple[int, int]:
    """Kept (col, row) for input map k under the deterministic rule.

    Periodic in k with period kernel_w * kernel_h.
    """
    if kernel_w < 1 or kernel_h < 1:
        raise ValueError("kernel extents must be >= 1")
    if k < 0:
        raise ValueError("map index must be >= 0")
    r = k % (kernel_w * kernel_h)
    return r % kernel_w, r // kernel_w


@dataclass(frozen=True)
class PruneMask:
    """Per-slice kept-position sets over a kernel_w x kernel_h kernel.

    ``kept`` is a boolean array of shape (kernel_w, kernel_h, in_maps,
    out_maps); True marks a surviving connection.
    """

    kernel_w: int
    kernel_h: int
    in_maps: int
    out_maps: int
    kept: np.ndarray
    scheme: str = DETERMINISTIC
    removed_per_slice: int = 0
    seed: int | None = None

    def kept_count(self) -> int:
        return int(self.kept.sum())

    def kept_per_slice(self) -> int:
        return self.kernel_w * self.kernel_h - self.removed_per_slice

    def slice_positions(self, k: int, l: int) -> set[tuple[int, int]]:
        cols, rows = np.nonzero(self.kept[:, :, k, l])
        return set(zip(cols.tolist(), rows.tolist()))

    def matches_shape(self, w: KernelTensor) -> bool:
        return self.kept.shape == w.shape


def build_mask(kernel_w: int, kernel_h: int, in_maps: int, out_maps: int) -> PruneMask:
    """Deterministic mask: one kept position per slice, shared across out_maps.

    Kept fraction is 1 / (kernel_w * kernel_h); 1x1 kernels are untouched.
    """
    if min(kernel_w, kernel_h, in_maps, out_maps) < 1:
        raise ValueError("all dimensions must be >= 1")
    kept = np.zeros((kernel_w, kernel_h, in_maps, out_maps), dtype=bool)
    for k in range(in_maps):
        col, row = kept_position(k, kernel_w, kernel_h)
        kept[col, row, k, :] = True
    return PruneMask(
        kernel_w, kernel_h, in_maps, out_maps, kept,
        scheme=DETERMINISTIC,
        removed_per_slice=kernel_w * kernel_h - 1,
    )


def random_mask(
    kernel_w: int,
    kernel_h: int,
    in_maps: int,
    out_maps: int,
    removed_per_slice: int,
    seed: int,
) -> PruneMask:
    """Remove ``removed_per_slice`` uniformly-chosen positions per slice."""
    area = kernel_w * kernel_h
    if not 0 <= removed_per_slice < area:
        raise ValueError(
            f"removed_per_slice must be in [0, {area}), got {removed_per_slice}"
        )
    rng = np.random.default_rng(seed)
    kept = np.ones((kernel_w, kernel_h, in_maps, out_maps), dtype=bool)
    for k in range(in_maps):
        for l in range(out_maps):
            drop = rng.choice(area, size=removed_per_slice, replace=False)
            for flat in drop:
                kept[flat % kernel_w, flat // kernel_w, k, l] = False
    return PruneMask(
        kernel_w, kernel_h, in_maps, out_maps, kept,
        scheme=RANDOM,
        removed_per_slice=removed_per_slice,
        seed=seed,
    )


def full_mask(kernel_w: int, kernel_h: int, in_maps: int, out_maps: int) -> PruneMask:
    """Mask that keeps everything (the m=0 corner of the random scheme)."""
    kept = np.ones((kernel_w, kernel_h, in_maps, out_maps), dtype=bool)
    return PruneMask(kernel_w, kernel_h, in_maps, out_maps, kept,
                     scheme=RANDOM, removed_per_slice=0, seed=0)


def coverage_stats(mask: PruneMask) -> dict:
    """How much of the kernel area the kept positions cover.

    For the deterministic scheme the histogram counts each distinct input
    map once (all out_maps share its position), so it sums to in_maps and,
    once in_maps reaches the kernel area, every position is used and counts
    differ by at most one. For random masks the histogram counts kept
    positions over all slices.
    """
    hist = np.zeros((mask.kernel_w, mask.kernel_h), dtype=np.int64)
    if mask.scheme == DETERMINISTIC:
        for k in range(mask.in_maps):
            col, row = kept_position(k, mask.kernel_w, mask.kernel_h)
            hist[col, row] += 1
    else:
        hist = mask.kept.sum(axis=(2, 3)).astype(np.int64)
    return {
        "positions_used": int(np.count_nonzero(hist)),
        "per_position_histogram": hist,
    }


def apply_mask(w: KernelTensor, mask: PruneMask) -> KernelTensor:
    """Zero every pruned connection; kept ones pass through. Idempotent."""
    if not mask.matches_shape(w):
        raise ValueError(
            f"mask shape {mask.kept.shape} does not match kernel {w.shape}"
        )
    return KernelTensor(np.where(mask.kept, w.data, 0.0))
