"""Functional convolution paths, from float reference to hardware-exact.

Four engines share one geometry and agree with each other:

* ``conv2d_dense``     is the float cross-correlation reference oracle.
* ``conv2d_pruned``    accumulates per-slice taps over a pruning mask;
  with the deterministic mask each slice contributes a single scaled,
  shifted copy of its input map (no 2D kernel loop).
* ``conv2d_pruned_binary`` uses signs only: shifted input windows are added
  or subtracted, never multiplied.
* ``conv2d_fixed``     is an integer-exact replay of the accelerator datapath:
  input maps accumulate in ascending order with saturating lane adds, and
  negative windows come from the dedicated negation leg.

Geometry. ``same`` mode zero-pads so output size equals input size.
``hw_window`` mode mirrors the hardware's row windows: a row of W values
yields W-2 output columns (the window starts at the kept kernel column),
while vertical offsets reach into neighbor rows and read zeros past the
edges, so the row count is preserved. Stride 2 keeps the even-indexed
output rows and columns; on the column axis that is the multiplexer pair
selection in the stride-2 copy network.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .binarize import BinaryWeightPlane
from .fixedpoint import FixedPointFormat, add_arrays, negate_array
from .pruning import PruneMask
from .tensors import FIXED, REAL, FeatureTensor, KernelTensor

HW_WINDOW = "hw_window"
SAME = "same"


@dataclass(frozen=True)
class ConvConfig:
    stride: int = 1
    padding_mode: str = HW_WINDOW
    kernel_w: int = 3
    kernel_h: int = 3

    def __post_init__(self):
        if self.stride not in (1, 2):
            raise ValueError(f"stride must be 1 or 2, got {self.stride}")
        if self.padding_mode not in (HW_WINDOW, SAME):
            raise ValueError(f"unknown padding mode {self.padding_mode!r}")
        if self.padding_mode == HW_WINDOW and (self.kernel_w, self.kernel_h) != (3, 3):
            raise ValueError("hw_window mode requires a 3x3 kernel")

    def base_out_shape(self, rows: int, cols: int) -> tuple[int, int]:
        """Stride-1 output extents."""
        if self.padding_mode == SAME:
            return rows, cols
        return rows, max(cols - 2, 0)

    def out_shape(self, rows: int, cols: int) -> tuple[int, int]:
        r, c = self.base_out_shape(rows, cols)
        s = self.stride
        return (r + s - 1) // s, (c + s - 1) // s


@dataclass
class OpCounters:
    """Arithmetic performed per produced output, across instrumented calls.

    ``saturations`` counts fixed-point range events (clamps under saturate,
    rollovers under wrap); it is conservative for strided runs, where lanes
    that are computed and then discarded still count.
    """

    multiplications: int = 0
    additions: int = 0
    saturations: int = 0


def _window(plane: np.ndarray, col: int, row: int, cfg: ConvConfig) -> np.ndarray:
    """Shifted view of one input map for kernel offset (col, row), stride 1.

    Rows outside the input contribute zeros; hw_window slides the column
    window with the kernel column, same mode zero-pads both axes.
    """
    rows, cols = plane.shape
    out_r, out_c = cfg.base_out_shape(rows, cols)
    out = np.zeros((out_r, out_c), dtype=plane.dtype)
    if cfg.padding_mode == HW_WINDOW:
        dr = row - 1
        i0, i1 = max(0, -dr), min(out_r, rows - dr)
        if i1 > i0 and out_c:
            out[i0:i1, :] = plane[i0 + dr:i1 + dr, col:col + out_c]
    else:
        dr = row - cfg.kernel_h // 2
        dc = col - cfg.kernel_w // 2
        i0, i1 = max(0, -dr), min(out_r, rows - dr)
        j0, j1 = max(0, -dc), min(out_c, cols - dc)
        if i1 > i0 and j1 > j0:
            out[i0:i1, j0:j1] = plane[i0 + dr:i1 + dr, j0 + dc:j1 + dc]
    return out


def _subsample(y: np.ndarray, stride: int) -> np.ndarray:
    return y if stride == 1 else y[::stride, ::stride]


def _check_kernel(cfg: ConvConfig, kernel_w: int, kernel_h: int):
    if (cfg.kernel_w, cfg.kernel_h) != (kernel_w, kernel_h):
        raise ValueError(
            f"config kernel {cfg.kernel_w}x{cfg.kernel_h} does not match "
            f"weights {kernel_w}x{kernel_h}"
        )


def _apply_affine(y: np.ndarray, affine) -> np.ndarray:
    if affine is None:
        return y
    scale, shift = affine
    return y * np.asarray(scale, dtype=np.float64) + np.asarray(shift, dtype=np.float64)


def conv2d_dense(x: FeatureTensor, w: KernelTensor, cfg: ConvConfig,
                 counters: OpCounters | None = None, affine=None) -> FeatureTensor:
    """Reference float cross-correlation."""
    if x.kind != REAL:
        raise ValueError("dense path expects a real tensor")
    if x.maps != w.in_maps:
        raise ValueError(f"input has {x.maps} maps, kernel expects {w.in_maps}")
    _check_kernel(cfg, w.kernel_w, w.kernel_h)
    out_r, out_c = cfg.base_out_shape(x.rows, x.cols)
    y = np.zeros((out_r, out_c, w.out_maps))
    for k in range(w.in_maps):
        for col in range(w.kernel_w):
            for row in range(w.kernel_h):
                win = _window(x.data[:, :, k], col, row, cfg)
                y += win[:, :, None] * w.data[col, row, k, None, None, :]
    y = _subsample(y, cfg.stride)
    if counters is not None:
        taps = w.kernel_w * w.kernel_h * w.in_maps
        counters.multiplications += taps * y.size
        counters.additions += taps * y.size
    return FeatureTensor(_apply_affine(y, affine))


def conv2d_pruned(x: FeatureTensor, w: KernelTensor, mask: PruneMask,
                  cfg: ConvConfig, counters: OpCounters | None = None,
                  affine=None) -> FeatureTensor:
    """Masked convolution as shifted, scaled input-map accumulation.

    Equals ``conv2d_dense`` on the masked kernel; with the deterministic
    mask every slice reduces to one tap, so each input map contributes a
    single shift-scale-add.
    """
    if x.kind != REAL:
        raise ValueError("pruned path expects a real tensor")
    if not mask.matches_shape(w):
        raise ValueError("mask shape does not match weights")
    if x.maps != w.in_maps:
        raise ValueError(f"input has {x.maps} maps, kernel expects {w.in_maps}")
    _check_kernel(cfg, w.kernel_w, w.kernel_h)
    out_r, out_c = cfg.base_out_shape(x.rows, x.cols)
    y = np.zeros((out_r, out_c, w.out_maps))
    for k in range(w.in_maps):
        slice_kept = mask.kept[:, :, k, :]
        for col, row in zip(*np.nonzero(slice_kept.any(axis=2))):
            weights = np.where(slice_kept[col, row], w.data[col, row, k, :], 0.0)
            win = _window(x.data[:, :, k], int(col), int(row), cfg)
            y += win[:, :, None] * weights[None, None, :]
    y = _subsample(y, cfg.stride)
    if counters is not None:
        per_map = y.shape[0] * y.shape[1]
        counters.multiplications += mask.kept_count() * per_map
        counters.additions += mask.kept_count() * per_map
    return FeatureTensor(_apply_affine(y, affine))


def conv2d_pruned_binary(x: FeatureTensor, plane: BinaryWeightPlane,
                         cfg: ConvConfig,
                         counters: OpCounters | None = None) -> FeatureTensor:
    """Multiplication-free convolution: shifted windows added or subtracted.

    Value-equal to ``conv2d_pruned`` with a +-1 kernel. Fixed-point inputs
    are routed through the hardware-exact path.
    """
    if x.kind == FIXED:
        return conv2d_fixed(x, plane, cfg, x.fmt, counters)
    if x.maps != plane.in_maps:
        raise ValueError(f"input has {x.maps} maps, weights expect {plane.in_maps}")
    _check_kernel(cfg, plane.kernel_w, plane.kernel_h)
    positive = plane.sign_matrix() > 0
    out_r, out_c = cfg.base_out_shape(x.rows, x.cols)
    y = np.zeros((out_r, out_c, plane.out_maps))
    for k in range(plane.in_maps):
        col, row = plane.kept_tap(k)
        win = _window(x.data[:, :, k], col, row, cfg)
        pos = positive[k]
        y[:, :, pos] += win[:, :, None]
        y[:, :, ~pos] -= win[:, :, None]
    y = _subsample(y, cfg.stride)
    if counters is not None:
        counters.additions += plane.in_maps * y.size
    return FeatureTensor(y)


def conv2d_fixed(x: FeatureTensor, plane: BinaryWeightPlane, cfg: ConvConfig,
                 fmt: FixedPointFormat,
                 counters: OpCounters | None = None) -> FeatureTensor:
    """Integer replay of the accelerator's accumulation, bit-exact.

    Per output lane: start from zero, then for each input map in ascending
    order add the windowed row or its negation (sign selected by the weight
    bit), with the format's overflow policy applied at every step.
    """
    if x.kind != FIXED:
        raise ValueError("fixed path expects a fixed-point tensor")
    if x.fmt != fmt:
        raise ValueError("tensor format does not match requested format")
    if cfg.padding_mode != HW_WINDOW:
        raise ValueError("fixed path models the hardware window mode only")
    if x.maps != plane.in_maps:
        raise ValueError(f"input has {x.maps} maps, weights expect {plane.in_maps}")
    _check_kernel(cfg, plane.kernel_w, plane.kernel_h)
    positive = plane.sign_matrix() > 0
    out_r, out_c = cfg.base_out_shape(x.rows, x.cols)
    acc = np.zeros((out_r, out_c, plane.out_maps), dtype=np.int64)
    for k in range(plane.in_maps):
        col, row = plane.kept_tap(k)
        win = _window(x.data[:, :, k], col, row, cfg)
        neg = negate_array(win, fmt, counters)
        addend = np.where(positive[k][None, None, :], win[:, :, None], neg[:, :, None])
        acc = add_arrays(acc, addend, fmt, counters)
    acc = _subsample(acc, cfg.stride)
    if counters is not None:
        counters.additions += plane.in_maps * acc.size
    return FeatureTensor(acc, fmt)


def relu(t: FeatureTensor) -> FeatureTensor:
    """Elementwise max(0, x); operates on raw values for fixed tensors."""
    if t.kind == FIXED:
        return FeatureTensor(np.maximum(t.data, 0), t.fmt)
    return FeatureTensor(np.maximum(t.data, 0.0))
