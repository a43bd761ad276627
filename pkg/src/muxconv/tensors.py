"""Dense activation and kernel tensors with checked index conventions.

A FeatureTensor is indexed (row, col, map); a KernelTensor is indexed
(col_offset, row_offset, in_map, out_map), where the two offsets are the
kernel's horizontal and vertical positions. Both kinds reject out-of-range
indices instead of wrapping. Feature tensors come in two scalar kinds:
``real`` (float64, used by the reference engines) and ``fixed`` (int64 raw
values plus a FixedPointFormat, used by the hardware-exact paths).
"""

from __future__ import annotations

import numpy as np

from .fixedpoint import FixedPointFormat, dequantize_array, quantize_array

REAL = "real"
FIXED = "fixed"


def _check_index(name, idx, bound):
    if not 0 <= idx < bound:
        raise IndexError(f"{name}={idx} out of range [0, {bound})")


class FeatureTensor:
    """(rows, cols, maps) activation tensor, row-major with maps innermost."""

    def __init__(self, data: np.ndarray, fmt: FixedPointFormat | None = None):
        data = np.asarray(data)
        if data.ndim != 3:
            raise ValueError(f"expected 3 axes (rows, cols, maps), got {data.ndim}")
        if fmt is None:
            self.data = np.ascontiguousarray(data, dtype=np.float64)
        else:
            self.data = np.ascontiguousarray(data, dtype=np.int64)
            if self.data.size and (
                self.data.min() < fmt.raw_min or self.data.max() > fmt.raw_max
            ):
                raise ValueError("raw values outside representable range")
        self.fmt = fmt

    @property
    def kind(self) -> str:
        return REAL if self.fmt is None else FIXED

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    @property
    def maps(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self):
        return self.data.shape

    def at(self, i: int, j: int, k: int):
        """Element accessor with hard bounds checks (no negative wrapping)."""
        _check_index("row", i, self.rows)
        _check_index("col", j, self.cols)
        _check_index("map", k, self.maps)
        v = self.data[i, j, k]
        return int(v) if self.fmt is not None else float(v)

    def set_at(self, i: int, j: int, k: int, value):
        # construction-time writer; tensors are treated as immutable afterwards
        _check_index("row", i, self.rows)
        _check_index("col", j, self.cols)
        _check_index("map", k, self.maps)
        self.data[i, j, k] = value

    def values(self) -> np.ndarray:
        """Float view of the contents (dequantized for fixed tensors)."""
        if self.fmt is None:
            return self.data
        return dequantize_array(self.data, self.fmt)

    @classmethod
    def zeros(cls, rows, cols, maps, fmt=None):
        dtype = np.float64 if fmt is None else np.int64
        return cls(np.zeros((rows, cols, maps), dtype=dtype), fmt)

    @classmethod
    def quantized(cls, real: "FeatureTensor", fmt: FixedPointFormat) -> "FeatureTensor":
        if real.kind != REAL:
            raise ValueError("expected a real tensor")
        return cls(quantize_array(real.data, fmt), fmt)

    def to_real(self) -> "FeatureTensor":
        return FeatureTensor(self.values().copy())

    def __repr__(self):
        return f"FeatureTensor({self.rows}x{self.cols}x{self.maps}, {self.kind})"


class KernelTensor:
    """(kernel_w, kernel_h, in_maps, out_maps) real-valued weight tensor.

    Offsets are half-open: a 3x3 kernel has positions (0..2, 0..2).
    """

    def __init__(self, data: np.ndarray):
        data = np.asarray(data, dtype=np.float64)
        if data.ndim != 4:
            raise ValueError(f"expected 4 axes, got {data.ndim}")
        self.data = np.ascontiguousarray(data)

    @property
    def kernel_w(self) -> int:
        return self.data.shape[0]

    @property
    def kernel_h(self) -> int:
        return self.data.shape[1]

    @property
    def in_maps(self) -> int:
        return self.data.shape[2]

    @property
    def out_maps(self) -> int:
        return self.data.shape[3]

    @property
    def shape(self):
        return self.data.shape

    def at(self, col: int, row: int, k: int, l: int) -> float:
        _check_index("col_offset", col, self.kernel_w)
        _check_index("row_offset", row, self.kernel_h)
        _check_index("in_map", k, self.in_maps)
        _check_index("out_map", l, self.out_maps)
        return float(self.data[col, row, k, l])

    def set_at(self, col: int, row: int, k: int, l: int, value: float):
        _check_index("col_offset", col, self.kernel_w)
        _check_index("row_offset", row, self.kernel_h)
        _check_index("in_map", k, self.in_maps)
        _check_index("out_map", l, self.out_maps)
        self.data[col, row, k, l] = value

    @classmethod
    def zeros(cls, kernel_w, kernel_h, in_maps, out_maps):
        return cls(np.zeros((kernel_w, kernel_h, in_maps, out_maps)))

    def copy(self) -> "KernelTensor":
        return KernelTensor(self.data.copy())

    def __repr__(self):
        return (
            f"KernelTensor({self.kernel_w}x{self.kernel_h}, "
            f"{self.in_maps}->{self.out_maps})"
        )
