"""Two's-complement fixed-point arithmetic matching the hardware datapath.

Values are stored as raw signed integers; the real value is ``raw / 2**f``.
All arithmetic here is integer-exact so that the functional engines and the
cycle simulator produce bit-identical results. Overflow is handled per
format policy: ``saturate`` clamps to the representable range, ``wrap``
reduces modulo 2**n (plain two's-complement rollover).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SATURATE = "saturate"
WRAP = "wrap"
_POLICIES = (SATURATE, WRAP)


@dataclass(frozen=True)
class FixedPointFormat:
    """n-bit two's-complement format with f fraction bits."""

    n: int = 16
    f: int = 8
    policy: str = SATURATE

    def __post_init__(self):
        if not 2 <= self.n <= 32:
            raise ValueError(f"total bits must be in [2, 32], got {self.n}")
        if not 0 <= self.f < self.n:
            raise ValueError(f"fraction bits must be in [0, n), got {self.f}")
        if self.policy not in _POLICIES:
            raise ValueError(f"unknown overflow policy {self.policy!r}")

    @property
    def raw_min(self) -> int:
        return -(1 << (self.n - 1))

    @property
    def raw_max(self) -> int:
        return (1 << (self.n - 1)) - 1

    @property
    def scale(self) -> int:
        return 1 << self.f

    @property
    def resolution(self) -> float:
        return 1.0 / self.scale


#: n=16/f=8 saturating: enough headroom for ~2**7 worth of integer part,
#: which covers sums of up to 512 unit-magnitude activations at 1/256 steps.
DEFAULT_FORMAT = FixedPointFormat(16, 8, SATURATE)


@dataclass(frozen=True)
class FixedPointValue:
    raw: int
    fmt: FixedPointFormat

    def __post_init__(self):
        if not self.fmt.raw_min <= self.raw <= self.fmt.raw_max:
            raise ValueError(
                f"raw {self.raw} outside [{self.fmt.raw_min}, {self.fmt.raw_max}]"
            )

    @property
    def value(self) -> float:
        return self.raw / self.fmt.scale


def _wrap_raw(raw, fmt):
    span = 1 << fmt.n
    return (raw - fmt.raw_min) % span + fmt.raw_min


def handle_overflow_array(raw: np.ndarray, fmt: FixedPointFormat, counters=None) -> np.ndarray:
    """Range-handle an int64 raw array per the format's overflow policy.

    When ``counters`` is given, its ``saturations`` field is incremented by
    the number of lanes that fell outside the representable range (for both
    policies; under ``wrap`` these lanes roll over instead of clamping).
    """
    raw = np.asarray(raw, dtype=np.int64)
    if counters is not None:
        counters.saturations += int(
            np.count_nonzero((raw < fmt.raw_min) | (raw > fmt.raw_max))
        )
    if fmt.policy == SATURATE:
        return np.clip(raw, fmt.raw_min, fmt.raw_max)
    return _wrap_raw(raw, fmt)


def quantize_array(x: np.ndarray, fmt: FixedPointFormat, counters=None) -> np.ndarray:
    """Real array -> raw int64 array, rounding half away from zero."""
    x = np.asarray(x, dtype=np.float64)
    scaled = x * fmt.scale
    rounded = np.copysign(np.floor(np.abs(scaled) + 0.5), scaled)
    return handle_overflow_array(rounded.astype(np.int64), fmt, counters)


def dequantize_array(raw: np.ndarray, fmt: FixedPointFormat) -> np.ndarray:
    return np.asarray(raw, dtype=np.float64) / fmt.scale


def negate_array(raw: np.ndarray, fmt: FixedPointFormat, counters=None) -> np.ndarray:
    """Lane-wise negation; -raw_min is out of range and follows the policy.

    This models the dedicated negation leg feeding the sign multiplexer, so
    it must be applied *before* accumulation, never fused into a subtract.
    """
    return handle_overflow_array(-np.asarray(raw, dtype=np.int64), fmt, counters)


def add_arrays(a: np.ndarray, b: np.ndarray, fmt: FixedPointFormat, counters=None) -> np.ndarray:
    """Lane-wise raw addition with policy-handled overflow."""
    s = np.asarray(a, dtype=np.int64) + np.asarray(b, dtype=np.int64)
    return handle_overflow_array(s, fmt, counters)


def quantize(x: float, fmt: FixedPointFormat) -> FixedPointValue:
    """Round a real number half away from zero into the format."""
    return FixedPointValue(int(quantize_array(np.float64(x), fmt)), fmt)


def fx_add(a: FixedPointValue, b: FixedPointValue) -> FixedPointValue:
    if a.fmt != b.fmt:
        raise ValueError(f"format mismatch: {a.fmt} vs {b.fmt}")
    return FixedPointValue(int(add_arrays(a.raw, b.raw, a.fmt)), a.fmt)


def fx_negate(a: FixedPointValue) -> FixedPointValue:
    return FixedPointValue(int(negate_array(a.raw, a.fmt)), a.fmt)
