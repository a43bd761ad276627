"""Network descriptions: ordered conv layer specs plus the pruning scheme.

These are the structural metadata shared by the memory accounting, the
serialization container, and the simulator presets. A config validates the
layer chain: output maps of layer t feed layer t+1, spatial width halves
across a stride-2 layer, and each layer's parallelism degree P must divide
its output map count.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .fixedpoint import DEFAULT_FORMAT, FixedPointFormat
from .pruning import DETERMINISTIC, RANDOM

KERNEL_3X3 = "3x3"
KERNEL_1X1 = "1x1"
_KERNELS = {KERNEL_3X3: (3, 3), KERNEL_1X1: (1, 1)}


class InvalidNetworkError(ValueError):
    """A layer spec or the layer chain violates a structural invariant."""


@dataclass(frozen=True)
class PruneScheme:
    kind: str = DETERMINISTIC
    removed_per_slice: int = 0  # random scheme only
    seed: int = 0               # random scheme only

    def __post_init__(self):
        if self.kind not in (DETERMINISTIC, RANDOM):
            raise InvalidNetworkError(f"unknown pruning scheme {self.kind!r}")


@dataclass(frozen=True)
class LayerSpec:
    name: str
    kernel: str
    width: int          # spatial width = height (square maps)
    in_maps: int
    out_maps: int
    stride: int = 1
    P: int = 1
    fmt: FixedPointFormat = DEFAULT_FORMAT

    def __post_init__(self):
        if self.kernel not in _KERNELS:
            raise InvalidNetworkError(f"unsupported kernel {self.kernel!r}")
        if self.width < 1 or self.in_maps < 1 or self.out_maps < 1:
            raise InvalidNetworkError(f"{self.name}: dimensions must be >= 1")
        if self.stride not in (1, 2):
            raise InvalidNetworkError(f"{self.name}: stride must be 1 or 2")
        if self.P < 1 or self.P > self.out_maps or self.out_maps % self.P:
            raise InvalidNetworkError(
                f"{self.name}: P={self.P} must divide out_maps={self.out_maps}"
            )

    @property
    def kernel_w(self) -> int:
        return _KERNELS[self.kernel][0]

    @property
    def kernel_h(self) -> int:
        return _KERNELS[self.kernel][1]

    @property
    def weight_count(self) -> int:
        return self.kernel_w * self.kernel_h * self.in_maps * self.out_maps

    @property
    def kept_weight_count(self) -> int:
        # deterministic rule: exactly one survivor per kernel slice
        return self.in_maps * self.out_maps

    @property
    def out_width(self) -> int:
        return self.width if self.stride == 1 else self.width // 2


@dataclass(frozen=True)
class NetworkConfig:
    layers: tuple[LayerSpec, ...]
    scheme: PruneScheme = field(default_factory=PruneScheme)
    version: int = 1

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        if not self.layers:
            raise InvalidNetworkError("network needs at least one layer")
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if prev.out_maps != nxt.in_maps:
                raise InvalidNetworkError(
                    f"{prev.name} -> {nxt.name}: out_maps {prev.out_maps} "
                    f"!= in_maps {nxt.in_maps}"
                )
            if prev.out_width != nxt.width:
                raise InvalidNetworkError(
                    f"{prev.name} -> {nxt.name}: width should be "
                    f"{prev.out_width}, got {nxt.width}"
                )
