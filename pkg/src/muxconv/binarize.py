"""Sign binarization of pruned kernels and the packed 1-bit weight layout.

Training keeps full-precision latent weights clipped to [-1, 1]; deployment
keeps only the sign of each surviving connection. With the deterministic
mask that is a single bit per (in_map, out_map) pair. Bits are packed in
the order the processing unit consumes them: output maps are grouped P at
a time, and within a group the in_map index varies slower than the within-
group lane, so the P lanes needed in one cycle sit in one contiguous bit
word. Bit value 1 means weight +1 (ties at exactly 0 binarize to +1).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .network import NetworkConfig
from .pruning import DETERMINISTIC, PruneMask, kept_position
from .tensors import KernelTensor

FULL32 = "full32"
BC = "bc"
PRUNED_BC = "pruned_bc"


@dataclass
class LatentWeights:
    """Full-precision weights plus their pruning mask."""

    weights: KernelTensor
    mask: PruneMask

    def __post_init__(self):
        if not self.mask.matches_shape(self.weights):
            raise ValueError("mask shape does not match weights")

    def clip_inplace(self):
        np.clip(self.weights.data, -1.0, 1.0, out=self.weights.data)


@dataclass(frozen=True)
class BinaryWeightPlane:
    """Packed sign bits for one deterministically pruned layer.

    ``bits`` is a flat uint8 0/1 array of length in_maps * out_maps; the bit
    for (k, l) with l = g*P + p lives at index g*(in_maps*P) + k*P + p.
    """

    kernel_w: int
    kernel_h: int
    in_maps: int
    out_maps: int
    P: int
    bits: np.ndarray

    def __post_init__(self):
        if self.out_maps % self.P:
            raise ValueError("P must divide out_maps")
        if self.bits.shape != (self.in_maps * self.out_maps,):
            raise ValueError("bit count must equal in_maps * out_maps")

    def _index(self, k: int, l: int) -> int:
        g, p = divmod(l, self.P)
        return g * (self.in_maps * self.P) + k * self.P + p

    def bit(self, k: int, l: int) -> int:
        return int(self.bits[self._index(k, l)])

    def sign(self, k: int, l: int) -> int:
        return 1 if self.bit(k, l) else -1

    def lane_word(self, group: int, k: int) -> np.ndarray:
        """The P bits read in one processing cycle, as a boolean vector."""
        base = group * (self.in_maps * self.P) + k * self.P
        return self.bits[base:base + self.P].astype(bool)

    def sign_matrix(self) -> np.ndarray:
        """(in_maps, out_maps) array of +-1, for the functional engines."""
        signs = np.empty((self.in_maps, self.out_maps), dtype=np.int64)
        for l in range(self.out_maps):
            g, p = divmod(l, self.P)
            base = g * (self.in_maps * self.P) + p
            col = self.bits[base:base + self.in_maps * self.P:self.P]
            signs[:, l] = np.where(col, 1, -1)
        return signs

    def kept_tap(self, k: int) -> tuple[int, int]:
        return kept_position(k, self.kernel_w, self.kernel_h)

    def packed_bytes(self) -> bytes:
        """Bits packed little-endian within bytes, padded to a byte edge."""
        return np.packbits(self.bits, bitorder="little").tobytes()

    @classmethod
    def from_packed(cls, payload, kernel_w, kernel_h, in_maps, out_maps, P):
        nbits = in_maps * out_maps
        if len(payload) != (nbits + 7) // 8:
            raise ValueError("payload length does not match bit count")
        bits = np.unpackbits(
            np.frombuffer(payload, dtype=np.uint8), bitorder="little"
        )[:nbits]
        return cls(kernel_w, kernel_h, in_maps, out_maps, P, bits.copy())


def binarize(latent: LatentWeights, P: int = 1) -> BinaryWeightPlane:
    """Pack the signs of the kept latent weights, grouped P output maps wide."""
    mask = latent.mask
    if mask.scheme != DETERMINISTIC:
        raise ValueError("only deterministic masks have a packed binary form")
    w = latent.weights
    if w.out_maps % P:
        raise ValueError(f"P={P} must divide out_maps={w.out_maps}")
    bits = np.zeros(w.in_maps * w.out_maps, dtype=np.uint8)
    plane = BinaryWeightPlane(mask.kernel_w, mask.kernel_h,
                              w.in_maps, w.out_maps, P, bits)
    for k in range(w.in_maps):
        col, row = kept_position(k, mask.kernel_w, mask.kernel_h)
        for l in range(w.out_maps):
            bits[plane._index(k, l)] = 1 if w.data[col, row, k, l] >= 0 else 0
    return plane


def bc_update(latent: LatentWeights, grad: KernelTensor, lr: float) -> LatentWeights:
    """One latent-weight step: descend, then clip to [-1, 1].

    The gradient is taken with respect to the binarized weights and passed
    straight through to the latents wherever |latent| <= 1 (always true
    after clipping). Pruned positions are never touched.
    """
    w = latent.weights
    if grad.shape != w.shape:
        raise ValueError(f"gradient shape {grad.shape} != weights {w.shape}")
    kept = latent.mask.kept
    ste_gate = np.abs(w.data) <= 1.0
    stepped = w.data - lr * grad.data * ste_gate
    new = np.where(kept, np.clip(stepped, -1.0, 1.0), w.data)
    return LatentWeights(KernelTensor(new), latent.mask)


def memory_footprint(net: NetworkConfig, scheme: str) -> int:
    """Kernel-weight storage in bytes under the given encoding.

    full32: 32 bits per weight; bc: 1 bit per weight; pruned_bc: 1 bit per
    connection kept by the deterministic rule. Metadata is excluded; bit
    totals round up to whole bytes.
    """
    if scheme == FULL32:
        bits = sum(32 * layer.weight_count for layer in net.layers)
    elif scheme == BC:
        bits = sum(layer.weight_count for layer in net.layers)
    elif scheme == PRUNED_BC:
        bits = sum(layer.kept_weight_count for layer in net.layers)
    else:
        raise ValueError(f"unknown footprint scheme {scheme!r}")
    return (bits + 7) // 8
