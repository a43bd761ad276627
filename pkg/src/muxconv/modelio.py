"""The MXCV model container and flat tensor file formats.

Container layout (all integers little-endian):

    magic      4 bytes  b"MXCV"
    version    u16
    config_len u32
    config     UTF-8 JSON (human-readable network description)
    flags      u8       bit0: packed sign bits present, bit1: latents present
    bits       per layer: u32 bit count, then ceil(count/8) bytes
               (bit 0 of byte 0 is the first weight in packing order)
    latents    per layer: u32 value count, then count float32 values
               (row-major over (kernel_col, kernel_row, in_map, out_map))
    checksum   u32 CRC32 over every preceding byte

Masks are never stored: both pruning schemes regenerate from the config
(the deterministic rule from the dimensions, the random one from its m and
seed), so a config carrying explicit mask positions is malformed. Each
failure mode has its own exception type so callers can distinguish a wrong
file from a damaged one.

Flat tensor files (used for CLI inputs/outputs and external weights) are a
rank u32, that many u32 dims, then float32 values in row-major order.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass

import numpy as np

from .binarize import BinaryWeightPlane, LatentWeights
from .fixedpoint import FixedPointFormat
from .network import InvalidNetworkError, LayerSpec, NetworkConfig, PruneScheme
from .pruning import DETERMINISTIC, build_mask, full_mask, random_mask
from .tensors import FeatureTensor, KernelTensor

MAGIC = b"MXCV"
FORMAT_VERSION = 1
_FLAG_BITS = 1
_FLAG_LATENT = 2


class ModelBlobError(ValueError):
    """Base class for container failures."""


class MagicError(ModelBlobError):
    pass


class VersionError(ModelBlobError):
    pass


class CountMismatchError(ModelBlobError):
    """A declared length disagrees with the config or the stream ends early."""


class ChecksumError(ModelBlobError):
    pass


class ConfigError(ModelBlobError):
    """The embedded config is malformed or violates an invariant."""


# ---------------------------------------------------------------------------
# config <-> JSON


def _scheme_to_json(s: PruneScheme) -> dict:
    if s.kind == DETERMINISTIC:
        return {"kind": s.kind}
    return {"kind": s.kind, "removed_per_slice": s.removed_per_slice, "seed": s.seed}


def _layer_to_json(layer: LayerSpec) -> dict:
    return {
        "name": layer.name,
        "kernel": layer.kernel,
        "width": layer.width,
        "in_maps": layer.in_maps,
        "out_maps": layer.out_maps,
        "stride": layer.stride,
        "P": layer.P,
        "fmt": {"n": layer.fmt.n, "f": layer.fmt.f, "policy": layer.fmt.policy},
    }


def config_to_json(config: NetworkConfig) -> str:
    doc = {
        "version": config.version,
        "scheme": _scheme_to_json(config.scheme),
        "layers": [_layer_to_json(l) for l in config.layers],
    }
    return json.dumps(doc, indent=1)


def _reject_mask_positions(node):
    if isinstance(node, dict):
        if "mask_positions" in node:
            raise ConfigError(
                "mask positions must not be stored; masks regenerate from the config"
            )
        for v in node.values():
            _reject_mask_positions(v)
    elif isinstance(node, list):
        for v in node:
            _reject_mask_positions(v)


def config_from_json(text: str) -> NetworkConfig:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"config is not valid JSON: {e}") from None
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    _reject_mask_positions(doc)
    try:
        scheme_doc = doc["scheme"]
        scheme = PruneScheme(
            kind=scheme_doc["kind"],
            removed_per_slice=scheme_doc.get("removed_per_slice", 0),
            seed=scheme_doc.get("seed", 0),
        )
        layers = []
        for entry in doc["layers"]:
            fmt = entry["fmt"]
            layers.append(LayerSpec(
                name=entry["name"],
                kernel=entry["kernel"],
                width=entry["width"],
                in_maps=entry["in_maps"],
                out_maps=entry["out_maps"],
                stride=entry.get("stride", 1),
                P=entry.get("P", 1),
                fmt=FixedPointFormat(fmt["n"], fmt["f"], fmt["policy"]),
            ))
        return NetworkConfig(tuple(layers), scheme, version=doc.get("version", 1))
    except (KeyError, TypeError) as e:
        raise ConfigError(f"config is missing or mistypes a field: {e}") from None
    except (InvalidNetworkError, ValueError) as e:
        raise ConfigError(str(e)) from None


def masks_for(config: NetworkConfig):
    """Regenerate the per-layer masks implied by the config's scheme."""
    masks = []
    for layer in config.layers:
        if config.scheme.kind == DETERMINISTIC:
            masks.append(build_mask(layer.kernel_w, layer.kernel_h,
                                    layer.in_maps, layer.out_maps))
        elif config.scheme.removed_per_slice == 0:
            masks.append(full_mask(layer.kernel_w, layer.kernel_h,
                                   layer.in_maps, layer.out_maps))
        else:
            masks.append(random_mask(layer.kernel_w, layer.kernel_h,
                                     layer.in_maps, layer.out_maps,
                                     config.scheme.removed_per_slice,
                                     config.scheme.seed))
    return masks


# ---------------------------------------------------------------------------
# container encode / decode


@dataclass
class ImportedModel:
    config: NetworkConfig
    planes: list | None = None    # BinaryWeightPlane per layer
    latents: list | None = None   # LatentWeights per layer


def export_blob(config: NetworkConfig, planes=None, latents=None) -> bytes:
    """Serialize deterministically: equal inputs give identical bytes."""
    if planes is not None:
        if config.scheme.kind != DETERMINISTIC:
            raise ConfigError("packed sign bits require the deterministic scheme")
        if len(planes) != len(config.layers):
            raise CountMismatchError(
                f"{len(planes)} weight planes for {len(config.layers)} layers")
        for layer, plane in zip(config.layers, planes):
            if (plane.in_maps, plane.out_maps) != (layer.in_maps, layer.out_maps) \
                    or (plane.kernel_w, plane.kernel_h) != (layer.kernel_w, layer.kernel_h) \
                    or plane.P != layer.P:
                raise CountMismatchError(f"weight plane does not match {layer.name}")
    if latents is not None and len(latents) != len(config.layers):
        raise CountMismatchError(
            f"{len(latents)} latent tensors for {len(config.layers)} layers")

    out = bytearray()
    out += MAGIC
    out += struct.pack("<H", FORMAT_VERSION)
    config_bytes = config_to_json(config).encode("utf-8")
    out += struct.pack("<I", len(config_bytes))
    out += config_bytes
    flags = (_FLAG_BITS if planes is not None else 0) | \
            (_FLAG_LATENT if latents is not None else 0)
    out += struct.pack("<B", flags)
    if planes is not None:
        for plane in planes:
            nbits = plane.in_maps * plane.out_maps
            out += struct.pack("<I", nbits)
            out += plane.packed_bytes()
    if latents is not None:
        for layer, latent in zip(config.layers, latents):
            values = latent.weights.data
            if values.shape != (layer.kernel_w, layer.kernel_h,
                                layer.in_maps, layer.out_maps):
                raise CountMismatchError(f"latent shape mismatch for {layer.name}")
            out += struct.pack("<I", values.size)
            out += values.astype("<f4").tobytes()
    out += struct.pack("<I", zlib.crc32(bytes(out)))
    return bytes(out)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise CountMismatchError(
                f"stream ends inside {what}: need {n} bytes at offset {self.pos}")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u8(self, what):
        return struct.unpack("<B", self.take(1, what))[0]

    def u16(self, what):
        return struct.unpack("<H", self.take(2, what))[0]

    def u32(self, what):
        return struct.unpack("<I", self.take(4, what))[0]


def import_blob(data: bytes) -> ImportedModel:
    """Parse and validate a container; every invariant is re-checked."""
    r = _Reader(data)
    if r.take(4, "magic") != MAGIC:
        raise MagicError("not an MXCV container")
    version = r.u16("version")
    if version != FORMAT_VERSION:
        raise VersionError(f"format version {version}, supported: {FORMAT_VERSION}")
    config_len = r.u32("config length")
    config = config_from_json(r.take(config_len, "config").decode("utf-8"))
    flags = r.u8("flags")
    if flags & ~(_FLAG_BITS | _FLAG_LATENT):
        raise ConfigError(f"unknown section flags {flags:#04x}")

    planes = None
    if flags & _FLAG_BITS:
        if config.scheme.kind != DETERMINISTIC:
            raise ConfigError("packed sign bits require the deterministic scheme")
        planes = []
        for layer in config.layers:
            expected = layer.in_maps * layer.out_maps
            declared = r.u32(f"bit count of {layer.name}")
            if declared != expected:
                raise CountMismatchError(
                    f"{layer.name}: declared {declared} bits, config implies {expected}")
            payload = r.take((expected + 7) // 8, f"bits of {layer.name}")
            planes.append(BinaryWeightPlane.from_packed(
                payload, layer.kernel_w, layer.kernel_h,
                layer.in_maps, layer.out_maps, layer.P))

    latents = None
    if flags & _FLAG_LATENT:
        latents = []
        masks = masks_for(config)
        for layer, mask in zip(config.layers, masks):
            expected = layer.weight_count
            declared = r.u32(f"latent count of {layer.name}")
            if declared != expected:
                raise CountMismatchError(
                    f"{layer.name}: declared {declared} latents, config implies {expected}")
            raw = r.take(4 * expected, f"latents of {layer.name}")
            values = np.frombuffer(raw, dtype="<f4").astype(np.float64).reshape(
                layer.kernel_w, layer.kernel_h, layer.in_maps, layer.out_maps)
            latents.append(LatentWeights(KernelTensor(values), mask))

    declared_crc = r.u32("checksum")
    if r.pos != len(data):
        raise CountMismatchError(f"{len(data) - r.pos} trailing bytes after checksum")
    actual_crc = zlib.crc32(data[:-4])
    if declared_crc != actual_crc:
        raise ChecksumError(
            f"checksum {declared_crc:#010x} does not match payload {actual_crc:#010x}")
    return ImportedModel(config=config, planes=planes, latents=latents)


# ---------------------------------------------------------------------------
# flat tensor files


def write_flat_tensor(array: np.ndarray) -> bytes:
    out = bytearray(struct.pack("<I", array.ndim))
    out += struct.pack(f"<{array.ndim}I", *array.shape)
    out += np.ascontiguousarray(array, dtype="<f4").tobytes()
    return bytes(out)


def read_flat_tensor(data: bytes, expect_rank: int | None = None):
    r = _Reader(data)
    rank = r.u32("rank")
    if expect_rank is not None and rank != expect_rank:
        raise CountMismatchError(f"expected rank {expect_rank}, got {rank}")
    dims = struct.unpack(f"<{rank}I", r.take(4 * rank, "dims"))
    count = int(np.prod(dims)) if dims else 1
    values = np.frombuffer(r.take(4 * count, "values"), dtype="<f4")
    if r.pos != len(data):
        raise CountMismatchError(f"{len(data) - r.pos} trailing bytes")
    return values.astype(np.float64).reshape(dims)


def write_feature_tensor(t: FeatureTensor) -> bytes:
    return write_flat_tensor(t.values())


def read_feature_tensor(data: bytes) -> FeatureTensor:
    return FeatureTensor(read_flat_tensor(data, expect_rank=3))


@dataclass
class IngestResult:
    latents: list           # LatentWeights per layer
    clipped_values: int     # how many fell outside [-1, 1] and were clipped


def write_flat_weights(kernels) -> bytes:
    """Concatenated flat tensors, one rank-4 record per conv layer."""
    out = bytearray()
    for kernel in kernels:
        out += write_flat_tensor(kernel.data)
    return bytes(out)


def ingest_float_weights(data: bytes, config: NetworkConfig) -> IngestResult:
    """Load externally trained latent weights against a config.

    Shapes must match the config exactly; out-of-range values clip to
    [-1, 1] and are counted.
    """
    r = _Reader(data)
    masks = masks_for(config)
    latents = []
    clipped = 0
    for layer, mask in zip(config.layers, masks):
        shape = (layer.kernel_w, layer.kernel_h, layer.in_maps, layer.out_maps)
        rank = r.u32(f"rank of {layer.name}")
        if rank != 4:
            raise CountMismatchError(f"{layer.name}: expected rank 4, got {rank}")
        dims = struct.unpack("<4I", r.take(16, f"dims of {layer.name}"))
        if dims != shape:
            raise CountMismatchError(
                f"{layer.name}: file shape {dims}, config expects {shape}")
        count = int(np.prod(dims))
        values = np.frombuffer(
            r.take(4 * count, f"values of {layer.name}"), dtype="<f4"
        ).astype(np.float64).reshape(shape)
        clipped += int(np.count_nonzero((values < -1.0) | (values > 1.0)))
        latents.append(LatentWeights(KernelTensor(np.clip(values, -1.0, 1.0)), mask))
    if r.pos != len(data):
        raise CountMismatchError(f"{len(data) - r.pos} trailing bytes")
    return IngestResult(latents, clipped)
