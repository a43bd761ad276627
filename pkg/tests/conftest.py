"""Shared fixtures and independent oracles.

The convolution oracle below is a direct nested-loop transcription of the
output definitions (zero padding in same mode; in window mode, columns
slide with the kernel column and out-of-range rows contribute zero; stride
keeps even-indexed output rows and columns). It deliberately shares no
code with the engines it checks.
"""

import numpy as np
import pytest

from muxconv.binarize import LatentWeights, binarize
from muxconv.pruning import build_mask
from muxconv.tensors import FeatureTensor, KernelTensor


def oracle_conv(x: np.ndarray, w: np.ndarray, mode: str = "same",
                stride: int = 1) -> np.ndarray:
    """Brute-force cross-correlation. x: (rows, cols, k); w: (kw, kh, k, l)."""
    rows, cols, in_maps = x.shape
    kw, kh, _, out_maps = w.shape
    if mode == "same":
        out_r, out_c = rows, cols
        off_r, off_c = kh // 2, kw // 2
    else:
        out_r, out_c = rows, max(cols - 2, 0)
        off_r, off_c = 1, 0
    y = np.zeros((out_r, out_c, out_maps))
    for i in range(out_r):
        for j in range(out_c):
            for l in range(out_maps):
                acc = 0.0
                for col in range(kw):
                    for row in range(kh):
                        for k in range(in_maps):
                            si = i + row - off_r
                            sj = j + col - off_c
                            if 0 <= si < rows and 0 <= sj < cols:
                                acc += w[col, row, k, l] * x[si, sj, k]
                y[i, j, l] = acc
    return y[::stride, ::stride]


def random_plane(rng, in_maps, out_maps, P=1):
    """Random deterministic-mask latents and their packed sign bits."""
    latent = LatentWeights(
        KernelTensor(rng.uniform(-1, 1, (3, 3, in_maps, out_maps))),
        build_mask(3, 3, in_maps, out_maps),
    )
    return latent, binarize(latent, P)


def random_real_tensor(rng, rows, cols, maps, scale=1.0):
    return FeatureTensor(rng.uniform(-scale, scale, (rows, cols, maps)))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
