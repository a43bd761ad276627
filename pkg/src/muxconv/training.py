"""Desk-scale training of pruned, binarized conv nets.

This exists to demonstrate, at toy scale, that training only the
connections kept by the deterministic rule works: the forward and backward
passes use the binarized weights, gradients flow straight through to the
latent weights (which stay clipped in [-1, 1]), and pruned positions never
receive gradient. The network shape is fixed: a stack of 3x3 same-padded
conv+ReLU blocks, global average pooling, and a real-valued linear
classifier head trained with softmax cross-entropy and plain SGD.

The synthetic dataset (oriented stripes and checkerboards) keeps the whole
suite self-contained; no downloads.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .binarize import LatentWeights, bc_update
from .pruning import PruneMask, build_mask, full_mask, random_mask
from .tensors import KernelTensor


class TrainingDivergedError(RuntimeError):
    """Loss became non-finite; reduce the learning rate."""


# ---------------------------------------------------------------------------
# synthetic dataset


@dataclass
class ToyDataset:
    train_x: np.ndarray  # (n, size, size, channels)
    train_y: np.ndarray
    test_x: np.ndarray
    test_y: np.ndarray
    classes: int
    seed: int


def _pattern(cls: int, size: int, rng) -> np.ndarray:
    period = 4
    pi, pj = rng.integers(0, period, size=2)
    i = np.arange(size)[:, None]
    j = np.arange(size)[None, :]
    stripes = lambda t: np.where(((t // (period // 2)) % 2) == 0, 1.0, -1.0)
    if cls == 0:
        return np.broadcast_to(stripes(i + pi), (size, size)).copy()
    if cls == 1:
        return np.broadcast_to(stripes(j + pj), (size, size)).copy()
    if cls == 2:
        return stripes(i + j + pi)
    return stripes(i + pi) * stripes(j + pj)


def make_toy_dataset(n_train_per_class: int = 40, n_test_per_class: int = 10,
                     classes: int = 4, size: int = 12, channels: int = 1,
                     noise: float = 0.3, seed: int = 0) -> ToyDataset:
    """Class-balanced oriented-texture images, regenerable from the seed."""
    if not 2 <= classes <= 4:
        raise ValueError("supported class counts: 2..4")
    rng = np.random.default_rng(seed)

    def batch(per_class):
        xs, ys = [], []
        for cls in range(classes):
            for _ in range(per_class):
                img = np.stack([_pattern(cls, size, rng) for _ in range(channels)],
                               axis=-1)
                xs.append(img + noise * rng.standard_normal(img.shape))
                ys.append(cls)
        order = rng.permutation(len(xs))
        return np.asarray(xs)[order], np.asarray(ys, dtype=np.int64)[order]

    train_x, train_y = batch(n_train_per_class)
    test_x, test_y = batch(n_test_per_class)
    return ToyDataset(train_x, train_y, test_x, test_y, classes, seed)


# ---------------------------------------------------------------------------
# network


@dataclass
class ToyConvLayer:
    latent: LatentWeights
    binarized: bool = True

    def effective_kernel(self) -> np.ndarray:
        """Weights as used in the forward pass: masked, optionally sign-only."""
        w = self.latent.weights.data
        eff = np.where(w >= 0, 1.0, -1.0) if self.binarized else w
        return np.where(self.latent.mask.kept, eff, 0.0)


@dataclass
class ToyNetwork:
    conv_layers: list[ToyConvLayer]
    head_w: np.ndarray  # (classes, features), starts at zero
    head_b: np.ndarray
    classes: int

    @property
    def trainable_convs(self):
        return self.conv_layers


def build_toy_network(input_channels: int, conv_channels=(8, 8), classes: int = 4,
                      masks="default", binarized: bool = True,
                      seed: int = 0) -> ToyNetwork:
    """Stack of 3x3 conv+ReLU blocks, GAP, and a zero-initialized head.

    ``masks`` may be "default" (full mask on the stem, whose few input maps
    cannot cover a 3x3 kernel, deterministic elsewhere), "deterministic",
    "full", or an explicit list of PruneMask.
    """
    rng = np.random.default_rng(seed)
    layers = []
    in_maps = input_channels
    for t, out_maps in enumerate(conv_channels):
        if isinstance(masks, str):
            if masks == "full" or (masks == "default" and t == 0):
                mask = full_mask(3, 3, in_maps, out_maps)
            elif masks in ("default", "deterministic"):
                mask = build_mask(3, 3, in_maps, out_maps)
            else:
                raise ValueError(f"unknown mask preset {masks!r}")
        else:
            mask = masks[t]
        w = KernelTensor(rng.uniform(-0.9, 0.9, size=(3, 3, in_maps, out_maps)))
        layers.append(ToyConvLayer(LatentWeights(w, mask), binarized=binarized))
        in_maps = out_maps
    return ToyNetwork(
        conv_layers=layers,
        head_w=np.zeros((classes, in_maps)),
        head_b=np.zeros(classes),
        classes=classes,
    )


# ---------------------------------------------------------------------------
# forward / backward


def _conv_same(x: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Batched same-padded cross-correlation, (n,h,w,k) x (kw,kh,k,l)."""
    kw, kh = kernel.shape[:2]
    ph, pw = kh // 2, kw // 2
    xp = np.pad(x, ((0, 0), (ph, ph), (pw, pw), (0, 0)))
    n, h, w, _ = x.shape
    y = np.zeros((n, h, w, kernel.shape[3]))
    for col in range(kw):
        for row in range(kh):
            y += np.tensordot(xp[:, row:row + h, col:col + w, :],
                              kernel[col, row], axes=([3], [0]))
    return y


def _conv_same_backward(x, kernel, d_y):
    """Gradients of ``_conv_same`` w.r.t. kernel and input."""
    kw, kh = kernel.shape[:2]
    ph, pw = kh // 2, kw // 2
    xp = np.pad(x, ((0, 0), (ph, ph), (pw, pw), (0, 0)))
    n, h, w, _ = x.shape
    d_kernel = np.zeros_like(kernel)
    d_xp = np.zeros_like(xp)
    for col in range(kw):
        for row in range(kh):
            win = xp[:, row:row + h, col:col + w, :]
            d_kernel[col, row] = np.tensordot(win, d_y, axes=([0, 1, 2], [0, 1, 2]))
            d_xp[:, row:row + h, col:col + w, :] += np.tensordot(
                d_y, kernel[col, row], axes=([3], [1]))
    return d_kernel, d_xp[:, ph:ph + h, pw:pw + w, :]


@dataclass
class StepResult:
    loss: float
    conv_grads: list          # KernelTensor per conv layer, w.r.t. binarized weights
    head_w_grad: np.ndarray
    head_b_grad: np.ndarray
    predictions: np.ndarray = field(default=None, repr=False)


def forward(net: ToyNetwork, x: np.ndarray):
    """Returns logits plus the per-layer activations needed for backprop."""
    acts = [x]
    pre = []
    for layer in net.conv_layers:
        z = _conv_same(acts[-1], layer.effective_kernel())
        pre.append(z)
        acts.append(np.maximum(z, 0.0))
    feats = acts[-1].mean(axis=(1, 2))
    logits = feats @ net.head_w.T + net.head_b
    return logits, feats, acts, pre


def predict(net: ToyNetwork, x: np.ndarray) -> np.ndarray:
    logits, _, _, _ = forward(net, x)
    return np.argmax(logits, axis=1)


def accuracy(net: ToyNetwork, x: np.ndarray, y: np.ndarray) -> float:
    return float(np.mean(predict(net, x) == y))


def forward_backward(net: ToyNetwork, x: np.ndarray, y: np.ndarray) -> StepResult:
    """One batch: softmax cross-entropy loss and gradients.

    Gradients are with respect to the weights actually used forward (the
    binarized ones when binarization is on) and are exactly zero at pruned
    positions. Non-finite loss raises TrainingDivergedError.
    """
    n = x.shape[0]
    logits, feats, acts, pre = forward(net, x)
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    loss = float(-log_probs[np.arange(n), y].mean())
    if not np.isfinite(loss) or abs(loss) > 1e30:
        raise TrainingDivergedError(f"loss is {loss}; reduce the learning rate")

    d_logits = np.exp(log_probs)
    d_logits[np.arange(n), y] -= 1.0
    d_logits /= n
    head_w_grad = d_logits.T @ feats
    head_b_grad = d_logits.sum(axis=0)

    h, w = x.shape[1:3]
    d_act = (d_logits @ net.head_w)[:, None, None, :] / (h * w)
    d_act = np.broadcast_to(d_act, acts[-1].shape).copy()
    conv_grads = [None] * len(net.conv_layers)
    for t in reversed(range(len(net.conv_layers))):
        layer = net.conv_layers[t]
        d_pre = d_act * (pre[t] > 0)
        d_kernel, d_act = _conv_same_backward(
            acts[t], layer.effective_kernel(), d_pre)
        conv_grads[t] = KernelTensor(d_kernel * layer.latent.mask.kept)

    return StepResult(loss, conv_grads, head_w_grad, head_b_grad,
                      predictions=np.argmax(logits, axis=1))


# ---------------------------------------------------------------------------
# training loop


def train(net: ToyNetwork, dataset: ToyDataset, epochs: int, lr: float,
          seed: int = 0, batch_size: int = 32) -> list[dict]:
    """Plain SGD; deterministic for a fixed seed. Returns per-epoch history
    rows: {epoch, loss, train_acc, test_acc}."""
    rng = np.random.default_rng(seed)
    history = []
    n = len(dataset.train_y)
    for epoch in range(epochs):
        order = rng.permutation(n)
        losses = []
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            step = forward_backward(net, dataset.train_x[idx], dataset.train_y[idx])
            losses.append(step.loss)
            for layer, grad in zip(net.conv_layers, step.conv_grads):
                layer.latent = bc_update(layer.latent, grad, lr)
            net.head_w -= lr * step.head_w_grad
            net.head_b -= lr * step.head_b_grad
        history.append({
            "epoch": epoch,
            "loss": float(np.mean(losses)),
            "train_acc": accuracy(net, dataset.train_x, dataset.train_y),
            "test_acc": accuracy(net, dataset.test_x, dataset.test_y)
                        if len(dataset.test_y) else float("nan"),
        })
    return history


def history_to_csv(history: list[dict]) -> str:
    lines = ["epoch,loss,train_acc,test_acc"]
    lines += [
        f"{row['epoch']},{row['loss']:.6f},{row['train_acc']:.4f},{row['test_acc']:.4f}"
        for row in history
    ]
    return "\n".join(lines) + "\n"


def sweep_random_removal(dataset: ToyDataset, m_values, seeds,
                         conv_channels=(8, 8), epochs: int = 10,
                         lr: float = 0.05, batch_size: int = 32) -> list[dict]:
    """Accuracy as a function of connections removed per kernel slice.

    Every conv layer gets an independent random mask with m positions
    removed per slice; m=0 reproduces the unpruned baseline. No
    monotonicity is asserted anywhere: at this scale the trend is noisy.
    """
    rows = []
    for m in m_values:
        for seed in seeds:
            masks = []
            in_maps = dataset.train_x.shape[3]
            for out_maps in conv_channels:
                masks.append(random_mask(3, 3, in_maps, out_maps, m, seed))
                in_maps = out_maps
            net = build_toy_network(dataset.train_x.shape[3], conv_channels,
                                    dataset.classes, masks=masks, seed=seed)
            history = train(net, dataset, epochs, lr, seed=seed,
                            batch_size=batch_size)
            rows.append({
                "removed_per_slice": m,
                "seed": seed,
                "train_acc": history[-1]["train_acc"],
                "test_acc": history[-1]["test_acc"],
            })
    return rows


def sweep_to_csv(rows: list[dict]) -> str:
    lines = ["removed_per_slice,seed,train_acc,test_acc"]
    lines += [
        f"{r['removed_per_slice']},{r['seed']},{r['train_acc']:.4f},{r['test_acc']:.4f}"
        for r in rows
    ]
    return "\n".join(lines) + "\n"
