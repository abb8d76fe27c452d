"""Residual classifier and the joint training objective.

The discriminative feature is the signed reconstruction residual
x - G(x). A small CNN (three stride-2 conv blocks, global average pooling,
one linear head) maps it to real/fake logits. The joint objective combines
the quantization loss, the pixel reconstruction loss and the residual
cross-entropy; a single backward pass updates reconstruction and classifier
parameters simultaneously.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import SgdState, Tensor
from .recnet import IMAGE_SHAPE, RecNet, quantize, rec_loss, vq_loss
from .recnet import _conv_param, _zeros_param

CLS_CHANNELS = (16, 32, 64)


@dataclass
class LossWeights:
    """Nonnegative weights of the three joint-loss terms plus the two
    quantization sub-weights."""

    mu1: float = 1.0
    mu2: float = 1.0
    mu3: float = 1.0
    alpha: float = 1.0
    beta: float = 4.0

    def __post_init__(self):
        vals = (self.mu1, self.mu2, self.mu3, self.alpha, self.beta)
        if any(v < 0 for v in vals):
            raise ValueError(f"loss weights must be nonnegative, got {vals}")
        if all(v == 0 for v in vals):
            raise ValueError("loss weights must not all be zero")


class ClsNet:
    """Three conv blocks (stride 2) + global average pool + linear -> 2 logits."""

    def __init__(self, rng: np.random.Generator | None = None):
        rng = rng if rng is not None else np.random.default_rng(0)
        c_in = IMAGE_SHAPE[0]
        c1, c2, c3 = CLS_CHANNELS
        self.conv1_w = _conv_param(rng, (c1, c_in, 3, 3))
        self.conv1_b = _zeros_param((c1,))
        self.conv2_w = _conv_param(rng, (c2, c1, 3, 3))
        self.conv2_b = _zeros_param((c2,))
        self.conv3_w = _conv_param(rng, (c3, c2, 3, 3))
        self.conv3_b = _zeros_param((c3,))
        fc_bound = np.sqrt(6.0 / c3)
        self.fc_w = Tensor(rng.uniform(-fc_bound, fc_bound, size=(c3, 2)).astype(np.float32),
                           requires_grad=True)
        self.fc_b = _zeros_param((2,))

    def named_params(self) -> list[tuple[str, Tensor]]:
        return [
            ("clsnet.conv1.weight", self.conv1_w),
            ("clsnet.conv1.bias", self.conv1_b),
            ("clsnet.conv2.weight", self.conv2_w),
            ("clsnet.conv2.bias", self.conv2_b),
            ("clsnet.conv3.weight", self.conv3_w),
            ("clsnet.conv3.bias", self.conv3_b),
            ("clsnet.fc.weight", self.fc_w),
            ("clsnet.fc.bias", self.fc_b),
        ]

    def forward(self, res: Tensor) -> Tensor:
        if res.data.ndim != 4 or res.shape[1:] != IMAGE_SHAPE:
            raise ValueError(
                f"classify expects (N,{','.join(map(str, IMAGE_SHAPE))}), got {res.shape}")
        h = ad.relu(ad.channel_bias(ad.conv2d(res, self.conv1_w, stride=2, padding=1),
                                    self.conv1_b))
        h = ad.relu(ad.channel_bias(ad.conv2d(h, self.conv2_w, stride=2, padding=1),
                                    self.conv2_b))
        h = ad.relu(ad.channel_bias(ad.conv2d(h, self.conv3_w, stride=2, padding=1),
                                    self.conv3_b))
        pooled = ad.mean_pool_hw(h)
        return ad.linear(pooled, self.fc_w, self.fc_b)


def residual(x: Tensor, gx: Tensor) -> Tensor:
    """Signed pixel difference x - gx; gradients flow through both arguments."""
    return ad.sub(x, gx)


def classify(res: Tensor, clsnet: ClsNet) -> Tensor:
    """Two-class logits for a batch of residual images."""
    return clsnet.forward(res)


@dataclass
class LossReport:
    total: float
    vq: float
    rec: float
    cls: float
    accuracy: float = float("nan")


def joint_loss(x: Tensor, labels: np.ndarray, recnet: RecNet, clsnet: ClsNet,
               weights: LossWeights) -> tuple[Tensor, dict[str, Tensor], Tensor]:
    """Weighted sum of quantization, reconstruction and classification losses.

    Returns (total, parts, logits) where parts holds the three unweighted
    scalar terms. One backward pass through the total reaches every RecNet
    and ClsNet parameter.
    """
    labels = np.asarray(labels)
    if labels.size and (labels.min() < 0 or labels.max() > 1):
        raise ValueError("labels must be 0 (real) or 1 (fake)")
    latent = recnet.encode(x)
    q = quantize(latent, recnet.codebook)
    l_vq = vq_loss(latent, q, alpha=weights.alpha, beta=weights.beta)
    gx = recnet.decode(q.quantized)
    l_rec = rec_loss(x, gx)
    res = residual(x, gx)
    logits = classify(res, clsnet)
    l_cls = ad.softmax_cross_entropy(logits, labels)
    total = ad.add(ad.add(ad.mul(l_vq, weights.mu1), ad.mul(l_rec, weights.mu2)),
                   ad.mul(l_cls, weights.mu3))
    return total, {"vq": l_vq, "rec": l_rec, "cls": l_cls}, logits


def train_step(batch: tuple[np.ndarray, np.ndarray], recnet: RecNet, clsnet: ClsNet,
               weights: LossWeights, params, sgd: SgdState) -> LossReport:
    """One joint SGD step on a (images, labels) batch.

    ``params`` is the ParamSet covering both networks; its grads are zeroed
    before the backward pass of this step.
    """
    images, labels = batch
    if len(labels) == 0:
        raise ValueError("train_step: empty batch")
    x = Tensor(images)
    with ad.Tape():
        total, parts, logits = joint_loss(x, labels, recnet, clsnet, weights)
        ad.zero_grads(params.tensors())
        ad.backward(total)
    ad.sgd_step(params, sgd)
    preds = np.argmax(logits.data, axis=1)
    acc = float(np.mean(preds == np.asarray(labels)))
    return LossReport(total=total.item(), vq=parts["vq"].item(),
                      rec=parts["rec"].item(), cls=parts["cls"].item(),
                      accuracy=acc)
