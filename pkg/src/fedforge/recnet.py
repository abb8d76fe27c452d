"""Reconstruction network: convolutional encoder, discrete codebook, decoder.

The input image is a 1x32x32 grayscale tensor. Two stride-2 convolutions map
it to a latent grid, each latent vector snaps to its nearest codebook row
(gradients bypass the selection straight through to the encoder output), and
a mirrored pair of transposed convolutions reconstructs the image. The
quantization objective splits into an alignment term that only moves the
codebook and a commitment term that only moves the encoder.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

IMAGE_SHAPE = (1, 32, 32)
HIDDEN_CHANNELS = 16
KERNEL = 4
STRIDE = 2
PAD = 1
LATENT_HW = 8  # 32 -> 16 -> 8 after two stride-2 convolutions


@dataclass
class Codebook:
    """Learnable embedding table of num_codes rows, each code_dim wide."""

    embeddings: Tensor
    num_codes: int
    code_dim: int

    def __post_init__(self):
        if self.num_codes < 2 or self.code_dim < 1:
            raise ValueError(
                f"codebook needs num_codes >= 2 and code_dim >= 1, "
                f"got {self.num_codes} and {self.code_dim}")
        if self.embeddings.shape != (self.num_codes, self.code_dim):
            raise ValueError(
                f"codebook tensor shape {self.embeddings.shape} != "
                f"({self.num_codes}, {self.code_dim})")


@dataclass
class QuantizationResult:
    """Output of nearest-code quantization for one latent grid.

    ``quantized`` carries exact copies of the chosen codebook rows and routes
    decoder gradients straight through to ``latent``. ``selected`` is the
    differentiable row-gather used by the quantization losses (gradients flow
    into the codebook), flattened to (positions, code_dim) alongside
    ``latent_flat``.
    """

    quantized: Tensor
    indices: np.ndarray
    latent: Tensor
    latent_flat: Tensor
    selected: Tensor


def _conv_param(rng: np.random.Generator, shape: tuple[int, ...]) -> Tensor:
    # Kaiming-uniform with relu gain: keeps activation scale roughly constant
    # through the stacked stride-2 blocks.
    fan_in = int(np.prod(shape[1:]))
    bound = np.sqrt(6.0 / fan_in)
    data = rng.uniform(-bound, bound, size=shape).astype(np.float32)
    return Tensor(data, requires_grad=True)


def _zeros_param(shape: tuple[int, ...]) -> Tensor:
    return Tensor(np.zeros(shape, dtype=np.float32), requires_grad=True)


class RecNet:
    """Encoder / codebook / decoder triple with a fixed desk-scale layout."""

    def __init__(self, num_codes: int = 32, code_dim: int = 16,
                 rng: np.random.Generator | None = None):
        rng = rng if rng is not None else np.random.default_rng(0)
        h = HIDDEN_CHANNELS
        c = IMAGE_SHAPE[0]
        self.enc1_w = _conv_param(rng, (h, c, KERNEL, KERNEL))
        self.enc1_b = _zeros_param((h,))
        self.enc2_w = _conv_param(rng, (code_dim, h, KERNEL, KERNEL))
        self.enc2_b = _zeros_param((code_dim,))
        emb = rng.uniform(-1.0 / num_codes, 1.0 / num_codes,
                          size=(num_codes, code_dim)).astype(np.float32)
        self.codebook = Codebook(Tensor(emb, requires_grad=True), num_codes, code_dim)
        # Transposed-conv weights use (in_channels, out_channels, kh, kw).
        self.dec1_w = _conv_param(rng, (code_dim, h, KERNEL, KERNEL))
        self.dec1_b = _zeros_param((h,))
        self.dec2_w = _conv_param(rng, (h, c, KERNEL, KERNEL))
        self.dec2_b = _zeros_param((c,))
        self.code_dim = code_dim

    def named_params(self) -> list[tuple[str, Tensor]]:
        return [
            ("recnet.enc1.weight", self.enc1_w),
            ("recnet.enc1.bias", self.enc1_b),
            ("recnet.enc2.weight", self.enc2_w),
            ("recnet.enc2.bias", self.enc2_b),
            ("recnet.codebook", self.codebook.embeddings),
            ("recnet.dec1.weight", self.dec1_w),
            ("recnet.dec1.bias", self.dec1_b),
            ("recnet.dec2.weight", self.dec2_w),
            ("recnet.dec2.bias", self.dec2_b),
        ]

    def encode(self, x: Tensor) -> Tensor:
        """Image batch (N, 1, 32, 32) -> latent grid (N, code_dim, 8, 8)."""
        if x.data.ndim != 4 or x.shape[1:] != IMAGE_SHAPE:
            raise ValueError(f"encode expects (N,{','.join(map(str, IMAGE_SHAPE))}), got {x.shape}")
        h = ad.conv2d(x, self.enc1_w, stride=STRIDE, padding=PAD)
        h = ad.relu(ad.channel_bias(h, self.enc1_b))
        z = ad.conv2d(h, self.enc2_w, stride=STRIDE, padding=PAD)
        return ad.channel_bias(z, self.enc2_b)

    def decode(self, quantized: Tensor) -> Tensor:
        """Latent grid (N, code_dim, 8, 8) -> reconstruction (N, 1, 32, 32).

        The output is linear (no squashing); clamp to [0,1] only when writing
        images out.
        """
        expected = (self.code_dim, LATENT_HW, LATENT_HW)
        if quantized.data.ndim != 4 or quantized.shape[1:] != expected:
            raise ValueError(f"decode expects (N,{expected}), got {quantized.shape}")
        h = ad.transposed_conv2d(quantized, self.dec1_w, stride=STRIDE, padding=PAD)
        h = ad.relu(ad.channel_bias(h, self.dec1_b))
        y = ad.transposed_conv2d(h, self.dec2_w, stride=STRIDE, padding=PAD)
        return ad.channel_bias(y, self.dec2_b)


def quantize(latent: Tensor, codebook: Codebook) -> QuantizationResult:
    """Snap each latent grid vector to its nearest codebook row (squared L2).

    Ties break toward the lowest index. Distances are computed by direct
    subtraction so the chosen index always matches a per-row exhaustive
    argmin.
    """
    if codebook.num_codes < 1:
        raise ValueError("quantize: empty codebook")
    if latent.data.ndim != 4 or latent.shape[1] != codebook.code_dim:
        raise ValueError(
            f"quantize: latent channel dim of {latent.shape} != code_dim {codebook.code_dim}")
    n, d, h, w = latent.shape
    latent_flat = ad.reshape(ad.transpose(latent, (0, 2, 3, 1)), (n * h * w, d))
    z = latent_flat.data
    emb = codebook.embeddings.data
    diff = z[:, None, :] - emb[None, :, :]
    dist = np.einsum("pmd,pmd->pm", diff, diff)
    flat_idx = np.argmin(dist, axis=1)
    indices = flat_idx.reshape(n, h, w)

    selected = ad.gather_rows(codebook.embeddings, flat_idx)
    grid = emb[flat_idx].reshape(n, h, w, d).transpose(0, 3, 1, 2)
    quantized = ad.straight_through(latent, np.ascontiguousarray(grid))
    return QuantizationResult(quantized=quantized, indices=indices,
                              latent=latent, latent_flat=latent_flat,
                              selected=selected)


def vq_loss(latent: Tensor, result: QuantizationResult,
            alpha: float = 1.0, beta: float = 4.0) -> Tensor:
    """Quantization objective, mean over latent positions.

    alpha weighs the alignment term (moves only the codebook: the encoder
    side sits behind a stop-gradient); beta weighs the commitment term
    (moves only the encoder).
    """
    if latent is not result.latent:
        raise ValueError("vq_loss: result was not produced from this latent")
    align = ad.mse(ad.stop_gradient(result.latent_flat), result.selected)
    commit = ad.mse(result.latent_flat, ad.stop_gradient(result.selected))
    return ad.add(ad.mul(align, float(alpha)), ad.mul(commit, float(beta)))


def rec_loss(x: Tensor, gx: Tensor) -> Tensor:
    """Pixel reconstruction loss: mean squared difference of x and its reconstruction."""
    return ad.mse(x, gx)
