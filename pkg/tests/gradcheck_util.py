"""Finite-difference gradient oracle shared by the unit and acceptance tests.

The oracle perturbs raw float buffers and re-runs the forward function, so it
never touches the backward implementation it is checking. Comparisons use a
tensor-level relative error: max absolute deviation over the tensor divided
by the largest gradient magnitude (floored to dodge division by zero).
"""

from __future__ import annotations

import numpy as np

from fedforge import Tape, Tensor, backward
from fedforge.autodiff import zero_grads

FD_STEP = 1e-3


def numeric_grad(forward, buf: np.ndarray, h: float = FD_STEP) -> np.ndarray:
    """Central-difference gradient of a scalar-valued forward() w.r.t. buf.

    ``forward`` must recompute the loss from the current contents of ``buf``
    (mutated in place coordinate by coordinate).
    """
    grad = np.zeros(buf.shape, dtype=np.float64)
    flat = buf.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = float(forward())
        flat[i] = orig - h
        fm = float(forward())
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad


def analytic_grads(loss_fn, wrt: list[Tensor]) -> list[np.ndarray]:
    """Backward-pass gradients of loss_fn() w.r.t. each listed tensor."""
    zero_grads(wrt)
    with Tape():
        loss = loss_fn()
        backward(loss)
    return [t.grad.copy() for t in wrt]


def rel_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> float:
    denom = max(float(np.max(np.abs(numeric))), float(np.max(np.abs(analytic))), floor)
    return float(np.max(np.abs(analytic.astype(np.float64) - numeric))) / denom


def check_grads(loss_fn, wrt: list[Tensor], tol: float = 1e-3,
                h: float = FD_STEP) -> float:
    """Assert FD and backward gradients agree for every listed tensor.

    Returns the worst relative error seen (handy for diagnostics).
    """
    grads = analytic_grads(loss_fn, wrt)
    worst = 0.0
    for t, g in zip(wrt, grads):
        num = numeric_grad(lambda: loss_fn().item(), t.data, h=h)
        err = rel_error(g, num)
        worst = max(worst, err)
        assert err <= tol, (
            f"gradient mismatch for tensor of shape {t.shape}: "
            f"rel error {err:.3e} > {tol}")
    return worst


def away_from_zero(rng: np.random.Generator, shape, margin: float = 0.05) -> np.ndarray:
    """Uniform(-1, 1) data nudged away from 0 so relu kinks stay clear of FD steps."""
    x = rng.uniform(-1.0, 1.0, size=shape)
    small = np.abs(x) < margin
    x[small] = np.sign(x[small] + 1e-12) * (margin + np.abs(x[small]))
    return x.astype(np.float32)


def frozen_selection_loss(recnet, clsnet, x, labels, weights):
    """Joint-loss forward with the quantization selection frozen at the base point.

    The straight-through estimator differentiates the surrogate in which the
    chosen code indices and the additive correction (selected_code - latent)
    are constants. This builder captures both at the current parameters and
    returns a smooth loss function of the parameters, which is the function
    central differences can legitimately probe. At the base point its tape
    gradients coincide with those of the real forward pass.
    """
    import fedforge.autodiff as ad
    from fedforge.recnet import quantize

    base_latent = recnet.encode(x)
    base_q = quantize(base_latent, recnet.codebook)
    frozen_idx = base_q.indices.reshape(-1).copy()
    correction = (base_q.quantized.data - base_latent.data).copy()

    def loss_fn():
        latent = recnet.encode(x)
        n, d, h, w = latent.shape
        latent_flat = ad.reshape(ad.transpose(latent, (0, 2, 3, 1)), (n * h * w, d))
        selected = ad.gather_rows(recnet.codebook.embeddings, frozen_idx)
        align = ad.mse(ad.stop_gradient(latent_flat), selected)
        commit = ad.mse(latent_flat, ad.stop_gradient(selected))
        l_vq = ad.add(ad.mul(align, weights.alpha), ad.mul(commit, weights.beta))
        dec_in = ad.add(latent, Tensor(correction))
        gx = recnet.decode(dec_in)
        l_rec = ad.mse(x, gx)
        logits = clsnet.forward(ad.sub(x, gx))
        l_cls = ad.softmax_cross_entropy(logits, labels)
        return ad.add(ad.add(ad.mul(l_vq, weights.mu1), ad.mul(l_rec, weights.mu2)),
                      ad.mul(l_cls, weights.mu3))

    return loss_fn
