"""Assembly of the full detection model (RecNet + ClsNet) and scoring."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .clsnet import ClsNet, classify, residual
from .params import ParamSet
from .recnet import RecNet, quantize
from .seeding import derive_rng


class ForgeryModel:
    """One detection model: reconstruction network plus residual classifier.

    The parameter view returned by :meth:`param_set` references the live
    tensors, so optimizer steps mutate the model in place and
    ``param_set().copy()`` detaches a snapshot.
    """

    def __init__(self, num_codes: int = 32, code_dim: int = 16, seed: int = 0):
        rng = derive_rng(seed, "model-init")
        self.recnet = RecNet(num_codes=num_codes, code_dim=code_dim, rng=rng)
        self.clsnet = ClsNet(rng=rng)
        self.num_codes = num_codes
        self.code_dim = code_dim

    def param_set(self) -> ParamSet:
        return ParamSet(self.recnet.named_params() + self.clsnet.named_params())

    def load_params(self, params: ParamSet) -> None:
        self.param_set().load_from(params)

    def fake_scores(self, images: np.ndarray, batch_size: int = 256) -> np.ndarray:
        """Forward-only fake-class probabilities for a stack of images."""
        scores = []
        for start in range(0, len(images), batch_size):
            x = Tensor(images[start:start + batch_size])
            latent = self.recnet.encode(x)
            q = quantize(latent, self.recnet.codebook)
            gx = self.recnet.decode(q.quantized)
            logits = classify(residual(x, gx), self.clsnet)
            scores.append(ad.softmax_probs(logits.data)[:, 1])
        return np.concatenate(scores).astype(np.float64)
