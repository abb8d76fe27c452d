"""fedforge: deterministic federated forgery detection at desk scale.

A reconstruction network with a discrete codebook rebuilds each input image;
the signed reconstruction residual feeds a small CNN classifier; simulated
data centers train the joint model locally and a server averages their
parameters, weighted by shard size, for a configurable number of rounds.
"""

from .autodiff import SgdState, Tape, Tensor, backward, sgd_step, zero_grads
from .clsnet import ClsNet, LossWeights, classify, joint_loss, residual, train_step
from .config import ConfigError, ExperimentConfig, parse_config, snapshot
from .datagen import (ProtocolSplit, Sample, apply_artifact, artifact_image,
                      build_protocol, export_corpus, gen_real)
from .federated import (ClientState, RoundLog, aggregate, evaluate, local_update,
                        partition, run_rounds)
from .metrics import ScoredBatch, accuracy, auc, roc_points
from .model import ForgeryModel
from .params import ParamSet
from .recnet import Codebook, QuantizationResult, RecNet, quantize, rec_loss, vq_loss

__version__ = "0.1.0"

__all__ = [
    "SgdState", "Tape", "Tensor", "backward", "sgd_step", "zero_grads",
    "ClsNet", "LossWeights", "classify", "joint_loss", "residual", "train_step",
    "ConfigError", "ExperimentConfig", "parse_config", "snapshot",
    "ProtocolSplit", "Sample", "apply_artifact", "artifact_image",
    "build_protocol", "export_corpus", "gen_real",
    "ClientState", "RoundLog", "aggregate", "evaluate", "local_update",
    "partition", "run_rounds",
    "ScoredBatch", "accuracy", "auc", "roc_points",
    "ForgeryModel", "ParamSet",
    "Codebook", "QuantizationResult", "RecNet", "quantize", "rec_loss", "vq_loss",
    "__version__",
]
