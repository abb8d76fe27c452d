"""Federated training loop: disjoint shards, local epochs, weighted averaging.

The server is a plain reducer: it initializes the global parameters once,
broadcasts them each round, collects updated parameter sets from every data
center and averages them weighted by shard size. Its API accepts ParamSets
only; raw samples never cross the client boundary. Aggregation uses exactly
rounded per-scalar sums so the result is bit-identical under any permutation
of the (client, weight) pairs.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .autodiff import SgdState, Tensor
from .clsnet import LossWeights, train_step
from .datagen import ProtocolSplit, Sample, build_protocol, samples_to_arrays
from .metrics import ScoredBatch, accuracy, auc
from .model import ForgeryModel
from .params import ParamSet
from .seeding import derive_rng, derive_seed

WEIGHT_SUM_TOL = 1e-6


@dataclass
class ClientState:
    """One data center: private shard, live model, optimizer state, weight.

    ``seed_key`` identifies the client's RNG stream (defaults to its id);
    ``epochs_done`` advances it, so E local epochs in one call shuffle the
    same way as E sequential single-epoch calls.
    """

    client_id: int
    shard: list[Sample]
    model: ForgeryModel
    sgd: SgdState
    weight: float
    master_seed: int
    loss_weights: LossWeights
    batch_size: int
    seed_key: int | None = None
    epochs_done: int = 0

    def __post_init__(self):
        if self.seed_key is None:
            self.seed_key = self.client_id
        self.params = self.model.param_set()


@dataclass
class ClientRoundStats:
    client_id: int
    train_loss: float
    accuracy: float
    auc: float


@dataclass
class RoundLog:
    round: int
    clients: list[ClientRoundStats] = field(default_factory=list)
    global_loss: float = float("nan")
    global_accuracy: float = float("nan")
    global_auc: float = float("nan")
    wall_time: float = 0.0


def partition(dataset: list[Sample], k: int, scheme: str, seed: int) -> list[list[Sample]]:
    """Split a dataset into k pairwise-disjoint shards whose union is the dataset.

    ``iid`` is a seeded shuffle plus near-equal split. ``per_artifact``
    assigns each client a subset of fake artifact types (reals are spread
    evenly), which models heterogeneous data centers.
    """
    if k < 1:
        raise ValueError(f"partition: k must be >= 1, got {k}")
    if not dataset:
        raise ValueError("partition: empty dataset")
    if k > len(dataset):
        raise ValueError(f"partition: k={k} exceeds dataset size {len(dataset)}")

    def chunks(indices: np.ndarray, parts: int) -> list[np.ndarray]:
        base, rem = divmod(len(indices), parts)
        out, pos = [], 0
        for i in range(parts):
            size = base + (1 if i < rem else 0)
            out.append(indices[pos:pos + size])
            pos += size
        return out

    if scheme == "iid":
        order = derive_rng(seed, "iid").permutation(len(dataset))
        return [[dataset[i] for i in c] for c in chunks(order, k)]

    if scheme != "per_artifact":
        raise ValueError(f"partition: unknown scheme '{scheme}'")

    real_idx = np.array([i for i, s in enumerate(dataset) if s.label == 0], dtype=int)
    by_type: dict[int, list[int]] = {}
    for i, s in enumerate(dataset):
        if s.label == 1:
            by_type.setdefault(s.artifact_type, []).append(i)
    types = sorted(by_type)
    if not types:
        raise ValueError("partition: per_artifact requires at least one fake sample")

    # Clients and types pair off round-robin so every client holds >= 1 type
    # and every type lands somewhere.
    num_types = len(types)
    clients_for_type: dict[int, list[int]] = {t: [] for t in types}
    if k >= num_types:
        for c in range(k):
            clients_for_type[types[c % num_types]].append(c)
    else:
        for a, t in enumerate(types):
            clients_for_type[t].append(a % k)

    shards: list[list[Sample]] = [[] for _ in range(k)]
    rng = derive_rng(seed, "per_artifact", "reals")
    for c, chunk in enumerate(chunks(rng.permutation(real_idx), k)):
        shards[c].extend(dataset[i] for i in chunk)
    for t in types:
        idx = np.array(by_type[t], dtype=int)
        rng = derive_rng(seed, "per_artifact", "type", t)
        owners = clients_for_type[t]
        for c, chunk in zip(owners, chunks(rng.permutation(idx), len(owners))):
            shards[c].extend(dataset[i] for i in chunk)
    return shards


def local_update(client: ClientState, global_params: ParamSet, epochs: int
                 ) -> tuple[ParamSet, float]:
    """Load the global parameters, train E epochs on the private shard.

    Returns the client's updated ParamSet (a detached copy: only parameters
    leave the client) and the mean per-sample training loss.
    """
    if epochs < 1:
        raise ValueError(f"local_update: epochs must be >= 1, got {epochs}")
    if not client.shard:
        raise ValueError(f"local_update: client {client.client_id} has an empty shard")
    client.params.load_from(global_params)
    images, labels = samples_to_arrays(client.shard)
    n = len(labels)
    loss_sum = 0.0
    for _ in range(epochs):
        rng = derive_rng(client.master_seed, "shuffle", client.seed_key, client.epochs_done)
        order = rng.permutation(n)
        for start in range(0, n, client.batch_size):
            take = order[start:start + client.batch_size]
            report = train_step((images[take], labels[take]), client.model.recnet,
                                client.model.clsnet, client.loss_weights,
                                client.params, client.sgd)
            loss_sum += report.total * len(take)
        client.epochs_done += 1
    return client.params.copy(), loss_sum / (n * epochs)


def aggregate(param_sets: list[ParamSet], weights: list[float]) -> ParamSet:
    """Weighted average of parameter sets: out = sum_k w_k * params_k.

    Every output scalar is the exactly rounded weighted sum (fsum in double,
    then one rounding to float32), which makes the operation independent of
    client ordering and bit-exact for the K=1 identity case.
    """
    if not param_sets:
        raise ValueError("aggregate: empty parameter list")
    if len(param_sets) != len(weights):
        raise ValueError(
            f"aggregate: {len(param_sets)} parameter sets but {len(weights)} weights")
    structure = param_sets[0].structure()
    for i, ps in enumerate(param_sets[1:], start=1):
        if ps.structure() != structure:
            raise ValueError(f"aggregate: parameter set {i} has mismatched structure")
    total = math.fsum(weights)
    if abs(total - 1.0) > WEIGHT_SUM_TOL:
        raise ValueError(f"aggregate: weights sum to {total}, expected 1")

    out_items = []
    for name, shape in structure:
        stacked = np.stack([np.float64(w) * ps[name].data.astype(np.float64)
                            for ps, w in zip(param_sets, weights)])
        cols = np.ascontiguousarray(stacked.reshape(len(param_sets), -1).T)
        summed = np.fromiter((math.fsum(col) for col in cols),
                             dtype=np.float64, count=cols.shape[0])
        data = summed.astype(np.float32).reshape(shape)
        out_items.append((name, Tensor(data, requires_grad=True)))
    return ParamSet(out_items)


def evaluate(model: ForgeryModel, samples: list[Sample], batch_size: int = 256
             ) -> tuple[float, float]:
    """Forward-only accuracy and AUC of a model on a sample list."""
    if not samples:
        raise ValueError("evaluate: empty sample list")
    images, labels = samples_to_arrays(samples)
    scores = model.fake_scores(images, batch_size=batch_size)
    batch = ScoredBatch(scores, labels)
    return accuracy(batch), auc(batch)


def evaluate_params(params: ParamSet, samples: list[Sample], num_codes: int,
                    code_dim: int, batch_size: int = 256) -> tuple[float, float]:
    """Evaluate a detached ParamSet by loading it into a scratch model."""
    model = ForgeryModel(num_codes=num_codes, code_dim=code_dim, seed=0)
    model.load_params(params)
    return evaluate(model, samples, batch_size=batch_size)


def run_rounds(cfg, split: ProtocolSplit | None = None
               ) -> tuple[ParamSet, list[RoundLog]]:
    """Execute the full federated loop described by an ExperimentConfig.

    Round 0 logs the evaluation of the freshly initialized global model;
    rounds 1..t each broadcast, run local updates, aggregate and evaluate.
    The result is bit-reproducible from the config alone.
    """
    if split is None:
        split = build_protocol(cfg.protocol, n_train=cfg.train_size, n_test=cfg.test_size,
                               holdout_type=cfg.holdout_type, seed=derive_seed(cfg.seed, "corpus"))
    shards = partition(split.train, cfg.clients, cfg.partition,
                       derive_seed(cfg.seed, "partition"))
    total = sum(len(s) for s in shards)
    loss_weights = LossWeights(mu1=cfg.mu1, mu2=cfg.mu2, mu3=cfg.mu3,
                               alpha=cfg.alpha, beta=cfg.beta)
    clients = [
        ClientState(
            client_id=k,
            shard=shard,
            model=ForgeryModel(cfg.codebook_size, cfg.codebook_dim,
                               seed=derive_seed(cfg.seed, "client", k)),
            sgd=SgdState(learning_rate=cfg.learning_rate, momentum=cfg.momentum),
            weight=len(shard) / total,
            master_seed=cfg.seed,
            loss_weights=loss_weights,
            batch_size=cfg.batch_size,
        )
        for k, shard in enumerate(shards)
    ]

    global_model = ForgeryModel(cfg.codebook_size, cfg.codebook_dim,
                                seed=derive_seed(cfg.seed, "init"))
    global_params = global_model.param_set().copy()

    eval_model = ForgeryModel(cfg.codebook_size, cfg.codebook_dim, seed=0)

    def eval_globals(params: ParamSet) -> tuple[float, float]:
        eval_model.load_params(params)
        return evaluate(eval_model, split.test)

    logs: list[RoundLog] = []
    t0 = time.monotonic()
    acc0, auc0 = eval_globals(global_params)
    logs.append(RoundLog(round=0, global_accuracy=acc0, global_auc=auc0,
                         wall_time=time.monotonic() - t0))

    for rnd in range(1, cfg.rounds + 1):
        t0 = time.monotonic()
        collected: list[ParamSet] = []
        stats: list[ClientRoundStats] = []
        for client in clients:
            updated, train_loss = local_update(client, global_params, cfg.local_epochs)
            c_acc, c_auc = evaluate(client.model, split.test)
            collected.append(updated)
            stats.append(ClientRoundStats(client_id=client.client_id,
                                          train_loss=train_loss,
                                          accuracy=c_acc, auc=c_auc))
        global_params = aggregate(collected, [c.weight for c in clients])
        g_acc, g_auc = eval_globals(global_params)
        g_loss = math.fsum(c.weight * s.train_loss for c, s in zip(clients, stats))
        logs.append(RoundLog(round=rnd, clients=stats, global_loss=g_loss,
                             global_accuracy=g_acc, global_auc=g_auc,
                             wall_time=time.monotonic() - t0))
    return global_params, logs


def rounds_to_csv(logs: list[RoundLog]) -> str:
    """Render round logs as CSV (schema v1): round, client, loss, accuracy, auc."""
    lines = ["# fedforge-rounds-v1", "round,client,loss,accuracy,auc"]
    for log in logs:
        for s in log.clients:
            lines.append(f"{log.round},{s.client_id},{s.train_loss!r},"
                         f"{s.accuracy!r},{s.auc!r}")
        lines.append(f"{log.round},global,{log.global_loss!r},"
                     f"{log.global_accuracy!r},{log.global_auc!r}")
    return "\n".join(lines) + "\n"
