"""Synchronous FedAvg simulation: broadcast, local training, weighted averaging.

Every client draws from its own stream ``client/{id}/round/{r}`` and
aggregation sums in ascending client id, so the global weights do not
depend on how many workers run the clients.
"""
from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .degradation import DegradationType, degrade, spec_for_type
from .errors import InvalidArgumentError, InvalidStateError
from .model import ModelConfig, init_weights, loss_and_grads
from .partition import PartitionPlan
from .rng import derive_stream
from .tensor import DTYPE, AdamState, adam_step

log = logging.getLogger(__name__)

MIXED = "mixed"


@dataclass
class TrainConfig:
    rounds: int = 200
    local_epochs: int = 1
    batch_size: int = 16
    lr: float = 2e-4
    patch_size: int = 128
    loss: str = "l1"
    model: ModelConfig = field(default_factory=ModelConfig)
    seed: int = 0
    aggregate: str = "weighted"
    checkpoint_every: int = 0
    ranges: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.rounds < 0 or self.local_epochs < 1 or self.batch_size < 1 or self.lr < 0:
            raise InvalidArgumentError(f"invalid training config {self}")
        if self.aggregate not in ("weighted", "uniform"):
            raise InvalidArgumentError(f"aggregate must be weighted or uniform, got {self.aggregate!r}")
        if self.loss.lower() not in ("l1", "mse"):
            raise InvalidArgumentError(f"loss must be l1 or mse, got {self.loss!r}")

    @property
    def scale(self) -> int:
        return self.model.scale


@dataclass
class ClientState:
    client_id: int
    degradation_type: DegradationType | str
    shard: list[str]

    def stream_label(self, round_index: int) -> str:
        return f"client/{self.client_id}/round/{round_index}"


@dataclass
class ClientUpdate:
    client_id: int
    weights: dict
    sample_count: int
    mean_loss: float = float("nan")


@dataclass
class RoundReport:
    round: int
    clients: list[tuple[int, int, float]]  # (client_id, sample_count, mean_loss)

    @property
    def mean_loss(self) -> float:
        """Sample-weighted mean of the clients' training losses."""
        total = sum(n for _, n, _ in self.clients)
        return sum(n * loss for _, n, loss in self.clients) / total


def clients_from_plan(plan: PartitionPlan) -> list[ClientState]:
    return [ClientState(c.client_id, c.degradation_type, list(c.image_ids)) for c in plan.clients]


def _samples(dataset, shard):
    """Ordered (image_id, patch_index) pairs for a shard, independent of shard order."""
    out = []
    for image_id in sorted(shard):
        try:
            patches = dataset[image_id]
        except KeyError:
            raise InvalidArgumentError(f"image {image_id!r} missing from the dataset")
        out.extend((image_id, k) for k in range(len(patches)))
    return out


def local_train(global_weights, client: ClientState, config: TrainConfig, round_index: int,
                dataset) -> ClientUpdate:
    """Train a copy of the global weights on one client's shard for one round.

    Per epoch the stream shuffles the samples, then for each sample in batch
    order draws a degradation type (mixed clients only) and the LR image. Adam
    starts fresh every round.
    """
    if not client.shard:
        raise InvalidStateError(f"client {client.client_id} has an empty shard")
    rng = derive_stream(config.seed, client.stream_label(round_index))
    samples = _samples(dataset, client.shard)
    mixed = client.degradation_type == MIXED
    specs = {t: spec_for_type(t, config.scale, config.ranges) for t in DegradationType}
    fixed_spec = None if mixed else specs[DegradationType.parse(client.degradation_type)]

    weights = {k: v.copy() for k, v in global_weights.items()}
    state = AdamState(lr=config.lr)
    loss_sum, seen = 0.0, 0
    for _ in range(config.local_epochs):
        order = rng.shuffle(samples)
        for start in range(0, len(order), config.batch_size):
            batch = order[start:start + config.batch_size]
            hr = np.stack([dataset[i][k] for i, k in batch]).astype(DTYPE)
            lr_images = []
            for patch in hr:
                spec = specs[DegradationType(rng.randint(0, 3))] if mixed else fixed_spec
                lr_images.append(degrade(patch, spec, rng))
            loss, grads = loss_and_grads(weights, np.stack(lr_images), hr,
                                         loss=config.loss, config=config.model)
            weights, state = adam_step(weights, grads, state)
            loss_sum += loss * len(batch)
            seen += len(batch)
    return ClientUpdate(client.client_id, weights, len(samples), loss_sum / seen)


def fedavg_aggregate(updates, weighted: bool = True) -> dict:
    """Per-tensor mean of client weights, weighted by sample count.

    Accumulates in float64 in ascending client id order, so input order does
    not matter.
    """
    updates = sorted(updates, key=lambda u: u.client_id)
    if not updates:
        raise InvalidArgumentError("nothing to aggregate")
    names = list(updates[0].weights)
    for u in updates[1:]:
        if list(u.weights) != names:
            raise InvalidArgumentError(f"client {u.client_id} has a different weight schema")
        for name in names:
            if u.weights[name].shape != updates[0].weights[name].shape:
                raise InvalidArgumentError(f"client {u.client_id}: shape mismatch for {name}")
    counts = [float(u.sample_count) if weighted else 1.0 for u in updates]
    total = sum(counts)
    if total <= 0:
        raise InvalidArgumentError("total sample count must be positive")
    out = {}
    for name in names:
        acc = np.zeros(updates[0].weights[name].shape, dtype=np.float64)
        for n, u in zip(counts, updates):
            acc += n * u.weights[name].astype(np.float64)
        out[name] = (acc / total).astype(DTYPE)
    return out


_WORKER_DATASET = None


def _init_worker(dataset):
    global _WORKER_DATASET
    _WORKER_DATASET = dataset


def _worker_train(args):
    weights, client, config, round_index = args
    return local_train(weights, client, config, round_index, _WORKER_DATASET)


def _run_rounds(clients, config, dataset, workers, aggregate, on_round):
    weights = init_weights(config.model, config.seed)
    reports = []
    pool = None
    if workers > 1 and len(clients) > 1 and config.rounds > 0:
        pool = ProcessPoolExecutor(max_workers=min(workers, len(clients)),
                                   initializer=_init_worker, initargs=(dataset,))
    try:
        for r in range(1, config.rounds + 1):
            if pool is None:
                updates = [local_train(weights, c, config, r, dataset) for c in clients]
            else:
                updates = list(pool.map(_worker_train, [(weights, c, config, r) for c in clients]))
            weights = aggregate(updates)
            report = RoundReport(r, [(u.client_id, u.sample_count, u.mean_loss)
                                     for u in sorted(updates, key=lambda u: u.client_id)])
            reports.append(report)
            log.info("round %d/%d mean loss %.6f", r, config.rounds, report.mean_loss)
            if on_round is not None:
                on_round(r, weights, report)
    finally:
        if pool is not None:
            pool.shutdown()
    return weights, reports


def run_federated(partition: PartitionPlan, config: TrainConfig, dataset, workers: int = 1,
                  on_round=None):
    """Full-participation FedAvg for ``config.rounds`` rounds.

    ``on_round(r, weights, report)`` is called after each aggregation (used
    for checkpointing). A failing client aborts the run.
    """
    clients = clients_from_plan(partition)
    missing = [i for c in clients for i in c.shard if i not in dataset]
    if missing:
        raise InvalidArgumentError(f"partition references unknown images: {missing[:5]}")
    weighted = config.aggregate == "weighted"
    return _run_rounds(clients, config, dataset, workers,
                       lambda updates: fedavg_aggregate(updates, weighted=weighted), on_round)


def run_centralized(config: TrainConfig, dataset, degradation=MIXED, on_round=None):
    """One client holding every image; ``degradation`` is ``"mixed"`` or a single type."""
    if not dataset:
        raise InvalidArgumentError("dataset is empty")
    dtype = MIXED if degradation == MIXED else DegradationType.parse(degradation)
    client = ClientState(0, dtype, sorted(dataset))
    return _run_rounds([client], config, dataset, 1, lambda updates: updates[0].weights, on_round)
