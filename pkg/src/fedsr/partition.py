"""Client shard assignment and clustering of result vectors."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .degradation import DegradationType
from .errors import InfeasiblePartitionError, InvalidArgumentError

NUM_TYPES = len(DegradationType)

# operationalized shapes of the recommended training distributions,
# ordered (clean, blur, noise, jpeg)
PRESET_PROPORTIONS = {
    "few_clean_or_blur": (0.05, 0.05, 0.45, 0.45),
    "few_noise": (0.30, 0.30, 0.05, 0.35),
    "few_jpeg": (0.30, 0.30, 0.35, 0.05),
    "few_jpeg_many_noise": (0.20, 0.20, 0.55, 0.05),
    "few_clean_many_blur": (0.05, 0.55, 0.20, 0.20),
}


@dataclass(frozen=True)
class DirichletParams:
    alpha: tuple = (0.5,) * NUM_TYPES

    def __post_init__(self):
        alpha = tuple(float(a) for a in self.alpha)
        if not alpha or any(not a > 0 for a in alpha):
            raise InvalidArgumentError(f"Dirichlet concentrations must be positive, got {alpha}")
        object.__setattr__(self, "alpha", alpha)

    @classmethod
    def symmetric(cls, alpha: float = 0.5, k: int = NUM_TYPES) -> "DirichletParams":
        return cls((alpha,) * k)


@dataclass
class ClientShard:
    client_id: int
    degradation_type: DegradationType
    image_ids: list[str]


@dataclass
class PartitionPlan:
    clients: list[ClientShard]
    proportions: list[float]
    master_seed: int | None = None
    meta: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "master_seed": self.master_seed,
            "proportions": list(self.proportions),
            "clients": [
                {"id": c.client_id, "type": c.degradation_type.label, "image_ids": list(c.image_ids)}
                for c in self.clients
            ],
        }

    @classmethod
    def from_dict(cls, d) -> "PartitionPlan":
        clients = [
            ClientShard(int(c["id"]), DegradationType.parse(c["type"]), list(c["image_ids"]))
            for c in d["clients"]
        ]
        plan = cls(clients, list(d["proportions"]), d.get("master_seed"))
        plan.validate()
        return plan

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "PartitionPlan":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def validate(self, image_ids=None):
        seen = set()
        for c in self.clients:
            if not c.image_ids:
                raise InvalidArgumentError(f"client {c.client_id} has an empty shard")
            overlap = seen.intersection(c.image_ids)
            if overlap or len(set(c.image_ids)) != len(c.image_ids):
                raise InvalidArgumentError(f"client {c.client_id} shares images: {sorted(overlap)}")
            seen.update(c.image_ids)
        if image_ids is not None and seen != set(image_ids):
            raise InvalidArgumentError("partition does not cover the dataset exactly")


def sample_dirichlet(params: DirichletParams, rng) -> np.ndarray:
    """Normalized Gamma(alpha_i, 1) variates, drawn in coordinate order."""
    if not isinstance(params, DirichletParams):
        params = DirichletParams(tuple(params))
    g = np.array([rng.gamma(a) for a in params.alpha], dtype=np.float64)
    total = g.sum()
    if total == 0.0:  # every variate underflowed; fall back to the largest-alpha vertex
        g = np.zeros_like(g)
        g[int(np.argmax(params.alpha))] = 1.0
        total = 1.0
    return g / total


def assign_degradation_types(num_clients: int) -> list[DegradationType]:
    if num_clients < 1:
        raise InvalidArgumentError("need at least one client")
    return [DegradationType(i % NUM_TYPES) for i in range(num_clients)]


def largest_remainder(proportions, total: int) -> list[int]:
    p = np.asarray(proportions, dtype=np.float64)
    p = p / p.sum()
    exact = p * total
    counts = np.floor(exact).astype(int)
    short = total - int(counts.sum())
    # largest fractional part first, lower index wins ties
    order = sorted(range(len(p)), key=lambda i: (-(exact[i] - counts[i]), i))
    for i in order[:short]:
        counts[i] += 1
    return counts.tolist()


def _even_split(items, parts: int) -> list[list]:
    base, extra = divmod(len(items), parts)
    out, start = [], 0
    for k in range(parts):
        size = base + (1 if k < extra else 0)
        out.append(items[start:start + size])
        start += size
    return out


def build_partition(image_ids, num_clients: int, proportions="uniform", rng=None,
                    master_seed=None) -> PartitionPlan:
    """Shard ``image_ids`` across clients with one degradation type each.

    ``proportions`` is ``"uniform"``, a :class:`DirichletParams` (sampled from
    ``rng`` before the shuffle), or an explicit 4-vector. Types that have no
    client drop out and the remaining shares are renormalized.
    """
    image_ids = list(image_ids)
    if len(set(image_ids)) != len(image_ids):
        raise InvalidArgumentError("image ids must be unique")
    if len(image_ids) < num_clients:
        raise InvalidArgumentError(
            f"{len(image_ids)} images cannot cover {num_clients} clients"
        )
    types = assign_degradation_types(num_clients)
    if isinstance(proportions, str):
        if proportions != "uniform":
            raise InvalidArgumentError(f"unknown proportion mode {proportions!r}")
        props = np.full(NUM_TYPES, 1.0 / NUM_TYPES)
    elif isinstance(proportions, DirichletParams):
        if rng is None:
            raise InvalidArgumentError("Dirichlet proportions need a random stream")
        props = sample_dirichlet(proportions, rng)
    else:
        props = np.asarray(proportions, dtype=np.float64)
        if props.shape != (NUM_TYPES,) or (props < 0).any() or props.sum() <= 0:
            raise InvalidArgumentError(f"invalid proportion vector {proportions!r}")
        props = props / props.sum()
    shuffled = rng.shuffle(image_ids) if rng is not None else image_ids

    present = sorted(set(types))
    active = np.array([props[t] for t in present])
    if active.sum() <= 0:
        active = np.ones(len(present))
    counts = dict(zip(present, largest_remainder(active, len(image_ids))))

    shards: dict[int, list[str]] = {}
    start = 0
    for t in present:
        members = [i for i, ct in enumerate(types) if ct == t]
        block = shuffled[start:start + counts[t]]
        start += counts[t]
        if len(block) < len(members):
            raise InfeasiblePartitionError(t.label, len(block), len(members))
        for cid, part in zip(members, _even_split(block, len(members))):
            shards[cid] = part
    clients = [ClientShard(cid, types[cid], shards[cid]) for cid in range(num_clients)]
    plan = PartitionPlan(clients, props.tolist(), master_seed)
    plan.validate(image_ids)
    return plan


def cluster_result_rows(rows, k: int) -> list[int]:
    """Average-linkage agglomerative clustering under Euclidean distance.

    Clusters are keyed by their smallest row index; among equally close pairs
    the lexicographically smallest key pair merges first. Labels are numbered
    by first appearance in row order.
    """
    x = np.asarray(rows, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    n = x.shape[0]
    if k < 1:
        raise InvalidArgumentError(f"k must be >= 1, got {k}")
    if k > n:
        raise InvalidArgumentError(f"k={k} exceeds the {n} rows")
    dist = np.sqrt(((x[:, None, :] - x[None, :, :]) ** 2).sum(axis=-1))
    members = {i: [i] for i in range(n)}
    d = {(i, j): dist[i, j] for i in range(n) for j in range(i + 1, n)}
    while len(members) > k:
        a, b = min(d, key=lambda pair: (d[pair], pair))
        na, nb = len(members[a]), len(members[b])
        merged = min(a, b)
        gone = max(a, b)
        members[merged] = sorted(members[a] + members[b])
        del members[gone]
        for c in members:
            if c == merged:
                continue
            da = d[(min(a, c), max(a, c))]
            db = d[(min(b, c), max(b, c))]
            d[(min(merged, c), max(merged, c))] = (na * da + nb * db) / (na + nb)
        d = {pair: v for pair, v in d.items() if gone not in pair and pair != (a, b)}
    labels = [0] * n
    for label, key in enumerate(sorted(members)):
        for i in members[key]:
            labels[i] = label
    return labels
