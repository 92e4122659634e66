"""Federated round state machine: broadcast, local training, aggregation,
evaluation, and communication accounting.

Every round: (1) broadcast the global parameters, (2) run local training on
each client in client-index order, (3) collect the trained parameter sets,
(4) aggregate with data-size weights, then evaluate on the test set. The
whole loop is deterministic for a fixed config seed: per-client batch
shuffling draws from a seed sequence derived from (seed, round, client).
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field

import numpy as np

from .data import MultiLabelDataset
from .errors import ConfigError, ContractError, DataError
from .metrics import f1_scores
from .models import ModelConfig, build_model
from .objectives import MoonConfig, local_objective
from .optim import Adam
from .params import ParamSet, count_params, save_bytes
from .partition import ClientShard, partition_ds1, partition_ds2
from .tensor import Tensor, no_grad

SCHEMA_VERSION = 1
WEIGHT_SUM_TOL = 1e-12

_DTYPES = {"f32": np.dtype(np.float32), "f64": np.dtype(np.float64)}


def precision_dtype(precision: str) -> np.dtype:
    dt = _DTYPES.get(precision)
    if dt is None:
        raise ConfigError(f"precision must be 'f32' or 'f64', got {precision!r}")
    return dt


def client_rng(seed: int, round_index: int, client_id: int) -> np.random.Generator:
    """The shuffle stream for one client in one round; public so an external
    reference loop can reproduce the exact batch order."""
    return np.random.default_rng(
        np.random.SeedSequence([0xC11E, seed, round_index, client_id]))


@dataclass
class PartitionSpec:
    scheme: str
    clients: int = 7

    def validate(self) -> None:
        if self.scheme not in ("ds1", "ds2"):
            raise ConfigError(f"partition scheme must be 'ds1' or 'ds2', got {self.scheme!r}")
        if self.scheme == "ds1" and self.clients < 1:
            raise ConfigError("ds1 needs clients >= 1")

    def to_dict(self) -> dict:
        return {"scheme": self.scheme, "clients": self.clients}

    @classmethod
    def from_dict(cls, d: dict) -> "PartitionSpec":
        unknown = set(d) - {"scheme", "clients"}
        if unknown:
            raise ConfigError(f"unknown partition fields: {sorted(unknown)}")
        return cls(**d)


@dataclass
class ExperimentConfig:
    algo: str
    model: ModelConfig
    partition: PartitionSpec
    rounds: int = 30
    local_epochs: int = 3
    lr: float = 0.001
    batch_size: int = 128
    moon: MoonConfig = field(default_factory=MoonConfig)
    seed: int = 0
    precision: str = "f64"
    client_weights: list[float] | None = None

    def validate(self) -> None:
        if self.algo not in ("fedavg", "moon"):
            raise ConfigError(f"algo must be 'fedavg' or 'moon', got {self.algo!r}")
        if self.rounds < 1:
            raise ConfigError("rounds must be >= 1")
        if self.local_epochs < 1:
            raise ConfigError("local_epochs must be >= 1")
        if self.lr <= 0:
            raise ConfigError("lr must be > 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        precision_dtype(self.precision)
        self.model.validate()
        self.partition.validate()
        self.moon.validate()

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "algo": self.algo,
            "model": self.model.to_dict(),
            "partition": self.partition.to_dict(),
            "rounds": self.rounds,
            "local_epochs": self.local_epochs,
            "lr": self.lr,
            "batch_size": self.batch_size,
            "moon": {"tau": self.moon.tau, "mu": self.moon.mu, "form": self.moon.form},
            "seed": self.seed,
            "precision": self.precision,
            "client_weights": self.client_weights,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        version = d.pop("schema_version", None)
        if version != SCHEMA_VERSION:
            raise ConfigError(
                f"config schema_version must be {SCHEMA_VERSION}, got {version!r}")
        known = {"algo", "model", "partition", "rounds", "local_epochs", "lr",
                 "batch_size", "moon", "seed", "precision", "client_weights"}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        if "algo" not in d or "model" not in d or "partition" not in d:
            raise ConfigError("config needs at least algo, model, and partition")
        d["model"] = ModelConfig.from_dict(d["model"])
        d["partition"] = PartitionSpec.from_dict(d["partition"])
        if "moon" in d:
            moon = d["moon"]
            unknown = set(moon) - {"tau", "mu", "form"}
            if unknown:
                raise ConfigError(f"unknown moon fields: {sorted(unknown)}")
            d["moon"] = MoonConfig(**moon)
        return cls(**d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        try:
            d = json.loads(text)
        except json.JSONDecodeError as e:
            raise ConfigError(f"config is not valid JSON: {e}") from e
        if not isinstance(d, dict):
            raise ConfigError("config JSON must be an object")
        return cls.from_dict(d)


@dataclass
class ServerState:
    global_params: ParamSet
    round_index: int
    prev_local: dict[int, ParamSet] = field(default_factory=dict)
    weights: list[float] | None = None


@dataclass
class RoundRecord:
    round: int
    client_stats: list[dict]
    micro_f1: float
    macro_f1: float
    test_bce: float
    param_count: int
    bytes_payload: int    # 2 * K * param_count * bytes per value
    bytes_total: int      # 2 * K * serialized blob length

    def to_dict(self) -> dict:
        return {
            "round": self.round,
            "client_stats": self.client_stats,
            "micro_f1": self.micro_f1,
            "macro_f1": self.macro_f1,
            "test_bce": self.test_bce,
            "param_count": self.param_count,
            "bytes_payload": self.bytes_payload,
            "bytes_total": self.bytes_total,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "RoundRecord":
        return cls(**d)


def aggregate(paramsets: list[ParamSet], weights: list[float]) -> ParamSet:
    """Element-wise convex combination, accumulated in client-index order.

    Bitwise-identical inputs short-circuit to an exact copy of the first, so
    aggregation of unchanged clients is exactly idempotent.
    """
    if not paramsets:
        raise ContractError("aggregate: empty input")
    if len(paramsets) != len(weights):
        raise ContractError("aggregate: weights must align with paramsets")
    first = paramsets[0]
    for ps in paramsets[1:]:
        if not first.structure_matches(ps):
            raise ContractError("aggregate: structure mismatch")
    w = [float(x) for x in weights]
    if any(x <= 0 for x in w):
        raise ContractError("aggregate: weights must be positive")
    if abs(sum(w) - 1.0) > WEIGHT_SUM_TOL:
        raise ContractError(f"aggregate: weights sum to {sum(w)!r}, not 1")

    if all(ps == first for ps in paramsets[1:]):
        return ParamSet(first.items())

    out = []
    for j, (name, a0) in enumerate(first.items()):
        cast = a0.dtype.type
        acc = a0 * cast(w[0])
        for i in range(1, len(paramsets)):
            acc += paramsets[i][name] * cast(w[i])
        out.append((name, acc))
    return ParamSet(out)


def size_weights(shards: list[ClientShard]) -> list[float]:
    total = sum(s.size for s in shards)
    return [s.size / total for s in shards]


def _batches(order: np.ndarray, batch_size: int):
    for start in range(0, len(order), batch_size):
        yield order[start:start + batch_size]


def local_train(dataset: MultiLabelDataset, shard: ClientShard,
                global_w: ParamSet, prev_local_w: ParamSet | None,
                config: ExperimentConfig, round_index: int) \
        -> tuple[ParamSet, dict]:
    """One client's round: load the broadcast weights, train E epochs of
    seeded-shuffled mini-batch Adam on the local objective, return the new
    parameters and stats. Optimizer state is fresh each call."""
    if shard.size == 0:
        raise DataError(f"client {shard.client_id}: empty shard")
    dtype = precision_dtype(config.precision)
    t0 = time.monotonic()

    model = build_model(config.model, config.seed, dtype=dtype)
    global_w.load_into(model)
    g_model = p_model = None
    if config.algo == "moon":
        if prev_local_w is None:
            raise ContractError("moon requires prev_local_w")
        g_model = build_model(config.model, config.seed, dtype=dtype)
        global_w.load_into(g_model)
        g_model.eval()
        p_model = build_model(config.model, config.seed, dtype=dtype)
        prev_local_w.load_into(p_model)
        p_model.eval()

    opt = Adam(model.named_parameters(), lr=config.lr)
    rng = client_rng(config.seed, round_index, shard.client_id)
    idx = np.asarray(shard.indices)
    b = min(config.batch_size, shard.size)
    steps = 0
    last = {}
    for _ in range(config.local_epochs):
        order = rng.permutation(shard.size)
        for chunk in _batches(order, b):
            take = idx[chunk]
            x = Tensor(dataset.images[take].astype(dtype))
            y = Tensor(dataset.labels[take].astype(dtype))
            loss, comps = local_objective(x, y, model, g_model, p_model,
                                          config.algo, config.moon)
            opt.zero_grad()
            loss.backward()
            opt.step()
            steps += 1
            last = comps

    stats = {
        "client_id": shard.client_id,
        "train_loss": last.get("loss", float("nan")),
        "wall_seconds": time.monotonic() - t0,
        "samples_seen": int(config.local_epochs * shard.size),
        "steps": steps,
    }
    if config.algo == "moon":
        stats["contrastive"] = last.get("contrastive", float("nan"))
    return ParamSet.from_model(model), stats


def evaluate(w: ParamSet, model_config: ModelConfig, testset: MultiLabelDataset,
             *, precision: str = "f64", batch_size: int = 256,
             threshold: float = 0.5) -> tuple[float, float, float]:
    """Test micro-F1, macro-F1, and BCE with batch norm in eval mode.

    A probability exactly equal to the threshold counts as a positive.
    """
    if len(testset) == 0:
        raise DataError("evaluate: empty test set")
    dtype = precision_dtype(precision)
    model = build_model(model_config, 0, dtype=dtype)
    w.load_into(model)
    model.eval()
    preds = []
    bce_sum = 0.0
    with no_grad():
        for start in range(0, len(testset), batch_size):
            sl = slice(start, start + batch_size)
            x = Tensor(testset.images[sl].astype(dtype))
            logits, _ = model(x)
            probs = 1.0 / (1.0 + np.exp(-logits.data.astype(np.float64)))
            preds.append(probs >= threshold)
            y = testset.labels[sl].astype(np.float64)
            pc = np.clip(probs, 1e-7, 1.0 - 1e-7)
            bce_sum += float(-(y * np.log(pc) + (1 - y) * np.log1p(-pc)).sum())
    summary = f1_scores(np.concatenate(preds).astype(np.uint8), testset.labels)
    return summary.micro_f1, summary.macro_f1, bce_sum / len(testset)


def run_round(state: ServerState, dataset: MultiLabelDataset,
              shards: list[ClientShard], testset: MultiLabelDataset,
              config: ExperimentConfig) -> tuple[ServerState, RoundRecord]:
    w = state.global_params
    collected, stats = [], []
    for shard in shards:
        prev = state.prev_local.get(shard.client_id, w) if config.algo == "moon" else None
        ps, st = local_train(dataset, shard, w, prev, config, state.round_index)
        collected.append(ps)
        stats.append(st)

    weights = config.client_weights or size_weights(shards)
    new_w = aggregate(collected, weights)
    micro, macro, bce = evaluate(new_w, config.model, testset,
                                 precision=config.precision)

    k = len(shards)
    n_params = count_params(new_w)
    blob_len = len(save_bytes(new_w, config.precision))
    record = RoundRecord(
        round=state.round_index,
        client_stats=stats,
        micro_f1=micro,
        macro_f1=macro,
        test_bce=bce,
        param_count=n_params,
        bytes_payload=2 * k * n_params * precision_dtype(config.precision).itemsize,
        bytes_total=2 * k * blob_len,
    )
    prev_local = dict(state.prev_local)
    if config.algo == "moon":
        for shard, ps in zip(shards, collected):
            prev_local[shard.client_id] = ps
    new_state = ServerState(new_w, state.round_index + 1, prev_local, list(weights))
    return new_state, record


def run_experiment(config: ExperimentConfig, train_set: MultiLabelDataset,
                   test_set: MultiLabelDataset, *,
                   shards: list[ClientShard] | None = None,
                   on_round=None) -> list[RoundRecord]:
    """Partition, initialize, and run R rounds; returns every round record.

    ``shards`` overrides the config's partition scheme with precomputed
    shards. ``on_round`` is called as ``on_round(record, state)`` after each
    round. Deterministic for a fixed config under sequential execution.
    """
    config.validate()
    if shards is None:
        if config.partition.scheme == "ds1":
            shards = partition_ds1(train_set, config.partition.clients, config.seed)
        else:
            shards = partition_ds2(train_set)
    if config.client_weights is not None and \
            len(config.client_weights) != len(shards):
        raise ConfigError("client_weights must have one entry per client")

    dtype = precision_dtype(config.precision)
    init_model = build_model(config.model, config.seed, dtype=dtype)
    state = ServerState(ParamSet.from_model(init_model), 1)
    records = []
    for _ in range(config.rounds):
        state, record = run_round(state, train_set, shards, test_set, config)
        records.append(record)
        if on_round is not None:
            on_round(record, state)
    return records
