"""The round loop: client sampling, local execution, wire exchange with
bit-exact traffic metering, server aggregation and evaluation.

All four methods (fedcspack, fedavg, fedprox, magnitude_topk) run under
the identical loop; they differ only in how the update payload is built
and weighted.  Everything is deterministic per config seed.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass

import numpy as np

from .aggregation import GlobalMask, ServerState, aggregate, selective_pull
from .config import DatasetSpec, RunConfig
from .errors import ConfigError
from .model import Batch, FlatParams, forward_loss, init_params, local_train
from .packing import (
    EPS_W,
    DeltaPackages,
    LocalMask,
    build_mask,
    extract_deltas,
    package_views,
    score_packages,
    select_topk,
)
from .partition import Dataset, Partition, load_idx, make_partition, synth_blobs
from .wire import PackedUpdate, UpdateEntry, decode_update, encode_update

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class RoundMetrics:
    round: int
    method: str
    global_acc: float
    personalized_acc: float
    bytes_up: int
    bytes_down: int
    wall_ms: float
    participants: tuple[int, ...]
    violations: int


@dataclass
class RunResult:
    config: RunConfig
    metrics: list[RoundMetrics]
    server: ServerState
    locals_: list[FlatParams]
    partition: Partition
    dataset: Dataset
    dense_bytes_per_round: int


def build_dataset(spec: DatasetSpec) -> Dataset:
    if spec.kind == "blobs":
        return synth_blobs(
            num_classes=spec.num_classes,
            dim=spec.dim,
            samples_per_class=spec.samples_per_class,
            spread=spec.spread,
            seed=spec.seed,
        )
    return load_idx(spec.images, spec.labels)


def effective_pack(config: RunConfig) -> int:
    # magnitude top-k sparsifies at coordinate granularity
    if config.method == "magnitude_topk":
        return 1
    return config.pack


def baseline_magnitude_topk(
    local: FlatParams, global_: FlatParams, fraction: float
) -> tuple[np.ndarray, np.ndarray]:
    """Classic magnitude Top-k over the dense delta.

    Returns the kept coordinate indices (ascending) and their delta values;
    keeps the ceil(fraction * d) largest |delta| coordinates, ties broken by
    lower index.
    """
    if not 0 < fraction <= 1:
        raise ValueError("fraction must be in (0, 1]")
    delta = local.values.astype(np.float64) - global_.values.astype(np.float64)
    d = len(delta)
    k = math.ceil(fraction * d)
    order = np.lexsort((np.arange(d), -np.abs(delta)))
    kept = np.sort(order[:k])
    return kept, delta[kept].astype(np.float32)


def _client_update(
    config: RunConfig,
    client_id: int,
    round_: int,
    trained: FlatParams,
    global_snapshot: FlatParams,
) -> PackedUpdate:
    """Build the wire update for one client according to the method."""
    pack = effective_pack(config)
    views = package_views(trained.shape.total_params, pack)

    if config.method == "fedcspack":
        profile = score_packages(trained, global_snapshot, pack)
        if config.force_full_selection:
            selected = frozenset(range(len(views)))
        else:
            selected = select_topk(profile, config.cap_ratio)
        entries = []
        for j in sorted(selected):
            v = views[j]
            if config.payload == "raw":
                payload = trained.values[v.offset : v.stop].copy()
            else:
                payload = (
                    trained.values[v.offset : v.stop] - global_snapshot.values[v.offset : v.stop]
                )
            entries.append(
                UpdateEntry(
                    package_index=j,
                    theta=float(profile.per_package_cos[j]),
                    beta=float(profile.per_package_kl[j]),
                    payload=payload.astype(np.float32),
                )
            )
    elif config.method == "magnitude_topk":
        kept, values = baseline_magnitude_topk(trained, global_snapshot, config.topk_fraction)
        entries = [
            UpdateEntry(package_index=int(j), theta=1.0, beta=0.0, payload=np.array([v], dtype=np.float32))
            for j, v in zip(kept, values)
        ]
    else:  # fedavg / fedprox: dense delta, every package
        entries = []
        for v in views:
            payload = trained.values[v.offset : v.stop] - global_snapshot.values[v.offset : v.stop]
            entries.append(
                UpdateEntry(package_index=v.index, theta=1.0, beta=0.0, payload=payload.astype(np.float32))
            )
    return PackedUpdate(client_id=client_id, round=round_, pack=pack, entries=tuple(entries))


def _server_ingest(
    config: RunConfig,
    update: PackedUpdate,
    global_snapshot: FlatParams,
    num_packages: int,
) -> tuple[int, LocalMask, DeltaPackages]:
    """Rebuild (mask, deltas) from a decoded wire update.

    fedcspack weights derive from the transmitted theta/beta per the
    configured weight mode; baselines weigh every package equally so the
    normalized combination is the plain mean over senders.
    """
    views = package_views(global_snapshot.shape.total_params, update.pack)
    weights = np.zeros(num_packages)
    payloads: dict[int, np.ndarray] = {}
    for e in update.entries:
        if config.method == "fedcspack":
            if config.weight_override is not None:
                w = config.weight_override
            elif config.weight_mode == "dual":
                w = e.theta + e.beta
            elif config.weight_mode == "cos_only":
                w = e.theta
            else:  # kl_only
                w = e.beta
            weights[e.package_index] = max(w, EPS_W)
        else:
            weights[e.package_index] = 1.0
        payload = e.payload
        if config.method == "fedcspack" and config.payload == "raw":
            v = views[e.package_index]
            payload = payload - global_snapshot.values[v.offset : v.stop]
        payloads[e.package_index] = payload.astype(np.float32)
    mask = LocalMask(weights=weights, selected=frozenset(payloads))
    return update.client_id, mask, DeltaPackages(packages=payloads)


def evaluate(
    server: ServerState,
    locals_: list[FlatParams],
    partition: Partition,
    dataset: Dataset,
    pack: int,
) -> tuple[float, float]:
    """Global accuracy on the pooled test rows and the dataset-size weighted
    mean of per-client post-pull accuracies on their own test rows."""
    pooled = np.concatenate([t for t in partition.test if len(t)]) if partition.test else np.array([], dtype=np.int64)
    if len(pooled):
        batch = Batch(dataset.features[pooled], dataset.labels[pooled])
        _, correct = forward_loss(server.global_params, batch)
        global_acc = correct / len(pooled)
    else:
        global_acc = 0.0

    num = 0.0
    den = 0.0
    for i in range(partition.num_clients):
        rows = partition.test[i]
        if len(rows) == 0:
            continue
        model = selective_pull(locals_[i], server.global_params, server.global_mask, pack)
        batch = Batch(dataset.features[rows], dataset.labels[rows])
        _, correct = forward_loss(model, batch)
        size = len(partition.assignment[i])
        num += size * (correct / len(rows))
        den += size
    return global_acc, (num / den if den else 0.0)


def run(config: RunConfig, dataset: Dataset | None = None, round_hook=None) -> RunResult:
    """Execute the full simulation; deterministic per config seed.

    round_hook(t, server), when given, is called after each aggregation
    with the post-round server state (read-only observer).
    """
    if dataset is None:
        dataset = build_dataset(config.dataset)
    if dataset.features.shape[1] != config.model.input_dim:
        raise ConfigError(
            f"dataset dim {dataset.features.shape[1]} != model input {config.model.input_dim}"
        )
    partition = make_partition(dataset, config.partition)
    pack = effective_pack(config)
    d = config.model.total_params
    views = package_views(d, pack)
    j_count = len(views)

    server = ServerState(
        global_params=init_params(config.model, config.seed),
        global_mask=GlobalMask.all_valid(j_count),
        round=0,
    )
    locals_ = [server.global_params.copy() for _ in range(config.clients)]

    sample_size = math.ceil(config.cpr * config.clients)
    metrics: list[RoundMetrics] = []
    for t in range(config.rounds):
        t0 = time.perf_counter()
        sample_rng = np.random.default_rng([config.seed, 17, t])
        sampled = sorted(
            sample_rng.choice(config.clients, size=sample_size, replace=False).tolist()
        )
        assert len(set(sampled)) == sample_size

        global_snapshot = server.global_params.copy()
        mask_snapshot = server.global_mask

        wire_blobs: list[bytes] = []
        decoded: list[PackedUpdate] = []
        for i in sampled:
            if len(partition.train[i]) == 0:
                log.info("round %d: client %d has no train data, skipped", t, i)
                continue
            if config.method == "fedcspack":
                pulled = selective_pull(locals_[i], global_snapshot, mask_snapshot, pack)
            else:
                pulled = global_snapshot.copy()
            rows = partition.train[i]
            data = Batch(dataset.features[rows], dataset.labels[rows])
            train_rng = np.random.default_rng([config.seed, 29, t, i])
            trained = local_train(
                pulled,
                data,
                epochs=config.local_epochs,
                lr=config.lr,
                batch_size=config.batch_size,
                rng=train_rng,
                prox_mu=config.prox_mu if config.method == "fedprox" else 0.0,
                anchor=pulled if config.method == "fedprox" else None,
            )
            locals_[i] = trained
            update = _client_update(config, i, t, trained, global_snapshot)
            blob = encode_update(update)
            wire_blobs.append(blob)
            decoded.append(decode_update(blob))

        bytes_up = sum(len(b) for b in wire_blobs)
        closed_form = sum(u.encoded_length() for u in decoded)
        assert bytes_up == closed_form, "traffic metering drifted from the codec"

        updates = [_server_ingest(config, u, global_snapshot, j_count) for u in decoded]
        result = aggregate(server, updates, pack)
        server = result.state

        # dense broadcast of the new global model, metered through the codec
        # as one full-vector entry per recipient
        broadcast = PackedUpdate(
            client_id=0xFFFFFFFF,
            round=t,
            pack=d,
            entries=(
                UpdateEntry(
                    package_index=0,
                    theta=1.0,
                    beta=0.0,
                    payload=server.global_params.values,
                ),
            ),
        )
        bytes_down = len(encode_update(broadcast)) * len(sampled)

        if round_hook is not None:
            round_hook(t, server)

        global_acc, personalized_acc = evaluate(server, locals_, partition, dataset, pack)
        metrics.append(
            RoundMetrics(
                round=t,
                method=config.method,
                global_acc=global_acc,
                personalized_acc=personalized_acc,
                bytes_up=bytes_up,
                bytes_down=bytes_down,
                wall_ms=(time.perf_counter() - t0) * 1000.0,
                participants=tuple(sampled),
                violations=result.violations,
            )
        )
    return RunResult(
        config=config,
        metrics=metrics,
        server=server,
        locals_=locals_,
        partition=partition,
        dataset=dataset,
        dense_bytes_per_round=d * 4 * sample_size,
    )
