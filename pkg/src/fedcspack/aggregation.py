"""Server-side fusion: fold the round's local masks into the global mask,
apply weight-normalized package deltas to the global model, and the
client-side selective pull that adopts only the valid global packages.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .model import FlatParams
from .packing import DeltaPackages, LocalMask, package_views


@dataclass(frozen=True)
class GlobalMask:
    """Per-package accumulated weight totals; valid where total > 0."""

    totals: np.ndarray

    @property
    def valid(self) -> np.ndarray:
        return self.totals > 0

    @classmethod
    def all_valid(cls, num_packages: int) -> "GlobalMask":
        # round-0 bootstrap: every client fully adopts the broadcast model
        return cls(totals=np.ones(num_packages))


@dataclass
class ServerState:
    global_params: FlatParams
    global_mask: GlobalMask
    round: int = 0


@dataclass(frozen=True)
class AggregateResult:
    state: ServerState
    violations: int


def fold_masks(masks: list[LocalMask], num_packages: int) -> GlobalMask:
    """Sum local mask weights elementwise into the global mask."""
    totals = np.zeros(num_packages)
    for m in masks:
        if len(m.weights) != num_packages:
            raise ShapeError(
                f"mask length {len(m.weights)} != package count {num_packages}"
            )
        totals += m.weights
    return GlobalMask(totals=totals)


def combine_updates(
    accepted: list[tuple[int, LocalMask, DeltaPackages]],
    mask: GlobalMask,
    views,
    total_params: int,
) -> np.ndarray:
    """Weight-normalized float64 combination of accepted payloads, folded in
    the order given (callers sort by client id first)."""
    acc = np.zeros(total_params)
    for _, local_mask, deltas in accepted:
        for j, payload in deltas.packages.items():
            v = views[j]
            acc[v.offset : v.stop] += (
                local_mask.weights[j] / mask.totals[j]
            ) * payload.astype(np.float64)
    return acc


def aggregate(
    server: ServerState,
    updates: list[tuple[int, LocalMask, DeltaPackages]],
    pack: int,
) -> AggregateResult:
    """One round of dual-weight aggregation.

    Each update is (client_id, mask, payloads); payloads are local-minus-
    global deltas.  Per package the applied step is the mask-weight
    normalized combination of client payloads.  Updates carrying a payload
    at a zero-weight position are rejected whole and counted as protocol
    violations.  Folding is fixed to ascending client id so float sums are
    order-independent of the caller.
    """
    views = package_views(server.global_params.shape.total_params, pack)
    j_count = len(views)

    accepted = []
    violations = 0
    for client_id, mask, deltas in sorted(updates, key=lambda u: u[0]):
        if len(mask.weights) != j_count:
            raise ShapeError(
                f"mask length {len(mask.weights)} != package count {j_count}"
            )
        if any(mask.weights[j] <= 0 for j in deltas.packages):
            violations += 1
            continue
        for j, payload in deltas.packages.items():
            if len(payload) != views[j].len:
                raise ShapeError(f"payload length mismatch on package {j}")
        accepted.append((client_id, mask, deltas))

    new_mask = fold_masks([m for _, m, _ in accepted], j_count)
    acc = combine_updates(accepted, new_mask, views, server.global_params.shape.total_params)

    new_values = server.global_params.values.copy()
    for v in views:
        if new_mask.totals[v.index] > 0:
            seg = new_values[v.offset : v.stop].astype(np.float64) + acc[v.offset : v.stop]
            new_values[v.offset : v.stop] = seg.astype(np.float32)

    state = ServerState(
        global_params=FlatParams(new_values, server.global_params.shape),
        global_mask=new_mask,
        round=server.round + 1,
    )
    return AggregateResult(state=state, violations=violations)


def selective_pull(
    local: FlatParams,
    global_: FlatParams,
    global_mask: GlobalMask,
    pack: int,
) -> FlatParams:
    """Adopt global packages at valid mask positions, keep local elsewhere."""
    if local.shape != global_.shape:
        raise ShapeError("local/global shape mismatch")
    views = package_views(local.shape.total_params, pack)
    if len(global_mask.totals) != len(views):
        raise ShapeError(
            f"mask length {len(global_mask.totals)} != package count {len(views)}"
        )
    out = local.values.copy()
    for v in views:
        if global_mask.totals[v.index] > 0:
            out[v.offset : v.stop] = global_.values[v.offset : v.stop]
    return FlatParams(out, local.shape)
