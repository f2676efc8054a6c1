"""Client-side parameter packaging: split the flat model into PACK-sized
packages, score each against its global counterpart by cosine similarity
and KL distance, pick the packages worth sharing, and build the weighted
local mask that tells the server how to fuse them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .model import FlatParams

# Floors: KL denominator and mask weight clamp.
EPS_Q = 1e-8
EPS_W = 1e-6


@dataclass(frozen=True)
class PackageView:
    """One contiguous slice of the flattened model."""

    index: int
    offset: int
    len: int

    @property
    def stop(self) -> int:
        return self.offset + self.len


def package_views(total_params: int, pack: int) -> list[PackageView]:
    """Tile [0, total_params) into ceil(total/pack) slices; tail may be short."""
    if pack < 1:
        raise ValueError("pack must be >= 1")
    if total_params < 1:
        raise ValueError("total_params must be >= 1")
    views = []
    for j in range(math.ceil(total_params / pack)):
        off = j * pack
        views.append(PackageView(j, off, min(pack, total_params - off)))
    return views


@dataclass(frozen=True)
class SimilarityProfile:
    """Per-round similarity record: overall cosine plus per-package scores."""

    overall: float
    per_package_cos: np.ndarray
    per_package_kl: np.ndarray

    @property
    def num_packages(self) -> int:
        return len(self.per_package_cos)


@dataclass(frozen=True)
class LocalMask:
    """Per-package weights; nonzero exactly on the selected packages."""

    weights: np.ndarray
    selected: frozenset[int]

    def __post_init__(self):
        nz = set(np.flatnonzero(self.weights > 0).tolist())
        if nz != set(self.selected):
            raise ValueError("mask weights inconsistent with selected set")


@dataclass(frozen=True)
class DeltaPackages:
    """Payloads of the shared packages, keyed by package index."""

    packages: dict[int, np.ndarray]


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity with float64 accumulation; 0 on zero norm."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape or a.ndim != 1 or len(a) < 1:
        raise ShapeError(f"cosine shapes {a.shape} vs {b.shape}")
    a64 = a.astype(np.float64)
    b64 = b.astype(np.float64)
    na = np.linalg.norm(a64)
    nb = np.linalg.norm(b64)
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.clip(a64 @ b64 / (na * nb), -1.0, 1.0))


def _softmax64(v: np.ndarray) -> np.ndarray:
    v = v.astype(np.float64)
    e = np.exp(v - v.max())
    return e / e.sum()


def kl_package(local: np.ndarray, global_: np.ndarray) -> float:
    """KL distance between the two package slices mapped to the simplex.

    Raw weights can be negative, so both slices are pushed through a
    stabilized softmax first; both distributions are floored at EPS_Q and
    renormalized (symmetric flooring keeps KL(v, v) exactly 0).
    """
    local = np.asarray(local)
    global_ = np.asarray(global_)
    if local.shape != global_.shape or local.ndim != 1 or len(local) < 1:
        raise ShapeError(f"kl shapes {local.shape} vs {global_.shape}")
    p = np.maximum(_softmax64(local), EPS_Q)
    p = p / p.sum()
    q = np.maximum(_softmax64(global_), EPS_Q)
    q = q / q.sum()
    kl = float(np.sum(p * np.log(p / q)))
    return max(kl, 0.0)


def score_packages(local: FlatParams, global_: FlatParams, pack: int) -> SimilarityProfile:
    """Score every package of `local` against its global counterpart."""
    if local.shape != global_.shape:
        raise ShapeError("local/global shape mismatch")
    views = package_views(local.shape.total_params, pack)
    overall = cosine(local.values, global_.values)
    cos = np.empty(len(views))
    kl = np.empty(len(views))
    for v in views:
        lv = local.values[v.offset : v.stop]
        gv = global_.values[v.offset : v.stop]
        cos[v.index] = cosine(lv, gv)
        kl[v.index] = kl_package(lv, gv)
    return SimilarityProfile(overall=overall, per_package_cos=cos, per_package_kl=kl)


def select_topk(profile: SimilarityProfile, cap_ratio: float = 1.0) -> frozenset[int]:
    """Pick the shared packages: those less similar than the overall cosine,
    keeping at most ceil(cap_ratio * J), least-similar first (lower index on
    ties).  Never empty: if no package is below the threshold, share the
    single least similar one.
    """
    if not 0 < cap_ratio <= 1:
        raise ValueError("cap_ratio must be in (0, 1]")
    cos = profile.per_package_cos
    j_count = profile.num_packages
    candidates = [j for j in range(j_count) if cos[j] < profile.overall]
    if not candidates:
        return frozenset({min(range(j_count), key=lambda j: (cos[j], j))})
    cap = math.ceil(cap_ratio * j_count)
    k = min(len(candidates), cap)
    candidates.sort(key=lambda j: (cos[j], j))
    return frozenset(candidates[:k])


def build_mask(
    profile: SimilarityProfile,
    selected: frozenset[int],
    weight_mode: str = "dual",
    weight_override: float | None = None,
) -> LocalMask:
    """Dual-weight mask: cosine + KL on the selected packages, 0 elsewhere.

    weight_mode drops one of the two terms for ablations; weight_override
    forces a constant weight (used by the dense-equivalence harness).
    """
    if not set(selected) <= set(range(profile.num_packages)):
        raise ValueError("selected indices out of range")
    weights = np.zeros(profile.num_packages)
    for j in selected:
        if weight_override is not None:
            w = weight_override
        elif weight_mode == "dual":
            w = profile.per_package_cos[j] + profile.per_package_kl[j]
        elif weight_mode == "cos_only":
            w = profile.per_package_cos[j]
        elif weight_mode == "kl_only":
            w = profile.per_package_kl[j]
        else:
            raise ValueError(f"unknown weight_mode {weight_mode!r}")
        weights[j] = max(w, EPS_W)
    return LocalMask(weights=weights, selected=frozenset(selected))


def extract_deltas(
    local: FlatParams,
    global_: FlatParams,
    selected: frozenset[int],
    pack: int,
) -> DeltaPackages:
    """Payloads for the shared packages, local-minus-global float32 slices."""
    if local.shape != global_.shape:
        raise ShapeError("local/global shape mismatch")
    views = package_views(local.shape.total_params, pack)
    out = {}
    for j in sorted(selected):
        v = views[j]
        out[j] = (local.values[v.offset : v.stop] - global_.values[v.offset : v.stop]).astype(
            np.float32
        )
    return DeltaPackages(packages=out)
