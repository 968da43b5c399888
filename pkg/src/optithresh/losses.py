"""Threshold-optimality losses over cohorts of distributions.

Distances between one-dimensional distributions are squared 2-Wasserstein
distances computed on quantile grids.  Two cohort losses are exposed: ``loss_l1``
(how well each member's thresholded summary reconstructs the member itself) and
``loss_l2`` (how well the summaries preserve pairwise distances between
members), plus the Bray-Curtis variant of the second used by the compositional
baseline.  A :class:`Cohort` caches everything that does not depend on the
candidate thresholds: base quantile grids, pairwise base distances and the
per-member anchor tables used to linearize quantile functions quickly.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Optional, Sequence

import numpy as np
from scipy.spatial.distance import pdist

from ._interp import interp_rows
from .histograms import (
    Distribution,
    EmpiricalSample,
    Histogram,
    QuantileGrid,
    ThresholdSet,
    probability_grid,
)

__all__ = [
    "LossKind",
    "LossSpec",
    "Cohort",
    "DEFAULT_GRID_SIZE",
    "wasserstein_sq",
    "loss_l1",
    "loss_l2",
    "bray_curtis",
    "loss_l2_braycurtis",
    "evaluate_loss",
]

DEFAULT_GRID_SIZE = 200


class LossKind(str, Enum):
    L1 = "l1"
    L2 = "l2"
    L2_BRAY_CURTIS = "l2_bray_curtis"


@dataclass(frozen=True)
class LossSpec:
    """Which loss to evaluate and at what quantile grid resolution."""

    kind: LossKind
    grid_size: int = DEFAULT_GRID_SIZE

    def __post_init__(self):
        object.__setattr__(self, "kind", LossKind(self.kind))
        if self.grid_size < 1:
            raise ValueError("grid_size must be at least 1")


class Cohort:
    """Immutable collection of distributions sharing one domain.

    Members must be uniformly histograms or uniformly samples.  Derived data
    (quantile grids, pairwise distances, anchor tables) are computed lazily and
    cached per grid size; all evaluation methods are pure.
    """

    def __init__(self, members: Sequence[Distribution]):
        members = tuple(members)
        if not members:
            raise ValueError("cohort must contain at least one member")
        first = members[0]
        if isinstance(first, Histogram):
            kind = "histogram"
            ok = all(isinstance(m, Histogram) for m in members)
        else:
            kind = "sample"
            ok = all(isinstance(m, EmpiricalSample) for m in members)
        if not ok:
            raise ValueError("cohort members must all be histograms or all be samples")
        domain = first.domain
        if any(m.domain != domain for m in members):
            raise ValueError("cohort members must share one domain")
        self.members = members
        self.domain = domain
        self.kind = kind
        self._cache: dict = {}

    @property
    def n(self) -> int:
        return len(self.members)

    @property
    def shared_cutoffs(self) -> Optional[np.ndarray]:
        """Common cutoff grid of a histogram cohort, or None."""
        if "shared_cutoffs" not in self._cache:
            value = None
            if self.kind == "histogram":
                first = self.members[0].cutoffs
                if all(
                    m.cutoffs.size == first.size and np.array_equal(m.cutoffs, first)
                    for m in self.members
                ):
                    value = first
            self._cache["shared_cutoffs"] = value
        return self._cache["shared_cutoffs"]

    @property
    def integer_valued(self) -> bool:
        """True when every member is supported on integer measurement levels."""
        if "integer_valued" not in self._cache:
            if self.kind == "histogram":
                ok = all(np.all(m.edges == np.floor(m.edges)) for m in self.members)
            else:
                ok = all(np.all(m.values == np.floor(m.values)) for m in self.members)
            self._cache["integer_valued"] = bool(ok)
        return self._cache["integer_valued"]

    def quantile_matrix(self, grid_size: int) -> np.ndarray:
        """Base quantile grids of all members, stacked as an (n, M) array."""
        key = ("qmat", grid_size)
        if key not in self._cache:
            u = probability_grid(grid_size)
            if self.kind == "histogram" and self.shared_cutoffs is not None:
                tables = self._hist_tables()
                edges = np.broadcast_to(tables.edges, tables.cum.shape)
                mat = interp_rows(tables.cum, edges, u)
            elif self.kind == "histogram":
                mat = np.vstack(
                    [interp_rows(m.cumulative, m.edges, u) for m in self.members]
                )
            else:
                tables = self._sample_tables()
                idx = np.ceil(u[None, :] * tables.sizes[:, None] - 1e-9).astype(np.int64)
                np.clip(idx, 1, tables.sizes[:, None], out=idx)
                mat = tables.values_flat[tables.starts[:, None] + idx - 1]
            mat.setflags(write=False)
            self._cache[key] = mat
        return self._cache[key]

    def pairwise_base_norms(self, grid_size: int) -> np.ndarray:
        """Condensed Euclidean norms between base quantile grids."""
        key = ("pnorms", grid_size)
        if key not in self._cache:
            norms = pdist(self.quantile_matrix(grid_size))
            norms.setflags(write=False)
            self._cache[key] = norms
        return self._cache[key]

    def compositions(self) -> np.ndarray:
        """Member mass vectors of a shared-cutoff histogram cohort, (n, J+1)."""
        if "comps" not in self._cache:
            if self.shared_cutoffs is None:
                raise ValueError("compositions require a histogram cohort with shared cutoffs")
            comps = np.vstack([m.masses for m in self.members])
            comps.setflags(write=False)
            self._cache["comps"] = comps
        return self._cache["comps"]

    def pairwise_base_bray_curtis(self) -> np.ndarray:
        """Condensed Bray-Curtis dissimilarities between member compositions."""
        if "bc" not in self._cache:
            bc = _bray_curtis_condensed(self.compositions())
            bc.setflags(write=False)
            self._cache["bc"] = bc
        return self._cache["bc"]

    # Internal anchor tables -------------------------------------------------

    def _hist_tables(self) -> "_HistTables":
        if "hist_tables" not in self._cache:
            if self.shared_cutoffs is None:
                raise ValueError("anchor tables require shared cutoffs")
            edges = self.members[0].edges
            cum = np.vstack([m.cumulative for m in self.members])
            support_lower = np.array([m.support_lower for m in self.members])
            support_upper = np.array([m.support_upper for m in self.members])
            n_cols = cum.shape[1]
            idx = np.arange(n_cols)
            new_run = np.ones(cum.shape, dtype=bool)
            new_run[:, 1:] = cum[:, 1:] != cum[:, :-1]
            first_occurrence = np.maximum.accumulate(np.where(new_run, idx, 0), axis=1)
            qf = edges[first_occurrence]
            # Anchors at probability zero take the q(0+) convention.
            qf = np.where(cum == 0.0, support_lower[:, None], qf)
            self._cache["hist_tables"] = _HistTables(
                edges=edges,
                cum=cum,
                qf=qf,
                support_lower=support_lower,
                support_upper=support_upper,
            )
        return self._cache["hist_tables"]

    def _sample_tables(self) -> "_SampleTables":
        if "sample_tables" not in self._cache:
            sizes = np.array([m.n for m in self.members], dtype=np.int64)
            starts = np.concatenate(([0], np.cumsum(sizes)[:-1]))
            values_flat = np.concatenate([m.sorted_values for m in self.members])
            span = self.domain.width + 1.0
            offsets = span * np.arange(self.n, dtype=np.float64)
            shifted_flat = values_flat + np.repeat(offsets, sizes)
            self._cache["sample_tables"] = _SampleTables(
                sizes=sizes,
                starts=starts,
                values_flat=values_flat,
                shifted_flat=shifted_flat,
                offsets=offsets,
                mins=values_flat[starts],
                maxs=values_flat[starts + sizes - 1],
            )
        return self._cache["sample_tables"]


@dataclass
class _HistTables:
    edges: np.ndarray          # (J+2,)
    cum: np.ndarray            # (n, J+2) cumulative mass at every edge
    qf: np.ndarray             # (n, J+2) quantile at the cumulative of every edge
    support_lower: np.ndarray  # (n,)
    support_upper: np.ndarray  # (n,)


@dataclass
class _SampleTables:
    sizes: np.ndarray        # (n,)
    starts: np.ndarray       # (n,)
    values_flat: np.ndarray  # concatenated sorted member values
    shifted_flat: np.ndarray # same, shifted into disjoint per-member blocks
    offsets: np.ndarray      # (n,) block shifts
    mins: np.ndarray         # (n,)
    maxs: np.ndarray         # (n,)


# Anchor construction --------------------------------------------------------


def _anchor_rows(cohort: Cohort, thresholds: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Linearization anchors for a batch of threshold vectors.

    Args:
        thresholds: (B, K) strictly increasing rows inside the domain.

    Returns:
        (P, V) of shape (B, n, K+2): anchor probabilities and values per
        candidate and member, including the 0- and 1-anchors.
    """
    t = np.atleast_2d(np.asarray(thresholds, dtype=np.float64))
    n_cand, k = t.shape
    n = cohort.n
    if k == 0:
        probs = np.empty((n_cand, n, 0))
        vals = np.empty((n_cand, n, 0))
    elif cohort.kind == "sample":
        tables = cohort._sample_tables()
        flat_t = t.reshape(-1)
        queries = (flat_t[None, :] + tables.offsets[:, None]).ravel()
        pos = np.searchsorted(tables.shifted_flat, queries, side="right")
        counts = pos.reshape(n, n_cand * k) - tables.starts[:, None]
        np.clip(counts, 0, tables.sizes[:, None], out=counts)
        probs_nm = counts / tables.sizes[:, None]
        gather = tables.starts[:, None] + np.maximum(counts - 1, 0)
        vals_nm = np.where(counts > 0, tables.values_flat[gather], tables.mins[:, None])
        probs = probs_nm.reshape(n, n_cand, k).transpose(1, 0, 2)
        vals = vals_nm.reshape(n, n_cand, k).transpose(1, 0, 2)
    elif cohort.shared_cutoffs is not None:
        tables = cohort._hist_tables()
        edges = tables.edges
        flat_t = t.reshape(-1)
        j = np.clip(np.searchsorted(edges, flat_t, side="right") - 1, 0, edges.size - 2)
        frac = (flat_t - edges[j]) / (edges[j + 1] - edges[j])
        probs_nm = tables.cum[:, j] + (tables.cum[:, j + 1] - tables.cum[:, j]) * frac
        np.clip(probs_nm, 0.0, 1.0, out=probs_nm)
        vals_nm = interp_rows(
            tables.cum,
            np.broadcast_to(edges, tables.cum.shape),
            np.maximum(probs_nm, np.finfo(np.float64).tiny),
        )
        vals_nm = np.where(probs_nm > 0.0, vals_nm, tables.support_lower[:, None])
        probs = probs_nm.reshape(n, n_cand, k).transpose(1, 0, 2)
        vals = vals_nm.reshape(n, n_cand, k).transpose(1, 0, 2)
    else:
        from .histograms import _cdf_values, _histogram_anchor_values

        probs = np.empty((n_cand, n, k))
        vals = np.empty((n_cand, n, k))
        for b in range(n_cand):
            for i, member in enumerate(cohort.members):
                p = _cdf_values(member, t[b])
                probs[b, i] = p
                vals[b, i] = _histogram_anchor_values(member, p)

    if cohort.kind == "sample":
        tables = cohort._sample_tables()
        lo_v, hi_v = tables.mins, tables.maxs
    elif cohort.shared_cutoffs is not None:
        tables = cohort._hist_tables()
        lo_v, hi_v = tables.support_lower, tables.support_upper
    else:
        lo_v = np.array([m.support_lower for m in cohort.members])
        hi_v = np.array([m.support_upper for m in cohort.members])

    shape = (n_cand, n, 1)
    p_full = np.concatenate(
        [np.zeros(shape), probs, np.ones(shape)], axis=2
    )
    v_full = np.concatenate(
        [np.broadcast_to(lo_v[None, :, None], shape), vals,
         np.broadcast_to(hi_v[None, :, None], shape)], axis=2
    )
    return p_full, v_full


def _linearized_rows(cohort: Cohort, thresholds: np.ndarray, grid_size: int) -> np.ndarray:
    """Linearized quantile grids for a batch of threshold vectors, (B, n, M)."""
    p_full, v_full = _anchor_rows(cohort, thresholds)
    n_cand, n, n_anchors = p_full.shape
    u = probability_grid(grid_size)
    out = interp_rows(
        p_full.reshape(n_cand * n, n_anchors),
        v_full.reshape(n_cand * n, n_anchors),
        u,
    )
    return out.reshape(n_cand, n, grid_size)


def _loss_batch(cohort: Cohort, thresholds: np.ndarray, spec: LossSpec) -> np.ndarray:
    """Loss of each candidate threshold vector; rows of ``thresholds`` are (B, K)."""
    t = np.atleast_2d(np.asarray(thresholds, dtype=np.float64))
    grid = spec.grid_size
    lin = _linearized_rows(cohort, t, grid)
    base = cohort.quantile_matrix(grid)
    n = cohort.n
    if spec.kind is LossKind.L1:
        diff = lin - base[None, :, :]
        totals = np.einsum("bnm,bnm->b", diff, diff)
        return totals / n / (grid + 1)
    if spec.kind is LossKind.L2:
        if n < 2:
            raise ValueError("pairwise loss requires at least two cohort members")
        base_norms = cohort.pairwise_base_norms(grid)
        out = np.empty(t.shape[0])
        for b in range(t.shape[0]):
            diff = base_norms - pdist(lin[b])
            out[b] = np.sum(diff * diff)
        return out * 2.0 / (n * (n - 1)) / (grid + 1)
    raise ValueError(f"unsupported loss kind {spec.kind} for quantile-grid evaluation")


# Public operations ----------------------------------------------------------


def wasserstein_sq(qa: QuantileGrid, qb: QuantileGrid) -> float:
    """Discretized squared 2-Wasserstein distance between two quantile grids."""
    if qa.grid_size != qb.grid_size:
        raise ValueError(f"grid sizes differ: {qa.grid_size} vs {qb.grid_size}")
    diff = qa.values - qb.values
    return float(np.sum(diff * diff) / (qa.grid_size + 1))


def loss_l1(cohort: Cohort, t: ThresholdSet, spec: LossSpec) -> float:
    """Mean squared Wasserstein distance between members and their summaries."""
    t.validate_for(cohort.domain)
    return float(_loss_batch(cohort, t.values[None, :], LossSpec(LossKind.L1, spec.grid_size))[0])


def loss_l2(cohort: Cohort, t: ThresholdSet, spec: LossSpec) -> float:
    """Mean squared change of pairwise distances under threshold summarization."""
    t.validate_for(cohort.domain)
    return float(_loss_batch(cohort, t.values[None, :], LossSpec(LossKind.L2, spec.grid_size))[0])


def bray_curtis(x, y) -> float:
    """Bray-Curtis dissimilarity between two non-negative compositions."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError(f"composition lengths differ: {x.shape} vs {y.shape}")
    return float(np.sum(np.abs(x - y)) / np.sum(x + y))


def _bray_curtis_condensed(comps: np.ndarray) -> np.ndarray:
    numerator = pdist(comps, metric="cityblock")
    row_sums = comps.sum(axis=1)
    i, j = np.triu_indices(comps.shape[0], k=1)
    return numerator / (row_sums[i] + row_sums[j])


def amalgamated_compositions(cohort: Cohort, positions: np.ndarray) -> np.ndarray:
    """Member compositions amalgamated at cutoff positions (0-based indices)."""
    comps = cohort.compositions()
    starts = np.concatenate(([0], np.asarray(positions, dtype=np.intp) + 1))
    return np.add.reduceat(comps, starts, axis=1)


def loss_l2_braycurtis(cohort: Cohort, t: ThresholdSet) -> float:
    """Pairwise-distance loss under Bray-Curtis dissimilarity on compositions."""
    if cohort.shared_cutoffs is None:
        raise ValueError("Bray-Curtis loss requires a histogram cohort with shared cutoffs")
    n = cohort.n
    if n < 2:
        raise ValueError("pairwise loss requires at least two cohort members")
    from .histograms import _threshold_positions

    positions = _threshold_positions(cohort.members[0], t)
    amal = amalgamated_compositions(cohort, positions)
    diff = cohort.pairwise_base_bray_curtis() - _bray_curtis_condensed(amal)
    return float(np.sum(diff * diff) * 2.0 / (n * (n - 1)))


def evaluate_loss(cohort: Cohort, t: ThresholdSet, spec: LossSpec) -> float:
    """Dispatch on the loss kind of ``spec``."""
    if spec.kind is LossKind.L1:
        return loss_l1(cohort, t, spec)
    if spec.kind is LossKind.L2:
        return loss_l2(cohort, t, spec)
    return loss_l2_braycurtis(cohort, t)
