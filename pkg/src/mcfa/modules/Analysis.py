"""
Interpretation tools for trained bundles: PCA projections, class
separation, nearest neighbors and per-example attachment diagnostics.

Everything here emits plain tables for external plotting.
"""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np
import pandas as pd

from .Configuration import Mode
from .Data import MultiViewExample, batch_iter
from .Logger import Logger
from .Model import EmptySplitError, ModelBundle, forward_batch
from .Numerics import FloatArray, IntArray


UNALTERED = "unaltered"
ALTERED = "altered"

PCA_TOLERANCE = 1e-10
PCA_MAX_ITERATIONS = 10_000
RIDGE_SCALE = 1e-6
# Pooled covariances above this condition number get the ridge.
MAX_CONDITION = 1e12


class AnalysisError(ValueError):
    pass


# --- PCA ---


@dataclass
class ProjectionResult:
    components: FloatArray  # (k, d), orthonormal rows
    projected: FloatArray  # (n, k)
    explained_variance: FloatArray  # (k,)
    mean: FloatArray  # (d,)
    total_variance: float

    @property
    def explained_ratio(self) -> FloatArray:
        ratio: FloatArray = self.explained_variance / self.total_variance
        return ratio


def _orthogonalize(v: FloatArray, basis: Sequence[FloatArray]) -> FloatArray:
    for b in basis:
        v = v - (v @ b) * b
    return v


def pca_project(
    vectors: FloatArray,
    k: int,
    tol: float = PCA_TOLERANCE,
    max_iter: int = PCA_MAX_ITERATIONS,
) -> ProjectionResult:
    """
    Top-``k`` principal components by power iteration with deflation.

    Each component is flipped so that its largest-magnitude entry is positive.

    Raises:
        AnalysisError: if ``k`` is out of range or the data has no variance.
    """
    X = np.asarray(vectors, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 2:
        raise AnalysisError(f"PCA needs at least 2 points in a matrix, got shape {X.shape}")
    n, d = X.shape
    if not 1 <= k <= min(n - 1, d):
        raise AnalysisError(f"k={k} out of range for {n} points in {d} dimensions")
    mean = X.mean(axis=0)
    centered = X - mean
    cov = centered.T @ centered / (n - 1)
    total = float(np.trace(cov))
    if total <= 0.0:
        raise AnalysisError("zero variance in all directions")

    rng = np.random.default_rng(0)
    work = cov.copy()
    components: list[FloatArray] = []
    variances: list[float] = []
    for _ in range(k):
        v = _orthogonalize(rng.standard_normal(d), components)
        v /= np.linalg.norm(v)
        for _ in range(max_iter):
            w = _orthogonalize(work @ v, components)
            norm = np.linalg.norm(w)
            if norm <= 1e-15 * total:
                # Remaining variance is zero; any orthogonal direction will do.
                break
            w /= norm
            if np.linalg.norm(w - v) < tol:
                v = w
                break
            v = w
        lam = float(v @ cov @ v)
        if v[int(np.argmax(np.abs(v)))] < 0:
            v = -v
        components.append(v)
        variances.append(lam)
        work = work - lam * np.outer(v, v)

    comps = np.vstack(components)
    return ProjectionResult(
        components=comps,
        projected=centered @ comps.T,
        explained_variance=np.asarray(variances),
        mean=mean,
        total_variance=total,
    )


# --- Separation ---


def mahalanobis_between(a: FloatArray, b: FloatArray, ridge: float = RIDGE_SCALE) -> float:
    """
    Mahalanobis distance between two cluster means under their pooled
    within-class covariance.

    A ridge of ``ridge * trace / d`` is added only when the pooled covariance
    is rank-deficient or badly conditioned.
    """
    A = np.atleast_2d(np.asarray(a, dtype=np.float64))
    B = np.atleast_2d(np.asarray(b, dtype=np.float64))
    if A.shape[1] != B.shape[1]:
        raise AnalysisError(f"clusters live in different spaces: {A.shape} and {B.shape}")
    n_a, n_b, d = A.shape[0], B.shape[0], A.shape[1]
    dof = n_a + n_b - 2
    if n_a < 1 or n_b < 1 or dof < 1:
        raise AnalysisError(f"too few points for a pooled covariance: {n_a} and {n_b}")
    diff = A.mean(axis=0) - B.mean(axis=0)
    if not np.any(diff):
        return 0.0
    ca, cb = A - A.mean(axis=0), B - B.mean(axis=0)
    pooled = (ca.T @ ca + cb.T @ cb) / dof
    trace = float(np.trace(pooled))
    if trace <= 0.0:
        raise AnalysisError("pooled covariance is zero")
    if dof < d or np.linalg.cond(pooled) > MAX_CONDITION:
        pooled = pooled + (ridge * trace / d) * np.eye(d)
    try:
        solved = np.linalg.solve(pooled, diff)
    except np.linalg.LinAlgError as ex:
        raise AnalysisError("pooled covariance is singular after regularisation") from ex
    return float(np.sqrt(max(float(diff @ solved), 0.0)))


# --- Neighbors ---


@dataclass
class Neighbors:
    query: int
    indices: IntArray
    similarities: FloatArray
    excluded: list[int] = field(default_factory=list)


def nearest_neighbors(
    query_index: int, vectors: FloatArray, k: int, log: Logger | None = None
) -> Neighbors:
    """
    The ``k`` most cosine-similar vectors to ``vectors[query_index]``, the
    query itself excluded, ties broken by the lower index.

    Zero vectors cannot be compared and are dropped with a warning.
    """
    Z = np.asarray(vectors, dtype=np.float64)
    n = Z.shape[0]
    if not 0 <= query_index < n:
        raise AnalysisError(f"query {query_index} out of range for {n} vectors")
    norms = np.linalg.norm(Z, axis=1)
    if norms[query_index] == 0.0:
        raise AnalysisError(f"query vector {query_index} is zero")
    excluded = [int(i) for i in np.flatnonzero(norms == 0.0)]
    if excluded and log is not None:
        log.log_warning(f"{len(excluded)} zero vectors left out of the neighbor search: {excluded}")
    candidates = np.flatnonzero((norms > 0.0) & (np.arange(n) != query_index))
    if not 1 <= k <= len(candidates):
        raise AnalysisError(f"k={k} but only {len(candidates)} candidate neighbors")
    unit = Z[candidates] / norms[candidates, None]
    q = Z[query_index] / norms[query_index]
    sims = np.sum(unit * q, axis=1)
    order = np.lexsort((candidates, -sims))[:k]
    return Neighbors(query_index, candidates[order], sims[order], excluded)


# --- Collected vectors ---


@dataclass
class CollectedVectors:
    view_names: list[str]
    indices: IntArray
    labels: IntArray
    # per space, per view: (n, d)
    spaces: dict[str, list[FloatArray]]
    self_usability: FloatArray | None = None  # (n, m)
    attention: FloatArray | None = None  # (n, m, m)
    gates: list[FloatArray] | None = None  # per view (n, d)

    def space_names(self) -> list[str]:
        return list(self.spaces)


def collect_vectors(
    bundle: ModelBundle,
    examples: Sequence[MultiViewExample],
    indices: Sequence[int],
    batch_size: int | None = None,
) -> CollectedVectors:
    """Runs the bundle over ``indices`` (sorted) and keeps every intermediate vector."""
    if len(indices) == 0:
        raise EmptySplitError("empty split")
    order = sorted(int(i) for i in indices)
    size = batch_size or bundle.train_config.eval_batch_size
    unaltered: list[list[FloatArray]] = [[] for _ in bundle.view_names]
    altered: list[list[FloatArray]] = [[] for _ in bundle.view_names]
    gates: list[list[FloatArray]] = [[] for _ in bundle.view_names]
    usability, attention = [], []
    for batch in batch_iter(examples, order, size, shuffle=False, min_length=bundle.min_length):
        result = forward_batch(bundle, batch)
        for k, v in enumerate(result.vectors):
            unaltered[k].append(v.values)
        if result.report is not None:
            usability.append(result.report.self_usability)
            attention.append(result.report.attention)
            for k in range(bundle.n_views):
                altered[k].append(result.report.altered[k].values)
                gates[k].append(result.report.gates[k])

    collected = CollectedVectors(
        view_names=list(bundle.view_names),
        indices=np.asarray(order, dtype=np.int64),
        labels=np.asarray([examples[i].label for i in order], dtype=np.int64),
        spaces={UNALTERED: [np.concatenate(chunks) for chunks in unaltered]},
    )
    if bundle.mode is Mode.MCFA:
        collected.spaces[ALTERED] = [np.concatenate(chunks) for chunks in altered]
        collected.self_usability = np.concatenate(usability)
        collected.attention = np.concatenate(attention)
        collected.gates = [np.concatenate(chunks) for chunks in gates]
    return collected


# --- Reports ---


def projection_frame(collected: CollectedVectors, space: str, k: int) -> pd.DataFrame:
    """``index,label,view,pc1..pck``; PCA is fitted per view."""
    parts = []
    for view, vectors in zip(collected.view_names, collected.spaces[space], strict=True):
        result = pca_project(vectors, k)
        frame = pd.DataFrame(
            {"index": collected.indices, "label": collected.labels, "view": view}
        )
        for j in range(k):
            frame[f"pc{j + 1}"] = result.projected[:, j]
        parts.append(frame)
    return pd.concat(parts, ignore_index=True)


def separation_report(collected: CollectedVectors, log: Logger | None = None) -> pd.DataFrame:
    """
    ``view,class_a,class_b,mahalanobis,space`` for every class pair present.

    A pair with a single example in each class has no pooled covariance; its
    distance is NaN and a warning is logged.
    """
    classes = [int(c) for c in np.unique(collected.labels)]
    counts = {c: int(np.sum(collected.labels == c)) for c in classes}
    thin = [(a, b) for a, b in combinations(classes, 2) if counts[a] + counts[b] < 3]
    if thin and log is not None:
        log.log_warning(f"class pairs with one example per class get no separation: {thin}")
    rows = []
    for space, per_view in collected.spaces.items():
        for view, vectors in zip(collected.view_names, per_view, strict=True):
            for a, b in combinations(classes, 2):
                if (a, b) in thin:
                    distance = float("nan")
                else:
                    distance = mahalanobis_between(
                        vectors[collected.labels == a], vectors[collected.labels == b]
                    )
                rows.append(
                    {"view": view, "class_a": a, "class_b": b, "mahalanobis": distance, "space": space}
                )
    return pd.DataFrame(rows, columns=["view", "class_a", "class_b", "mahalanobis", "space"])


def neighbors_frame(
    collected: CollectedVectors, query: int, k: int, log: Logger | None = None
) -> pd.DataFrame:
    """
    Nearest neighbors of example ``query`` in every view and space.

    Columns: ``view,space,query,rank,neighbor,label,similarity``.
    """
    positions = np.flatnonzero(collected.indices == query)
    if not len(positions):
        raise AnalysisError(f"example {query} is not in the analysed split")
    pos = int(positions[0])
    rows = []
    for space, per_view in collected.spaces.items():
        for view, vectors in zip(collected.view_names, per_view, strict=True):
            found = nearest_neighbors(pos, vectors, k, log)
            for rank, (j, sim) in enumerate(zip(found.indices, found.similarities, strict=True), start=1):
                rows.append(
                    {
                        "view": view,
                        "space": space,
                        "query": query,
                        "rank": rank,
                        "neighbor": int(collected.indices[j]),
                        "label": int(collected.labels[j]),
                        "similarity": float(sim),
                    }
                )
    return pd.DataFrame(rows)


def _require_mcfa(collected: CollectedVectors) -> None:
    if collected.self_usability is None or collected.attention is None or collected.gates is None:
        raise AnalysisError("diagnostics need an mcfa model; b1 and b2 have no attachment")


def dump_diagnostics(collected: CollectedVectors) -> tuple[pd.DataFrame, pd.DataFrame]:
    """
    Per (example, view) attachment diagnostics and the vectors they refer to.

    The first table has ``index,label,view,self_usability,att_<view>...,
    mean_gate,unaltered_row,altered_row``; the row columns point into the
    second table, ``index,view,space,v0..``.
    """
    _require_mcfa(collected)
    assert collected.self_usability is not None
    assert collected.attention is not None
    assert collected.gates is not None
    views = collected.view_names
    main_rows, vector_rows = [], []
    for n, (index, label) in enumerate(zip(collected.indices, collected.labels, strict=True)):
        for k, view in enumerate(views):
            row = {
                "index": int(index),
                "label": int(label),
                "view": view,
                "self_usability": float(collected.self_usability[n, k]),
            }
            for j, other in enumerate(views):
                row[f"att_{other}"] = float(collected.attention[n, k, j])
            row["mean_gate"] = float(np.mean(collected.gates[k][n]))
            for space in (UNALTERED, ALTERED):
                row[f"{space}_row"] = len(vector_rows)
                vector_rows.append(
                    [int(index), view, space, *(float(x) for x in collected.spaces[space][k][n])]
                )
            main_rows.append(row)
    width = collected.spaces[UNALTERED][0].shape[1]
    vectors = pd.DataFrame(
        vector_rows, columns=["index", "view", "space", *(f"v{i}" for i in range(width))]
    )
    return pd.DataFrame(main_rows), vectors


def usability_summary(collected: CollectedVectors) -> pd.DataFrame:
    """``view,mean_self_usability,std_self_usability,mean_attention_received``."""
    _require_mcfa(collected)
    assert collected.self_usability is not None
    assert collected.attention is not None
    received = collected.attention.mean(axis=(0, 1))
    return pd.DataFrame(
        {
            "view": collected.view_names,
            "mean_self_usability": collected.self_usability.mean(axis=0),
            "std_self_usability": collected.self_usability.std(axis=0),
            "mean_attention_received": received,
        }
    )
