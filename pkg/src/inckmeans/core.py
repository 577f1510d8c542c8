"""Distance metrics, batch K-means and incremental insert/delete.

Vectors are 1-D float64 numpy arrays. Models are plain dataclasses; every
mutating operation returns a fresh model and leaves its input untouched.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Hashable, Iterator, Mapping, Optional, Sequence, Union

import numpy as np

RecordId = Hashable

FIRST_K_DISTINCT = "first_k_distinct"
DEFAULT_MAX_ITERATIONS = 100


class ClusteringError(ValueError):
    """Base class for invalid clustering input."""


class DimensionMismatchError(ClusteringError):
    pass


class EmptyModelError(ClusteringError):
    pass


class UnknownRecordError(ClusteringError):
    def __init__(self, record_id):
        super().__init__(f"unknown record id: {record_id!r}")
        self.record_id = record_id


class DuplicateRecordError(ClusteringError):
    def __init__(self, record_id):
        super().__init__(f"duplicate record id: {record_id!r}")
        self.record_id = record_id


class Metric(str, Enum):
    MANHATTAN = "manhattan"
    EUCLIDEAN = "euclidean"

    @classmethod
    def parse(cls, value: Union[str, "Metric"]) -> "Metric":
        if isinstance(value, Metric):
            return value
        try:
            return cls(str(value).strip().lower())
        except ValueError:
            raise ClusteringError(f"unknown metric: {value!r}") from None


class TieBreak(str, Enum):
    """Which cluster wins when several centroids are exactly equidistant."""

    LOWEST = "lowest"
    HIGHEST = "highest"

    @classmethod
    def parse(cls, value: Union[str, "TieBreak"]) -> "TieBreak":
        if isinstance(value, TieBreak):
            return value
        try:
            return cls(str(value).strip().lower())
        except ValueError:
            raise ClusteringError(f"unknown tie-break rule: {value!r}") from None


@dataclass
class CostCounter:
    distance_evaluations: int = 0
    lloyd_iterations: int = 0


def as_vector(values, dimension: Optional[int] = None) -> np.ndarray:
    """Coerce ``values`` to a finite 1-D float64 vector."""
    vec = np.array(values, dtype=np.float64)
    if vec.ndim == 0:
        vec = vec.reshape(1)
    if vec.ndim != 1 or vec.size == 0:
        raise ClusteringError(f"feature vector must be 1-D and non-empty, got shape {vec.shape}")
    if not np.all(np.isfinite(vec)):
        raise ClusteringError("feature vector contains non-finite values")
    if dimension is not None and vec.size != dimension:
        raise DimensionMismatchError(
            f"dimension mismatch: vector has {vec.size}, expected {dimension}"
        )
    return vec


def as_matrix(data) -> np.ndarray:
    """Coerce a sequence of vectors to a finite (n, d) float64 array."""
    if isinstance(data, np.ndarray):
        X = data.astype(np.float64, copy=True)
    else:
        rows = [np.atleast_1d(np.asarray(v, dtype=np.float64)) for v in data]
        if not rows:
            raise ClusteringError("empty data")
        dims = {r.shape for r in rows}
        if len(dims) > 1:
            first = rows[0].shape[0]
            bad = next(i for i, r in enumerate(rows) if r.shape != rows[0].shape)
            raise DimensionMismatchError(
                f"dimension mismatch: record 0 has {first}, record {bad} has {rows[bad].shape[0]}"
            )
        X = np.vstack(rows)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    if X.ndim != 2 or X.shape[0] == 0 or X.shape[1] == 0:
        raise ClusteringError(f"data must be a non-empty (n, d) array, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ClusteringError("data contains non-finite values")
    return X


def distance(a, b, metric: Metric, counter: Optional[CostCounter] = None) -> float:
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    if a.shape != b.shape:
        raise DimensionMismatchError(
            f"dimension mismatch: {a.shape[0]} vs {b.shape[0]}"
        )
    if counter is not None:
        counter.distance_evaluations += 1
    diff = a - b
    if metric is Metric.MANHATTAN:
        return float(np.sum(np.abs(diff)))
    return float(np.sqrt(np.sum(diff * diff)))


def distance_matrix(X: np.ndarray, C: np.ndarray, metric: Metric,
                    counter: Optional[CostCounter] = None) -> np.ndarray:
    """All record-to-centroid distances, shape (n, k)."""
    diff = X[:, None, :] - C[None, :, :]
    if counter is not None:
        counter.distance_evaluations += X.shape[0] * C.shape[0]
    if metric is Metric.MANHATTAN:
        return np.sum(np.abs(diff), axis=2)
    return np.sqrt(np.sum(diff * diff, axis=2))


def nearest(D: np.ndarray, tie_break: TieBreak = TieBreak.LOWEST) -> np.ndarray:
    """Row-wise argmin honouring the tie rule (works for 1-D rows too)."""
    if tie_break is TieBreak.LOWEST:
        return np.argmin(D, axis=-1)
    k = D.shape[-1]
    return k - 1 - np.argmin(D[..., ::-1], axis=-1)


@dataclass(eq=False)
class Cluster:
    centroid: np.ndarray
    member_ids: list = field(default_factory=list)
    sse: float = 0.0

    @property
    def member_count(self) -> int:
        return len(self.member_ids)

    @property
    def empty(self) -> bool:
        return not self.member_ids

    def __eq__(self, other):
        if not isinstance(other, Cluster):
            return NotImplemented
        return (
            np.array_equal(self.centroid, other.centroid)
            and self.member_ids == other.member_ids
            and self.sse == other.sse
        )


@dataclass(eq=False)
class ClusterModel:
    clusters: list
    metric: Metric
    iterations: int = 0
    square_error: float = 0.0
    tie_break: TieBreak = TieBreak.LOWEST

    @property
    def k(self) -> int:
        return len(self.clusters)

    @property
    def dimension(self) -> int:
        return int(self.clusters[0].centroid.shape[0])

    @property
    def centroids(self) -> np.ndarray:
        return np.vstack([c.centroid for c in self.clusters])

    @property
    def record_count(self) -> int:
        return sum(c.member_count for c in self.clusters)

    def membership(self) -> dict:
        """Map every record id to the index of the cluster holding it."""
        return {rid: j for j, c in enumerate(self.clusters) for rid in c.member_ids}

    def partition(self) -> list:
        return [list(c.member_ids) for c in self.clusters]

    def copy(self) -> "ClusterModel":
        return copy.deepcopy(self)

    def __eq__(self, other):
        if not isinstance(other, ClusterModel):
            return NotImplemented
        return (
            self.metric == other.metric
            and self.iterations == other.iterations
            and self.square_error == other.square_error
            and self.tie_break == other.tie_break
            and self.clusters == other.clusters
        )


@dataclass(frozen=True)
class Assignment:
    cluster_index: int
    distance: float


@dataclass
class LloydStep:
    """One assignment pass of Lloyd's algorithm.

    ``sse`` is measured for the new assignment against the centroids that
    produced it; ``centroids`` are the means after the update phase.
    """

    iteration: int
    labels: np.ndarray
    sse: float
    centroids: np.ndarray
    changed: bool


InitStrategy = Union[str, Sequence, np.ndarray]


def initial_centroids(X: np.ndarray, k: int, init: InitStrategy = FIRST_K_DISTINCT) -> np.ndarray:
    if isinstance(init, str):
        if init != FIRST_K_DISTINCT:
            raise ClusteringError(f"unknown init strategy: {init!r}")
        chosen = []
        seen = set()
        for row in X:
            key = row.tobytes()
            if key not in seen:
                seen.add(key)
                chosen.append(row)
                if len(chosen) == k:
                    break
        if len(chosen) < k:
            raise ClusteringError(f"only {len(chosen)} distinct records, cannot seed k={k}")
        return np.vstack(chosen).astype(np.float64)
    C = as_matrix(init)
    if C.shape[1] != X.shape[1]:
        raise DimensionMismatchError(
            f"dimension mismatch: initial centers have {C.shape[1]}, data has {X.shape[1]}"
        )
    if C.shape[0] != k:
        raise ClusteringError(f"expected {k} initial centers, got {C.shape[0]}")
    return C


def _check_fit_args(X: np.ndarray, k: int, max_iterations: int):
    n = X.shape[0]
    if k < 1:
        raise ClusteringError(f"k must be >= 1, got {k}")
    if k > n:
        raise ClusteringError(f"k={k} exceeds the number of records ({n})")
    if max_iterations < 1:
        raise ClusteringError(f"max_iterations must be >= 1, got {max_iterations}")


def lloyd_steps(data, k: int, init: InitStrategy = FIRST_K_DISTINCT,
                metric: Metric = Metric.EUCLIDEAN,
                max_iterations: int = DEFAULT_MAX_ITERATIONS,
                tie_break: TieBreak = TieBreak.LOWEST,
                counter: Optional[CostCounter] = None) -> Iterator[LloydStep]:
    """Yield each Lloyd iteration until the assignment stops changing."""
    X = as_matrix(data)
    _check_fit_args(X, k, max_iterations)
    metric = Metric.parse(metric)
    tie_break = TieBreak.parse(tie_break)
    C = initial_centroids(X, k, init)
    labels = None
    rows = np.arange(X.shape[0])
    for it in range(1, max_iterations + 1):
        D = distance_matrix(X, C, metric, counter)
        if counter is not None:
            counter.lloyd_iterations += 1
        new = nearest(D, tie_break)
        sse = float(np.sum(D[rows, new] ** 2))
        changed = labels is None or bool(np.any(new != labels))
        labels = new
        if changed:
            C = C.copy()
            for j in range(k):
                members = X[labels == j]
                if len(members):
                    C[j] = members.mean(axis=0)
        yield LloydStep(it, labels.copy(), sse, C.copy(), changed)
        if not changed:
            return


def lloyd_fit(data, k: int, init: InitStrategy = FIRST_K_DISTINCT,
              metric: Metric = Metric.EUCLIDEAN,
              max_iterations: int = DEFAULT_MAX_ITERATIONS,
              ids: Optional[Sequence[RecordId]] = None,
              tie_break: TieBreak = TieBreak.LOWEST,
              counter: Optional[CostCounter] = None,
              trace: Optional[list] = None) -> ClusterModel:
    """Batch K-means.

    Record ids default to 0-based positions. When ``trace`` is a list every
    :class:`LloydStep` is appended to it.
    """
    X = as_matrix(data)
    if ids is None:
        ids = list(range(X.shape[0]))
    else:
        ids = list(ids)
        if len(ids) != X.shape[0]:
            raise ClusteringError(f"{len(ids)} ids for {X.shape[0]} records")
        if len(set(ids)) != len(ids):
            dup = next(i for i in ids if ids.count(i) > 1)
            raise DuplicateRecordError(dup)
    metric = Metric.parse(metric)
    tie_break = TieBreak.parse(tie_break)

    last = None
    for step in lloyd_steps(X, k, init, metric, max_iterations, tie_break, counter):
        if trace is not None:
            trace.append(step)
        last = step

    clusters = []
    for j in range(k):
        mask = last.labels == j
        members = [ids[i] for i in np.flatnonzero(mask)]
        sse = _sse(X[mask], last.centroids[j], metric)
        clusters.append(Cluster(last.centroids[j].copy(), members, sse))
    return ClusterModel(
        clusters=clusters,
        metric=metric,
        iterations=last.iteration,
        square_error=float(sum(c.sse for c in clusters)),
        tie_break=tie_break,
    )


def _sse(members: np.ndarray, centroid: np.ndarray, metric: Metric) -> float:
    if len(members) == 0:
        return 0.0
    d = distance_matrix(members, centroid[None, :], metric)[:, 0]
    return float(np.sum(d * d))


def assign_point(x, model: ClusterModel, counter: Optional[CostCounter] = None) -> Assignment:
    """Nearest centroid for ``x``; the model is not modified.

    Clusters that have lost all members keep their last centroid and stay
    eligible, so exactly ``k`` distances are evaluated per call.
    """
    x = as_vector(x, model.dimension)
    if all(c.empty for c in model.clusters):
        raise EmptyModelError("cannot assign: every cluster is empty")
    dists = np.array([distance(x, c.centroid, model.metric, counter) for c in model.clusters])
    j = int(nearest(dists, model.tie_break))
    return Assignment(j, float(dists[j]))


def _lookup(data_lookup: Mapping, rid: RecordId, dimension: int) -> np.ndarray:
    try:
        vec = data_lookup[rid]
    except KeyError:
        raise UnknownRecordError(rid) from None
    return as_vector(vec, dimension)


def recompute_means(model: ClusterModel, data_lookup: Mapping,
                    clusters: Optional[Sequence[int]] = None) -> ClusterModel:
    """Reset centroids to member means (all clusters, or just ``clusters``).

    Empty clusters keep their last centroid.
    """
    out = model.copy()
    targets = range(out.k) if clusters is None else sorted(set(clusters))
    d = out.dimension
    for j in targets:
        cl = out.clusters[j]
        if cl.empty:
            cl.sse = 0.0
            continue
        members = np.vstack([_lookup(data_lookup, rid, d) for rid in cl.member_ids])
        cl.centroid = members.mean(axis=0)
        cl.sse = _sse(members, cl.centroid, out.metric)
    out.square_error = float(sum(c.sse for c in out.clusters))
    return out


def incremental_insert(batch: Sequence, model: ClusterModel, update_means: bool = False,
                       counter: Optional[CostCounter] = None,
                       data_lookup: Optional[Mapping] = None):
    """Assign each ``(record_id, vector)`` in ``batch`` to its nearest cluster.

    With ``update_means`` the receiving centroid moves to the running mean
    after every insert, so results depend on batch order. Keeping the squared
    error exact under a moving Manhattan centroid needs the member vectors,
    hence ``data_lookup`` is required for that combination.

    Returns ``(new_model, assignments)``.
    """
    out = model.copy()
    d = out.dimension
    known = set(out.membership())
    prepared = []
    for rid, vec in batch:
        if rid in known:
            raise DuplicateRecordError(rid)
        known.add(rid)
        prepared.append((rid, as_vector(vec, d)))
    if not prepared:
        return out, []
    if update_means and out.metric is Metric.MANHATTAN and data_lookup is None:
        raise ClusteringError("update_means with the Manhattan metric requires data_lookup")

    lookup = None
    if update_means and data_lookup is not None:
        lookup = dict(data_lookup)
        lookup.update(prepared)

    assignments = []
    for rid, x in prepared:
        a = assign_point(x, out, counter)
        cl = out.clusters[a.cluster_index]
        n = cl.member_count
        cl.member_ids.append(rid)
        if not update_means:
            cl.sse += a.distance ** 2
        elif lookup is not None:
            cl.centroid = cl.centroid + (x - cl.centroid) / (n + 1)
            members = np.vstack([lookup[m] for m in cl.member_ids])
            cl.sse = _sse(members, cl.centroid, out.metric)
        else:
            # Euclidean running update of the within-cluster sum of squares
            cl.centroid = cl.centroid + (x - cl.centroid) / (n + 1)
            cl.sse += n / (n + 1) * a.distance ** 2
        assignments.append(a)
    out.square_error = float(sum(c.sse for c in out.clusters))
    return out, assignments


def incremental_delete(ids: Sequence[RecordId], model: ClusterModel,
                       data_lookup: Mapping) -> ClusterModel:
    """Remove records and recompute the means of the clusters they left."""
    out = model.copy()
    where = out.membership()
    affected = set()
    for rid in ids:
        if rid not in where:
            raise UnknownRecordError(rid)
        j = where.pop(rid)
        out.clusters[j].member_ids.remove(rid)
        affected.add(j)
    if not affected:
        return out
    return recompute_means(out, data_lookup, clusters=affected)


def square_error(model: ClusterModel, data_lookup: Mapping) -> float:
    total = 0.0
    d = model.dimension
    for cl in model.clusters:
        for rid in cl.member_ids:
            dist = distance(_lookup(data_lookup, rid, d), cl.centroid, model.metric)
            total += dist * dist
    return total


def mean_consistent(model: ClusterModel, data_lookup: Mapping, rel_tol: float = 1e-9) -> bool:
    """True when every non-empty centroid equals its members' mean."""
    for cl in model.clusters:
        if cl.empty:
            continue
        mean = np.vstack([data_lookup[r] for r in cl.member_ids]).mean(axis=0)
        for got, want in zip(cl.centroid, mean):
            if not math.isclose(got, want, rel_tol=rel_tol, abs_tol=rel_tol):
                return False
    return True
