"""
Stage III semi-supervision: seeded k-means and the iterative cluster filter

The filter runs k-means over the retained crops, keeps the clusters with the
highest proportion of labeled defects, drops the rest and repeats until a
round drops fewer points than the threshold. A lower-ranked cluster whose
labels lean defect is spared. Survivors become pseudo-label defects, dropped
points background.
"""
import math
from dataclasses import dataclass, field
from typing import List, Mapping, Optional, Tuple

import numpy as np
from loguru import logger

from app.core.errors import InvalidArgumentError
from app.schemas.classes import BinaryVerdict, RegionClass
from app.schemas.semisup import FilterRound, FilterTrace

# rows per distance block; bounds memory at n x K x d
_CHUNK = 4096


@dataclass
class KMeansResult:
    centroids: np.ndarray
    assignment: np.ndarray
    loss: float
    iterations: int
    # J after every EM iteration
    loss_history: List[float] = field(default_factory=list)

    @property
    def k(self) -> int:
        return self.centroids.shape[0]


def _squared_distances(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    out = np.empty((points.shape[0], centroids.shape[0]), dtype=np.float64)
    for start in range(0, points.shape[0], _CHUNK):
        block = points[start : start + _CHUNK]
        diff = block[:, None, :] - centroids[None, :, :]
        out[start : start + _CHUNK] = np.einsum("nkd,nkd->nk", diff, diff)
    return out


def kmeans_loss(points: np.ndarray, centroids: np.ndarray, assignment: np.ndarray) -> float:
    """J = sum_i ||x_i - mu_{a(i)}||^2."""
    diff = points - centroids[assignment]
    return float(np.einsum("nd,nd->", diff, diff))


def _kmeans_pp(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = points.shape[0]
    centroids = np.empty((k, points.shape[1]), dtype=np.float64)
    centroids[0] = points[rng.integers(n)]
    closest = _squared_distances(points, centroids[:1])[:, 0]
    for c in range(1, k):
        total = closest.sum()
        if total > 0:
            idx = rng.choice(n, p=closest / total)
        else:
            # every point already coincides with a centroid
            idx = rng.integers(n)
        centroids[c] = points[idx]
        closest = np.minimum(closest, _squared_distances(points, centroids[c : c + 1])[:, 0])
    return centroids


def _repair_empty(points: np.ndarray, centroids: np.ndarray, assignment: np.ndarray, dist: np.ndarray) -> None:
    """Re-seed each empty cluster at the point farthest from its own centroid."""
    k = centroids.shape[0]
    sizes = np.bincount(assignment, minlength=k)
    for empty in np.flatnonzero(sizes == 0):
        own = dist[np.arange(points.shape[0]), assignment]
        # only steal from clusters that keep at least one point
        own = np.where(sizes[assignment] > 1, own, -1.0)
        idx = int(np.argmax(own))
        if own[idx] < 0:
            break
        sizes[assignment[idx]] -= 1
        assignment[idx] = empty
        sizes[empty] = 1
        centroids[empty] = points[idx]
        dist[idx, :] = _squared_distances(points[idx : idx + 1], centroids)[0]


def _lloyd(points: np.ndarray, k: int, seed: int, max_iter: int) -> KMeansResult:
    rng = np.random.default_rng(seed)
    centroids = _kmeans_pp(points, k, rng)
    assignment: Optional[np.ndarray] = None
    history: List[float] = []
    iterations = 0

    for _ in range(max_iter):
        dist = _squared_distances(points, centroids)
        # argmin returns the lowest index on ties
        new_assignment = np.argmin(dist, axis=1)
        _repair_empty(points, centroids, new_assignment, dist)
        if assignment is not None and np.array_equal(new_assignment, assignment):
            break
        assignment = new_assignment
        iterations += 1
        for c in range(k):
            members = points[assignment == c]
            if members.shape[0]:
                centroids[c] = members.mean(axis=0)
        history.append(kmeans_loss(points, centroids, assignment))

    return KMeansResult(
        centroids=centroids,
        assignment=assignment,
        loss=kmeans_loss(points, centroids, assignment),
        iterations=iterations,
        loss_history=history,
    )


def kmeans(points: np.ndarray, k: int, seed: int = 0, max_iter: int = 100, n_init: int = 1) -> KMeansResult:
    """k-means++ initialisation followed by EM (assign / re-centre) iterations.

    With n_init > 1 the run with the lowest J wins; restart r uses seed * 1000 + r.
    """
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or points.shape[0] == 0:
        raise InvalidArgumentError("kmeans needs a non-empty (n, d) array of points")
    if points.shape[1] == 0:
        raise InvalidArgumentError("kmeans needs vectors of dimension >= 1")
    if not 1 <= k <= points.shape[0]:
        raise InvalidArgumentError(f"K={k} must lie in 1..{points.shape[0]} (the number of points)")
    if max_iter < 1 or n_init < 1:
        raise InvalidArgumentError("max_iter and n_init must be positive")

    if n_init == 1:
        return _lloyd(points, k, seed, max_iter)
    runs = [_lloyd(points, k, seed * 1000 + r, max_iter) for r in range(n_init)]
    return min(runs, key=lambda run: run.loss)


def _label_flags(labels: Mapping[int, RegionClass], n: int) -> Tuple[np.ndarray, np.ndarray]:
    """Boolean masks of the points labeled defect and labeled background."""
    defect = np.zeros(n, dtype=bool)
    background = np.zeros(n, dtype=bool)
    for idx, cls in labels.items():
        if not 0 <= idx < n:
            raise InvalidArgumentError(f"label refers to point {idx}, but there are {n} points")
        if RegionClass(cls).is_defect:
            defect[idx] = True
        else:
            background[idx] = True
    return defect, background


def cluster_filter(
    points: np.ndarray,
    labels: Mapping[int, RegionClass],
    k: int = 10,
    keep_count: int = 6,
    drop_threshold: Optional[int] = None,
    seed: int = 0,
    strict_drop: bool = False,
    max_iter: int = 100,
    n_init: int = 1,
    spare_clusters: bool = True,
) -> FilterTrace:
    """Iteratively drop the clusters with the lowest proportion of labeled defects.

    Round r clusters with seed + r. A round ends the loop when it drops fewer
    than drop_threshold points (its drops still apply) or when at most k points
    remain. Labeled defects are never dropped unless strict_drop is set.

    With spare_clusters, a cluster outside the top keep_count survives whole
    when it holds more labeled defects than labeled background points.
    Sparing is off under strict_drop. kept_clusters in the trace is always
    the top keep_count.
    """
    points = np.asarray(points, dtype=np.float64)
    n = points.shape[0]
    if keep_count >= k:
        raise InvalidArgumentError(f"keep_count ({keep_count}) must be smaller than K ({k})")
    is_defect, is_background = _label_flags(labels, n)
    if not is_defect.any():
        raise InvalidArgumentError("cluster filtering needs at least one point labeled scratch, pit or crack")
    if drop_threshold is None:
        drop_threshold = max(1, math.ceil(0.01 * n))
    if drop_threshold < 1:
        raise InvalidArgumentError(f"drop_threshold must be >= 1, got {drop_threshold}")

    retained = np.arange(n)
    dropped: List[int] = []
    rounds: List[FilterRound] = []

    r = 0
    while retained.size > k:
        result = kmeans(points[retained], k, seed=seed + r, max_iter=max_iter, n_init=n_init)
        sizes = np.bincount(result.assignment, minlength=k)
        defects = np.bincount(result.assignment, weights=is_defect[retained].astype(np.float64), minlength=k)
        proportions = np.divide(defects, sizes, out=np.zeros(k), where=sizes > 0)
        backgrounds = np.bincount(result.assignment, weights=is_background[retained].astype(np.float64), minlength=k)

        non_empty = [c for c in range(k) if sizes[c] > 0]
        ranked = sorted(non_empty, key=lambda c: (-proportions[c], c))
        kept = sorted(ranked[:keep_count])
        spared: List[int] = []
        if spare_clusters and not strict_drop:
            spared = [c for c in ranked[keep_count:] if defects[c] > backgrounds[c]]

        in_kept = np.isin(result.assignment, kept + spared)
        if not strict_drop:
            in_kept |= is_defect[retained]
        newly_dropped = retained[~in_kept]
        retained = retained[in_kept]
        dropped.extend(newly_dropped.tolist())

        rounds.append(
            FilterRound(
                seed=seed + r,
                kept_clusters=kept,
                spared_clusters=sorted(spared),
                proportions=proportions.tolist(),
                cluster_sizes=sizes.tolist(),
                dropped_count=int(newly_dropped.size),
                retained_count=int(retained.size),
                loss=result.loss,
                iterations=result.iterations,
            )
        )
        logger.info(
            "Cluster filter round {}: kept clusters {}, spared {}, dropped {}, retained {}",
            r + 1, kept, sorted(spared), newly_dropped.size, retained.size,
        )
        r += 1
        if newly_dropped.size < drop_threshold:
            break

    return FilterTrace(
        point_count=n,
        k=k,
        keep_count=keep_count,
        drop_threshold=drop_threshold,
        strict_drop=strict_drop,
        spare_clusters=spare_clusters and not strict_drop,
        rounds=rounds,
        retained=sorted(retained.tolist()),
        dropped=sorted(dropped),
    )


def pseudo_labels(trace: FilterTrace, labels: Optional[Mapping[int, RegionClass]] = None) -> List[BinaryVerdict]:
    """Retained -> defect, dropped -> background; human labels override the trace."""
    verdicts = [BinaryVerdict.BACKGROUND] * trace.point_count
    for idx in trace.retained:
        verdicts[idx] = BinaryVerdict.DEFECT
    for idx, cls in (labels or {}).items():
        verdicts[idx] = RegionClass(cls).verdict
    return verdicts
