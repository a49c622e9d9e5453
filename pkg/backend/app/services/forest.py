"""
Random forest learner shared by the BD (binary) and DC (six-class) classifiers

CART trees grown on Gini impurity with midpoint thresholds, bootstrap
bagging, per-split feature subsampling and majority voting. Tree t draws
its randomness from seed + t, so parallel and sequential training agree.
"""
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Tuple, Union

import numpy as np
from loguru import logger
from pydantic import ValidationError

from app.core.errors import InspectIOError, InvalidArgumentError, ModelLoadError
from app.schemas.forest import FOREST_FORMAT_VERSION, ForestModel, ForestParams, TreeNode

# depth limit of "unlimited" trees; keeps recursion and nested JSON bounded
MAX_TREE_DEPTH = 64


@dataclass(frozen=True)
class TrainSample:
    features: np.ndarray
    label: int


@dataclass
class _Split:
    feature: int
    threshold: float
    impurity: float


def gini(counts: np.ndarray) -> float:
    total = counts.sum()
    if total == 0:
        return 0.0
    p = counts / total
    return float(1.0 - np.dot(p, p))


def _best_split_on(x: np.ndarray, y_onehot: np.ndarray, min_leaf: int) -> Optional[Tuple[float, float]]:
    """Lowest weighted Gini over midpoint thresholds of one feature, as (impurity, threshold)."""
    order = np.argsort(x, kind="stable")
    xs = x[order]
    n = xs.size
    # a split after position i sends xs[:i+1] left
    valid = xs[:-1] < xs[1:]
    positions = np.arange(1, n)
    valid &= (positions >= min_leaf) & (n - positions >= min_leaf)
    if not valid.any():
        return None

    left = np.cumsum(y_onehot[order], axis=0)[:-1]
    right = left[-1] + y_onehot[order][-1] - left
    n_left = positions.astype(np.float64)
    n_right = n - n_left
    gini_left = 1.0 - np.einsum("ij,ij->i", left, left) / n_left**2
    gini_right = 1.0 - np.einsum("ij,ij->i", right, right) / n_right**2
    weighted = (n_left * gini_left + n_right * gini_right) / n

    weighted = np.where(valid, weighted, np.inf)
    # argmin picks the first (smallest threshold) among equal impurities
    i = int(np.argmin(weighted))
    lo, hi = xs[i], xs[i + 1]
    threshold = lo + (hi - lo) / 2.0
    if not lo <= threshold < hi:
        threshold = lo
    return float(weighted[i]), float(threshold)


class _TreeBuilder:
    def __init__(self, x: np.ndarray, y: np.ndarray, class_count: int, params: ForestParams, rng: np.random.Generator):
        self.x = x
        self.y = y
        self.class_count = class_count
        self.params = params
        self.rng = rng
        self.per_split = params.features_per_split(x.shape[1])
        self.onehot = np.eye(class_count, dtype=np.float64)[y]

    def build(self, rows: np.ndarray, depth: int = 0) -> TreeNode:
        counts = np.bincount(self.y[rows], minlength=self.class_count)
        params = self.params
        limit = MAX_TREE_DEPTH if params.max_depth is None else params.max_depth
        stop = (
            depth >= limit
            or np.count_nonzero(counts) <= 1
            or rows.size < 2 * params.min_leaf
        )
        split = None if stop else self._choose_split(rows)
        if split is None:
            return TreeNode(counts=counts.tolist())

        goes_left = self.x[rows, split.feature] <= split.threshold
        return TreeNode(
            feature=split.feature,
            threshold=split.threshold,
            left=self.build(rows[goes_left], depth + 1),
            right=self.build(rows[~goes_left], depth + 1),
        )

    def _choose_split(self, rows: np.ndarray) -> Optional[_Split]:
        dim = self.x.shape[1]
        permutation = self.rng.permutation(dim)
        y_rows = self.onehot[rows]
        # draw features in blocks until one of them admits a valid split
        for start in range(0, dim, self.per_split):
            candidates = np.sort(permutation[start : start + self.per_split])
            best: Optional[_Split] = None
            for feature in candidates:
                found = _best_split_on(self.x[rows, feature], y_rows, self.params.min_leaf)
                if found is None:
                    continue
                impurity, threshold = found
                # candidates are scanned in ascending feature order, so ties keep the lower index
                if best is None or impurity < best.impurity:
                    best = _Split(int(feature), threshold, impurity)
            if best is not None:
                return best
        return None


def _as_matrix(samples: Union[Sequence[TrainSample], Tuple[np.ndarray, np.ndarray]]) -> Tuple[np.ndarray, np.ndarray]:
    if isinstance(samples, tuple):
        x, y = samples
    else:
        if not samples:
            raise InvalidArgumentError("cannot train on an empty sample set")
        dims = {np.asarray(s.features).size for s in samples}
        if len(dims) != 1:
            raise InvalidArgumentError(f"inconsistent feature dimensions in training set: {sorted(dims)}")
        x = np.stack([np.asarray(s.features, dtype=np.float64).reshape(-1) for s in samples])
        y = np.array([s.label for s in samples])
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if x.ndim != 2 or x.shape[0] == 0 or x.shape[1] == 0:
        raise InvalidArgumentError("training features must be a non-empty (n, d) array")
    if y.shape != (x.shape[0],):
        raise InvalidArgumentError("need exactly one label per sample")
    return x, y


def train(
    samples: Union[Sequence[TrainSample], Tuple[np.ndarray, np.ndarray]],
    params: Optional[ForestParams] = None,
    class_count: Optional[int] = None,
    tag: Optional[str] = None,
    jobs: int = 1,
) -> ForestModel:
    """Grow params.n_trees CART trees; samples are TrainSample objects or an (X, y) pair."""
    params = params or ForestParams()
    x, y = _as_matrix(samples)
    if class_count is None:
        class_count = int(y.max()) + 1
    if y.min() < 0 or y.max() >= class_count:
        raise InvalidArgumentError(f"labels must lie in 0..{class_count - 1}")
    if not np.all(np.isfinite(x)):
        raise InvalidArgumentError("training features contain non-finite values")

    n = x.shape[0]

    def grow(t: int) -> TreeNode:
        rng = np.random.default_rng(params.seed + t)
        rows = rng.integers(0, n, size=n) if params.bootstrap else np.arange(n)
        return _TreeBuilder(x, y, class_count, params, rng).build(rows)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            trees = list(pool.map(grow, range(params.n_trees)))
    else:
        trees = [grow(t) for t in range(params.n_trees)]

    model = ForestModel(tag=tag, class_count=class_count, dim=x.shape[1], params=params, trees=trees)
    logger.info(
        "Trained {}forest: {} trees, {} samples, {} features, {} classes",
        f"{tag} " if tag else "", len(trees), n, x.shape[1], class_count,
    )
    return model


def _leaf(tree: TreeNode, x: np.ndarray) -> TreeNode:
    node = tree
    while not node.is_leaf:
        node = node.left if x[node.feature] <= node.threshold else node.right
    return node


def tree_vote(tree: TreeNode, x: np.ndarray) -> int:
    """Argmax of the leaf histogram; ties go to the lowest class index."""
    return int(np.argmax(_leaf(tree, x).counts))


def predict(model: ForestModel, x: np.ndarray) -> Tuple[int, np.ndarray]:
    """Majority vote over trees (ties -> lowest class) and the vote fractions."""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if x.size != model.dim:
        raise InvalidArgumentError(f"feature vector has {x.size} values, model expects {model.dim}")
    votes = np.zeros(model.class_count, dtype=np.float64)
    for tree in model.trees:
        votes[tree_vote(tree, x)] += 1
    fractions = votes / len(model.trees)
    return int(np.argmax(votes)), fractions


def predict_many(model: ForestModel, x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise InvalidArgumentError("predict_many needs an (n, d) array")
    if x.shape[0] == 0:
        return np.zeros(0, dtype=np.int64), np.zeros((0, model.class_count))
    results = [predict(model, row) for row in x]
    return np.array([r[0] for r in results]), np.stack([r[1] for r in results])


def accuracy(model: ForestModel, x: np.ndarray, y: np.ndarray) -> float:
    predicted, _ = predict_many(model, x)
    return float(np.mean(predicted == np.asarray(y)))


def save(model: ForestModel, path: Union[str, Path]) -> Path:
    """Versioned JSON; identical models give byte-identical files."""
    if not model.trees:
        raise InvalidArgumentError("refusing to save a forest with no trees")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    try:
        path.write_text(model.model_dump_json(exclude_none=True) + "\n", encoding="utf-8")
    except OSError as exc:
        raise InspectIOError(f"cannot write model {path}: {exc}") from exc
    return path


def load(path: Union[str, Path]) -> ForestModel:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ModelLoadError(f"cannot read model {path}: {exc}") from exc
    try:
        payload = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelLoadError(f"model {path} is not valid JSON (truncated?): {exc}") from exc
    if not isinstance(payload, dict):
        raise ModelLoadError(f"model {path}: expected a JSON object")
    if payload.get("version") != FOREST_FORMAT_VERSION:
        raise ModelLoadError(
            f"model {path}: field 'version' is {payload.get('version')!r}, expected {FOREST_FORMAT_VERSION}"
        )
    try:
        return ForestModel.model_validate(payload)
    except ValidationError as exc:
        first = exc.errors()[0]
        where = ".".join(str(p) for p in first["loc"]) or "<root>"
        raise ModelLoadError(f"model {path}: field '{where}': {first['msg']}") from exc
