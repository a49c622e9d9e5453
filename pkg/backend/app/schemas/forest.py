"""
Random forest model schema
The same pydantic models are used at runtime and as the versioned JSON file format
"""
from typing import List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator

FOREST_FORMAT_VERSION = 1


class ForestParams(BaseModel):
    """Training hyperparameters; also the `[forest]` section of the pipeline config."""

    model_config = ConfigDict(extra="forbid")

    n_trees: int = Field(default=100, ge=1)
    # None grows trees until purity or min_leaf stops them, up to 64 levels
    max_depth: Optional[int] = Field(default=16, ge=1)
    min_leaf: int = Field(default=1, ge=1)
    # None means floor(sqrt(dim))
    max_features: Optional[int] = Field(default=None, ge=1)
    bootstrap: bool = True
    seed: int = 0

    def features_per_split(self, dim: int) -> int:
        if self.max_features is None:
            return max(1, int(dim**0.5))
        return min(self.max_features, dim)


class TreeNode(BaseModel):
    """Either a split (feature, threshold, left, right) or a leaf (class counts)."""

    model_config = ConfigDict(extra="forbid")

    feature: Optional[int] = Field(default=None, ge=0)
    threshold: Optional[float] = None
    left: Optional["TreeNode"] = None
    right: Optional["TreeNode"] = None
    counts: Optional[List[int]] = None

    @model_validator(mode="after")
    def leaf_or_split(self):
        split_fields = (self.feature, self.threshold, self.left, self.right)
        if self.counts is not None:
            if any(f is not None for f in split_fields):
                raise ValueError("a leaf node carries only 'counts'")
            if any(c < 0 for c in self.counts):
                raise ValueError("leaf 'counts' must be non-negative")
        elif any(f is None for f in split_fields):
            raise ValueError("a split node needs 'feature', 'threshold', 'left' and 'right'")
        return self

    @property
    def is_leaf(self) -> bool:
        return self.counts is not None

    def iter_nodes(self):
        stack = [self]
        while stack:
            node = stack.pop()
            yield node
            if not node.is_leaf:
                stack.append(node.right)
                stack.append(node.left)


class ForestModel(BaseModel):
    """A trained forest. Immutable by convention once trained."""

    model_config = ConfigDict(extra="forbid")

    version: Literal[1] = FOREST_FORMAT_VERSION
    tag: Optional[str] = None
    class_count: int = Field(ge=1)
    dim: int = Field(ge=1)
    params: ForestParams
    trees: List[TreeNode] = Field(min_length=1)

    @model_validator(mode="after")
    def nodes_fit_model(self):
        for t, tree in enumerate(self.trees):
            for node in tree.iter_nodes():
                if node.is_leaf:
                    if len(node.counts) != self.class_count:
                        raise ValueError(f"trees[{t}]: leaf counts length {len(node.counts)} != class_count")
                elif node.feature >= self.dim:
                    raise ValueError(f"trees[{t}]: feature index {node.feature} >= dim {self.dim}")
        return self
