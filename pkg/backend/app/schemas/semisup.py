"""
Cluster-filter audit trace schema
"""
import json
from typing import List

from pydantic import BaseModel, Field, model_validator


class FilterRound(BaseModel):
    seed: int
    kept_clusters: List[int]
    # lower-ranked clusters kept whole because their labels lean defect
    spared_clusters: List[int] = []
    # per-cluster labeled-defect proportion, indexed by cluster
    proportions: List[float]
    cluster_sizes: List[int]
    dropped_count: int = Field(ge=0)
    retained_count: int = Field(ge=0)
    loss: float = Field(ge=0.0)
    iterations: int = Field(ge=0)


class FilterTrace(BaseModel):
    point_count: int = Field(ge=0)
    k: int
    keep_count: int
    drop_threshold: int
    strict_drop: bool = False
    spare_clusters: bool = True
    rounds: List[FilterRound] = []
    retained: List[int] = []
    dropped: List[int] = []

    @model_validator(mode="after")
    def partitions_points(self):
        retained, dropped = set(self.retained), set(self.dropped)
        if retained & dropped:
            raise ValueError("retained and dropped sets overlap")
        if (retained | dropped) != set(range(self.point_count)):
            raise ValueError("retained and dropped sets do not partition the points")
        return self

    def to_json(self) -> str:
        return json.dumps(self.model_dump(mode="json"), indent=2) + "\n"
