"""
Crop label set schema
"""
from collections import Counter
from typing import Dict, Literal

from pydantic import BaseModel, field_validator

from app.schemas.classes import RegionClass


class LabelSet(BaseModel):
    entries: Dict[str, RegionClass] = {}
    provenance: Literal["human", "pseudo"] = "human"

    @field_validator("entries", mode="before")
    @classmethod
    def classes_from_names(cls, v):
        if isinstance(v, dict):
            return {k: RegionClass.from_name(c) if isinstance(c, str) else c for k, c in v.items()}
        return v

    def counts(self) -> Dict[RegionClass, int]:
        tally = Counter(self.entries.values())
        return {c: tally[c] for c in RegionClass}

    def __len__(self) -> int:
        return len(self.entries)
