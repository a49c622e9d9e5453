"""
Inspection report schema
"""
import json
from collections import Counter
from typing import Dict, List

from pydantic import BaseModel, ConfigDict, Field, field_serializer, field_validator

from app.schemas.classes import BinaryVerdict, RegionClass
from app.schemas.regions import BBox


class Finding(BaseModel):
    model_config = ConfigDict(populate_by_name=True)

    bbox: BBox
    region_class: RegionClass = Field(alias="class")
    verdict: BinaryVerdict
    # DC vote fractions in wire-index order
    votes: List[float] = Field(min_length=len(RegionClass), max_length=len(RegionClass))
    # BD vote fraction for the defect class
    defect_vote: float = Field(ge=0.0, le=1.0)
    color: str

    @field_validator("region_class", mode="before")
    @classmethod
    def class_from_name(cls, v):
        if isinstance(v, str):
            return RegionClass.from_name(v)
        return v

    @field_serializer("region_class")
    def class_to_name(self, v: RegionClass) -> str:
        return v.wire_name


class ReportSummary(BaseModel):
    by_class: Dict[str, int]
    by_verdict: Dict[str, int]


class InspectionReport(BaseModel):
    source_id: str
    width: int
    height: int
    findings: List[Finding] = []

    @property
    def summary(self) -> ReportSummary:
        by_class = Counter(f.region_class for f in self.findings)
        by_verdict = Counter(f.verdict for f in self.findings)
        return ReportSummary(
            by_class={c.wire_name: by_class[c] for c in RegionClass},
            by_verdict={v.value: by_verdict[v] for v in BinaryVerdict},
        )

    def to_dict(self) -> dict:
        payload = self.model_dump(mode="json", by_alias=True)
        payload["summary"] = self.summary.model_dump()
        return payload

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "InspectionReport":
        return cls.model_validate_json(text)
