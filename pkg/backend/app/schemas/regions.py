"""
Stage I region schema
"""
from typing import Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator

# (x0, y0, w, h) in integer pixels
BBox = Tuple[int, int, int, int]


class Region(BaseModel):
    """A scored, axis-aligned proposal box cut from one source image."""

    model_config = ConfigDict(frozen=True)

    bbox: BBox
    score: float = Field(ge=0.0)
    area: int = Field(ge=1)
    source_id: str = ""

    @field_validator("bbox")
    @classmethod
    def positive_box(cls, v):
        x0, y0, w, h = v
        if x0 < 0 or y0 < 0 or w < 1 or h < 1:
            raise ValueError(f"bbox {v} must have x0, y0 >= 0 and w, h >= 1")
        return v

    @property
    def x0(self) -> int:
        return self.bbox[0]

    @property
    def y0(self) -> int:
        return self.bbox[1]

    @property
    def x1(self) -> int:
        """Exclusive right edge."""
        return self.bbox[0] + self.bbox[2]

    @property
    def y1(self) -> int:
        """Exclusive bottom edge."""
        return self.bbox[1] + self.bbox[3]

    def fits(self, width: int, height: int) -> bool:
        return self.x1 <= width and self.y1 <= height

    def priority(self) -> tuple:
        """Sort key of the greedy selection: highest score first, then box position."""
        return (-self.score, self.y0, self.x0, self.x1, self.y1)
