"""
Synthetic glass specification, ground truth and corpus manifest schemas
"""
import json
import math
from typing import Annotated, List, Literal, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, field_serializer, field_validator, model_validator

from app.schemas.classes import RegionClass
from app.schemas.regions import BBox

Point = Tuple[int, int]
# inclusive (x0, y0, x1, y1) in pixel coordinates
Extent = Tuple[float, float, float, float]


# soft primitives are truncated where they add less than this many grey levels
GLOW_CUTOFF = 5.0


def glow_radius(amplitude: float, sigma: float) -> float:
    """Distance at which a gaussian of the given amplitude falls below the cutoff."""
    if amplitude <= GLOW_CUTOFF:
        return 0.0
    return sigma * math.sqrt(2.0 * math.log(amplitude / GLOW_CUTOFF))


class _Primitive(BaseModel):
    model_config = ConfigDict(extra="forbid")

    intensity: float = Field(gt=0.0, le=255.0)

    def extent(self, background: float) -> Extent:
        raise NotImplementedError


class ScratchSpec(_Primitive):
    kind: Literal["scratch"] = "scratch"
    points: List[Point] = Field(min_length=2)
    width: int = Field(default=1, ge=1, le=3)

    def extent(self, background: float) -> Extent:
        xs, ys = zip(*self.points)
        # thick OpenCV lines can reach one pixel past width / 2
        r = self.width / 2.0 + 1.0
        return (min(xs) - r, min(ys) - r, max(xs) + r, max(ys) + r)


class PitSpec(_Primitive):
    kind: Literal["pit"] = "pit"
    center: Point
    radius: int = Field(ge=2, le=6)

    def extent(self, background: float) -> Extent:
        x, y = self.center
        return (x - self.radius, y - self.radius, x + self.radius, y + self.radius)


class CrackSpec(_Primitive):
    kind: Literal["crack"] = "crack"
    trunk: List[Point] = Field(min_length=2)
    branches: List[List[Point]] = []
    width: int = Field(default=1, ge=1, le=2)

    @field_validator("branches")
    @classmethod
    def branches_are_polylines(cls, v):
        if any(len(b) < 2 for b in v):
            raise ValueError("every crack branch needs at least two points")
        return v

    def extent(self, background: float) -> Extent:
        pts = list(self.trunk) + [p for b in self.branches for p in b]
        xs, ys = zip(*pts)
        # thick OpenCV lines can reach one pixel past width / 2
        r = self.width / 2.0 + 1.0
        return (min(xs) - r, min(ys) - r, max(xs) + r, max(ys) + r)


class DustSpec(_Primitive):
    kind: Literal["dust"] = "dust"
    center: Tuple[float, float]
    sigma: float = Field(gt=0.0, le=20.0)

    def extent(self, background: float) -> Extent:
        r = glow_radius(self.intensity - background, self.sigma)
        x, y = self.center
        return (x - r, y - r, x + r, y + r)


class SensorSpec(_Primitive):
    kind: Literal["sensor_region"] = "sensor_region"
    x: int
    y: int
    w: int = Field(ge=4)
    h: int = Field(ge=4)
    pattern: Literal["rect", "checker"] = "rect"
    cell: int = Field(default=3, ge=2)

    def extent(self, background: float) -> Extent:
        return (self.x, self.y, self.x + self.w - 1, self.y + self.h - 1)


class ReflectionSpec(_Primitive):
    """Soft elongated glare: an anisotropic gaussian band."""

    kind: Literal["light_reflection"] = "light_reflection"
    center: Tuple[float, float]
    sigma_major: float = Field(gt=0.0, le=60.0)
    sigma_minor: float = Field(gt=0.0, le=20.0)
    angle: float = 0.0

    def extent(self, background: float) -> Extent:
        amplitude = self.intensity - background
        a, b = glow_radius(amplitude, self.sigma_major), glow_radius(amplitude, self.sigma_minor)
        t = math.radians(self.angle)
        half_w = math.hypot(a * math.cos(t), b * math.sin(t))
        half_h = math.hypot(a * math.sin(t), b * math.cos(t))
        x, y = self.center
        return (x - half_w, y - half_h, x + half_w, y + half_h)


Primitive = Annotated[
    Union[ScratchSpec, PitSpec, CrackSpec, DustSpec, SensorSpec, ReflectionSpec],
    Field(discriminator="kind"),
]

PRIMITIVE_CLASS = {
    "scratch": RegionClass.SCRATCH,
    "pit": RegionClass.PIT,
    "crack": RegionClass.CRACK,
    "dust": RegionClass.DUST,
    "sensor_region": RegionClass.SENSOR_REGION,
    "light_reflection": RegionClass.LIGHT_REFLECTION,
}


class GlassSpec(BaseModel):
    """Everything needed to render one synthetic glass image deterministically."""

    model_config = ConfigDict(extra="forbid")

    width: int = Field(ge=8)
    height: int = Field(ge=8)
    background_mean: float = Field(default=30.0, ge=0.0, le=250.0)
    noise_sigma: float = Field(default=0.5, ge=0.0)
    defects: List[Primitive] = []
    seed: int = 0

    @model_validator(mode="after")
    def detectable_intensities(self):
        floor = self.background_mean + 5.0 * self.noise_sigma
        for i, prim in enumerate(self.defects):
            if not prim.intensity > floor:
                raise ValueError(
                    f"defects[{i}] ({prim.kind}): intensity {prim.intensity} must exceed "
                    f"background mean + 5 sigma = {floor:.2f}"
                )
        return self


class TruthEntry(BaseModel):
    model_config = ConfigDict(populate_by_name=True)

    bbox: BBox
    region_class: RegionClass = Field(alias="class")

    @field_validator("region_class", mode="before")
    @classmethod
    def class_from_name(cls, v):
        if isinstance(v, str):
            return RegionClass.from_name(v)
        return v

    @field_serializer("region_class")
    def class_to_name(self, v: RegionClass) -> str:
        return v.wire_name


class GroundTruth(BaseModel):
    source_id: str = ""
    width: int
    height: int
    profile: Optional[str] = None
    entries: List[TruthEntry] = []

    def to_json(self) -> str:
        return json.dumps(self.model_dump(mode="json", by_alias=True), indent=2) + "\n"


class ManifestItem(BaseModel):
    id: str
    seed: int
    image: str
    truth: str
    sha256: str


class CorpusManifest(BaseModel):
    name: str
    profile: str
    seed: int
    width: int
    height: int
    # the only non-reproducible field of a corpus
    created: str
    items: List[ManifestItem] = []

    def to_json(self) -> str:
        return json.dumps(self.model_dump(mode="json"), indent=2) + "\n"
