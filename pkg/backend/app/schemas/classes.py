"""
Region class taxonomy, binary projection and report colors
"""
from enum import Enum, IntEnum
from typing import Dict, Tuple


class BinaryVerdict(str, Enum):
    BACKGROUND = "background"
    DEFECT = "defect"

    @property
    def index(self) -> int:
        """Class index used by the two-class (BD) forest."""
        return 1 if self is BinaryVerdict.DEFECT else 0

    @classmethod
    def from_index(cls, index: int) -> "BinaryVerdict":
        return cls.DEFECT if index == 1 else cls.BACKGROUND


class RegionClass(IntEnum):
    """Six-way region taxonomy; the integer value is the stable wire index."""

    SCRATCH = 0
    PIT = 1
    CRACK = 2
    DUST = 3
    SENSOR_REGION = 4
    LIGHT_REFLECTION = 5

    @property
    def wire_name(self) -> str:
        return self.name.lower()

    @classmethod
    def from_name(cls, name: str) -> "RegionClass":
        try:
            return cls[name.strip().upper()]
        except KeyError:
            valid = ", ".join(c.wire_name for c in cls)
            raise ValueError(f"unknown region class '{name}' (expected one of: {valid})") from None

    @property
    def is_defect(self) -> bool:
        return self in _DEFECT_CLASSES

    @property
    def verdict(self) -> BinaryVerdict:
        return BinaryVerdict.DEFECT if self.is_defect else BinaryVerdict.BACKGROUND

    @property
    def color(self) -> str:
        return REPORT_COLORS[self]

    @property
    def abbreviation(self) -> str:
        return _ABBREVIATIONS[self]


_DEFECT_CLASSES = frozenset({RegionClass.SCRATCH, RegionClass.PIT, RegionClass.CRACK})

REPORT_COLORS: Dict[RegionClass, str] = {
    RegionClass.SCRATCH: "red",
    RegionClass.PIT: "green",
    RegionClass.CRACK: "green",
    RegionClass.DUST: "yellow",
    RegionClass.SENSOR_REGION: "purple",
    RegionClass.LIGHT_REFLECTION: "yellow",
}

# BGR, for drawing with OpenCV
COLOR_BGR: Dict[str, Tuple[int, int, int]] = {
    "red": (0, 0, 255),
    "green": (0, 255, 0),
    "yellow": (0, 255, 255),
    "purple": (128, 0, 128),
}

_ABBREVIATIONS: Dict[RegionClass, str] = {
    RegionClass.SCRATCH: "S",
    RegionClass.PIT: "P",
    RegionClass.CRACK: "C",
    RegionClass.DUST: "D",
    RegionClass.SENSOR_REGION: "SR",
    RegionClass.LIGHT_REFLECTION: "LR",
}
