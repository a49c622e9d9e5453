"""
Raster primitives for stage I: Sobel gradient magnitude, binary threshold,
dilation and 8-connected component extraction, plus image file I/O
"""
from dataclasses import dataclass
from pathlib import Path
from typing import List, Sequence, Set, Tuple, Union

import cv2
import numpy as np
from loguru import logger

from app.core.errors import InspectIOError, InvalidArgumentError
from app.schemas.regions import BBox

SOBEL_KERNEL_SIZES = (3, 5, 7)

# Rec. 601 luma weights
_LUMA = (0.299, 0.587, 0.114)


@dataclass(frozen=True)
class GrayImage:
    """Single-channel 8-bit raster, stored as an (height, width) uint8 array."""

    pixels: np.ndarray

    def __post_init__(self):
        if not isinstance(self.pixels, np.ndarray) or self.pixels.ndim != 2:
            raise InvalidArgumentError("GrayImage needs a 2-D array")
        if self.pixels.dtype != np.uint8:
            raise InvalidArgumentError(f"GrayImage needs uint8 pixels, got {self.pixels.dtype}")
        if self.pixels.shape[0] < 1 or self.pixels.shape[1] < 1:
            raise InvalidArgumentError("GrayImage must be at least 1x1")

    @classmethod
    def from_values(cls, width: int, height: int, data: Sequence[int]) -> "GrayImage":
        """Build from row-major intensity values; len(data) must equal width * height."""
        if width < 1 or height < 1:
            raise InvalidArgumentError(f"image dimensions must be positive, got {width}x{height}")
        arr = np.asarray(data)
        if arr.size != width * height:
            raise InvalidArgumentError(f"expected {width * height} values for {width}x{height}, got {arr.size}")
        if arr.size and (arr.min() < 0 or arr.max() > 255):
            raise InvalidArgumentError("intensity values must lie in 0..255")
        return cls(arr.astype(np.uint8).reshape(height, width))

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def data(self) -> bytes:
        return self.pixels.tobytes()


@dataclass(frozen=True)
class BinaryImage:
    """Boolean mask stored as an (height, width) bool array."""

    mask: np.ndarray

    def __post_init__(self):
        if not isinstance(self.mask, np.ndarray) or self.mask.ndim != 2 or self.mask.dtype != np.bool_:
            raise InvalidArgumentError("BinaryImage needs a 2-D bool array")

    @property
    def width(self) -> int:
        return self.mask.shape[1]

    @property
    def height(self) -> int:
        return self.mask.shape[0]


@dataclass(frozen=True)
class PixelRegion:
    """One 8-connected component: pixel coordinates, tight bbox and area."""

    xs: np.ndarray
    ys: np.ndarray
    bbox: BBox

    @property
    def area(self) -> int:
        return int(self.xs.size)

    @property
    def pixels(self) -> Set[Tuple[int, int]]:
        return set(zip(self.xs.tolist(), self.ys.tolist()))


def sobel_magnitude(img: GrayImage, kernel_size: int = 5) -> GrayImage:
    """|Gx| + |Gy| of the Sobel derivatives, saturated to 0..255, edges replicated."""
    if kernel_size not in SOBEL_KERNEL_SIZES:
        raise InvalidArgumentError(f"unsupported Sobel kernel size {kernel_size} (expected 3, 5 or 7)")
    src = img.pixels.astype(np.float64)
    gx = cv2.Sobel(src, cv2.CV_64F, 1, 0, ksize=kernel_size, borderType=cv2.BORDER_REPLICATE)
    gy = cv2.Sobel(src, cv2.CV_64F, 0, 1, ksize=kernel_size, borderType=cv2.BORDER_REPLICATE)
    magnitude = np.abs(gx) + np.abs(gy)
    return GrayImage(np.clip(magnitude, 0, 255).astype(np.uint8))


def threshold_binary(img: GrayImage, t: int) -> BinaryImage:
    """True where the pixel is strictly greater than t."""
    if not 0 <= t <= 255:
        raise InvalidArgumentError(f"threshold must lie in 0..255, got {t}")
    return BinaryImage(img.pixels > t)


def dilate(mask: BinaryImage, kernel: Tuple[int, int] = (3, 3)) -> BinaryImage:
    """Binary dilation with a kw x kh box; pixels outside the frame count as false."""
    kw, kh = kernel
    if kw < 1 or kh < 1 or kw % 2 == 0 or kh % 2 == 0:
        raise InvalidArgumentError(f"dilation kernel dimensions must be odd and >= 1, got {kernel}")
    element = np.ones((kh, kw), dtype=np.uint8)
    out = cv2.dilate(
        mask.mask.astype(np.uint8), element, borderType=cv2.BORDER_CONSTANT, borderValue=0
    )
    return BinaryImage(out > 0)


def connected_regions(mask: BinaryImage) -> List[PixelRegion]:
    """8-connected components, largest first; ties by bbox (y0, x0)."""
    count, labels, stats, _ = cv2.connectedComponentsWithStats(
        mask.mask.astype(np.uint8), connectivity=8, ltype=cv2.CV_32S
    )
    if count <= 1:
        return []

    ys, xs = np.nonzero(labels)
    owner = labels[ys, xs]
    order = np.argsort(owner, kind="stable")
    ys, xs, owner = ys[order], xs[order], owner[order]
    bounds = np.searchsorted(owner, np.arange(1, count + 1))

    regions = []
    for label in range(1, count):
        lo, hi = bounds[label - 1], bounds[label]
        x0, y0, w, h = (int(v) for v in stats[label, :4])
        regions.append(PixelRegion(xs=xs[lo:hi].copy(), ys=ys[lo:hi].copy(), bbox=(x0, y0, w, h)))

    regions.sort(key=lambda r: (-r.area, r.bbox[1], r.bbox[0], r.bbox[2], r.bbox[3]))
    return regions


def to_gray(array: np.ndarray, luma: bool = False) -> GrayImage:
    """Accept a decoded raster; colour input needs luma=True."""
    if array.ndim == 2:
        if array.dtype != np.uint8:
            raise InvalidArgumentError(f"only 8-bit images are supported, got {array.dtype}")
        return GrayImage(array)
    if array.ndim == 3 and array.shape[2] == 1:
        return to_gray(array[:, :, 0], luma)
    if not luma:
        raise InvalidArgumentError(
            f"image has {array.shape[2]} channels; pass --luma to convert colour input to grayscale"
        )
    if array.dtype != np.uint8:
        raise InvalidArgumentError(f"only 8-bit images are supported, got {array.dtype}")
    # OpenCV decodes to BGR(A)
    b, g, r = (array[:, :, i].astype(np.float64) for i in range(3))
    y = _LUMA[0] * r + _LUMA[1] * g + _LUMA[2] * b
    return GrayImage(np.floor(y + 0.5).clip(0, 255).astype(np.uint8))


def load_image(path: Union[str, Path], luma: bool = False) -> GrayImage:
    """Read an 8-bit PNG or binary PGM."""
    path = Path(path)
    if not path.is_file():
        raise InspectIOError(f"image not found: {path}")
    array = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if array is None:
        raise InspectIOError(f"cannot decode image: {path}")
    logger.debug("Loaded {} ({}x{}, {} dims)", path, array.shape[1], array.shape[0], array.ndim)
    return to_gray(array, luma)


def save_image(path: Union[str, Path], img: Union[GrayImage, BinaryImage]) -> Path:
    """Write a PNG or PGM (P5); masks are written as 0/255."""
    path = Path(path)
    pixels = img.pixels if isinstance(img, GrayImage) else img.mask.astype(np.uint8) * 255
    path.parent.mkdir(parents=True, exist_ok=True)
    params = [cv2.IMWRITE_PXM_BINARY, 1] if path.suffix.lower() in (".pgm", ".pnm") else []
    if not cv2.imwrite(str(path), pixels, params):
        raise InspectIOError(f"cannot write image: {path}")
    return path
