"""
Stage I region selection: scoring, IoU, greedy non-maximum suppression,
square 224x224 crops, tiling for large frames, and proposal file I/O
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from loguru import logger

from app.core.config import ProposalConfig
from app.core.errors import InspectIOError, InvalidArgumentError
from app.schemas.regions import BBox, Region
from app.services.imaging import (
    GrayImage,
    PixelRegion,
    connected_regions,
    dilate,
    save_image,
    sobel_magnitude,
    threshold_binary,
)

CROP_SIZE = 224


@dataclass(frozen=True)
class Crop:
    """A zero-padded, resized 224x224 patch and the region it came from."""

    pixels: np.ndarray
    origin: Optional[Region] = None
    # zero columns on the left, zero rows on top, before resizing
    pad: Tuple[int, int] = (0, 0)
    index: int = 0
    crop_id: str = ""

    def __post_init__(self):
        if self.pixels.shape != (CROP_SIZE, CROP_SIZE) or self.pixels.dtype != np.uint8:
            raise InvalidArgumentError(
                f"crop must be a {CROP_SIZE}x{CROP_SIZE} uint8 patch, got {self.pixels.shape} {self.pixels.dtype}"
            )
        if not self.crop_id and self.origin is not None:
            object.__setattr__(self, "crop_id", f"{self.origin.source_id}_{self.index}")

    @property
    def side(self) -> int:
        """Side of the zero-padded square before resizing."""
        if self.origin is None:
            return CROP_SIZE
        return max(self.origin.bbox[2], self.origin.bbox[3])


def score_region(r: PixelRegion, source_id: str = "") -> Region:
    """Detection score is the region's pixel area."""
    return Region(bbox=r.bbox, score=float(r.area), area=r.area, source_id=source_id)


def iou(a: BBox, b: BBox) -> float:
    ax0, ay0, aw, ah = a
    bx0, by0, bw, bh = b
    iw = min(ax0 + aw, bx0 + bw) - max(ax0, bx0)
    ih = min(ay0 + ah, by0 + bh) - max(ay0, by0)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (aw * ah + bw * bh - inter)


def _iou_many(box: BBox, others: np.ndarray) -> np.ndarray:
    """IoU of one box against an (n, 4) array of x0, y0, x1, y1 (exclusive)."""
    x0, y0, w, h = box
    iw = np.minimum(x0 + w, others[:, 2]) - np.maximum(x0, others[:, 0])
    ih = np.minimum(y0 + h, others[:, 3]) - np.maximum(y0, others[:, 1])
    inter = np.where((iw > 0) & (ih > 0), iw * ih, 0)
    union = w * h + (others[:, 2] - others[:, 0]) * (others[:, 3] - others[:, 1]) - inter
    return inter / union


def nms(regions: Sequence[Region], t_nms: float = 0.2) -> List[Region]:
    """Greedy hard suppression: keep the best region, drop everything with IoU >= t_nms, repeat."""
    if not 0.0 <= t_nms <= 1.0:
        raise InvalidArgumentError(f"t_nms must lie in [0, 1], got {t_nms}")
    if not regions:
        return []

    ordered = sorted(regions, key=Region.priority)
    corners = np.array([(r.x0, r.y0, r.x1, r.y1) for r in ordered], dtype=np.int64)
    alive = np.arange(len(ordered))
    kept = []
    while alive.size:
        best = alive[0]
        kept.append(ordered[best])
        rest = alive[1:]
        overlap = _iou_many(ordered[best].bbox, corners[rest])
        alive = rest[overlap < t_nms]
    return kept


def filter_min_area(regions: Iterable[Region], min_area: int) -> List[Region]:
    return [r for r in regions if r.area >= min_area]


def extract_crop(img: GrayImage, region: Region, index: int = 0) -> Crop:
    """Cut the box, zero-pad it to a centred square, resize to 224x224 by nearest neighbour."""
    if not region.fits(img.width, img.height):
        raise InvalidArgumentError(
            f"region {region.bbox} lies outside the {img.width}x{img.height} image"
        )
    x0, y0, w, h = region.bbox
    patch = img.pixels[y0 : y0 + h, x0 : x0 + w]
    side = max(w, h)
    left = (side - w) // 2
    top = (side - h) // 2
    square = np.zeros((side, side), dtype=np.uint8)
    square[top : top + h, left : left + w] = patch

    # source index holding the centre of each output pixel
    idx = ((2 * np.arange(CROP_SIZE) + 1) * side) // (2 * CROP_SIZE)
    pixels = square[np.ix_(idx, idx)]
    return Crop(pixels=np.ascontiguousarray(pixels), origin=region, pad=(left, top), index=index)


def _propose_frame(img: GrayImage, config: ProposalConfig, source_id: str) -> List[Region]:
    gradient = sobel_magnitude(img, config.sobel_kernel)
    mask = dilate(threshold_binary(gradient, config.threshold), config.dilation_kernel)
    components = connected_regions(mask)
    scored = filter_min_area((score_region(c, source_id) for c in components), config.min_area)
    return nms(scored, config.t_nms)


def _tile_origins(length: int, tile: int, overlap: int) -> List[int]:
    if length <= tile:
        return [0]
    step = tile - overlap
    origins = list(range(0, length - tile, step))
    origins.append(length - tile)
    return origins


def _propose_tile(img: GrayImage, config: ProposalConfig, source_id: str, x: int, y: int) -> List[Region]:
    """Regions of one tile in frame coordinates.

    Regions within the stage-I footprint of an interior tile edge are dropped:
    they are cut fragments, and the overlap guarantees the whole region lies
    clear of the edges of a neighbouring tile.
    """
    size = config.tile_size
    tile = GrayImage(np.ascontiguousarray(img.pixels[y : y + size, x : x + size]))
    guard = config.footprint
    left, top = x > 0, y > 0
    right, bottom = x + tile.width < img.width, y + tile.height < img.height
    kept = []
    for r in _propose_frame(tile, config, source_id):
        if (
            (left and r.x0 < guard)
            or (top and r.y0 < guard)
            or (right and r.x1 > tile.width - guard)
            or (bottom and r.y1 > tile.height - guard)
        ):
            continue
        kept.append(
            Region(bbox=(r.x0 + x, r.y0 + y, r.bbox[2], r.bbox[3]), score=r.score, area=r.area, source_id=source_id)
        )
    return kept


def propose(
    img: GrayImage, config: Optional[ProposalConfig] = None, source_id: str = "", jobs: int = 1
) -> List[Region]:
    """Stage I: Sobel -> threshold -> dilation -> components -> scores -> NMS.

    Frames larger than ``config.tile_size`` are processed in tiles overlapping
    by ``config.overlap``; fragments at interior tile edges are discarded and
    the remaining regions are merged by a cross-tile NMS pass.
    """
    config = config or ProposalConfig()
    size = config.tile_size
    if size is None or (img.width <= size and img.height <= size):
        regions = _propose_frame(img, config, source_id)
    else:
        origins = [
            (x, y)
            for y in _tile_origins(img.height, size, config.overlap)
            for x in _tile_origins(img.width, size, config.overlap)
        ]
        logger.debug("{}: {} tiles of {}px", source_id or "image", len(origins), size)
        with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
            per_tile = list(pool.map(lambda xy: _propose_tile(img, config, source_id, *xy), origins))
        regions = nms([r for tile in per_tile for r in tile], config.t_nms)

    logger.debug("{}: {} proposals", source_id or "image", len(regions))
    return regions


def extract_crops(img: GrayImage, regions: Sequence[Region]) -> List[Crop]:
    return [extract_crop(img, r, index=i) for i, r in enumerate(regions)]


def write_proposals(path: Union[str, Path], regions: Iterable[Region]) -> Path:
    """One `source_id x0 y0 w h score` line per region, UTF-8, LF endings."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [f"{r.source_id} {r.x0} {r.y0} {r.bbox[2]} {r.bbox[3]} {r.score:.17g}\n" for r in regions]
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.writelines(lines)
    except OSError as exc:
        raise InspectIOError(f"cannot write proposals file {path}: {exc}") from exc
    return path


def read_proposals(path: Union[str, Path]) -> List[Region]:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise InspectIOError(f"cannot read proposals file {path}: {exc}") from exc
    regions = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        fields = line.split()
        if len(fields) != 6:
            raise InvalidArgumentError(f"{path}:{lineno}: expected 6 fields, got {len(fields)}")
        source_id, x0, y0, w, h, score = fields
        try:
            bbox = (int(x0), int(y0), int(w), int(h))
            value = float(score)
        except ValueError as exc:
            raise InvalidArgumentError(f"{path}:{lineno}: {exc}") from exc
        # area is not part of the line format; under the default score rule it equals the score
        area = max(1, int(round(value)))
        regions.append(Region(bbox=bbox, score=value, area=area, source_id=source_id))
    return regions


def save_crop(directory: Union[str, Path], crop: Crop) -> Path:
    """Write `<source_id>_<index>.png`."""
    return save_image(Path(directory) / f"{crop.crop_id}.png", GrayImage(crop.pixels))
