"""
Synthetic glass generator with exact ground truth

Defects and light leakage are rendered bright on a dark, lightly noisy
background. Every primitive's ground-truth box is tight around the pixels it
raised; soft primitives (dust, reflections) are truncated below a fixed glow
cutoff so that box is well defined.
"""
import hashlib
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import cv2
import numpy as np
from loguru import logger
from pydantic import ValidationError

from app.core.errors import InspectIOError, InvalidArgumentError
from app.schemas.synth import (
    GLOW_CUTOFF,
    PRIMITIVE_CLASS,
    CorpusManifest,
    CrackSpec,
    DustSpec,
    GlassSpec,
    GroundTruth,
    ManifestItem,
    PitSpec,
    ReflectionSpec,
    ScratchSpec,
    SensorSpec,
    TruthEntry,
)
from app.services.imaging import GrayImage, save_image

# free pixels kept between the extents of two primitives
_SPACING = 10
_PLACEMENT_TRIES = 200


@dataclass(frozen=True)
class Profile:
    """Count range per primitive kind, plus a few shape ranges."""

    counts: Dict[str, Tuple[int, int]]
    pit_radius: Tuple[int, int] = (2, 6)
    dust_sigma: Tuple[float, float] = (1.2, 3.5)
    description: str = ""


PROFILES: Dict[str, Profile] = {
    "clean": Profile(
        counts={"sensor_region": (1, 2), "dust": (0, 2)},
        description="sensor regions and sparse dust only",
    ),
    "dust": Profile(
        counts={"sensor_region": (1, 1), "dust": (6, 12), "light_reflection": (0, 1), "scratch": (0, 1), "pit": (1, 2)},
        dust_sigma=(1.2, 2.4),
        description="heavy dust with a few real defects",
    ),
    "scratch": Profile(
        counts={"sensor_region": (1, 1), "scratch": (2, 5), "dust": (0, 2)},
        description="scratches",
    ),
    "pit_crack": Profile(
        counts={"sensor_region": (1, 1), "pit": (2, 4), "crack": (1, 2), "dust": (0, 2)},
        description="pits and cracks",
    ),
    "mixed": Profile(
        counts={
            "sensor_region": (1, 2),
            "scratch": (1, 3),
            "pit": (1, 3),
            "crack": (1, 2),
            "dust": (2, 4),
            "light_reflection": (1, 1),
        },
        description="every region class",
    ),
    "positive": Profile(
        counts={"pit": (1, 1), "dust": (0, 2)},
        pit_radius=(2, 2),
        description="a glass a human would pass: one tiny pit and sparse dust",
    ),
}

# large primitives are placed first
_KIND_ORDER = ("sensor_region", "light_reflection", "scratch", "crack", "pit", "dust")


def _mask_layer(shape: Tuple[int, int], draw) -> np.ndarray:
    mask = np.zeros(shape, dtype=np.uint8)
    draw(mask)
    return mask.astype(np.float64)


def _gaussian_layer(shape, center, sigma_u, sigma_v, angle_deg, amplitude) -> np.ndarray:
    h, w = shape
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    dx, dy = xs - center[0], ys - center[1]
    t = math.radians(angle_deg)
    u = dx * math.cos(t) + dy * math.sin(t)
    v = -dx * math.sin(t) + dy * math.cos(t)
    layer = amplitude * np.exp(-(u**2 / (2 * sigma_u**2) + v**2 / (2 * sigma_v**2)))
    layer[layer < GLOW_CUTOFF] = 0.0
    return layer


def _checker_mask(prim: SensorSpec, seed: int, index: int) -> np.ndarray:
    """Seeded QR-like pattern with a solid one-cell frame."""
    rng = np.random.default_rng([seed, index])
    gw, gh = max(1, prim.w // prim.cell), max(1, prim.h // prim.cell)
    bits = rng.integers(0, 2, size=(gh, gw), dtype=np.uint8)
    bits[0, :] = bits[-1, :] = 1
    bits[:, 0] = bits[:, -1] = 1
    rows = np.minimum(np.arange(prim.h) // prim.cell, gh - 1)
    cols = np.minimum(np.arange(prim.w) // prim.cell, gw - 1)
    return bits[np.ix_(rows, cols)]


def _render(prim, spec: GlassSpec, index: int) -> np.ndarray:
    """Intensity added above the background by one primitive."""
    shape = (spec.height, spec.width)
    amplitude = prim.intensity - spec.background_mean
    if isinstance(prim, ScratchSpec):
        pts = np.array(prim.points, dtype=np.int32).reshape(-1, 1, 2)
        return amplitude * _mask_layer(shape, lambda m: cv2.polylines(m, [pts], False, 1, prim.width, cv2.LINE_8))
    if isinstance(prim, PitSpec):
        return amplitude * _mask_layer(shape, lambda m: cv2.circle(m, prim.center, prim.radius, 1, -1, cv2.LINE_8))
    if isinstance(prim, CrackSpec):
        lines = [np.array(line, dtype=np.int32).reshape(-1, 1, 2) for line in [prim.trunk, *prim.branches]]
        return amplitude * _mask_layer(shape, lambda m: cv2.polylines(m, lines, False, 1, prim.width, cv2.LINE_8))
    if isinstance(prim, DustSpec):
        return _gaussian_layer(shape, prim.center, prim.sigma, prim.sigma, 0.0, amplitude)
    if isinstance(prim, ReflectionSpec):
        return _gaussian_layer(shape, prim.center, prim.sigma_major, prim.sigma_minor, prim.angle, amplitude)
    if isinstance(prim, SensorSpec):
        layer = np.zeros(shape, dtype=np.float64)
        if prim.pattern == "checker":
            patch = _checker_mask(prim, spec.seed, index).astype(np.float64)
        else:
            patch = np.ones((prim.h, prim.w), dtype=np.float64)
        layer[prim.y : prim.y + prim.h, prim.x : prim.x + prim.w] = patch
        return amplitude * layer
    raise InvalidArgumentError(f"defects[{index}]: unknown primitive {type(prim).__name__}")


def _inside(extent, width: int, height: int) -> bool:
    x0, y0, x1, y1 = extent
    return x0 >= 1 and y0 >= 1 and x1 <= width - 2 and y1 <= height - 2


def generate(spec: GlassSpec) -> Tuple[GrayImage, GroundTruth]:
    """Render the spec; identical specs give bitwise-identical images."""
    bg = spec.background_mean
    composite = np.zeros((spec.height, spec.width), dtype=np.float64)
    entries: List[TruthEntry] = []
    for i, prim in enumerate(spec.defects):
        if not _inside(prim.extent(bg), spec.width, spec.height):
            raise InvalidArgumentError(f"defects[{i}] ({prim.kind}) extends outside the {spec.width}x{spec.height} frame")
        layer = _render(prim, spec, i)
        ys, xs = np.nonzero(layer)
        if xs.size == 0:
            raise InvalidArgumentError(f"defects[{i}] ({prim.kind}) renders no pixels")
        x0, y0 = int(xs.min()), int(ys.min())
        bbox = (x0, y0, int(xs.max()) - x0 + 1, int(ys.max()) - y0 + 1)
        if not _inside((x0, y0, x0 + bbox[2] - 1, y0 + bbox[3] - 1), spec.width, spec.height):
            raise InvalidArgumentError(f"defects[{i}] ({prim.kind}) touches the frame border")
        entries.append(TruthEntry(bbox=bbox, region_class=PRIMITIVE_CLASS[prim.kind]))
        np.maximum(composite, layer, out=composite)

    rng = np.random.default_rng(spec.seed)
    noise = rng.normal(0.0, spec.noise_sigma, composite.shape) if spec.noise_sigma > 0 else 0.0
    pixels = np.clip(np.floor(bg + noise + composite + 0.5), 0, 255).astype(np.uint8)
    return GrayImage(pixels), GroundTruth(width=spec.width, height=spec.height, entries=entries)


def _random_primitive(kind: str, rng: np.random.Generator, profile: Profile, width: int, height: int, bg: float):
    cx, cy = rng.uniform(0.05 * width, 0.95 * width), rng.uniform(0.05 * height, 0.95 * height)
    if kind == "scratch":
        length = rng.uniform(30.0, max(31.0, min(140.0, 0.4 * min(width, height))))
        theta = rng.uniform(0.0, math.pi)
        d = np.array([math.cos(theta), math.sin(theta)])
        normal = np.array([-d[1], d[0]])
        bend = rng.uniform(-0.1, 0.1) * length
        c = np.array([cx, cy])
        pts = [c - d * length / 2, c + normal * bend, c + d * length / 2]
        return ScratchSpec(
            points=[(int(round(p[0])), int(round(p[1]))) for p in pts],
            width=int(rng.integers(1, 4)),
            intensity=float(rng.uniform(170.0, 255.0)),
        )
    if kind == "pit":
        return PitSpec(
            center=(int(cx), int(cy)),
            radius=int(rng.integers(profile.pit_radius[0], profile.pit_radius[1] + 1)),
            intensity=float(rng.uniform(150.0, 255.0)),
        )
    if kind == "crack":
        heading = rng.uniform(0.0, 2 * math.pi)
        trunk = [(cx, cy)]
        for _ in range(int(rng.integers(3, 5))):
            heading += rng.uniform(-0.6, 0.6)
            step = rng.uniform(12.0, 25.0)
            trunk.append((trunk[-1][0] + step * math.cos(heading), trunk[-1][1] + step * math.sin(heading)))
        branches = []
        for _ in range(int(rng.integers(1, 3))):
            start = trunk[int(rng.integers(1, len(trunk) - 1))]
            angle = heading + rng.choice([-1.0, 1.0]) * rng.uniform(0.5, 1.2)
            step = rng.uniform(10.0, 20.0)
            branches.append([start, (start[0] + step * math.cos(angle), start[1] + step * math.sin(angle))])
        as_int = lambda line: [(int(round(x)), int(round(y))) for x, y in line]  # noqa: E731
        return CrackSpec(
            trunk=as_int(trunk),
            branches=[as_int(b) for b in branches],
            width=int(rng.integers(1, 3)),
            intensity=float(rng.uniform(150.0, 230.0)),
        )
    if kind == "dust":
        return DustSpec(
            center=(float(cx), float(cy)),
            sigma=float(rng.uniform(*profile.dust_sigma)),
            intensity=float(min(255.0, bg + rng.uniform(60.0, 170.0))),
        )
    if kind == "sensor_region":
        if rng.random() < 0.5:
            w, h = int(rng.integers(16, 57)), int(rng.integers(16, 57))
            pattern, cell = "rect", 3
        else:
            cell = int(rng.integers(3, 5))
            w = h = cell * int(rng.integers(7, 12))
            pattern = "checker"
        return SensorSpec(
            x=int(cx - w / 2), y=int(cy - h / 2), w=w, h=h, pattern=pattern, cell=cell,
            intensity=float(rng.uniform(200.0, 255.0)),
        )
    if kind == "light_reflection":
        return ReflectionSpec(
            center=(float(cx), float(cy)),
            sigma_major=float(rng.uniform(8.0, 18.0)),
            sigma_minor=float(rng.uniform(1.5, 3.0)),
            angle=float(rng.uniform(0.0, 180.0)),
            intensity=float(min(255.0, bg + rng.uniform(40.0, 80.0))),
        )
    raise InvalidArgumentError(f"unknown primitive kind '{kind}'")


def _overlaps(a, b, gap: float) -> bool:
    return not (a[2] + gap < b[0] or b[2] + gap < a[0] or a[3] + gap < b[1] or b[3] + gap < a[1])


def random_spec(
    profile: str,
    seed: int,
    width: int = 640,
    height: int = 480,
    background_mean: float = 30.0,
    noise_sigma: float = 0.5,
) -> GlassSpec:
    """Draw a non-overlapping set of primitives from a named profile."""
    if profile not in PROFILES:
        raise InvalidArgumentError(f"unknown profile '{profile}' (expected one of: {', '.join(PROFILES)})")
    prof = PROFILES[profile]
    rng = np.random.default_rng(seed)
    defects, extents = [], []
    for kind in _KIND_ORDER:
        lo, hi = prof.counts.get(kind, (0, 0))
        for _ in range(int(rng.integers(lo, hi + 1))):
            for _attempt in range(_PLACEMENT_TRIES):
                prim = _random_primitive(kind, rng, prof, width, height, background_mean)
                ext = prim.extent(background_mean)
                grown = (ext[0] - 2, ext[1] - 2, ext[2] + 2, ext[3] + 2)
                if _inside(grown, width, height) and not any(_overlaps(ext, e, _SPACING) for e in extents):
                    defects.append(prim)
                    extents.append(ext)
                    break
            else:
                logger.debug("profile {}: could not place a {} after {} tries", profile, kind, _PLACEMENT_TRIES)
    return GlassSpec(
        width=width, height=height, background_mean=background_mean, noise_sigma=noise_sigma,
        defects=defects, seed=seed,
    )


def item_seed(seed: int, profile: str, index: int) -> int:
    """Per-item seed derived from the corpus seed, the profile and the item index."""
    tag = int.from_bytes(hashlib.sha256(profile.encode("utf-8")).digest()[:4], "little")
    return int(np.random.SeedSequence([seed, tag, index]).generate_state(1)[0])


@dataclass
class CorpusItem:
    id: str
    image_path: Path
    truth: GroundTruth


@dataclass
class Corpus:
    root: Path
    manifest: CorpusManifest
    items: List[CorpusItem] = field(default_factory=list)


def generate_corpus(
    n: int,
    profile: str,
    seed: int,
    out: Union[str, Path],
    name: Optional[str] = None,
    width: int = 640,
    height: int = 480,
    background_mean: float = 30.0,
    noise_sigma: float = 0.5,
    jobs: int = 1,
) -> Path:
    """Write `<out>/<name>/{images,truth}/<id>.*` and `<out>/<name>/manifest.json`."""
    if n < 1:
        raise InvalidArgumentError(f"corpus size must be >= 1, got {n}")
    if profile not in PROFILES:
        raise InvalidArgumentError(f"unknown profile '{profile}' (expected one of: {', '.join(PROFILES)})")
    name = name or profile
    root = Path(out) / name

    def build(index: int) -> ManifestItem:
        item_id = f"{name}-{index:04d}"
        s = item_seed(seed, profile, index)
        image, truth = generate(random_spec(profile, s, width, height, background_mean, noise_sigma))
        truth.source_id, truth.profile = item_id, profile
        image_path = save_image(root / "images" / f"{item_id}.png", image)
        truth_path = root / "truth" / f"{item_id}.json"
        truth_path.parent.mkdir(parents=True, exist_ok=True)
        truth_path.write_text(truth.to_json(), encoding="utf-8")
        return ManifestItem(
            id=item_id,
            seed=s,
            image=f"images/{item_id}.png",
            truth=f"truth/{item_id}.json",
            sha256=hashlib.sha256(image_path.read_bytes()).hexdigest(),
        )

    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        items = list(pool.map(build, range(n)))

    manifest = CorpusManifest(
        name=name, profile=profile, seed=seed, width=width, height=height,
        created=datetime.now(timezone.utc).isoformat(timespec="seconds"), items=items,
    )
    (root / "manifest.json").write_text(manifest.to_json(), encoding="utf-8")
    logger.info("Wrote {} '{}' images to {}", n, profile, root)
    return root


def read_truth(path: Union[str, Path]) -> GroundTruth:
    path = Path(path)
    try:
        return GroundTruth.model_validate_json(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise InspectIOError(f"cannot read ground truth {path}: {exc}") from exc
    except ValidationError as exc:
        raise InspectIOError(f"malformed ground truth {path}: {exc.errors()[0]['msg']}") from exc


def read_manifest(path: Union[str, Path]) -> CorpusManifest:
    path = Path(path)
    try:
        return CorpusManifest.model_validate_json(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise InspectIOError(f"cannot read corpus manifest {path}: {exc}") from exc
    except ValidationError as exc:
        raise InspectIOError(f"malformed corpus manifest {path}: {exc.errors()[0]['msg']}") from exc


def load_corpus(root: Union[str, Path]) -> Corpus:
    root = Path(root)
    manifest_path = root / "manifest.json"
    if not manifest_path.is_file():
        raise InspectIOError(f"no manifest.json in corpus {root}")
    manifest = read_manifest(manifest_path)
    items = [CorpusItem(m.id, root / m.image, read_truth(root / m.truth)) for m in manifest.items]
    return Corpus(root=root, manifest=manifest, items=items)
