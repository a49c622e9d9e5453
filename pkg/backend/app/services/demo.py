"""
Demo workspace builder

Generates a ground-truthed training corpus, runs stage I over it, labels a
small per-class sample of the crops from the ground truth (standing in for a
human labeler) and generates the held-out evaluation corpora.
"""
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Union

import numpy as np
from loguru import logger

from app.core.config import PipelineConfig
from app.schemas.classes import RegionClass
from app.schemas.labels import LabelSet
from app.services.classify import write_labels
from app.services.imaging import load_image
from app.services.proposals import extract_crops, iou, propose, save_crop, write_proposals
from app.services.synth import generate_corpus, load_corpus

# one tenth of a manual labeling budget, per class; listed in the customary
# reporting order (LR, S, P, C, D, SR), not the wire-index order
DEMO_LABEL_COUNTS: Dict[RegionClass, int] = {
    RegionClass.LIGHT_REFLECTION: 3,
    RegionClass.SCRATCH: 27,
    RegionClass.PIT: 21,
    RegionClass.CRACK: 28,
    RegionClass.DUST: 15,
    RegionClass.SENSOR_REGION: 13,
}
DEMO_TRAIN_SIZE = 30
HELDOUT_PROFILES = ("clean", "dust", "scratch", "pit_crack")
HELDOUT_SIZE = 10
HELDOUT_MIXED_SIZE = 40
# a crop takes the class of the truth box it overlaps at least this much
LABEL_IOU = 0.5


@dataclass
class DemoLayout:
    root: Path
    train_corpus: Path
    crops: Path
    proposals: Path
    labels: Path
    heldout: Dict[str, Path] = field(default_factory=dict)
    label_counts: Dict[str, int] = field(default_factory=dict)


def build_demo(
    out: Union[str, Path],
    config: Optional[PipelineConfig] = None,
    seed: int = 0,
    train_size: int = DEMO_TRAIN_SIZE,
    heldout_size: int = HELDOUT_SIZE,
    heldout_mixed_size: int = HELDOUT_MIXED_SIZE,
) -> DemoLayout:
    config = config or PipelineConfig()
    synth = config.synth
    root = Path(out)
    corpus_kwargs = dict(
        width=synth.width, height=synth.height,
        background_mean=synth.background_mean, noise_sigma=synth.noise_sigma, jobs=config.jobs,
    )

    train_root = generate_corpus(train_size, "mixed", seed, root / "corpora", name="demo-train", **corpus_kwargs)
    corpus = load_corpus(train_root)
    margin = config.truth_margin

    crops_dir = root / "crops"
    regions_all = []
    candidates: Dict[RegionClass, List[str]] = {c: [] for c in RegionClass}
    for item in corpus.items:
        image = load_image(item.image_path, luma=config.proposals.luma)
        regions = propose(image, config.proposals, item.id, jobs=config.jobs)
        regions_all.extend(regions)
        truth_boxes = [
            (e.region_class, (e.bbox[0] - margin, e.bbox[1] - margin, e.bbox[2] + 2 * margin, e.bbox[3] + 2 * margin))
            for e in item.truth.entries
        ]
        for crop in extract_crops(image, regions):
            save_crop(crops_dir, crop)
            scored = [(iou(crop.origin.bbox, box), cls) for cls, box in truth_boxes]
            best = max(scored, default=(0.0, None), key=lambda s: s[0])
            if best[1] is not None and best[0] >= LABEL_IOU:
                candidates[best[1]].append(crop.crop_id)
    proposals_path = write_proposals(root / "proposals.txt", regions_all)

    rng = np.random.default_rng(seed)
    entries: Dict[str, RegionClass] = {}
    for cls in RegionClass:
        pool = sorted(candidates[cls])
        wanted = DEMO_LABEL_COUNTS[cls]
        if len(pool) < wanted:
            logger.warning("Only {} {} crops available for the demo labels (wanted {})", len(pool), cls.wire_name, wanted)
        for idx in sorted(rng.permutation(len(pool))[:wanted].tolist()):
            entries[pool[idx]] = cls
    labels = LabelSet(entries=entries, provenance="human")
    labels_path = write_labels(root / "labels.csv", labels)

    heldout = {
        profile: generate_corpus(heldout_size, profile, seed + 1, root / "heldout", name=profile, **corpus_kwargs)
        for profile in HELDOUT_PROFILES
    }
    heldout["mixed"] = generate_corpus(
        heldout_mixed_size, "mixed", seed + 1, root / "heldout-mixed", name="mixed", **corpus_kwargs
    )

    layout = DemoLayout(
        root=root,
        train_corpus=train_root,
        crops=crops_dir,
        proposals=proposals_path,
        labels=labels_path,
        heldout=heldout,
        label_counts={c.wire_name: n for c, n in labels.counts().items()},
    )
    logger.info(
        "Demo workspace ready in {}: {} proposals, {} labeled crops {}",
        root, len(regions_all), len(labels), layout.label_counts,
    )
    return layout
