"""
Stages III-IV assembly: label files, BD/DC training and image inspection
"""
import csv
from dataclasses import dataclass
from pathlib import Path
from typing import List, Mapping, Optional, Sequence, Union

import cv2
import numpy as np
from loguru import logger

from app.core.config import PipelineConfig
from app.core.errors import ContractViolationError, InspectIOError, InvalidArgumentError
from app.schemas.classes import COLOR_BGR, BinaryVerdict, RegionClass
from app.schemas.forest import ForestModel, ForestParams
from app.schemas.labels import LabelSet
from app.schemas.report import Finding, InspectionReport
from app.services import forest
from app.services.embedding import EmbeddingProvider, embed_all
from app.services.imaging import GrayImage
from app.services.proposals import extract_crops, propose

BD_TAG = "BD"
DC_TAG = "DC"
BD_MODEL_NAME = "bd.model.json"
DC_MODEL_NAME = "dc.model.json"


def read_labels(path: Union[str, Path], provenance: str = "human") -> LabelSet:
    """CSV `crop_id,class_name`; a header row is optional."""
    path = Path(path)
    entries = {}
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            for lineno, row in enumerate(csv.reader(fh), start=1):
                if not row or not "".join(row).strip():
                    continue
                if len(row) != 2:
                    raise InvalidArgumentError(f"{path}:{lineno}: expected 'crop_id,class_name'")
                crop_id, name = (cell.strip() for cell in row)
                if lineno == 1 and (crop_id, name) == ("crop_id", "class_name"):
                    continue
                if crop_id in entries:
                    raise InvalidArgumentError(f"{path}:{lineno}: duplicate crop id '{crop_id}'")
                try:
                    entries[crop_id] = RegionClass.from_name(name)
                except ValueError as exc:
                    raise InvalidArgumentError(f"{path}:{lineno}: {exc}") from exc
    except OSError as exc:
        raise InspectIOError(f"cannot read label file {path}: {exc}") from exc
    return LabelSet(entries=entries, provenance=provenance)


def write_labels(path: Union[str, Path], labels: LabelSet) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["crop_id", "class_name"])
        for crop_id in sorted(labels.entries):
            writer.writerow([crop_id, labels.entries[crop_id].wire_name])
    return path


def train_bd(
    features: np.ndarray, pseudo: Sequence[BinaryVerdict], params: Optional[ForestParams] = None, jobs: int = 1
) -> ForestModel:
    """Two-class background (0) / defect (1) forest on pseudo-labels."""
    y = np.array([BinaryVerdict(v).index for v in pseudo], dtype=np.int64)
    if y.size != np.asarray(features).shape[0]:
        raise InvalidArgumentError("need one pseudo-label per feature vector")
    if np.unique(y).size < 2:
        raise InvalidArgumentError("BD training needs both defect and background examples")
    return forest.train((features, y), params, class_count=2, tag=BD_TAG, jobs=jobs)


def train_dc(
    labeled: LabelSet,
    features: Mapping[str, np.ndarray],
    params: Optional[ForestParams] = None,
    jobs: int = 1,
) -> ForestModel:
    """Six-class forest on human labels; features are looked up by crop id."""
    if labeled.provenance != "human":
        raise InvalidArgumentError("DC training uses human labels only")
    if not labeled.entries:
        raise InvalidArgumentError("DC training needs at least one labeled crop")
    missing = [cid for cid in labeled.entries if cid not in features]
    if missing:
        raise InvalidArgumentError(f"{len(missing)} labeled crops have no features (e.g. '{missing[0]}')")
    ids = sorted(labeled.entries)
    y = np.array([int(labeled.entries[cid]) for cid in ids], dtype=np.int64)
    if np.unique(y).size < 2:
        raise InvalidArgumentError("DC training needs at least two distinct classes")
    x = np.stack([np.asarray(features[cid], dtype=np.float64) for cid in ids])
    return forest.train((x, y), params, class_count=len(RegionClass), tag=DC_TAG, jobs=jobs)


def check_models(bd: ForestModel, dc: ForestModel, provider: EmbeddingProvider) -> None:
    if bd.class_count != 2:
        raise ContractViolationError(f"BD model has {bd.class_count} classes, expected 2")
    if dc.class_count != len(RegionClass):
        raise ContractViolationError(f"DC model has {dc.class_count} classes, expected {len(RegionClass)}")
    for name, model in (("BD", bd), ("DC", dc)):
        if model.dim != provider.dim:
            raise ContractViolationError(
                f"{name} model expects {model.dim}-dim features but provider {provider.provider_id} emits {provider.dim}"
            )


@dataclass
class Inspector:
    """Runs the four stages on one image with fixed models and provider."""

    bd: ForestModel
    dc: ForestModel
    provider: EmbeddingProvider
    config: PipelineConfig

    def __post_init__(self):
        check_models(self.bd, self.dc, self.provider)

    def inspect(self, image: GrayImage, source_id: str = "") -> InspectionReport:
        cfg = self.config
        regions = propose(image, cfg.proposals, source_id, jobs=cfg.jobs)
        report = InspectionReport(source_id=source_id, width=image.width, height=image.height)
        if not regions:
            logger.info("{}: no proposals survived stage I", source_id or "image")
            return report

        crops = extract_crops(image, regions)
        x = embed_all(crops, self.provider, cfg.embedding.cache_dir, jobs=cfg.jobs)
        bd_class, bd_votes = forest.predict_many(self.bd, x)
        verdicts = [BinaryVerdict.from_index(int(c)) for c in bd_class]

        in_scope = [
            i for i, v in enumerate(verdicts)
            if cfg.classify.dc_scope == "all" or v is BinaryVerdict.DEFECT
        ]
        dc_class, dc_votes = forest.predict_many(self.dc, x[in_scope])

        findings: List[Finding] = []
        for j, i in enumerate(in_scope):
            region_class = RegionClass(int(dc_class[j]))
            findings.append(
                Finding(
                    bbox=regions[i].bbox,
                    region_class=region_class,
                    verdict=verdicts[i],
                    votes=dc_votes[j].tolist(),
                    defect_vote=float(bd_votes[i][BinaryVerdict.DEFECT.index]),
                    color=region_class.color,
                )
            )
        report.findings = findings
        logger.info(
            "{}: {} proposals, {} findings ({} judged defect)",
            source_id or "image", len(regions), len(findings),
            sum(f.verdict is BinaryVerdict.DEFECT for f in findings),
        )
        return report


def inspect(
    image: GrayImage,
    bd: ForestModel,
    dc: ForestModel,
    config: PipelineConfig,
    provider: EmbeddingProvider,
    source_id: str = "",
) -> InspectionReport:
    return Inspector(bd, dc, provider, config).inspect(image, source_id)


def render_report(image: GrayImage, report: InspectionReport, path: Union[str, Path]) -> Path:
    """Draw every finding's box in its report color on a BGR copy of the image."""
    canvas = cv2.cvtColor(image.pixels, cv2.COLOR_GRAY2BGR)
    for finding in report.findings:
        x0, y0, w, h = finding.bbox
        cv2.rectangle(canvas, (x0, y0), (x0 + w - 1, y0 + h - 1), COLOR_BGR[finding.color], 1)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if not cv2.imwrite(str(path), canvas):
        raise InspectIOError(f"cannot write rendered report {path}")
    return path
