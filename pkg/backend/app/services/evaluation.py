"""
Detection matching and confusion metrics

Findings are matched one-to-one to ground-truth boxes greedily by descending
IoU. Matched pairs count by (finding verdict, truth class projection);
unmatched defect truths are misses and unmatched defect findings are false
alarms.

Region accounting counts a region as positive when it is judged correctly:
a matched pair is TP when the finding's verdict agrees with its truth class
and FP otherwise, every unmatched truth is FN, and unmatched findings are FP
or TN by verdict.
"""
import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Literal, Optional, Sequence, Tuple, Union

import numpy as np
from loguru import logger
from pydantic import ValidationError

from app.core.errors import InspectIOError, InvalidArgumentError
from app.schemas.classes import BinaryVerdict, RegionClass
from app.schemas.metrics import ConfusionCounts, MetricSet
from app.schemas.regions import BBox
from app.schemas.report import InspectionReport
from app.schemas.synth import GroundTruth
from app.services.proposals import iou
from app.services.synth import read_manifest, read_truth

CSV_COLUMNS = (
    "sample", "regions", "types", "tp", "fn", "tn", "fp",
    "sensitivity", "specificity", "precision", "accuracy",
)
UNDEFINED = "undefined"

Accounting = Literal["defect", "region"]


def _ratio(num: int, den: int) -> Optional[float]:
    return num / den if den else None


def metrics(c: ConfusionCounts) -> MetricSet:
    if c.total == 0:
        raise InvalidArgumentError("metrics need at least one counted region (all counts are zero)")
    return MetricSet(
        sensitivity=_ratio(c.tp, c.tp + c.fn),
        specificity=_ratio(c.tn, c.tn + c.fp),
        precision=_ratio(c.tp, c.tp + c.fp),
        accuracy=_ratio(c.tp + c.tn, c.total),
    )


@dataclass
class MatchResult:
    counts: ConfusionCounts
    # rows: truth class, columns: reported class
    matrix: np.ndarray
    # (finding index, truth index, IoU)
    pairs: List[Tuple[int, int, float]] = field(default_factory=list)


def _grow(box: BBox, margin: int) -> BBox:
    x, y, w, h = box
    return (x - margin, y - margin, w + 2 * margin, h + 2 * margin)


def match(
    report: InspectionReport,
    truth: GroundTruth,
    iou_thresh: float = 0.3,
    truth_margin: int = 0,
    accounting: Accounting = "defect",
) -> MatchResult:
    """Greedy one-to-one matching; ties on IoU go to the lower finding, then truth, index.

    Greedy is not a maximum-cardinality assignment: a finding overlapping two
    truths takes the higher-IoU one even when the other choice would match more
    pairs. The greedy result is the contract.
    """
    if accounting not in ("defect", "region"):
        raise InvalidArgumentError(f"accounting must be 'defect' or 'region', got '{accounting}'")
    if not 0.0 < iou_thresh <= 1.0:
        raise InvalidArgumentError(f"iou threshold must lie in (0, 1], got {iou_thresh}")
    if truth_margin < 0:
        raise InvalidArgumentError(f"truth margin must be >= 0, got {truth_margin}")

    truth_boxes = [_grow(e.bbox, truth_margin) for e in truth.entries]
    candidates = []
    for i, finding in enumerate(report.findings):
        for j, box in enumerate(truth_boxes):
            overlap = iou(finding.bbox, box)
            if overlap >= iou_thresh:
                candidates.append((-overlap, i, j))
    candidates.sort()

    used_f, used_t = set(), set()
    pairs: List[Tuple[int, int, float]] = []
    for neg, i, j in candidates:
        if i in used_f or j in used_t:
            continue
        used_f.add(i)
        used_t.add(j)
        pairs.append((i, j, -neg))

    tp = fn = tn = fp = 0
    matrix = np.zeros((len(RegionClass), len(RegionClass)), dtype=np.int64)
    for i, j, _ in pairs:
        finding, entry = report.findings[i], truth.entries[j]
        said_defect = finding.verdict is BinaryVerdict.DEFECT
        is_defect = entry.region_class.is_defect
        if accounting == "region":
            if said_defect == is_defect:
                tp += 1
            else:
                fp += 1
        elif said_defect and is_defect:
            tp += 1
        elif said_defect:
            fp += 1
        elif is_defect:
            fn += 1
        else:
            tn += 1
        matrix[int(entry.region_class), int(finding.region_class)] += 1

    region = accounting == "region"
    fn += sum(1 for j, e in enumerate(truth.entries) if j not in used_t and (region or e.region_class.is_defect))
    for i, f in enumerate(report.findings):
        if i in used_f:
            continue
        if f.verdict is BinaryVerdict.DEFECT:
            fp += 1
        elif region:
            tn += 1
    return MatchResult(ConfusionCounts(tp=tp, fn=fn, tn=tn, fp=fp), matrix, pairs)


@dataclass
class SampleRow:
    """One line of the evaluation table: a corpus (or a single image)."""

    sample: str
    regions: int
    types: str
    counts: ConfusionCounts
    metrics: Optional[MetricSet]
    matrix: np.ndarray

    def as_csv(self) -> List[str]:
        m = self.metrics or MetricSet()

        def fmt(v: Optional[float]) -> str:
            return UNDEFINED if v is None else f"{v:.4f}"

        c = self.counts
        return [
            self.sample, str(self.regions), self.types, str(c.tp), str(c.fn), str(c.tn), str(c.fp),
            fmt(m.sensitivity), fmt(m.specificity), fmt(m.precision), fmt(m.accuracy),
        ]


def region_types(truths: Sequence[GroundTruth]) -> str:
    """Abbreviations of the classes present, in wire-index order (e.g. 'S+D+SR')."""
    present = {e.region_class for t in truths for e in t.entries}
    return "+".join(c.abbreviation for c in RegionClass if c in present)


def _summarise(sample: str, truths: Sequence[GroundTruth], results: Sequence[MatchResult]) -> SampleRow:
    counts = sum((r.counts for r in results), ConfusionCounts())
    matrix = sum((r.matrix for r in results), np.zeros((len(RegionClass), len(RegionClass)), dtype=np.int64))
    if counts.total == 0:
        logger.warning("Sample '{}' has no counted regions; its metrics are undefined", sample)
        metric_set = None
    else:
        metric_set = metrics(counts)
    return SampleRow(
        sample=sample,
        regions=sum(len(t.entries) for t in truths),
        types=region_types(truths),
        counts=counts,
        metrics=metric_set,
        matrix=matrix,
    )


def read_report(path: Union[str, Path]) -> InspectionReport:
    path = Path(path)
    try:
        return InspectionReport.from_json(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise InspectIOError(f"cannot read report {path}: {exc}") from exc
    except ValidationError as exc:
        raise InspectIOError(f"malformed report {path}: {exc.errors()[0]['msg']}") from exc


def _index_reports(reports_dir: Path) -> Dict[str, Path]:
    index: Dict[str, Path] = {}
    for path in sorted(reports_dir.rglob("*.json")):
        stem = path.name[: -len(".report.json")] if path.name.endswith(".report.json") else path.stem
        if stem in index:
            raise InvalidArgumentError(f"two reports for '{stem}': {index[stem]} and {path}")
        index[stem] = path
    return index


def _truth_samples(truth_dir: Path) -> List[Tuple[str, List[Path]]]:
    """One sample per corpus manifest below truth_dir, else one sample of all truth files."""
    samples = []
    for manifest_path in sorted(truth_dir.rglob("manifest.json")):
        manifest = read_manifest(manifest_path)
        samples.append((manifest.name, [manifest_path.parent / item.truth for item in manifest.items]))
    if not samples:
        files = sorted(truth_dir.rglob("*.json"))
        if files:
            samples.append((truth_dir.name, files))
    return samples


def evaluate_dirs(
    reports_dir: Union[str, Path],
    truth_dir: Union[str, Path],
    iou_thresh: float = 0.3,
    truth_margin: int = 0,
    per_image: bool = False,
    jobs: int = 1,
    accounting: Accounting = "defect",
) -> List[SampleRow]:
    """Match every report to its ground truth by source id and tabulate per sample."""
    reports_dir, truth_dir = Path(reports_dir), Path(truth_dir)
    for d in (reports_dir, truth_dir):
        if not d.is_dir():
            raise InspectIOError(f"not a directory: {d}")
    samples = _truth_samples(truth_dir)
    if not samples:
        raise InvalidArgumentError(f"no ground truth found under {truth_dir}")
    reports = _index_reports(reports_dir)
    if not reports:
        raise InvalidArgumentError(f"no reports found under {reports_dir}")

    def evaluate_one(truth_path: Path) -> Tuple[GroundTruth, MatchResult]:
        truth = read_truth(truth_path)
        source_id = truth.source_id or truth_path.stem
        if source_id not in reports:
            raise InspectIOError(f"no report for '{source_id}' under {reports_dir}")
        report = read_report(reports[source_id])
        return truth, match(report, truth, iou_thresh, truth_margin, accounting)

    rows: List[SampleRow] = []
    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        for name, truth_paths in samples:
            pairs = list(pool.map(evaluate_one, truth_paths))
            truths = [t for t, _ in pairs]
            results = [r for _, r in pairs]
            if per_image:
                rows.extend(
                    _summarise(t.source_id or p.stem, [t], [r]) for p, t, r in zip(truth_paths, truths, results)
                )
            rows.append(_summarise(name, truths, results))
            logger.info("Evaluated sample '{}': {} images, {}", name, len(truths), rows[-1].counts)
    return rows


def write_table(path: Union[str, Path], rows: Sequence[SampleRow]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for row in rows:
            writer.writerow(row.as_csv())
    return path


def write_confusion(path: Union[str, Path], row: SampleRow) -> Path:
    """Per-class matrix of one sample: truth class per row, reported class per column."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    names = [c.wire_name for c in RegionClass]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["truth\\reported", *names])
        for cls, counts in zip(names, row.matrix.tolist()):
            writer.writerow([cls, *counts])
    return path
