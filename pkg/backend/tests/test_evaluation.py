"""
Tests for detection matching, confusion metrics and the evaluation table
"""
import pytest

from app.core.errors import InspectIOError, InvalidArgumentError
from app.schemas.classes import BinaryVerdict, RegionClass
from app.schemas.metrics import ConfusionCounts
from app.schemas.report import Finding, InspectionReport
from app.schemas.synth import GroundTruth, TruthEntry
from app.services.evaluation import (
    CSV_COLUMNS,
    evaluate_dirs,
    match,
    metrics,
    region_types,
    write_confusion,
    write_table,
)


def finding(bbox, region_class=RegionClass.SCRATCH, verdict=None):
    return Finding(
        bbox=bbox,
        region_class=region_class,
        verdict=verdict or region_class.verdict,
        votes=[0.0] * 6,
        defect_vote=0.5,
        color=region_class.color,
    )


def truth_of(*entries, source_id="img"):
    return GroundTruth(
        source_id=source_id, width=200, height=200,
        entries=[TruthEntry(bbox=b, region_class=c) for b, c in entries],
    )


def report_of(*findings, source_id="img"):
    return InspectionReport(source_id=source_id, width=200, height=200, findings=list(findings))


class TestMetrics:
    @pytest.mark.parametrize(
        "counts, expected",
        [
            ((181, 0, 9, 1), (1.0, 0.9, 0.9945, 0.9947)),
            ((126, 0, 1, 7), (1.0, 0.125, 0.9473, 0.9477)),
            ((177, 0, 0, 58), (1.0, 0.0, 0.7531, 0.7531)),
        ],
    )
    def test_known_sample_rows(self, counts, expected):
        tp, fn, tn, fp = counts
        m = metrics(ConfusionCounts(tp=tp, fn=fn, tn=tn, fp=fp))
        got = (m.sensitivity, m.specificity, m.precision, m.accuracy)
        for value, want in zip(got, expected):
            assert value == pytest.approx(want, abs=1e-4)

    def test_scale_free(self, rng):
        for _ in range(50):
            tp, fn, tn, fp = (int(v) for v in rng.integers(0, 50, size=4))
            if tp + fn + tn + fp == 0:
                continue
            k = int(rng.integers(2, 9))
            a = metrics(ConfusionCounts(tp=tp, fn=fn, tn=tn, fp=fp))
            b = metrics(ConfusionCounts(tp=k * tp, fn=k * fn, tn=k * tn, fp=k * fp))
            for x, y in zip(a.model_dump().values(), b.model_dump().values()):
                assert x == y or x == pytest.approx(y)

    def test_zero_denominator_is_undefined(self):
        m = metrics(ConfusionCounts(tn=4))
        assert m.sensitivity is None and m.precision is None
        assert m.specificity == 1.0 and m.accuracy == 1.0

    def test_all_zero_counts(self):
        with pytest.raises(InvalidArgumentError):
            metrics(ConfusionCounts())


class TestMatch:
    def test_exact_hit(self):
        result = match(report_of(finding((10, 10, 20, 20))), truth_of(((10, 10, 20, 20), RegionClass.SCRATCH)))
        assert result.counts == ConfusionCounts(tp=1)
        assert result.pairs == [(0, 0, 1.0)]
        assert result.matrix[RegionClass.SCRATCH, RegionClass.SCRATCH] == 1

    def test_miss_and_false_alarm(self):
        result = match(
            report_of(finding((150, 150, 10, 10), RegionClass.PIT)),
            truth_of(((10, 10, 20, 20), RegionClass.CRACK)),
        )
        assert result.counts == ConfusionCounts(fn=1, fp=1)

    def test_unmatched_background_is_not_counted(self):
        result = match(
            report_of(finding((150, 150, 10, 10), RegionClass.DUST)),
            truth_of(((10, 10, 20, 20), RegionClass.SENSOR_REGION)),
        )
        assert result.counts.total == 0

    def test_verdict_decides_not_class(self):
        # a background verdict on a real scratch is a miss even if DC says scratch
        f = finding((10, 10, 20, 20), RegionClass.SCRATCH, BinaryVerdict.BACKGROUND)
        result = match(report_of(f), truth_of(((10, 10, 20, 20), RegionClass.SCRATCH)))
        assert result.counts == ConfusionCounts(fn=1)

    def test_dust_called_defect_is_false_positive(self):
        f = finding((10, 10, 20, 20), RegionClass.PIT)
        result = match(report_of(f), truth_of(((10, 10, 20, 20), RegionClass.DUST)))
        assert result.counts == ConfusionCounts(fp=1)
        assert result.matrix[RegionClass.DUST, RegionClass.PIT] == 1

    def test_one_to_one(self):
        findings = [finding((10, 10, 20, 20)), finding((11, 10, 20, 20))]
        result = match(report_of(*findings), truth_of(((10, 10, 20, 20), RegionClass.SCRATCH)))
        assert result.pairs[0][:2] == (0, 0)
        assert result.counts == ConfusionCounts(tp=1, fp=1)

    def test_threshold_is_inclusive(self):
        # IoU of these two boxes is exactly 1/3
        report = report_of(finding((0, 0, 10, 10)))
        truth = truth_of(((5, 0, 10, 10), RegionClass.PIT))
        assert match(report, truth, iou_thresh=1 / 3).counts.tp == 1
        assert match(report, truth, iou_thresh=0.34).counts.tp == 0

    def test_truth_margin_grows_the_truth(self):
        report = report_of(finding((7, 7, 16, 16)))
        truth = truth_of(((10, 10, 10, 10), RegionClass.PIT))
        assert match(report, truth, iou_thresh=0.5).counts == ConfusionCounts(tp=0, fn=1, fp=1)
        assert match(report, truth, iou_thresh=0.5, truth_margin=3).counts == ConfusionCounts(tp=1)

    def test_bad_threshold(self):
        with pytest.raises(InvalidArgumentError):
            match(report_of(), truth_of(), iou_thresh=0.0)

    def test_counts_are_conserved(self, rng):
        classes = list(RegionClass)
        for _ in range(200):
            def box():
                x, y = rng.integers(0, 150, size=2)
                w, h = rng.integers(3, 40, size=2)
                return (int(x), int(y), int(w), int(h))

            findings = [
                finding(box(), classes[int(rng.integers(6))], BinaryVerdict(str(rng.choice(["defect", "background"]))))
                for _ in range(int(rng.integers(0, 8)))
            ]
            truth = truth_of(*[(box(), classes[int(rng.integers(6))]) for _ in range(int(rng.integers(0, 8)))])
            result = match(report_of(*findings), truth, iou_thresh=0.2)
            c = result.counts
            assert c.tp + c.fn == sum(e.region_class.is_defect for e in truth.entries)
            assert c.tp + c.fp == sum(f.verdict is BinaryVerdict.DEFECT for f in findings)
            assert len({i for i, _, _ in result.pairs}) == len(result.pairs) == len({j for _, j, _ in result.pairs})
            assert all(v >= 0.2 for _, _, v in result.pairs)
            assert int(result.matrix.sum()) == len(result.pairs)

    def test_matches_best_assignment_when_overlaps_are_sparse(self, rng):
        # each finding overlaps at most one truth box, so greedy equals the maximum matching
        for _ in range(100):
            cells = rng.permutation(16)[: int(rng.integers(1, 9))]
            truths, findings, expected = [], [], 0
            for cell in cells:
                x, y = 40 * int(cell % 4), 40 * int(cell // 4)
                has_truth, has_finding = rng.random() < 0.7, rng.random() < 0.7
                if has_truth:
                    truths.append(((x + 5, y + 5, 20, 20), RegionClass.CRACK))
                if has_finding:
                    findings.append(finding((x + 6, y + 5, 20, 20), RegionClass.CRACK))
                expected += has_truth and has_finding
            result = match(report_of(*findings), truth_of(*truths))
            assert len(result.pairs) == expected

    def test_greedy_is_not_maximum_cardinality(self):
        # the contract is greedy by IoU: f0 takes t0 (0.82) although pairing
        # f0-t1 and f1-t0 would match both truths
        f0, f1 = finding((11, 0, 10, 10), RegionClass.CRACK), finding((7, 0, 10, 10), RegionClass.CRACK)
        truth = truth_of(((10, 0, 10, 10), RegionClass.CRACK), ((14, 0, 10, 10), RegionClass.CRACK))
        result = match(report_of(f0, f1), truth)
        assert [(i, j) for i, j, _ in result.pairs] == [(0, 0)]
        assert result.counts == ConfusionCounts(tp=1, fn=1, fp=1)


class TestRegionAccounting:
    def test_every_region_is_counted(self):
        report = report_of(
            finding((10, 10, 20, 20), RegionClass.DUST),
            finding((100, 100, 10, 10), RegionClass.PIT),
            finding((150, 150, 10, 10), RegionClass.DUST),
        )
        truth = truth_of(((10, 10, 20, 20), RegionClass.DUST), ((50, 150, 10, 10), RegionClass.SENSOR_REGION))
        assert match(report, truth, accounting="region").counts == ConfusionCounts(tp=1, fn=1, tn=1, fp=1)
        assert match(report, truth).counts == ConfusionCounts(tn=1, fp=1)

    def test_wrong_verdict_on_a_defect_is_a_false_positive(self):
        f = finding((10, 10, 20, 20), RegionClass.SCRATCH, BinaryVerdict.BACKGROUND)
        result = match(report_of(f), truth_of(((10, 10, 20, 20), RegionClass.SCRATCH)), accounting="region")
        assert result.counts == ConfusionCounts(fp=1)

    def test_clean_image_precision_is_defined(self):
        report = report_of(finding((10, 10, 20, 20), RegionClass.SENSOR_REGION))
        truth = truth_of(((10, 10, 20, 20), RegionClass.SENSOR_REGION))
        assert metrics(match(report, truth, accounting="region").counts).precision == 1.0

    def test_unknown_accounting(self):
        with pytest.raises(InvalidArgumentError):
            match(report_of(), truth_of(), accounting="pixels")


def test_region_types_in_class_order():
    t = truth_of(((0, 0, 5, 5), RegionClass.SENSOR_REGION), ((9, 9, 5, 5), RegionClass.SCRATCH),
                 ((20, 20, 5, 5), RegionClass.DUST))
    assert region_types([t]) == "S+D+SR"


class TestEvaluateDirs:
    def write_pair(self, reports, truths, source_id, truth_entries, findings):
        (truths / f"{source_id}.json").write_text(truth_of(*truth_entries, source_id=source_id).to_json())
        (reports / f"{source_id}.json").write_text(report_of(*findings, source_id=source_id).to_json())

    def test_table(self, tmp_path):
        reports, truths = tmp_path / "reports", tmp_path / "truth"
        reports.mkdir()
        truths.mkdir()
        self.write_pair(reports, truths, "a", [((10, 10, 20, 20), RegionClass.SCRATCH)], [finding((10, 10, 20, 20))])
        self.write_pair(
            reports, truths, "b",
            [((10, 10, 20, 20), RegionClass.DUST)],
            [finding((10, 10, 20, 20), RegionClass.DUST), finding((100, 100, 5, 5), RegionClass.PIT)],
        )
        rows = evaluate_dirs(reports, truths, per_image=True)
        assert [r.sample for r in rows] == ["a", "b", "truth"]
        total = rows[-1]
        assert total.counts == ConfusionCounts(tp=1, tn=1, fp=1)
        assert total.regions == 2 and total.types == "S+D"
        path = write_table(tmp_path / "table.csv", rows)
        lines = path.read_text().splitlines()
        assert lines[0] == ",".join(CSV_COLUMNS)
        assert lines[-1] == "truth,2,S+D,1,0,1,1,1.0000,0.5000,0.5000,0.6667"
        assert "undefined" in lines[1]

        confusion = write_confusion(tmp_path / "confusion.csv", total).read_text().splitlines()
        assert confusion[0].startswith("truth\\reported,scratch")
        assert confusion[1] == "scratch,1,0,0,0,0,0"

    def test_missing_report(self, tmp_path):
        reports, truths = tmp_path / "reports", tmp_path / "truth"
        reports.mkdir()
        truths.mkdir()
        self.write_pair(reports, truths, "a", [], [])
        (truths / "b.json").write_text(truth_of(source_id="b").to_json())
        with pytest.raises(InspectIOError, match="'b'"):
            evaluate_dirs(reports, truths)

    def test_malformed_report(self, tmp_path):
        reports, truths = tmp_path / "reports", tmp_path / "truth"
        reports.mkdir()
        truths.mkdir()
        self.write_pair(reports, truths, "a", [], [])
        text = (reports / "a.json").read_text()
        (reports / "a.json").write_text(text[: len(text) // 2])
        with pytest.raises(InspectIOError, match="malformed report"):
            evaluate_dirs(reports, truths)

    def test_malformed_truth(self, tmp_path):
        reports, truths = tmp_path / "reports", tmp_path / "truth"
        reports.mkdir()
        truths.mkdir()
        self.write_pair(reports, truths, "a", [], [])
        (truths / "a.json").write_text('{"source_id": "a", "width": "wide"}')
        with pytest.raises(InspectIOError, match="malformed ground truth"):
            evaluate_dirs(reports, truths)

    def test_region_accounting_through_dirs(self, tmp_path):
        reports, truths = tmp_path / "reports", tmp_path / "truth"
        reports.mkdir()
        truths.mkdir()
        self.write_pair(
            reports, truths, "a",
            [((10, 10, 20, 20), RegionClass.SENSOR_REGION)],
            [finding((10, 10, 20, 20), RegionClass.SENSOR_REGION)],
        )
        (row,) = evaluate_dirs(reports, truths, accounting="region")
        assert row.counts == ConfusionCounts(tp=1)
        assert row.metrics.precision == 1.0

    def test_empty_directories(self, tmp_path):
        (tmp_path / "r").mkdir()
        (tmp_path / "t").mkdir()
        with pytest.raises(InvalidArgumentError):
            evaluate_dirs(tmp_path / "r", tmp_path / "t")
