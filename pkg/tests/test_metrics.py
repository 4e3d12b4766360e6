import io

import numpy as np
import pandas as pd
import pytest
from rich.console import Console

from conftest import depth_field, disparity_field
from s3_core import DomainError, RepresentationError
from s3_metrics import evaluate, improvement, render_table, reports_to_frame, write_reports


class TestEvaluate:
    def test_perfect_prediction(self):
        gt = depth_field([[10.0, 20.0], [30.0, 40.0]])
        report = evaluate(gt, gt)
        assert (report.avg, report.rms, report.rel) == (0.0, 0.0, 0.0)
        assert report.error_rates == (0.0,) * 5
        assert report.deltas == (100.0, 100.0, 100.0)
        assert report.pixels == 4

    def test_constant_offset_uses_strict_thresholds(self):
        gt = depth_field([[10.0, 20.0], [30.0, 40.0]])
        report = evaluate(depth_field(gt.values + 3.0), gt)
        assert report.avg == pytest.approx(3.0)
        assert report.rms == pytest.approx(3.0)
        assert report.gt2 == 100.0
        assert report.gt3 == 0.0

    def test_delta_boundary_is_exclusive(self):
        report = evaluate(depth_field([[12.5, 10.0]]), depth_field([[10.0, 10.0]]))
        assert report.d1 == 50.0
        assert report.d2 == 100.0

    def test_disparity_has_no_depth_family(self):
        gt = disparity_field([[4.0, 8.0]])
        report = evaluate(disparity_field([[5.5, 8.0]]), gt)
        assert not report.has_depth_family
        assert report.gt1 == 50.0
        assert report.rms is None and report.d1 is None

    def test_only_common_support_counts(self):
        valid = np.array([[True, False, True]])
        pred = depth_field([[10.0, 99.0, 12.0]], valid)
        gt = depth_field([[10.0, 5.0, 10.0]])
        report = evaluate(pred, gt)
        assert report.pixels == 2
        assert report.avg == pytest.approx(1.0)

    def test_errors(self):
        nothing = depth_field([[1.0]], np.array([[False]]))
        with pytest.raises(DomainError):
            evaluate(nothing, depth_field([[1.0]]))
        with pytest.raises(RepresentationError):
            evaluate(disparity_field([[1.0]]), depth_field([[1.0]]))
        with pytest.raises(DomainError):
            evaluate(depth_field([[1.0, 2.0]]), depth_field([[1.0]]))
        with pytest.raises(DomainError):
            evaluate(depth_field([[1.0]]), depth_field([[0.0]]))

    def test_orderings_hold_on_random_input(self):
        rng = np.random.default_rng(0)
        gt = depth_field(rng.uniform(1.0, 50.0, size=(20, 20)))
        pred = depth_field(gt.values + rng.normal(0.0, 3.0, size=(20, 20)).clip(-0.9, None))
        report = evaluate(pred, gt)
        assert list(report.error_rates) == sorted(report.error_rates, reverse=True)
        assert list(report.deltas) == sorted(report.deltas)
        assert report.rms >= report.avg

    def test_pixel_order_does_not_matter(self):
        rng = np.random.default_rng(1)
        g = rng.uniform(1.0, 9.0, size=(1, 30))
        p = g + rng.normal(0.0, 1.0, size=(1, 30)).clip(-0.5, None)
        perm = rng.permutation(30)
        a = evaluate(depth_field(p), depth_field(g))
        b = evaluate(depth_field(p[:, perm]), depth_field(g[:, perm]))
        assert a.error_rates == b.error_rates
        assert a.avg == pytest.approx(b.avg)
        assert a.d1 == b.d1


class TestImprovement:
    def test_unchanged_prediction(self):
        gt = disparity_field([[1.0, 2.0]])
        base = disparity_field([[2.0, 4.0]])
        assert improvement(base, base, gt).percentages == (0.0, 0.0, 0.0, 0.0)

    def test_full_improvement(self):
        gt = disparity_field([[1.0, 2.0]])
        report = improvement(disparity_field(gt.values + 3.0), gt, gt)
        assert report.percentages == (100.0, 100.0, 100.0, 100.0)

    def test_half_improved(self):
        gt = disparity_field(np.zeros((1, 4)) + 5.0)
        base = disparity_field([[7.0, 7.0, 7.0, 7.0]])
        guided = disparity_field([[5.5, 5.5, 7.0, 7.0]])
        report = improvement(base, guided, gt)
        assert report.percentages == (50.0, 50.0, 50.0, 0.0)
        assert report.as_row()["improved>1"] == 50.0

    def test_zero_overlap(self):
        off = disparity_field([[1.0]], np.array([[False]]))
        with pytest.raises(DomainError):
            improvement(off, off, disparity_field([[1.0]]))


class TestReporting:
    def test_csv_and_table(self, tmp_path):
        gt = depth_field([[10.0, 20.0]])
        reports = {"raw": evaluate(depth_field([[11.0, 20.0]]), gt), "s3": evaluate(gt, gt)}
        frame = write_reports(reports, tmp_path / "report.csv")
        back = pd.read_csv(tmp_path / "report.csv")
        assert list(back["name"]) == ["raw", "s3"]
        assert back.loc[0, "avg"] == pytest.approx(0.5)
        assert list(frame.columns) == list(back.columns)

    def test_missing_cells_render_as_dash(self):
        depth = evaluate(depth_field([[10.0]]), depth_field([[10.0]]))
        disp = evaluate(disparity_field([[2.0]]), disparity_field([[2.0]]))
        frame = reports_to_frame({"depth": depth, "disp": disp})
        console = Console(file=io.StringIO(), width=200)
        console.print(render_table(frame))
        text = console.file.getvalue()
        assert "-" in text.split("disp", 1)[1]
        assert "100.000" in text
