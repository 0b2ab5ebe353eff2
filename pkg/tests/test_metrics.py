"""Metric formulas against brute-force oracles and hand computations."""

import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fovea.metrics import (
    EvalReport,
    MetricsError,
    iov,
    mre,
    radial_errors,
    sdr,
)


class TestRadialErrors:
    def test_zero_at_truth(self):
        pts = [[3.0, 4.0], [10.0, 20.0]]
        np.testing.assert_array_equal(radial_errors(pts, pts, 10.0), [0.0, 0.0])

    def test_three_four_five(self):
        errs = radial_errors([[30.0, 40.0]], [[0.0, 0.0]], 10.0)
        np.testing.assert_allclose(errs, [5.0])

    def test_translation_invariance(self):
        rng = np.random.default_rng(1)
        preds = rng.uniform(0, 100, (20, 2))
        gts = rng.uniform(0, 100, (20, 2))
        shift = np.array([123.0, -45.0])
        a = radial_errors(preds, gts, 10.0)
        b = radial_errors(preds + shift, gts + shift, 10.0)
        np.testing.assert_allclose(a, b, atol=1e-9)

    def test_length_mismatch(self):
        with pytest.raises(MetricsError):
            radial_errors([[0.0, 0.0]], [[0.0, 0.0], [1.0, 1.0]], 10.0)

    def test_bad_px_per_mm(self):
        with pytest.raises(MetricsError):
            radial_errors([[0.0, 0.0]], [[0.0, 0.0]], 0.0)


class TestMre:
    def test_constant_list(self):
        assert mre([1.0, 1.0, 1.0]) == (1.0, 0.0)

    def test_hand_pair(self):
        assert mre([0.0, 2.0]) == (1.0, 1.0)

    def test_matches_two_pass_oracle(self):
        rng = np.random.default_rng(2)
        errs = rng.exponential(1.5, size=10_000)
        mean, std = mre(errs)
        ref_mean = sum(float(e) for e in errs) / len(errs)
        ref_var = sum((float(e) - ref_mean) ** 2 for e in errs) / len(errs)
        assert abs(mean - ref_mean) <= 1e-9 * max(1.0, ref_mean)
        assert abs(std - math.sqrt(ref_var)) <= 1e-9 * max(1.0, ref_mean)

    def test_bounds(self):
        rng = np.random.default_rng(3)
        errs = rng.uniform(0.5, 9.0, 100)
        mean, _ = mre(errs)
        assert errs.min() <= mean <= errs.max()

    def test_empty_rejected(self):
        with pytest.raises(MetricsError):
            mre([])


class TestSdr:
    def test_all_zero_errors(self):
        assert sdr([0.0, 0.0, 0.0]) == [100.0, 100.0, 100.0, 100.0]

    def test_half_split(self):
        assert sdr([1.9, 2.1], [2.0]) == [50.0]

    def test_boundary_counts_as_success(self):
        assert sdr([2.0], [2.0]) == [100.0]

    def test_matches_counting_oracle(self):
        rng = np.random.default_rng(4)
        errs = rng.gamma(2.0, 1.2, size=10_000)
        thresholds = [1.0, 2.0, 2.5, 3.0, 4.0, 8.0]
        got = sdr(errs, thresholds)
        for tau, pct in zip(thresholds, got):
            ref = 100.0 * sum(1 for e in errs if e <= tau) / len(errs)
            assert abs(pct - ref) <= 1e-9

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.floats(0, 50), min_size=1, max_size=30))
    def test_monotone_in_threshold(self, errs):
        pcts = sdr(errs, [0.5, 1.0, 2.0, 4.0, 8.0])
        assert all(a <= b for a, b in zip(pcts, pcts[1:]))
        assert all(0.0 <= p <= 100.0 for p in pcts)

    def test_unsorted_thresholds_rejected(self):
        with pytest.raises(MetricsError):
            sdr([1.0], [3.0, 2.0])


class TestIov:
    def test_identical_annotators(self):
        pts = [[5.0, 5.0], [9.0, 1.0]]
        assert iov(pts, pts, 10.0) == 0.0

    def test_single_pair_half_separation(self):
        assert iov([[0.0, 0.0]], [[20.0, 0.0]], 10.0) == 1.0

    def test_symmetry(self):
        rng = np.random.default_rng(5)
        a = rng.uniform(0, 500, (50, 2))
        b = rng.uniform(0, 500, (50, 2))
        assert iov(a, b, 10.0) == iov(b, a, 10.0)

    def test_matches_direct_definition(self):
        rng = np.random.default_rng(6)
        a = rng.uniform(0, 500, (1000, 2))
        b = rng.uniform(0, 500, (1000, 2))
        got = iov(a, b, 10.0)
        total = 0.0
        for pa, pb in zip(a, b):
            mean_pt = (pa + pb) / 2.0
            da = math.hypot(*(pa - mean_pt)) / 10.0
            db = math.hypot(*(pb - mean_pt)) / 10.0
            total += (da + db) / 2.0
        ref = total / len(a)
        assert abs(got - ref) <= 1e-12 * max(1.0, ref)

    def test_length_mismatch(self):
        with pytest.raises(MetricsError):
            iov([[0.0, 0.0]], [[0.0, 0.0], [1.0, 1.0]], 10.0)


class TestEvalReport:
    def build_known_report(self):
        # Hand-computed: errors [1,1,3,3] -> MRE 2.0, std 1.0;
        # SDR at 2mm = 50%, 2.5mm = 50%, 3mm = 100%, 4mm = 100%.
        report = EvalReport()
        report.add_landmark("Alpha", [1.0, 1.0, 3.0, 3.0], iov_mm=0.5)
        # errors [0,0,0,8] -> MRE 2.0, std sqrt(12)=3.464; SDR 75% up to
        # 4mm.
        report.add_landmark("Beta", [0.0, 0.0, 0.0, 8.0], iov_mm=1.5)
        return report

    def test_hand_computed_rows(self):
        report = self.build_known_report()
        alpha, beta = report.rows
        assert alpha["mre"] == 2.0 and alpha["std"] == 1.0
        assert alpha["sdr"] == [50.0, 50.0, 100.0, 100.0]
        assert beta["mre"] == 2.0
        assert abs(beta["std"] - math.sqrt(12.0)) <= 1e-12
        assert beta["sdr"] == [75.0, 75.0, 75.0, 75.0]

    def test_average_row(self):
        report = self.build_known_report()
        avg = report.average
        assert avg["mre"] == 2.0
        assert avg["sdr"] == [62.5, 62.5, 87.5, 87.5]
        assert avg["iov"] == 1.0

    def test_json_round_trip(self):
        report = self.build_known_report()
        data = json.loads(report.to_json())
        assert data["thresholds_mm"] == [2.0, 2.5, 3.0, 4.0]
        assert len(data["landmarks"]) == 2
        assert data["average"]["mre"] == 2.0

    def test_text_table_layout(self):
        report = self.build_known_report()
        text = report.to_text()
        lines = text.splitlines()
        assert "MRE (mm)" in lines[0] and "IOV (mm)" in lines[0]
        assert "SDR 2mm" in lines[0] and "SDR 4mm" in lines[0]
        assert lines[2].startswith("Alpha")
        assert lines[-1].startswith("Average")
        assert "2.00 ± 1.00" in lines[2]

    def test_iov_column_optional(self):
        report = EvalReport()
        report.add_landmark("Solo", [1.0, 2.0])
        assert report.rows[0]["iov"] is None
        assert report.average["iov"] is None
        assert "-" in report.to_text()

    def test_perfect_predictions(self):
        report = EvalReport()
        report.add_landmark("Perfect", [0.0] * 10)
        assert report.average["mre"] == 0.0
        assert report.average["sdr"] == [100.0] * 4

    def test_empty_report_rejected(self):
        with pytest.raises(MetricsError):
            EvalReport().average
