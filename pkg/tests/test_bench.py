"""Scaling benchmark: pixel bookkeeping, failure isolation, fit output."""

import json

import numpy as np
import pytest

from fovea.bench import ScalingReport, SideResult, run_bench
from fovea.pyramid import num_levels


@pytest.fixture(scope="module")
def small_report():
    return run_bench(sides=(256, 512), iterations=3, seed=1)


class TestPixelBookkeeping:
    def test_glimpse_pixels_closed_form(self, small_report):
        for row in small_report.rows:
            assert row.glimpse_pixels == num_levels(row.side, row.side) * 64 * 64

    def test_known_level_counts(self, small_report):
        by_side = {r.side: r.levels for r in small_report.rows}
        assert by_side == {256: 3, 512: 4}

    def test_pixels_grow_by_one_patch_per_doubling(self, small_report):
        a, b = small_report.rows
        assert b.glimpse_pixels - a.glimpse_pixels == 64 * 64


class TestTimings:
    def test_positive_times(self, small_report):
        for row in small_report.rows:
            assert row.per_iteration_s > 0
            assert row.per_iteration_mean_s > 0
            assert row.pyramid_build_s > 0

    def test_buffer_bytes_accounts_pyramid(self, small_report):
        # float32 pyramid of a side-256 image: between 1x and 4/3x + patches.
        row = small_report.rows[0]
        base = 256 * 256 * 4
        assert base < row.buffer_bytes < base * (4 / 3 + 0.05) + row.glimpse_pixels * 4

    def test_fit_present_with_two_rows(self, small_report):
        assert small_report.fit_slope != 0.0
        assert 0.0 <= small_report.fit_r2 <= 1.0


class TestFailureIsolation:
    def test_undersized_side_recorded_not_fatal(self):
        report = run_bench(sides=(32, 256), iterations=2, seed=2)
        assert report.rows[0].error is not None
        assert report.rows[1].error is None
        assert [r.side for r in report.ok_rows()] == [256]

    def test_fit_skipped_with_single_ok_row(self):
        report = run_bench(sides=(32, 256), iterations=2, seed=2)
        assert report.fit_slope == 0.0 and report.fit_r2 == 0.0


class TestSerialization:
    def test_json_round_trip(self, small_report):
        payload = json.loads(small_report.to_json())
        assert [s["side"] for s in payload["sides"]] == [256, 512]
        assert payload["fit"]["r2"] == pytest.approx(small_report.fit_r2)

    def test_text_table(self, small_report):
        text = small_report.to_text()
        assert "12288" in text and "16384" in text
        assert "R^2" in text and "ratio t(512) / t(256)" in text

    def test_text_reports_failures(self):
        report = ScalingReport(rows=[
            SideResult(4096, 0, 0, 0.0, 0.0, 0.0, 0, error="allocation failure: x")])
        assert "failed: allocation failure" in report.to_text()


class TestDeterminismOfBookkeeping:
    def test_structure_reproducible(self):
        a = run_bench(sides=(256,), iterations=2, seed=3)
        b = run_bench(sides=(256,), iterations=2, seed=3)
        assert a.rows[0].glimpse_pixels == b.rows[0].glimpse_pixels
        assert a.rows[0].levels == b.rows[0].levels
        assert a.rows[0].buffer_bytes == b.rows[0].buffer_bytes
