from collections import Counter

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mousetap.errors import ParameterError
from mousetap.feasibility import (FeasibilityQuery, MouseRecord, PhonemeEntry,
                                  classify_mouse, dpi_wavelength_check,
                                  load_mouse_db, load_phoneme_table,
                                  nyquist_limit, phoneme_coverage, rank_mice)


class TestWavelengthCheck:
    def test_high_dpi_wood_desk_passes(self):
        # 8 kHz acoustic content, 20k DPI sensor, mid-range wood wave speed
        v = dpi_wavelength_check(FeasibilityQuery(8000, 20000, 8000, 3000))
        assert v.passed
        assert v.margin == pytest.approx(6.7733e-6, rel=1e-3)

    def test_exact_boundary_fails(self):
        # D*nu_mm == 50.8*f exactly in floats: strict inequality must fail
        v = dpi_wavelength_check(FeasibilityQuery(8000, 0.5, 8000, 812.8))
        assert v.margin == 1.0
        assert not v.passed

    def test_tiny_dpi_fails_with_margin_over_one(self):
        # oracle: 25.4/0.1 = 254 mm > half-wavelength 187.5 mm
        v = dpi_wavelength_check(FeasibilityQuery(8000, 0.1, 8000, 3000))
        assert not v.passed
        assert v.margin > 1.0
        assert v.min_step_mm == pytest.approx(254.0)
        assert v.wavelength_mm / 2 == pytest.approx(187.5)

    @settings(max_examples=60, deadline=None)
    @given(st.floats(10, 20000), st.floats(1, 1e5), st.floats(100, 6000))
    def test_monotone_pass_set(self, f, dpi, nu):
        base = dpi_wavelength_check(FeasibilityQuery(f, dpi, 8000, nu))
        if base.passed:
            assert dpi_wavelength_check(FeasibilityQuery(f, dpi * 2, 8000, nu)).passed
            assert dpi_wavelength_check(FeasibilityQuery(f, dpi, 8000, nu * 2)).passed
            assert dpi_wavelength_check(FeasibilityQuery(f / 2, dpi, 8000, nu)).passed

    def test_invalid_query(self):
        with pytest.raises(ParameterError):
            FeasibilityQuery(0, 20000, 8000, 3000)


class TestNyquist:
    @pytest.mark.parametrize("poll,limit", [(8000, 4000), (4000, 2000), (1, 0.5)])
    def test_half_poll_rate(self, poll, limit):
        assert nyquist_limit(poll) == limit

    def test_rejects_nonpositive(self):
        with pytest.raises(ParameterError):
            nyquist_limit(0)


class TestPhonemeCoverage:
    def test_bundled_anchors(self):
        assert abs(phoneme_coverage(8000) - 91.18) <= 5.0
        assert abs(phoneme_coverage(4000) - 80.09) <= 5.0
        assert abs(phoneme_coverage(1000) - 42.47) <= 5.0

    def test_full_coverage_at_high_rate(self):
        table = load_phoneme_table()
        assert phoneme_coverage(10 * max(e.char_freq_hz for e in table), table) == 100.0

    def test_monotone_in_poll_rate(self):
        rates = [250, 500, 1000, 2000, 4000, 8000, 16000, 32000]
        vals = [phoneme_coverage(s) for s in rates]
        assert all(a <= b for a, b in zip(vals, vals[1:]))

    def test_table_has_39_entries_normalized(self):
        table = load_phoneme_table()
        assert len(table) == 39
        assert sum(e.weight for e in table) == pytest.approx(1.0, abs=1e-3)

    def test_empty_table_rejected(self):
        with pytest.raises(ParameterError):
            phoneme_coverage(8000, [])


class TestRankMice:
    def test_bundled_db_partition(self):
        ranked = rank_mice()
        counts = Counter(r.vulnerability for r in ranked)
        assert counts == {"red": 11, "orange": 3, "yellow": 12}
        assert len(ranked) == 26

    def test_named_rows(self):
        by_name = {r.record.vendor_model: r for r in rank_mice()}
        viper = by_name["Razer Viper 8KHz"]
        assert viper.vulnerability == "red"
        assert abs(viper.coverage_pct - 91.18) <= 5.0
        assert by_name["AtomPalm Hydrogen"].vulnerability == "orange"
        m994 = by_name["Redragon M994"]
        assert m994.vulnerability == "yellow"
        assert abs(m994.coverage_pct - 42.47) <= 5.0

    def test_sorted_by_severity_then_name(self):
        ranked = rank_mice()
        severities = [{"red": 0, "orange": 1, "yellow": 2, "none": 3}[r.vulnerability]
                      for r in ranked]
        assert severities == sorted(severities)
        for a, b in zip(ranked, ranked[1:]):
            if a.vulnerability == b.vulnerability:
                assert a.record.vendor_model <= b.record.vendor_model

    def test_classes_partition_all_records(self):
        recs = [
            MouseRecord("hot", "s", 26000, 650, 8000, 10),
            MouseRecord("poll-only", "s", 1000, 650, 8000, 10),
            MouseRecord("dpi-only", "s", 26000, 650, 125, 10),
            MouseRecord("cold", "s", 800, 650, 125, 10),
        ]
        classes = [classify_mouse(r) for r in recs]
        assert classes == ["red", "orange", "yellow", "none"]

    def test_db_loads_price_and_sensor(self):
        db = load_mouse_db()
        viper = next(r for r in db if r.vendor_model == "Razer Viper 8KHz")
        assert viper.sensor == "PAW3399"
        assert viper.price_usd == 50
        assert viper.ips == 650
