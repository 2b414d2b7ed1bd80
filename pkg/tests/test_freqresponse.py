import numpy as np
import pytest

from vstage.freqresponse import (
    FrequencyResponse,
    find_unreliable_bands,
    flat_response,
    guarded_inverse,
    read_response_csv,
    write_response_csv,
)


def log_grid(lo=20.0, hi=20000.0, n=300):
    return np.geomspace(lo, hi, n)


class TestContainer:
    def test_rejects_descending_grid(self):
        with pytest.raises(ValueError, match="ascending"):
            FrequencyResponse(np.array([100.0, 50.0]), np.ones(2), "x")

    def test_rejects_shape_mismatch(self):
        with pytest.raises(ValueError, match="matching"):
            FrequencyResponse(np.array([1.0, 2.0]), np.ones(3), "x")

    def test_magnitude_only_drops_phase(self):
        fr = FrequencyResponse(np.array([10.0, 100.0]), np.array([-2.0, 1j]),
                               "x", magnitude_only=True)
        assert fr.values.dtype == np.float64
        np.testing.assert_allclose(fr.values, [2.0, 1.0])

    def test_sample_magnitude_interpolates_in_log_db(self):
        fr = FrequencyResponse(np.array([100.0, 400.0]), np.array([1.0, 4.0]),
                               "x", magnitude_only=True)
        # Halfway in log-f between 100 and 400 is 200; halfway in dB
        # between 0 and 12.04 is 6.02 dB, i.e. a gain of 2.
        assert fr.sample_magnitude(np.array([200.0]))[0] == pytest.approx(2.0)

    def test_sample_clamps_outside_grid(self):
        fr = FrequencyResponse(np.array([100.0, 1000.0]), np.array([2.0, 8.0]),
                               "x", magnitude_only=True)
        got = fr.sample_magnitude(np.array([10.0, 20000.0]))
        np.testing.assert_allclose(got, [2.0, 8.0])


class TestSmoothing:
    def test_flat_stays_flat(self):
        grid = log_grid()
        fr = FrequencyResponse(grid, np.full_like(grid, 0.5), "x",
                               magnitude_only=True)
        out = fr.smoothed(12)
        np.testing.assert_allclose(out.magnitude, 0.5, rtol=1e-9)

    def test_fast_ripple_shrinks_slow_trend_survives(self):
        # Ripple with a period of about 1/11 octave sits near the first
        # null of a 1/12-octave box; the broadband tilt must pass through.
        grid = log_grid(n=4000)
        ripple = 10 ** (1.5 * np.sin(100.0 * np.log(grid)) / 20.0)
        trend = 10 ** (6.0 * np.log10(grid / grid[0])
                       / np.log10(grid[-1] / grid[0]) / 20.0)
        fr = FrequencyResponse(grid, ripple * trend, "x", magnitude_only=True)
        out = fr.smoothed(12)
        mid = slice(800, 3200)
        resid_db = out.magnitude_db()[mid] - 20 * np.log10(trend[mid])
        assert np.std(resid_db) < 0.35 * np.std(1.5 * np.sin(100.0 * np.log(grid[mid])))
        assert np.abs(np.mean(resid_db)) < 0.1

    def test_complex_keeps_phase(self):
        grid = log_grid(n=100)
        vals = np.exp(1j * 0.3) * np.ones_like(grid)
        fr = FrequencyResponse(grid, vals, "x")
        out = fr.smoothed(12)
        np.testing.assert_allclose(np.angle(out.values), 0.3, atol=1e-9)


class TestGuardedInverse:
    def test_reciprocal_where_healthy(self):
        grid = log_grid()
        mag = np.full_like(grid, 2.0)
        inv, bands = guarded_inverse(grid, mag)
        np.testing.assert_allclose(inv * mag, 1.0, rtol=1e-12)
        assert bands == []

    def test_floor_limits_notch_gain(self):
        grid = log_grid()
        mag = np.ones_like(grid)
        notch = (grid > 950) & (grid < 1050)
        mag[notch] = 1e-6
        inv, _ = guarded_inverse(grid, mag, floor_db=-40.0)
        # 1e-6 sits far below the -40 dB floor; the inverse is capped by
        # the +24 dB bound over the median gain of 1.
        assert np.max(inv) <= 10 ** (24 / 20) * 1.0001

    def test_out_of_band_is_clamped_to_edges(self):
        grid = np.geomspace(10.0, 22000.0, 400)
        mag = 1.0 + 0.5 * np.sin(np.log(grid))
        inv, _ = guarded_inverse(grid, mag, band=(50.0, 16000.0))
        lo_edge = np.searchsorted(grid, 50.0)
        hi_edge = np.searchsorted(grid, 16000.0, side="right") - 1
        assert np.all(inv[:lo_edge] == inv[lo_edge])
        assert np.all(inv[hi_edge + 1:] == inv[hi_edge])

    def test_wide_dead_band_is_reported(self):
        grid = log_grid(n=600)
        mag = np.ones_like(grid)
        dead = (grid >= 700) & (grid <= 1400)      # a full octave, well past 1/3
        mag[dead] = 1e-5
        _, bands = guarded_inverse(grid, mag)
        assert len(bands) == 1
        lo, hi = bands[0]
        assert lo == pytest.approx(700, rel=0.05)
        assert hi == pytest.approx(1400, rel=0.05)

    def test_narrow_dip_is_not_reported(self):
        grid = log_grid(n=600)
        mag = np.ones_like(grid)
        dip = (grid >= 1000) & (grid <= 1100)      # ~0.14 octave
        mag[dip] = 1e-5
        _, bands = guarded_inverse(grid, mag)
        assert bands == []

    def test_all_zero_rejected(self):
        grid = log_grid(n=10)
        with pytest.raises(ValueError, match="all-zero"):
            guarded_inverse(grid, np.zeros_like(grid))


class TestUnreliableBands:
    def test_run_at_grid_end_is_closed(self):
        freqs = np.geomspace(100.0, 16000.0, 200)
        mag = np.ones_like(freqs)
        mag[freqs > 8000.0] = 0.0
        bands = find_unreliable_bands(freqs, mag, 0.5)
        assert len(bands) == 1
        assert bands[0][1] == pytest.approx(freqs[-1])


class TestCsv:
    def test_magnitude_round_trip(self, tmp_path):
        grid = log_grid(n=50)
        fr = FrequencyResponse(grid, np.linspace(0.5, 2.0, 50), "dfs_per_pa",
                               magnitude_only=True)
        path = tmp_path / "resp.csv"
        write_response_csv(path, fr)
        back = read_response_csv(path)
        assert back.reference == "dfs_per_pa"
        assert back.magnitude_only
        np.testing.assert_allclose(back.frequencies, grid, rtol=1e-6)
        np.testing.assert_allclose(back.magnitude, fr.magnitude, rtol=1e-6)

    def test_complex_round_trip(self, tmp_path):
        grid = log_grid(n=20)
        vals = np.exp(1j * np.linspace(0, 3, 20)) * np.linspace(1, 2, 20)
        fr = FrequencyResponse(grid, vals, "pa_per_dfs")
        path = tmp_path / "resp.csv"
        write_response_csv(path, fr)
        back = read_response_csv(path)
        assert not back.magnitude_only
        np.testing.assert_allclose(back.values, vals, rtol=1e-8)

    def test_header_must_declare_reference(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("freq_hz,mag_db\n100,0\n200,0\n")
        with pytest.raises(ValueError, match="reference"):
            read_response_csv(path)

    def test_unknown_layout_rejected(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("hz,gain,reference=x\n100,0\n")
        with pytest.raises(ValueError, match="layout"):
            read_response_csv(path)

    def test_flat_response_helper(self):
        fr = flat_response("unit", 2.0)
        assert fr.sample_magnitude(np.array([1234.0]))[0] == pytest.approx(2.0)
