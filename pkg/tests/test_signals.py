import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vstage import (
    ImpulseResponse,
    InfeasibleShiftError,
    IrKind,
    SampledSignal,
    SampleRateMismatchError,
    convolve,
    fractional_delay,
    spectrum,
)
from vstage.signals import shift_kernel

from oracles import convolve_direct, shift_oversampled, smooth_probe

FS = 44100.0


def rel_l2(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    n = max(len(a), len(b))
    a = np.pad(a, (0, n - len(a)))
    b = np.pad(b, (0, n - len(b)))
    denom = np.linalg.norm(b)
    return np.linalg.norm(a - b) / denom if denom else np.linalg.norm(a - b)


class TestSampledSignal:
    def test_mono_shape(self):
        sig = SampledSignal(np.zeros(10), FS)
        assert sig.data.shape == (10, 1)
        assert sig.n_channels == 1
        assert sig.duration == pytest.approx(10 / FS)

    def test_stereo(self):
        sig = SampledSignal(np.zeros((5, 2)), FS)
        assert sig.n_channels == 2
        with pytest.raises(ValueError, match="not mono"):
            sig.mono

    def test_rejects_bad_rate(self):
        with pytest.raises(ValueError, match="sample rate"):
            SampledSignal(np.zeros(4), 0.0)

    def test_rejects_nan(self):
        with pytest.raises(ValueError, match="non-finite"):
            SampledSignal(np.array([0.0, np.nan]), FS)

    def test_rejects_three_channels(self):
        with pytest.raises(ValueError, match="mono or stereo"):
            SampledSignal(np.zeros((4, 3)), FS)

    def test_rejects_empty(self):
        with pytest.raises(ValueError, match="at least one"):
            SampledSignal(np.zeros(0), FS)


class TestImpulseResponse:
    def test_adapted_needs_provenance(self):
        sig = SampledSignal(np.zeros(8), FS)
        with pytest.raises(ValueError, match="adaptation"):
            ImpulseResponse(sig, kind=IrKind.ADAPTED)

    def test_kind_coerces_from_string(self):
        sig = SampledSignal(np.zeros(8), FS)
        ir = ImpulseResponse(sig, kind="anechoic")
        assert ir.kind is IrKind.ANECHOIC


class TestConvolve:
    def test_identity(self):
        x = SampledSignal(np.array([1.0, 2.0, 3.0]), FS)
        out = convolve(x, np.array([1.0]))
        assert out.n_samples == 3
        np.testing.assert_allclose(out.mono, [1.0, 2.0, 3.0], atol=1e-12)

    def test_shifted_impulse_sifts(self):
        x = SampledSignal(np.array([1.0, 0.5]), FS)
        out = convolve(x, np.array([0.0, 0.0, 1.0]))
        np.testing.assert_allclose(out.mono, [0, 0, 1.0, 0.5], atol=1e-12)

    def test_matches_direct_oracle(self, rng):
        x = rng.standard_normal(64)
        h = rng.standard_normal(16)
        out = convolve(SampledSignal(x, FS), h)
        assert out.n_samples == 64 + 16 - 1
        assert rel_l2(out.mono, convolve_direct(x, h)) < 1e-9

    def test_stereo_channels_independent(self, rng):
        x = rng.standard_normal((32, 2))
        h = rng.standard_normal(8)
        out = convolve(SampledSignal(x, FS), h)
        for c in range(2):
            assert rel_l2(out.channel(c), convolve_direct(x[:, c], h)) < 1e-9

    def test_rate_mismatch(self):
        x = SampledSignal(np.zeros(4), FS)
        h = SampledSignal(np.zeros(4), 48000.0)
        with pytest.raises(SampleRateMismatchError):
            convolve(x, h)

    def test_empty_filter(self):
        x = SampledSignal(np.zeros(4), FS)
        with pytest.raises(ValueError, match="empty"):
            convolve(x, np.array([]))

    @settings(max_examples=25, deadline=None)
    @given(st.integers(min_value=1, max_value=40),
           st.integers(min_value=1, max_value=40),
           st.integers(min_value=0, max_value=2 ** 31 - 1))
    def test_linearity(self, nx, nh, seed):
        r = np.random.default_rng(seed)
        x1, x2 = r.standard_normal((2, nx))
        h = r.standard_normal(nh)
        a, b = r.standard_normal(2)
        lhs = convolve(SampledSignal(a * x1 + b * x2, FS), h).mono
        rhs = (a * convolve(SampledSignal(x1, FS), h).mono
               + b * convolve(SampledSignal(x2, FS), h).mono)
        assert rel_l2(lhs, rhs) < 1e-9


class TestSpectrum:
    def test_impulse_is_flat(self):
        x = SampledSignal(np.array([1.0, 0.0, 0.0, 0.0]), FS)
        spec = spectrum(x, 8)
        np.testing.assert_allclose(spec, np.ones(8), atol=1e-12)

    def test_rejects_truncation(self):
        x = SampledSignal(np.zeros(16), FS)
        with pytest.raises(ValueError, match="truncate"):
            spectrum(x, 8)

    def test_parseval(self, rng):
        x = rng.standard_normal(128)
        spec = spectrum(SampledSignal(x, FS), 128)
        assert np.sum(x ** 2) == pytest.approx(np.sum(np.abs(spec) ** 2) / 128)

    def test_round_trip(self, rng):
        x = rng.standard_normal(100)
        spec = spectrum(SampledSignal(x, FS), 256)
        back = np.fft.ifft(spec).real[:100]
        assert rel_l2(back, x) < 1e-12


class TestShiftKernel:
    def test_integer_case_is_unit_impulse(self):
        k = shift_kernel(0.0)
        assert k[64] == pytest.approx(1.0)
        assert np.max(np.abs(np.delete(k, 64))) < 1e-12

    def test_half_sample_symmetry(self):
        k = shift_kernel(0.5)
        # Centred between taps 64 and 65, so the kernel is symmetric there.
        assert k[64] == pytest.approx(k[65])
        assert k[63] == pytest.approx(k[66])
        assert k[64] == pytest.approx(np.sinc(0.5), rel=1e-3)


class TestFractionalDelay:
    def test_integer_delay_exact(self):
        x = SampledSignal(np.array([1.0]), FS)
        out = fractional_delay(x, 10.0 / FS)
        expected = np.zeros(11)
        expected[10] = 1.0
        np.testing.assert_array_equal(out.mono, expected)

    def test_integer_advance_exact(self):
        data = np.zeros(32)
        data[20] = 1.0
        out = fractional_delay(SampledSignal(data, FS), -20.0 / FS)
        assert out.mono[0] == 1.0
        assert np.all(out.mono[1:] == 0.0)

    def test_half_sample_on_impulse_is_kernel(self):
        x = SampledSignal(np.array([1.0]), FS)
        out = fractional_delay(x, 0.5 / FS)
        # Samples at t >= 0 of a sinc centred at 0.5.
        assert out.mono[0] == pytest.approx(out.mono[1], rel=1e-12)
        assert out.mono[0] == pytest.approx(np.sinc(0.5), rel=1e-3)

    @pytest.mark.parametrize("shift_samples", [0.5, 0.25, 3.75, -2.5])
    def test_matches_oversampled_oracle(self, rng, shift_samples):
        x = smooth_probe(256, rng)
        got = fractional_delay(SampledSignal(x, FS), shift_samples / FS).mono
        ref = shift_oversampled(x, shift_samples)
        assert rel_l2(got[:256], ref) < 1e-4

    def test_composition(self, rng):
        x = smooth_probe(256, rng)
        s1, s2 = 3.3 / FS, 1.45 / FS
        once = fractional_delay(SampledSignal(x, FS), s1 + s2).mono
        twice = fractional_delay(fractional_delay(SampledSignal(x, FS), s1), s2).mono
        assert rel_l2(twice[:256], once[:256]) < 1e-4

    def test_latency_compensation_advance_size(self):
        # A 4 ms interface delay plus 1 m of microphone travel at 343 m/s
        # comes to just about 305 samples at 44.1 kHz.
        shift = -(0.004 + 1.0 / 343.0)
        samples = -shift * FS
        assert round(samples) == 305
        assert samples == pytest.approx(304.97, abs=0.01)
        data = np.zeros(4096)
        data[305] = 1.0
        out = fractional_delay(SampledSignal(data, FS), shift)
        assert np.argmax(np.abs(out.mono)) == 0
        assert out.mono[0] == pytest.approx(1.0, abs=1e-2)

    def test_advance_discarding_energy_raises(self):
        data = np.zeros(64)
        data[5] = 1.0
        with pytest.raises(InfeasibleShiftError) as err:
            fractional_delay(SampledSignal(data, FS), -10.0 / FS)
        assert err.value.loss_db is not None
        assert err.value.loss_db > -60.0

    def test_advance_of_quiet_leading_edge_passes(self):
        data = np.zeros(64)
        data[0] = 1e-6        # -120 dB of the total energy
        data[30] = 1.0
        out = fractional_delay(SampledSignal(data, FS), -10.0 / FS)
        assert np.argmax(np.abs(out.mono)) == 20

    def test_advance_past_signal_raises(self):
        x = SampledSignal(np.ones(8), FS)
        with pytest.raises(InfeasibleShiftError, match="whole"):
            fractional_delay(x, -200.0 / FS)

    def test_preserves_impulse_response_metadata(self):
        sig = SampledSignal(np.concatenate([np.zeros(10), [1.0], np.zeros(10)]), FS)
        ir = ImpulseResponse(sig, kind=IrKind.RAW_SIMULATED,
                             direct_sound_skipped=True, source_id="a")
        out = fractional_delay(ir, 1.0 / FS)
        assert isinstance(out, ImpulseResponse)
        assert out.direct_sound_skipped
        assert out.source_id == "a"

    def test_stereo_channels_shift_together(self, rng):
        x = np.zeros((64, 2))
        x[10, 0] = 1.0
        x[10, 1] = -0.5
        out = fractional_delay(SampledSignal(x, FS), 5.0 / FS)
        assert out.data[15, 0] == pytest.approx(1.0)
        assert out.data[15, 1] == pytest.approx(-0.5)
