import numpy as np
import pytest

from vstage import SampledSignal
from vstage import wavio


class TestRoundTrip:
    @pytest.mark.parametrize("channels", [1, 2])
    def test_float32_is_lossless_at_single_precision(self, rng, tmp_path, channels):
        data = rng.uniform(-1, 1, (500, channels)).astype(np.float32).astype(np.float64)
        path = tmp_path / "f32.wav"
        wavio.write(path, SampledSignal(data, 44100.0), "float32")
        back = wavio.read(path)
        assert back.sample_rate == 44100.0
        np.testing.assert_array_equal(back.data, data)

    def test_pcm16_quantization(self, rng, tmp_path):
        data = rng.uniform(-0.9, 0.9, 300)
        path = tmp_path / "p16.wav"
        wavio.write(path, SampledSignal(data, 48000.0), "pcm16")
        back = wavio.read(path)
        assert back.sample_rate == 48000.0
        assert np.max(np.abs(back.mono - data)) <= 0.5 / 32768.0 + 1e-12

    def test_pcm24_quantization(self, rng, tmp_path):
        data = rng.uniform(-0.9, 0.9, 300)
        path = tmp_path / "p24.wav"
        wavio.write(path, SampledSignal(data, 44100.0), "pcm24")
        back = wavio.read(path)
        assert np.max(np.abs(back.mono - data)) <= 0.5 / (1 << 23) + 1e-12

    def test_pcm24_stereo_interleaving(self, tmp_path):
        data = np.zeros((4, 2))
        data[:, 0] = [0.1, 0.2, 0.3, 0.4]
        data[:, 1] = [-0.1, -0.2, -0.3, -0.4]
        path = tmp_path / "p24s.wav"
        wavio.write(path, SampledSignal(data, 44100.0), "pcm24")
        back = wavio.read(path)
        np.testing.assert_allclose(back.data, data, atol=1.0 / (1 << 23))

    def test_multichannel_raw(self, rng, tmp_path):
        data = rng.uniform(-1, 1, (100, 4))
        path = tmp_path / "multi.wav"
        wavio.write_raw(path, data, 44100.0, "float32")
        back, rate = wavio.read_raw(path)
        assert rate == 44100.0
        assert back.shape == (100, 4)
        np.testing.assert_allclose(back, data, atol=1e-7)
        with pytest.raises(ValueError, match="read_raw"):
            wavio.read(path)

    def test_header_sample_rate_is_authoritative(self, tmp_path):
        path = tmp_path / "rate.wav"
        wavio.write_raw(path, np.zeros(10), 96000.0, "pcm16")
        _, rate = wavio.read_raw(path)
        assert rate == 96000.0


class TestValidation:
    def test_rejects_unknown_encoding(self, tmp_path):
        with pytest.raises(ValueError, match="encoding"):
            wavio.write_raw(tmp_path / "x.wav", np.zeros(4), 44100.0, "pcm8")

    def test_rejects_non_wav(self, tmp_path):
        path = tmp_path / "junk.wav"
        path.write_bytes(b"this is not audio")
        with pytest.raises(ValueError, match="RIFF"):
            wavio.read_raw(path)

    def test_clipping_is_bounded(self, tmp_path):
        data = np.array([1.5, -1.5])
        path = tmp_path / "clip.wav"
        wavio.write_raw(path, data, 44100.0, "pcm16")
        back, _ = wavio.read_raw(path)
        assert back[0, 0] == pytest.approx(32767.0 / 32768.0)
        assert back[1, 0] == pytest.approx(-1.0)

    def test_scipy_reads_our_float32(self, rng, tmp_path):
        # Cross-check the writer against an independent reader.
        from scipy.io import wavfile
        data = rng.uniform(-1, 1, (64, 2))
        path = tmp_path / "x.wav"
        wavio.write_raw(path, data, 44100.0, "float32")
        rate, back = wavfile.read(path)
        assert rate == 44100
        np.testing.assert_allclose(back, data.astype(np.float32))

    def test_reads_scipy_written_pcm16(self, rng, tmp_path):
        from scipy.io import wavfile
        ints = (rng.uniform(-0.5, 0.5, 128) * 32768).astype(np.int16)
        path = tmp_path / "s.wav"
        wavfile.write(path, 44100, ints)
        back, rate = wavio.read_raw(path)
        assert rate == 44100.0
        np.testing.assert_allclose(back[:, 0] * 32768.0, ints, atol=1e-9)
